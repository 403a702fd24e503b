#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bridgecond {

struct StageSchedule {
  int stage = 1;
  double lr = 0.0;
  double weight_decay = 0.0;
  double warmup_ratio = 0.0;
  int steps = 0;
};

// Whole-run configuration. Serializes to a flat key=value file; parsing
// rejects unknown keys and the round-trip is lossless.
struct RunConfig {
  std::uint64_t seed = 0;

  // world / images
  int image_size = 32;

  // comprehension
  int patch_size = 8;
  int d_vision = 32;
  int d_llm = 64;
  int n_layers = 2;
  int n_heads = 4;
  int r_mm = 4;
  int lora_rank = 4;
  double lora_alpha = 8.0;
  int max_seq_len = 64;

  // bridging
  int t_q = 8;
  int d_cond = 32;
  int n_img_tokens = 4;

  // generation
  int d_z = 4;
  int latent_downsample = 1;
  int denoiser_patch = 2;
  int d_model = 40;
  int n_blocks = 2;
  int denoiser_heads = 2;
  int timesteps = 100;
  double beta_start = 5e-4;
  double beta_end = 0.1;
  double lambda_img = 1.0;

  // training
  int batch_size = 16;
  double stage1_lr = 3e-3, stage1_wd = 0.0, stage1_warmup = 0.0;
  int stage1_steps = 500;
  double stage2_lr = 2e-3, stage2_wd = 0.0, stage2_warmup = 0.001;
  int stage2_steps = 300;
  double stage3_lr = 2e-3, stage3_wd = 0.0, stage3_warmup = 0.001;
  int stage3_steps = 300;

  // pipeline
  double tau_conf = 0.5;
  double tau_q = 7.0;
  int close_radius = 1;
  std::string pipeline_tasks = "removal,addition,replacement";
  std::string pipeline_modes = "template,simple,advanced";
  int max_samples = 0;  // 0 = no cap
  std::string scorer = "builtin-mock";
  double scorer_timeout_s = 30.0;
  int workers = 1;

  StageSchedule stage_schedule(int stage) const;

  std::string serialize() const;
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);
  void save(const std::string& path) const;
};

std::vector<std::string> split_list(const std::string& csv);

}  // namespace bridgecond
