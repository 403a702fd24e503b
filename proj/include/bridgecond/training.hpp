#pragma once

#include <map>
#include <string>
#include <vector>

#include "bridgecond/model.hpp"
#include "bridgecond/sample_types.hpp"

namespace bridgecond {

// Parameter-name prefixes trainable in each stage.
std::vector<std::string> trainable_mask(int stage);
bool name_in_mask(const std::string& name, const std::vector<std::string>& mask);

// AdamW with decoupled weight decay and linear warm-up. Moment buffers exist
// only for the parameters handed to step().
class AdamW {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  double effective_lr(const StageSchedule& sched, long step) const;
  void step(const std::vector<Parameter*>& trainable, const StageSchedule& sched);

  long step_count() const { return step_count_; }

  struct Slot {
    std::vector<double> m, v;
  };
  std::map<std::string, Slot>& slots() { return slots_; }
  const std::map<std::string, Slot>& slots() const { return slots_; }
  void set_step_count(long s) { step_count_ = s; }

 private:
  std::map<std::string, Slot> slots_;
  long step_count_ = 0;
};

struct LossParts {
  Tensor total;
  std::vector<std::pair<std::string, Tensor>> parts;
};

// Per-stage loss composition over a batch of samples (unit weights).
LossParts stage_losses(const EditModel& model, int stage, const std::vector<const EditSample*>& batch,
                       Rng& noise_rng);

struct TraceRow {
  int step = 0;
  int stage = 0;
  double total = 0;
  std::vector<std::pair<std::string, double>> parts;
};

struct TrainResult {
  std::vector<TraceRow> trace;
  int stage = 0;
  int steps_run = 0;
};

// Applies the stage's trainable mask, runs the deterministic loop and writes
// the loss trace to trace_path when non-empty.
TrainResult train_stage(EditModel& model, int stage, const std::vector<EditSample>& dataset,
                        std::uint64_t seed, const std::string& trace_path = "");

void write_trace_csv(const std::vector<TraceRow>& trace, const std::string& path);

// Single-file binary checkpoint: magic, config echo, named parameter blobs,
// optimizer state, RNG state, stage + step.
struct CheckpointMeta {
  int stage = 0;
  long step = 0;
};

void save_checkpoint(const std::string& path, const EditModel& model, const AdamW* optimizer,
                     const Rng& rng, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  RunConfig config;
  CheckpointMeta meta;
  AdamW optimizer;
  bool has_optimizer = false;
  Rng rng;
};

// Loads blobs into an already-constructed model; the model's config must
// match the checkpoint's embedded config exactly.
LoadedCheckpoint load_checkpoint(const std::string& path, EditModel& model);

// Reads only the embedded config (to construct the model first).
RunConfig read_checkpoint_config(const std::string& path);

}  // namespace bridgecond
