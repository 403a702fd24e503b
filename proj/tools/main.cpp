// bridgecond: two-stream conditioned toy editing model and its synthetic
// dataset pipeline, one binary with subcommands.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "bridgecond/gradcheck.hpp"
#include "bridgecond/metrics.hpp"
#include "bridgecond/model.hpp"
#include "bridgecond/pipeline.hpp"
#include "bridgecond/training.hpp"

namespace fs = std::filesystem;
using namespace bridgecond;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitPartialScorer = 2;
constexpr int kExitNumeric = 3;

std::uint64_t env_seed_fallback(std::uint64_t flag_value, bool flag_given) {
  if (flag_given) return flag_value;
  if (const char* env = std::getenv("BRIDGECOND_SEED")) return std::strtoull(env, nullptr, 10);
  return flag_value;
}

RunConfig load_config_or_default(const std::string& path) {
  return path.empty() ? RunConfig{} : RunConfig::load(path);
}

int cmd_gen_world(int count, std::uint64_t seed, const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) {
    std::cerr << "gen-world: cannot create " << out << ": " << ec.message() << "\n";
    return kExitUsage;
  }
  for (int i = 0; i < count; ++i) {
    const SceneSpec scene = gen_scene(seed + static_cast<std::uint64_t>(i));
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%04d", i);
    write_ppm(render_scene(scene), (fs::path(out) / (std::string(name) + ".ppm")).string());
    std::ofstream spec((fs::path(out) / (std::string(name) + ".json")).string());
    spec << scene.to_json() << "\n";
  }
  std::cout << "wrote " << count << " scenes to " << out << "\n";
  return kExitOk;
}

int cmd_build_dataset(int scenes, const std::string& config, const std::string& out) {
  const RunConfig cfg = load_config_or_default(config);
  PipelineCounts counts;
  run_pipeline(scenes, cfg, out, &counts);
  std::cout << "scenes processed:   " << counts.scenes << "\n"
            << "objects found:      " << counts.objects_found << "\n"
            << "masks kept:         " << counts.masks_kept << "\n"
            << "pairs built:        " << counts.pairs_built << "\n"
            << "manifest rows:      " << counts.rows_written << "\n"
            << "pairs accepted:     " << counts.accepted << "\n";
  if (counts.scorer_failures > 0) {
    std::cerr << "warning: " << counts.scorer_failures << " samples left unscored by the scorer\n";
    return kExitPartialScorer;
  }
  return kExitOk;
}

int cmd_train(int stage, const std::string& data, const std::string& from_checkpoint,
              const std::string& out, const std::string& config, std::uint64_t seed,
              bool seed_given) {
  RunConfig cfg;
  EditModel* model = nullptr;
  std::unique_ptr<EditModel> owned;
  if (stage > 1) {
    if (from_checkpoint.empty()) {
      std::cerr << "train: --stage " << stage << " requires --from-checkpoint with the stage "
                << (stage - 1) << " checkpoint\n";
      return kExitUsage;
    }
    cfg = read_checkpoint_config(from_checkpoint);
    if (!config.empty() && RunConfig::load(config).serialize() != cfg.serialize()) {
      std::cerr << "train: --config disagrees with the checkpoint's embedded config\n";
      return kExitUsage;
    }
    owned = std::make_unique<EditModel>(cfg);
    model = owned.get();
    const LoadedCheckpoint ck = load_checkpoint(from_checkpoint, *model);
    if (ck.meta.stage < stage - 1)
      std::cerr << "warning: checkpoint records stage " << ck.meta.stage
                << "; expected a completed stage " << (stage - 1) << " run\n";
  } else {
    cfg = load_config_or_default(config);
    if (!from_checkpoint.empty()) {
      owned = std::make_unique<EditModel>(read_checkpoint_config(from_checkpoint));
      model = owned.get();
      load_checkpoint(from_checkpoint, *model);
      cfg = model->cfg();
    } else {
      owned = std::make_unique<EditModel>(cfg);
      model = owned.get();
    }
  }

  const std::uint64_t run_seed = env_seed_fallback(seed_given ? seed : cfg.seed, seed_given);
  const std::vector<EditSample> dataset = load_dataset(data);
  if (dataset.empty()) {
    std::cerr << "train: dataset from " << data << " is empty\n";
    return kExitUsage;
  }

  std::error_code ec;
  fs::create_directories(fs::path(out).parent_path(), ec);
  const std::string trace_path = out + ".trace.csv";
  const TrainResult result = train_stage(*model, stage, dataset, run_seed, trace_path);

  Rng rng(run_seed);
  save_checkpoint(out, *model, nullptr, rng, CheckpointMeta{stage, result.steps_run});
  const auto& last = result.trace.back();
  std::cout << "stage " << stage << " finished after " << result.steps_run
            << " steps; final total loss " << last.total << "\n"
            << "checkpoint: " << out << "\n"
            << "trace:      " << trace_path << "\n";
  return kExitOk;
}

int cmd_edit(const std::string& checkpoint, const std::string& image,
             const std::string& instruction, double lambda, std::uint64_t seed, bool seed_given,
             const std::string& out) {
  const RunConfig cfg = read_checkpoint_config(checkpoint);
  EditModel model(cfg);
  const LoadedCheckpoint ck = load_checkpoint(checkpoint, model);
  if (ck.meta.stage < 3)
    std::cerr << "warning: checkpoint is from stage " << ck.meta.stage
              << " (< 3); editing quality will be poor\n";
  const RasterImage src = read_ppm(image);
  Rng rng(env_seed_fallback(seed, seed_given));
  const RasterImage edited =
      model.edit(src, instruction, lambda, model.schedule().T, rng);
  write_ppm(edited, out);
  std::cout << "wrote " << out << " (" << edited.width << "x" << edited.height << ")\n";
  return kExitOk;
}

int cmd_eval(const std::string& manifest_path, const std::string& pred, const std::string& scorer,
             const std::string& out, double tau_q, int workers) {
  const Manifest manifest = read_manifest(manifest_path);
  const std::string manifest_dir = fs::path(manifest_path).parent_path().string();
  std::unique_ptr<ScorerAdapter> adapter;
  if (!scorer.empty() && scorer != "none")
    adapter = std::make_unique<ScorerAdapter>(scorer, tau_q);
  const MetricReport report = evaluate(manifest, manifest_dir, pred, adapter.get(), workers);
  if (!out.empty()) write_report_csv(report, out);
  print_summary(report, std::cout);
  if (adapter && adapter->failures() > 0) return kExitPartialScorer;
  return report.absent > 0 ? kExitUsage : kExitOk;
}

int cmd_gradcheck(const std::string& module) {
  const auto results = run_gradcheck(module, true);
  bool all_pass = true;
  for (const auto& r : results) all_pass = all_pass && r.pass;
  return all_pass ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-stream conditioned toy image editor and dataset pipeline"};
  app.require_subcommand(1);

  // gen-world
  auto* gen = app.add_subcommand("gen-world", "emit synthetic scene images and specs");
  int gw_count = 10;
  std::uint64_t gw_seed = 0;
  std::string gw_out = "world";
  gen->add_option("--count", gw_count, "number of scenes")->capture_default_str();
  auto* gw_seed_opt = gen->add_option("--seed", gw_seed, "base scene seed")->capture_default_str();
  gen->add_option("--out", gw_out, "output directory")->capture_default_str();

  // build-dataset
  auto* build = app.add_subcommand("build-dataset", "run the five-step construction pipeline");
  int bd_scenes = 50;
  std::string bd_config, bd_out = "dataset";
  build->add_option("--scenes", bd_scenes, "number of scenes to process")->capture_default_str();
  build->add_option("--config", bd_config, "run config file (key=value)");
  build->add_option("--out", bd_out, "output directory")->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "run one training stage");
  int tr_stage = 1;
  std::string tr_data, tr_from, tr_out = "checkpoint.bin", tr_config;
  std::uint64_t tr_seed = 0;
  train->add_option("--stage", tr_stage, "training stage (1, 2 or 3)")
      ->check(CLI::Range(1, 3))
      ->required();
  train->add_option("--data", tr_data, "manifest file of the training dataset")->required();
  train->add_option("--from-checkpoint", tr_from, "checkpoint of the previous stage");
  train->add_option("--out", tr_out, "checkpoint output path")->capture_default_str();
  train->add_option("--config", tr_config, "run config file (stage 1 only)");
  auto* tr_seed_opt = train->add_option("--seed", tr_seed, "training seed")->capture_default_str();

  // edit
  auto* edit = app.add_subcommand("edit", "edit one image with a trained checkpoint");
  std::string ed_ck, ed_img, ed_instr, ed_out = "edited.ppm";
  double ed_lambda = 1.0;
  std::uint64_t ed_seed = 0;
  edit->add_option("--checkpoint", ed_ck, "stage-3 checkpoint")->required();
  edit->add_option("--image", ed_img, "source image (P6 ppm)")->required();
  edit->add_option("--instruction", ed_instr, "edit instruction")->required();
  edit->add_option("--lambda", ed_lambda, "image-condition weight")->capture_default_str();
  auto* ed_seed_opt = edit->add_option("--seed", ed_seed, "sampling seed")->capture_default_str();
  edit->add_option("--out", ed_out, "output image path")->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "score predictions against a manifest");
  std::string ev_manifest, ev_pred, ev_scorer = "builtin-mock", ev_out;
  double ev_tau = 7.0;
  int ev_workers = 1;
  ev->add_option("--manifest", ev_manifest, "manifest file")->required();
  ev->add_option("--pred", ev_pred, "directory with <id>.ppm predictions")->required();
  ev->add_option("--scorer", ev_scorer, "builtin-mock, exec:<command>, or none")
      ->capture_default_str();
  ev->add_option("--out", ev_out, "report csv path");
  ev->add_option("--tau-q", ev_tau, "acceptance threshold for the scorer")->capture_default_str();
  ev->add_option("--workers", ev_workers, "parallel metric rows")->capture_default_str();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference oracle over model blocks");
  std::string gc_module = "all";
  gc->add_option("--module", gc_module, "block name or 'all'")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed())
      return cmd_gen_world(gw_count, env_seed_fallback(gw_seed, gw_seed_opt->count() > 0), gw_out);
    if (build->parsed()) return cmd_build_dataset(bd_scenes, bd_config, bd_out);
    if (train->parsed())
      return cmd_train(tr_stage, tr_data, tr_from, tr_out, tr_config, tr_seed,
                       tr_seed_opt->count() > 0);
    if (edit->parsed())
      return cmd_edit(ed_ck, ed_img, ed_instr, ed_lambda, ed_seed, ed_seed_opt->count() > 0,
                      ed_out);
    if (ev->parsed()) return cmd_eval(ev_manifest, ev_pred, ev_scorer, ev_out, ev_tau, ev_workers);
    if (gc->parsed()) return cmd_gradcheck(gc_module);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
