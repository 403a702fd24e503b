#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bridgecond/config.hpp"
#include "bridgecond/sample_types.hpp"
#include "bridgecond/scene.hpp"

namespace bridgecond {

enum class TaskKind { Removal, Addition, Replacement };
enum class InstructionMode { Template, Simple, Advanced };

const char* task_name(TaskKind t);
const char* mode_name(InstructionMode m);
TaskKind parse_task(const std::string& s);
InstructionMode parse_mode(const std::string& s);

struct ScorerResult {
  bool ok = false;
  double sc_follow = 0, sc_overedit = 0, pq = 0;
};

// VIEScore stand-in. builtin-mock scores from the images directly; external
// commands speak one JSON object per line on stdin/stdout.
class ScorerAdapter {
 public:
  // spec: "builtin-mock" or "exec:<shell command>"
  ScorerAdapter(const std::string& spec, double tau_q, double timeout_s = 30.0);
  ~ScorerAdapter();

  ScorerAdapter(const ScorerAdapter&) = delete;
  ScorerAdapter& operator=(const ScorerAdapter&) = delete;

  ScorerResult score(const EditSample& sample);
  double tau_q() const { return tau_q_; }
  bool external() const { return !command_.empty(); }
  int failures() const { return failures_; }

 private:
  ScorerResult score_builtin(const EditSample& sample) const;
  ScorerResult score_external(const EditSample& sample);
  bool launch();
  void shutdown();

  std::string command_;  // empty = builtin mock
  double tau_q_;
  double timeout_s_;
  int failures_ = 0;
  // child process plumbing
  long child_pid_ = -1;
  int to_child_ = -1, from_child_ = -1;
  std::string read_buf_;
};

// SC = min(follow, overedit), overall = sqrt(SC * PQ); accepted iff
// overall >= tau_q. Returns acceptance and stores scores on the sample.
bool quality_filter(EditSample& sample, ScorerAdapter& scorer);

// Step-3 pair construction with closing + blending. For replacement the rng
// proposes a distinct (color, kind).
EditSample build_edit_pair(const SceneSpec& scene, const ObjectRecord& rec, TaskKind task, Rng& rng,
                           int close_radius);

// Step-4 rewrite of the template instruction.
std::string recaption(const EditSample& sample, const ObjectRecord& rec, const SceneSpec& scene,
                      InstructionMode mode, Rng& rng);

struct PipelineCounts {
  int scenes = 0;
  int objects_found = 0;
  int masks_kept = 0;
  int pairs_built = 0;
  int rows_written = 0;
  int accepted = 0;
  int scorer_failures = 0;
};

struct Manifest {
  std::vector<EditSample> rows;  // images not loaded unless asked
};

// Steps 1-5 over n_scenes seeds; writes images + manifest.jsonl + vocab.txt
// under out_dir. Deterministic for a fixed config. workers parallelizes scene
// construction; rows merge in seed order.
Manifest run_pipeline(int n_scenes, const RunConfig& cfg, const std::string& out_dir,
                      PipelineCounts* counts = nullptr);

void write_manifest(const Manifest& m, const std::string& path);
Manifest read_manifest(const std::string& path);

// Loads samples (with images) from a manifest; paths resolve relative to the
// manifest's directory.
std::vector<EditSample> load_dataset(const std::string& manifest_path, bool accepted_only = true);

std::string manifest_line(const EditSample& s);

}  // namespace bridgecond
