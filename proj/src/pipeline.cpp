#include "bridgecond/pipeline.hpp"

#include <csignal>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "bridgecond/vocab.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace bridgecond {

const char* task_name(TaskKind t) {
  switch (t) {
    case TaskKind::Removal: return "removal";
    case TaskKind::Addition: return "addition";
    case TaskKind::Replacement: return "replacement";
  }
  return "?";
}

const char* mode_name(InstructionMode m) {
  switch (m) {
    case InstructionMode::Template: return "template";
    case InstructionMode::Simple: return "simple";
    case InstructionMode::Advanced: return "advanced";
  }
  return "?";
}

TaskKind parse_task(const std::string& s) {
  if (s == "removal") return TaskKind::Removal;
  if (s == "addition") return TaskKind::Addition;
  if (s == "replacement") return TaskKind::Replacement;
  throw std::invalid_argument("unknown task '" + s + "'");
}

InstructionMode parse_mode(const std::string& s) {
  if (s == "template") return InstructionMode::Template;
  if (s == "simple") return InstructionMode::Simple;
  if (s == "advanced") return InstructionMode::Advanced;
  throw std::invalid_argument("unknown instruction mode '" + s + "'");
}

// ---- scorer ----

ScorerAdapter::ScorerAdapter(const std::string& spec, double tau_q, double timeout_s)
    : tau_q_(tau_q), timeout_s_(timeout_s) {
  if (spec == "builtin-mock") {
    command_.clear();
  } else if (spec.rfind("exec:", 0) == 0) {
    command_ = spec.substr(5);
    if (command_.empty()) throw std::invalid_argument("scorer: empty exec command");
  } else {
    throw std::invalid_argument("scorer: expected 'builtin-mock' or 'exec:<command>', got '" +
                                spec + "'");
  }
}

ScorerAdapter::~ScorerAdapter() { shutdown(); }

namespace {

double image_mse(const RasterImage& a, const RasterImage& b, const Mask& region, bool inside) {
  double acc = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      if ((region.at(x, y) != 0) != inside) continue;
      for (int c = 0; c < 3; ++c) {
        const double d = a.at(x, y, c) - b.at(x, y, c);
        acc += d * d;
      }
      ++n;
    }
  return n ? acc / static_cast<double>(3 * n) : 0.0;
}

// fraction of interior pixels that differ from all four neighbors by more
// than 0.25 in any channel; clean flat renders score 0
double isolated_pixel_fraction(const RasterImage& img) {
  if (img.width < 3 || img.height < 3) return 0.0;
  std::size_t bad = 0, n = 0;
  for (int y = 1; y < img.height - 1; ++y)
    for (int x = 1; x < img.width - 1; ++x) {
      ++n;
      bool isolated = true;
      const int nb[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
      for (const auto& d : nb) {
        double diff = 0.0;
        for (int c = 0; c < 3; ++c)
          diff = std::max(diff, std::abs(img.at(x, y, c) - img.at(x + d[0], y + d[1], c)));
        if (diff <= 0.25) {
          isolated = false;
          break;
        }
      }
      bad += isolated;
    }
  return n ? static_cast<double>(bad) / static_cast<double>(n) : 0.0;
}

}  // namespace

ScorerResult ScorerAdapter::score_builtin(const EditSample& sample) const {
  ScorerResult r;
  const double bg_mse = image_mse(sample.src, sample.tgt, sample.mask, false);
  const double edit_mse = image_mse(sample.src, sample.tgt, sample.mask, true);
  r.sc_overedit = 10.0 * (1.0 - std::min(1.0, bg_mse));
  r.sc_follow = 10.0 * std::min(1.0, edit_mse / 0.01);
  r.pq = 10.0 * (1.0 - std::min(1.0, 20.0 * isolated_pixel_fraction(sample.tgt)));
  r.ok = true;
  return r;
}

bool ScorerAdapter::launch() {
  std::signal(SIGPIPE, SIG_IGN);
  int to_pipe[2], from_pipe[2];
  if (pipe(to_pipe) != 0 || pipe(from_pipe) != 0) return false;
  const pid_t pid = fork();
  if (pid < 0) return false;
  if (pid == 0) {
    dup2(to_pipe[0], 0);
    dup2(from_pipe[1], 1);
    close(to_pipe[0]);
    close(to_pipe[1]);
    close(from_pipe[0]);
    close(from_pipe[1]);
    execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  close(to_pipe[0]);
  close(from_pipe[1]);
  to_child_ = to_pipe[1];
  from_child_ = from_pipe[0];
  child_pid_ = pid;
  read_buf_.clear();
  return true;
}

void ScorerAdapter::shutdown() {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  to_child_ = from_child_ = -1;
  if (child_pid_ > 0) {
    kill(static_cast<pid_t>(child_pid_), SIGKILL);
    int status = 0;
    waitpid(static_cast<pid_t>(child_pid_), &status, 0);
    child_pid_ = -1;
  }
}

ScorerResult ScorerAdapter::score_external(const EditSample& sample) {
  ScorerResult fail;
  if (child_pid_ < 0 && !launch()) {
    ++failures_;
    return fail;
  }
  ordered_json req = {{"src_path", sample.src_path},
                      {"tgt_path", sample.tgt_path},
                      {"instruction", sample.instruction}};
  std::string line = req.dump();
  line.push_back('\n');
  std::size_t written = 0;
  while (written < line.size()) {
    const ssize_t n = write(to_child_, line.data() + written, line.size() - written);
    if (n <= 0) {
      ++failures_;
      shutdown();
      return fail;
    }
    written += static_cast<std::size_t>(n);
  }

  const auto deadline_ms = static_cast<long>(timeout_s_ * 1000.0);
  long waited = 0;
  for (;;) {
    const auto nl = read_buf_.find('\n');
    if (nl != std::string::npos) {
      const std::string reply = read_buf_.substr(0, nl);
      read_buf_.erase(0, nl + 1);
      try {
        auto j = nlohmann::json::parse(reply);
        ScorerResult r;
        r.sc_follow = j.at("sc_follow").get<double>();
        r.sc_overedit = j.at("sc_overedit").get<double>();
        r.pq = j.at("pq").get<double>();
        const auto in_range = [](double v) { return v >= 0.0 && v <= 10.0; };
        if (!in_range(r.sc_follow) || !in_range(r.sc_overedit) || !in_range(r.pq))
          throw std::runtime_error("score out of [0,10]");
        r.ok = true;
        return r;
      } catch (const std::exception&) {
        ++failures_;
        shutdown();
        return fail;
      }
    }
    if (waited >= deadline_ms) {  // timeout
      ++failures_;
      shutdown();
      return fail;
    }
    pollfd pfd{from_child_, POLLIN, 0};
    const int pr = poll(&pfd, 1, static_cast<int>(std::min<long>(deadline_ms - waited, 200)));
    waited += 200;
    if (pr < 0) {
      ++failures_;
      shutdown();
      return fail;
    }
    if (pr > 0 && (pfd.revents & (POLLIN | POLLHUP))) {
      char chunk[4096];
      const ssize_t n = read(from_child_, chunk, sizeof(chunk));
      if (n <= 0) {
        ++failures_;
        shutdown();
        return fail;
      }
      read_buf_.append(chunk, static_cast<std::size_t>(n));
    }
  }
}

ScorerResult ScorerAdapter::score(const EditSample& sample) {
  return command_.empty() ? score_builtin(sample) : score_external(sample);
}

bool quality_filter(EditSample& sample, ScorerAdapter& scorer) {
  const ScorerResult r = scorer.score(sample);
  if (!r.ok) {
    sample.scored = false;
    sample.accepted = false;
    return false;
  }
  sample.scored = true;
  sample.sc_follow = r.sc_follow;
  sample.sc_overedit = r.sc_overedit;
  sample.pq = r.pq;
  sample.sc = std::min(r.sc_follow, r.sc_overedit);
  sample.overall = std::sqrt(sample.sc * r.pq);
  sample.accepted = sample.overall >= scorer.tau_q();
  return sample.accepted;
}

// ---- pair construction ----

namespace {

RasterImage composite(const RasterImage& outside_src, const RasterImage& inside_src,
                      const Mask& mask) {
  RasterImage out = outside_src;
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      if (mask.at(x, y))
        for (int c = 0; c < 3; ++c) out.at(x, y, c) = inside_src.at(x, y, c);
  return out;
}

Mask mask_union(const Mask& a, const Mask& b) {
  Mask out = a;
  for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = out.bits[i] || b.bits[i];
  return out;
}

double color_dist2(int a, int b) {
  const auto& p = palette();
  const double dr = p[a].r - p[b].r, dg = p[a].g - p[b].g, db = p[a].b - p[b].b;
  return dr * dr + dg * dg + db * db;
}

}  // namespace

EditSample build_edit_pair(const SceneSpec& scene, const ObjectRecord& rec, TaskKind task, Rng& rng,
                           int close_radius) {
  if (rec.mask.count() == 0)
    throw std::invalid_argument("build_edit_pair: record has an empty mask");
  const PlacedShape& shape = scene.shapes[static_cast<std::size_t>(rec.object_index)];
  const RasterImage src = render_scene(scene, rec.mask.width);

  EditSample s;
  s.task = task_name(task);
  s.mode = mode_name(InstructionMode::Template);

  if (task == TaskKind::Removal || task == TaskKind::Addition) {
    SceneSpec without = scene;
    without.shapes.erase(without.shapes.begin() + rec.object_index);
    const RasterImage removed = render_scene(without, rec.mask.width);
    const Mask closed = morph_close(rec.mask, close_radius);
    const RasterImage tgt = composite(src, removed, closed);
    s.mask = closed;
    if (task == TaskKind::Removal) {
      s.src = src;
      s.tgt = tgt;
      s.instruction = "remove the " + rec.simple_caption + ".";
    } else {
      // addition: the removal pair with source and target swapped
      s.src = tgt;
      s.tgt = src;
      s.instruction = "add the " + rec.simple_caption + ".";
    }
    return s;
  }

  // replacement: propose a distinct (color, kind), respecting the world's
  // contrast-floor rule against the background
  const auto& pal = palette();
  int new_color = shape.color_id;
  ShapeKind new_kind = shape.kind;
  for (int tries = 0; tries < 256; ++tries) {
    new_kind = static_cast<ShapeKind>(rng.uniform_int(3));
    new_color = static_cast<int>(rng.uniform_int(pal.size()));
    if (color_dist2(new_color, scene.bg_color_id) < 0.3) continue;
    bool clash = false;
    for (const auto& other : scene.shapes)
      clash = clash || (other.kind == new_kind && other.color_id == new_color);
    if (!clash) break;
  }
  if (new_kind == shape.kind && new_color == shape.color_id)
    throw std::runtime_error("build_edit_pair: replacement proposal equals the original object");

  SceneSpec replaced = scene;
  auto& rs = replaced.shapes[static_cast<std::size_t>(rec.object_index)];
  rs.kind = new_kind;
  rs.color_id = new_color;
  const RasterImage tgt_render = render_scene(replaced, rec.mask.width);
  const Mask new_visible = shape_mask_visible(replaced, rec.object_index, rec.mask.width);
  const Mask closed = morph_close(mask_union(rec.mask, new_visible), close_radius);
  s.src = src;
  s.tgt = composite(src, tgt_render, closed);
  s.mask = closed;
  const std::string new_caption = std::string(pal[new_color].name) + " " + shape_kind_name(new_kind);
  s.instruction = "replace the " + rec.simple_caption + " with the " + new_caption + ".";
  return s;
}

// ---- recaptioning ----

namespace {

std::string strip_size_suffix(const std::string& detailed) {
  // detailed captions end with ", <size-word>"; the rewrites drop it
  const auto pos = detailed.rfind(", ");
  return pos == std::string::npos ? detailed : detailed.substr(0, pos);
}

// object name of the replacement target out of the template instruction
std::string replacement_target(const std::string& instruction) {
  const std::string key = " with the ";
  const auto pos = instruction.find(key);
  if (pos == std::string::npos) throw std::logic_error("replacement instruction without target");
  std::string tail = instruction.substr(pos + key.size());
  if (!tail.empty() && tail.back() == '.') tail.pop_back();
  return tail;
}

// true if shape `idx` is the strict argmax (or argmin) of size, optionally
// restricted to shapes sharing its color
bool superlative_unique(const SceneSpec& scene, int idx, bool largest, bool same_color_only) {
  const auto& me = scene.shapes[static_cast<std::size_t>(idx)];
  for (std::size_t i = 0; i < scene.shapes.size(); ++i) {
    if (static_cast<int>(i) == idx) continue;
    const auto& other = scene.shapes[i];
    if (same_color_only && other.color_id != me.color_id) continue;
    if (largest ? other.size >= me.size : other.size <= me.size) return false;
  }
  return true;
}

}  // namespace

std::string recaption(const EditSample& sample, const ObjectRecord& rec, const SceneSpec& scene,
                      InstructionMode mode, Rng& rng) {
  const TaskKind task = parse_task(sample.task);
  if (mode == InstructionMode::Template) return sample.instruction;

  if (mode == InstructionMode::Simple) {
    const std::string& x = rec.simple_caption;
    switch (task) {
      case TaskKind::Removal: {
        const std::string v[] = {"Delete the " + x + ".", "Erase the " + x + ".",
                                 "Take away the " + x + ".", "Get rid of the " + x + "."};
        return v[rng.uniform_int(4)];
      }
      case TaskKind::Addition: {
        const std::string v[] = {"Insert the " + x + ".", "Place the " + x + ".",
                                 "Put in the " + x + ".", "Draw the " + x + "."};
        return v[rng.uniform_int(4)];
      }
      case TaskKind::Replacement: {
        const std::string y = replacement_target(sample.instruction);
        const std::string v[] = {"Swap the " + x + " for the " + y + ".",
                                 "Substitute the " + y + " for the " + x + ".",
                                 "Change the " + x + " into the " + y + ".",
                                 "Turn the " + x + " into the " + y + "."};
        return v[rng.uniform_int(4)];
      }
    }
  }

  // advanced: prefer an answerable reasoning form, otherwise substitute the
  // detailed description into the task template
  const auto& me = scene.shapes[static_cast<std::size_t>(rec.object_index)];
  const std::string color = palette()[me.color_id].name;
  std::vector<std::string> questions;
  if (task != TaskKind::Addition) {
    for (const bool largest : {true, false}) {
      if (scene.shapes.size() > 1 && superlative_unique(scene, rec.object_index, largest, false))
        questions.push_back(std::string("What is the ") + (largest ? "largest" : "smallest") +
                            " object?");
      if (superlative_unique(scene, rec.object_index, largest, true))
        questions.push_back(std::string("What is the ") + (largest ? "largest" : "smallest") + " " +
                            color + " object?");
    }
  }
  const std::string detailed = strip_size_suffix(rec.detailed_caption);
  std::string action;
  switch (task) {
    case TaskKind::Removal: action = "Remove it."; break;
    case TaskKind::Replacement:
      action = "Replace it with the " + replacement_target(sample.instruction) + ".";
      break;
    case TaskKind::Addition: break;  // no reasoning form; the object is absent from the source
  }
  if (!questions.empty() && rng.uniform() < 0.5) {
    return questions[rng.uniform_int(questions.size())] + " " + action;
  }
  switch (task) {
    case TaskKind::Removal: return "Remove " + detailed + ".";
    case TaskKind::Addition: return "Add " + detailed + ".";
    case TaskKind::Replacement:
      return "Replace " + detailed + " with the " + replacement_target(sample.instruction) + ".";
  }
  throw std::logic_error("recaption: unreachable");
}

// ---- pipeline ----

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t x = seed;
  x ^= (a + 0x9e3779b97f4a7c15ULL) * 0xff51afd7ed558ccdULL;
  x ^= (b + 0xc4ceb9fe1a85ec53ULL) * 0xc6a4a7935bd1e995ULL;
  x ^= (c + 0x2545f4914f6cdd1dULL) * 0x9e3779b97f4a7c15ULL;
  x ^= x >> 33;
  return x;
}

std::string scene_tag(int idx) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "s%04d", idx);
  return buf;
}

struct SceneJob {
  int idx = 0;
  SceneSpec scene;
  RasterImage src;
  std::vector<ObjectRecord> kept;
  int objects_found = 0;
  // per (object, task) pair outputs and per-mode rows
  struct PairOut {
    EditSample base;
    int object_index;
    std::vector<EditSample> rows;  // one per instruction mode
  };
  std::vector<PairOut> pairs;
};

void build_scene_job(SceneJob& job, const RunConfig& cfg, const std::vector<TaskKind>& tasks,
                     const std::vector<InstructionMode>& modes) {
  job.scene = gen_scene(cfg.seed + static_cast<std::uint64_t>(job.idx), cfg.image_size);
  job.src = render_scene(job.scene, cfg.image_size);
  auto records = extract_objects(job.scene);
  job.objects_found = static_cast<int>(records.size());
  job.kept = gen_masks(job.scene, std::move(records), cfg.tau_conf, cfg.image_size);
  const std::string tag = scene_tag(job.idx);
  for (const auto& rec : job.kept) {
    for (const TaskKind task : tasks) {
      Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(job.idx),
                       static_cast<std::uint64_t>(rec.object_index),
                       static_cast<std::uint64_t>(task) + 1));
      SceneJob::PairOut pair;
      pair.object_index = rec.object_index;
      pair.base = build_edit_pair(job.scene, rec, task, rng, cfg.close_radius);
      for (const InstructionMode mode : modes) {
        Rng mrng(mix_seed(cfg.seed, static_cast<std::uint64_t>(job.idx),
                          static_cast<std::uint64_t>(rec.object_index) * 16 +
                              static_cast<std::uint64_t>(task),
                          static_cast<std::uint64_t>(mode) + 100));
        EditSample row = pair.base;
        row.mode = mode_name(mode);
        row.instruction = recaption(pair.base, rec, job.scene, mode, mrng);
        row.id = tag + "-o" + std::to_string(rec.object_index) + "-" + row.task + "-" + row.mode;
        pair.rows.push_back(std::move(row));
      }
      job.pairs.push_back(std::move(pair));
    }
  }
}

}  // namespace

Manifest run_pipeline(int n_scenes, const RunConfig& cfg, const std::string& out_dir,
                      PipelineCounts* counts) {
  if (n_scenes < 0) throw std::invalid_argument("run_pipeline: negative scene count");
  std::vector<TaskKind> tasks;
  for (const auto& t : split_list(cfg.pipeline_tasks)) tasks.push_back(parse_task(t));
  std::vector<InstructionMode> modes;
  for (const auto& m : split_list(cfg.pipeline_modes)) modes.push_back(parse_mode(m));
  if (tasks.empty() || modes.empty())
    throw std::invalid_argument("run_pipeline: tasks and modes must be non-empty");

  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec) throw std::runtime_error("run_pipeline: cannot create " + out_dir + ": " + ec.message());

  write_vocab(build_vocab(cfg.r_mm), (fs::path(out_dir) / "vocab.txt").string());

  std::vector<SceneJob> jobs(static_cast<std::size_t>(n_scenes));
  for (int i = 0; i < n_scenes; ++i) jobs[static_cast<std::size_t>(i)].idx = i;

  const int workers = std::max(1, cfg.workers);
  if (workers == 1) {
    for (auto& job : jobs) build_scene_job(job, cfg, tasks, modes);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w]() {
        for (std::size_t i = static_cast<std::size_t>(w); i < jobs.size();
             i += static_cast<std::size_t>(workers))
          build_scene_job(jobs[i], cfg, tasks, modes);
      });
    for (auto& th : pool) th.join();
  }

  PipelineCounts local;
  local.scenes = n_scenes;

  ScorerAdapter scorer(cfg.scorer, cfg.tau_q, cfg.scorer_timeout_s);
  Manifest manifest;
  bool cap_reached = false;
  for (auto& job : jobs) {
    if (cap_reached) break;
    local.objects_found += job.objects_found;
    local.masks_kept += static_cast<int>(job.kept.size());
    const std::string tag = scene_tag(job.idx);
    const std::string src_rel = "images/" + tag + "_src.ppm";
    bool src_written = false;
    for (auto& pair : job.pairs) {
      if (cap_reached) break;
      ++local.pairs_built;
      const std::string obj = "o" + std::to_string(pair.object_index);
      const TaskKind task = parse_task(pair.base.task);
      // removal and addition share files; replacement has its own target+mask
      std::string a_rel, b_rel, m_rel;
      if (task == TaskKind::Replacement) {
        a_rel = src_rel;
        b_rel = "images/" + tag + "_" + obj + "_replaced.ppm";
        m_rel = "images/" + tag + "_" + obj + "_rmask.pgm";
        write_ppm(pair.base.tgt, (fs::path(out_dir) / b_rel).string());
        write_pgm(pair.base.mask, (fs::path(out_dir) / m_rel).string());
      } else {
        // removal and addition reference the same two renders
        a_rel = src_rel;
        b_rel = "images/" + tag + "_" + obj + "_removed.ppm";
        m_rel = "images/" + tag + "_" + obj + "_mask.pgm";
        const RasterImage& removed_img =
            task == TaskKind::Removal ? pair.base.tgt : pair.base.src;
        write_ppm(removed_img, (fs::path(out_dir) / b_rel).string());
        write_pgm(pair.base.mask, (fs::path(out_dir) / m_rel).string());
      }
      if (!src_written) {
        write_ppm(job.src, (fs::path(out_dir) / src_rel).string());
        src_written = true;
      }
      for (auto& row : pair.rows) {
        if (cap_reached) break;
        if (task == TaskKind::Addition) {
          row.src_path = b_rel;  // swapped pair: source is the removed render
          row.tgt_path = a_rel;
        } else if (task == TaskKind::Removal) {
          row.src_path = a_rel;
          row.tgt_path = b_rel;
        } else {
          row.src_path = a_rel;
          row.tgt_path = b_rel;
        }
        row.mask_path = m_rel;
        // external scorers read files; make paths absolute for them
        EditSample scoring_view = row;
        scoring_view.src_path = (fs::path(out_dir) / row.src_path).string();
        scoring_view.tgt_path = (fs::path(out_dir) / row.tgt_path).string();
        quality_filter(scoring_view, scorer);
        row.scored = scoring_view.scored;
        row.sc_follow = scoring_view.sc_follow;
        row.sc_overedit = scoring_view.sc_overedit;
        row.pq = scoring_view.pq;
        row.sc = scoring_view.sc;
        row.overall = scoring_view.overall;
        row.accepted = scoring_view.accepted;
        local.accepted += row.accepted;
        ++local.rows_written;
        manifest.rows.push_back(row);
        if (cfg.max_samples > 0 && static_cast<int>(manifest.rows.size()) >= cfg.max_samples)
          cap_reached = true;
      }
    }
  }
  local.scorer_failures = scorer.failures();
  write_manifest(manifest, (fs::path(out_dir) / "manifest.jsonl").string());
  if (counts) *counts = local;
  return manifest;
}

std::string manifest_line(const EditSample& s) {
  ordered_json j;
  j["id"] = s.id;
  j["task"] = s.task;
  j["mode"] = s.mode;
  j["instruction"] = s.instruction;
  j["src_path"] = s.src_path;
  j["tgt_path"] = s.tgt_path;
  j["mask_path"] = s.mask_path;
  if (s.scored) {
    j["scores"] = ordered_json{{"sc_follow", s.sc_follow},
                               {"sc_overedit", s.sc_overedit},
                               {"pq", s.pq},
                               {"sc", s.sc},
                               {"overall", s.overall}};
  } else {
    j["scores"] = nullptr;
  }
  j["accepted"] = s.accepted;
  return j.dump();
}

void write_manifest(const Manifest& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_manifest: cannot open " + path);
  for (const auto& row : m.rows) out << manifest_line(row) << "\n";
}

Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_manifest: cannot open " + path);
  Manifest m;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    EditSample s;
    s.id = j.at("id").get<std::string>();
    s.task = j.at("task").get<std::string>();
    s.mode = j.at("mode").get<std::string>();
    s.instruction = j.at("instruction").get<std::string>();
    s.src_path = j.at("src_path").get<std::string>();
    s.tgt_path = j.at("tgt_path").get<std::string>();
    s.mask_path = j.at("mask_path").get<std::string>();
    if (!j.at("scores").is_null()) {
      s.scored = true;
      s.sc_follow = j["scores"].at("sc_follow").get<double>();
      s.sc_overedit = j["scores"].at("sc_overedit").get<double>();
      s.pq = j["scores"].at("pq").get<double>();
      s.sc = j["scores"].at("sc").get<double>();
      s.overall = j["scores"].at("overall").get<double>();
    }
    s.accepted = j.at("accepted").get<bool>();
    m.rows.push_back(std::move(s));
  }
  return m;
}

std::vector<EditSample> load_dataset(const std::string& manifest_path, bool accepted_only) {
  Manifest m = read_manifest(manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  std::vector<EditSample> out;
  for (auto& row : m.rows) {
    if (accepted_only && !row.accepted) continue;
    row.src = read_ppm((base / row.src_path).string());
    row.tgt = read_ppm((base / row.tgt_path).string());
    row.mask = read_pgm((base / row.mask_path).string());
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace bridgecond
