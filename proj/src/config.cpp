#include "bridgecond/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace bridgecond {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class T>
T parse_num(const std::string& s, const std::string& key);

template <>
int parse_num<int>(const std::string& s, const std::string& key) {
  std::size_t pos = 0;
  const int v = std::stoi(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("config: bad integer for " + key + ": " + s);
  return v;
}

template <>
std::uint64_t parse_num<std::uint64_t>(const std::string& s, const std::string& key) {
  std::size_t pos = 0;
  const unsigned long long v = std::stoull(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("config: bad integer for " + key + ": " + s);
  return v;
}

template <>
double parse_num<double>(const std::string& s, const std::string& key) {
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("config: bad number for " + key + ": " + s);
  return v;
}

// ordered field table; serialization order == declaration order here
const std::vector<std::pair<std::string, Field>>& fields() {
#define NUM_FIELD(name, member, type)                                             \
  {                                                                               \
    name, Field {                                                                 \
      [](const RunConfig& c) {                                                    \
        if constexpr (std::is_same_v<type, double>) return fmt_double(c.member);  \
        else return std::to_string(c.member);                                     \
      },                                                                          \
      [](RunConfig& c, const std::string& s) { c.member = parse_num<type>(s, name); } \
    }                                                                             \
  }
#define STR_FIELD(name, member)                                     \
  {                                                                 \
    name, Field { [](const RunConfig& c) { return c.member; },      \
                  [](RunConfig& c, const std::string& s) { c.member = s; } } \
  }
  static const std::vector<std::pair<std::string, Field>> kFields = {
      NUM_FIELD("seed", seed, std::uint64_t),
      NUM_FIELD("image_size", image_size, int),
      NUM_FIELD("patch_size", patch_size, int),
      NUM_FIELD("d_vision", d_vision, int),
      NUM_FIELD("d_llm", d_llm, int),
      NUM_FIELD("n_layers", n_layers, int),
      NUM_FIELD("n_heads", n_heads, int),
      NUM_FIELD("r_mm", r_mm, int),
      NUM_FIELD("lora_rank", lora_rank, int),
      NUM_FIELD("lora_alpha", lora_alpha, double),
      NUM_FIELD("max_seq_len", max_seq_len, int),
      NUM_FIELD("t_q", t_q, int),
      NUM_FIELD("d_cond", d_cond, int),
      NUM_FIELD("n_img_tokens", n_img_tokens, int),
      NUM_FIELD("d_z", d_z, int),
      NUM_FIELD("latent_downsample", latent_downsample, int),
      NUM_FIELD("denoiser_patch", denoiser_patch, int),
      NUM_FIELD("d_model", d_model, int),
      NUM_FIELD("n_blocks", n_blocks, int),
      NUM_FIELD("denoiser_heads", denoiser_heads, int),
      NUM_FIELD("timesteps", timesteps, int),
      NUM_FIELD("beta_start", beta_start, double),
      NUM_FIELD("beta_end", beta_end, double),
      NUM_FIELD("lambda", lambda_img, double),
      NUM_FIELD("batch_size", batch_size, int),
      NUM_FIELD("stage1_lr", stage1_lr, double),
      NUM_FIELD("stage1_wd", stage1_wd, double),
      NUM_FIELD("stage1_warmup", stage1_warmup, double),
      NUM_FIELD("stage1_steps", stage1_steps, int),
      NUM_FIELD("stage2_lr", stage2_lr, double),
      NUM_FIELD("stage2_wd", stage2_wd, double),
      NUM_FIELD("stage2_warmup", stage2_warmup, double),
      NUM_FIELD("stage2_steps", stage2_steps, int),
      NUM_FIELD("stage3_lr", stage3_lr, double),
      NUM_FIELD("stage3_wd", stage3_wd, double),
      NUM_FIELD("stage3_warmup", stage3_warmup, double),
      NUM_FIELD("stage3_steps", stage3_steps, int),
      NUM_FIELD("tau_conf", tau_conf, double),
      NUM_FIELD("tau_q", tau_q, double),
      NUM_FIELD("close_radius", close_radius, int),
      STR_FIELD("pipeline_tasks", pipeline_tasks),
      STR_FIELD("pipeline_modes", pipeline_modes),
      NUM_FIELD("max_samples", max_samples, int),
      STR_FIELD("scorer", scorer),
      NUM_FIELD("scorer_timeout_s", scorer_timeout_s, double),
      NUM_FIELD("workers", workers, int),
  };
#undef NUM_FIELD
#undef STR_FIELD
  return kFields;
}

void validate(const RunConfig& c) {
  if (c.d_llm % c.n_heads != 0)
    throw std::invalid_argument("config: d_llm must be divisible by n_heads");
  if (c.d_model % c.denoiser_heads != 0)
    throw std::invalid_argument("config: d_model must be divisible by denoiser_heads");
  if (c.r_mm < 1) throw std::invalid_argument("config: r_mm must be >= 1");
  if (c.image_size % c.patch_size != 0)
    throw std::invalid_argument("config: image_size must be divisible by patch_size");
  if (c.image_size % c.latent_downsample != 0)
    throw std::invalid_argument("config: image_size must be divisible by latent_downsample");
  const int s = c.image_size / c.latent_downsample;
  if (s % c.denoiser_patch != 0)
    throw std::invalid_argument("config: latent side must be divisible by denoiser_patch");
  if (c.timesteps < 1) throw std::invalid_argument("config: timesteps must be >= 1");
  if (!(c.beta_start > 0.0 && c.beta_end < 1.0 && c.beta_start <= c.beta_end))
    throw std::invalid_argument("config: betas must satisfy 0 < beta_start <= beta_end < 1");
}

}  // namespace

StageSchedule RunConfig::stage_schedule(int stage) const {
  switch (stage) {
    case 1: return {1, stage1_lr, stage1_wd, stage1_warmup, stage1_steps};
    case 2: return {2, stage2_lr, stage2_wd, stage2_warmup, stage2_steps};
    case 3: return {3, stage3_lr, stage3_wd, stage3_warmup, stage3_steps};
    default: throw std::invalid_argument("unknown stage " + std::to_string(stage));
  }
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  for (const auto& [name, field] : fields()) os << name << "=" << field.get(*this) << "\n";
  return os.str();
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::map<std::string, const Field*> by_name;
  for (const auto& [name, field] : fields()) by_name[name] = &field;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) + " has no '='");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    auto it = by_name.find(key);
    if (it == by_name.end())
      throw std::invalid_argument("config: unknown key '" + key + "'");
    it->second->set(cfg, val);
  }
  validate(cfg);
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void RunConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("config: cannot write " + path);
  out << serialize();
}

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : csv) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace bridgecond
