#include "bridgecond/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace bridgecond {

std::vector<std::string> trainable_mask(int stage) {
  switch (stage) {
    case 1: return {"lora", "mm_embeddings", "qformer", "iaa.mapper"};
    case 2: return {"lora", "mm_embeddings", "qformer", "iaa.mapper", "bim", "denoiser"};
    case 3: return {"iaa", "denoiser.cross_attn.img"};
    default: throw std::invalid_argument("trainable_mask: unknown stage " + std::to_string(stage));
  }
}

bool name_in_mask(const std::string& name, const std::vector<std::string>& mask) {
  for (const auto& prefix : mask) {
    if (name.size() >= prefix.size() && name.compare(0, prefix.size(), prefix) == 0) {
      // prefix must end on a dotted-path boundary
      if (name.size() == prefix.size() || name[prefix.size()] == '.') return true;
    }
  }
  return false;
}

double AdamW::effective_lr(const StageSchedule& sched, long step) const {
  const long warmup_steps =
      static_cast<long>(std::ceil(sched.warmup_ratio * static_cast<double>(sched.steps)));
  if (warmup_steps > 0 && step < warmup_steps)
    return sched.lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  return sched.lr;
}

void AdamW::step(const std::vector<Parameter*>& trainable, const StageSchedule& sched) {
  const double lr = effective_lr(sched, step_count_);
  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);
  for (Parameter* p : trainable) {
    Tensor& w = p->tensor;
    if (!w.has_grad()) continue;
    auto& slot = slots_[p->name];
    if (slot.m.empty()) {
      slot.m.assign(w.size(), 0.0);
      slot.v.assign(w.size(), 0.0);
    }
    const double* g = w.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (!std::isfinite(g[i]))
        throw NumericError("adamw_step: non-finite gradient in '" + p->name + "' at index " +
                           std::to_string(i));
      slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * g[i];
      slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + sched.weight_decay * w[i]);
    }
  }
}

namespace {

Tensor batch_mean(std::vector<Tensor> per_sample) {
  Tensor acc = per_sample[0];
  for (std::size_t i = 1; i < per_sample.size(); ++i) acc = ops::add(acc, per_sample[i]);
  return ops::scale(acc, 1.0 / static_cast<double>(per_sample.size()));
}

}  // namespace

LossParts stage_losses(const EditModel& model, int stage, const std::vector<const EditSample*>& batch,
                       Rng& noise_rng) {
  if (batch.empty()) throw std::invalid_argument("stage_losses: empty batch");
  if (stage < 1 || stage > 3)
    throw std::invalid_argument("stage_losses: unknown stage " + std::to_string(stage));

  std::vector<Tensor> llm, txt_feat, img_feat, sd, tgt_feat;
  std::vector<EditBatchItem> items;
  for (const EditSample* s : batch) {
    const bool with_image = stage >= 2;
    EditModel::Forward fwd = model.forward_conditioning(s->src, s->instruction, with_image);
    if (stage == 1) {
      llm.push_back(model.llm_loss(fwd));
      txt_feat.push_back(stage1_text_feature_loss(fwd.cond.q_prime, s->instruction, model.embedders()));
      img_feat.push_back(stage1_image_feature_loss(fwd.cond.mapped, s->src, model.embedders()));
      continue;
    }
    if (stage == 2) llm.push_back(model.llm_loss(fwd));
    tgt_feat.push_back(iaa_loss(fwd.cond.mapped, s->tgt, model.embedders()));
    EditBatchItem item;
    item.src_latent = model.codec().encode(s->src);
    item.tgt_latent = model.codec().encode(s->tgt);
    item.v_txt = fwd.cond.v_txt;
    item.f_txt = fwd.cond.f_txt;
    item.f_img = fwd.cond.f_img;
    item.t = 1 + static_cast<int>(noise_rng.uniform_int(static_cast<std::uint64_t>(model.schedule().T)));
    Tensor eps(item.tgt_latent.shape());
    for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = noise_rng.normal();
    item.eps = eps;
    items.push_back(std::move(item));
  }

  LossParts out;
  if (stage == 1) {
    out.parts.emplace_back("L_LLM", batch_mean(std::move(llm)));
    out.parts.emplace_back("L_text-feature", batch_mean(std::move(txt_feat)));
    out.parts.emplace_back("L_image-feature", batch_mean(std::move(img_feat)));
  } else if (stage == 2) {
    out.parts.emplace_back("L_LLM", batch_mean(std::move(llm)));
    out.parts.emplace_back("L_SD", sd_loss(model.denoiser(), model.schedule(), items,
                                           model.cfg().lambda_img));
    out.parts.emplace_back("L_target-image-feature", batch_mean(std::move(tgt_feat)));
  } else {
    out.parts.emplace_back("L_target-image-feature", batch_mean(std::move(tgt_feat)));
    out.parts.emplace_back("L_SD", sd_loss(model.denoiser(), model.schedule(), items,
                                           model.cfg().lambda_img));
  }
  out.total = out.parts[0].second;
  for (std::size_t i = 1; i < out.parts.size(); ++i)
    out.total = ops::add(out.total, out.parts[i].second);
  return out;
}

TrainResult train_stage(EditModel& model, int stage, const std::vector<EditSample>& dataset,
                        std::uint64_t seed, const std::string& trace_path) {
  if (dataset.empty()) throw std::invalid_argument("train_stage: empty dataset");
  const StageSchedule sched = model.cfg().stage_schedule(stage);
  const auto mask = trainable_mask(stage);

  std::vector<Parameter*> trainable;
  for (const auto& p : model.store().all()) {
    const bool on = !p->frozen && name_in_mask(p->name, mask);
    p->tensor.set_requires_grad(on);
    if (on) trainable.push_back(p.get());
  }

  AdamW opt;
  Rng order_rng(seed ^ 0x5eed0001u * static_cast<std::uint64_t>(stage));
  Rng noise_rng(seed ^ 0x5eed0002u * static_cast<std::uint64_t>(stage));

  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();  // forces a shuffle on first use

  TrainResult result;
  result.stage = stage;
  const int batch_size = std::min<int>(model.cfg().batch_size, static_cast<int>(dataset.size()));
  for (int step = 0; step < sched.steps; ++step) {
    std::vector<const EditSample*> batch;
    batch.reserve(static_cast<std::size_t>(batch_size));
    while (static_cast<int>(batch.size()) < batch_size) {
      if (cursor >= order.size()) {
        // seeded Fisher-Yates reshuffle per epoch
        for (std::size_t i = order.size(); i > 1; --i) {
          const std::size_t j = order_rng.uniform_int(i);
          std::swap(order[i - 1], order[j]);
        }
        cursor = 0;
      }
      batch.push_back(&dataset[order[cursor++]]);
    }

    TapeScope tape;
    LossParts lp = stage_losses(model, stage, batch, noise_rng);
    backward(lp.total);

    TraceRow row;
    row.step = step;
    row.stage = stage;
    row.total = lp.total.item();
    for (auto& [name, t] : lp.parts) row.parts.emplace_back(name, t.item());
    result.trace.push_back(row);

    opt.step(trainable, sched);
    for (Parameter* p : trainable) p->tensor.zero_grad();
  }
  result.steps_run = sched.steps;
  if (!trace_path.empty()) write_trace_csv(result.trace, trace_path);
  return result;
}

void write_trace_csv(const std::vector<TraceRow>& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("trace: cannot write " + path);
  out << "step,stage,total";
  if (!trace.empty())
    for (const auto& [name, v] : trace[0].parts) out << "," << name;
  out << "\n";
  char buf[64];
  for (const auto& row : trace) {
    out << row.step << "," << row.stage;
    std::snprintf(buf, sizeof(buf), "%.17g", row.total);
    out << "," << buf;
    for (const auto& [name, v] : row.parts) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << "," << buf;
    }
    out << "\n";
  }
}

// ---- checkpoint io ----

namespace {

constexpr char kMagic[] = "BRIDGECOND1";  // 11 bytes, no terminator on disk

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64s(std::ostream& os, const double* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &p[i], 8);
    put_u64(os, bits);
  }
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void get_f64s(std::istream& is, double* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t bits = get_u64(is);
    std::memcpy(&p[i], &bits, 8);
  }
}

std::string get_str(std::istream& is) {
  const std::uint64_t len = get_u64(is);
  std::string s(len, '\0');
  is.read(s.data(), static_cast<std::streamsize>(len));
  if (!is) throw std::runtime_error("checkpoint: truncated string");
  return s;
}

void put_str(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

}  // namespace

void save_checkpoint(const std::string& path, const EditModel& model, const AdamW* optimizer,
                     const Rng& rng, const CheckpointMeta& meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot write " + path);
  os.write(kMagic, 11);
  put_str(os, model.cfg().serialize());
  const auto& params = model.store().all();
  put_u64(os, params.size());
  for (const auto& p : params) {
    put_str(os, p->name);
    put_u64(os, static_cast<std::uint64_t>(p->tensor.rank()));
    for (int d = 0; d < p->tensor.rank(); ++d) put_u64(os, static_cast<std::uint64_t>(p->tensor.dim(d)));
    put_f64s(os, p->tensor.data(), p->tensor.size());
  }
  os.put(optimizer ? 1 : 0);
  if (optimizer) {
    put_u64(os, optimizer->slots().size());
    for (const auto& [name, slot] : optimizer->slots()) {
      put_str(os, name);
      put_u64(os, slot.m.size());
      put_f64s(os, slot.m.data(), slot.m.size());
      put_f64s(os, slot.v.data(), slot.v.size());
    }
    put_u64(os, static_cast<std::uint64_t>(optimizer->step_count()));
  }
  for (std::uint64_t w : rng.state()) put_u64(os, w);
  put_u32(os, static_cast<std::uint32_t>(meta.stage));
  put_u64(os, static_cast<std::uint64_t>(meta.step));
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

RunConfig read_checkpoint_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[11];
  is.read(magic, 11);
  if (!is || std::memcmp(magic, kMagic, 11) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  return RunConfig::parse(get_str(is));
}

LoadedCheckpoint load_checkpoint(const std::string& path, EditModel& model) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[11];
  is.read(magic, 11);
  if (!is || std::memcmp(magic, kMagic, 11) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);

  LoadedCheckpoint out;
  const std::string cfg_text = get_str(is);
  out.config = RunConfig::parse(cfg_text);
  if (model.cfg().serialize() != cfg_text)
    throw std::runtime_error("checkpoint: config mismatch between file and model");

  const std::uint64_t n_params = get_u64(is);
  if (n_params != model.store().all().size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  for (std::uint64_t i = 0; i < n_params; ++i) {
    const std::string name = get_str(is);
    Parameter* p = model.store().find(name);
    if (!p) throw std::runtime_error("checkpoint: unknown parameter '" + name + "'");
    const std::uint64_t rank = get_u64(is);
    if (rank != static_cast<std::uint64_t>(p->tensor.rank()))
      throw std::runtime_error("checkpoint: rank mismatch for '" + name + "'");
    for (std::uint64_t d = 0; d < rank; ++d) {
      if (get_u64(is) != static_cast<std::uint64_t>(p->tensor.dim(static_cast<int>(d))))
        throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
    }
    get_f64s(is, p->tensor.data(), p->tensor.size());
  }

  const int has_opt = is.get();
  if (has_opt == 1) {
    out.has_optimizer = true;
    const std::uint64_t n_slots = get_u64(is);
    for (std::uint64_t i = 0; i < n_slots; ++i) {
      const std::string name = get_str(is);
      AdamW::Slot slot;
      const std::uint64_t len = get_u64(is);
      slot.m.resize(len);
      slot.v.resize(len);
      get_f64s(is, slot.m.data(), len);
      get_f64s(is, slot.v.data(), len);
      out.optimizer.slots()[name] = std::move(slot);
    }
    out.optimizer.set_step_count(static_cast<long>(get_u64(is)));
  }
  std::array<std::uint64_t, 4> st{};
  for (auto& w : st) w = get_u64(is);
  out.rng.set_state(st);
  out.meta.stage = static_cast<int>(get_u32(is));
  out.meta.step = static_cast<long>(get_u64(is));
  return out;
}

}  // namespace bridgecond
