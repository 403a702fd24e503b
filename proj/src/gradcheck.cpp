#include "bridgecond/gradcheck.hpp"

#include <cmath>
#include <cstdio>
#include <functional>

#include "bridgecond/model.hpp"
#include "bridgecond/training.hpp"

namespace bridgecond {

using namespace ops;

double grad_rel_err(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 0.7) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-scale, scale);
  return t;
}

// fixed random projection so every output element participates in the loss
struct ScalarLoss {
  Tensor weights;
  explicit ScalarLoss(const std::vector<int>& out_shape, Rng& rng)
      : weights(random_tensor(out_shape, rng, 1.0)) {}
  Tensor operator()(const Tensor& out) const { return sum(mul(out, weights)); }
};

// Checks d(loss)/d(leaf) for every leaf against central differences.
// forward() must rebuild the whole graph from the current leaf values.
struct Harness {
  std::vector<Tensor*> leaves;
  std::function<Tensor()> forward;
  double h = 1e-5;

  GradCheckResult run(const std::string& name, double tol) {
    GradCheckResult res;
    res.block = name;
    for (Tensor* leaf : leaves) leaf->set_requires_grad(true);
    {
      TapeScope tape;
      Tensor loss = forward();
      backward(loss);
    }
    for (Tensor* leaf : leaves) {
      Tensor analytic(leaf->shape());
      for (std::size_t i = 0; i < leaf->size(); ++i) analytic[i] = leaf->grad()[i];
      Tensor numeric = finite_diff_grad([&]() { return forward().item(); }, *leaf, h);
      for (std::size_t i = 0; i < leaf->size(); ++i) {
        res.max_rel_err = std::max(res.max_rel_err, grad_rel_err(analytic[i], numeric[i]));
        ++res.checked;
      }
      leaf->zero_grad();
    }
    res.pass = res.max_rel_err < tol;
    return res;
  }
};

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.seed = 12345;
  cfg.image_size = 8;
  cfg.patch_size = 4;
  cfg.d_vision = 6;
  cfg.d_llm = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.r_mm = 2;
  cfg.lora_rank = 2;
  cfg.max_seq_len = 32;
  cfg.t_q = 2;
  cfg.d_cond = 6;
  cfg.n_img_tokens = 2;
  cfg.d_z = 4;
  cfg.latent_downsample = 1;
  cfg.denoiser_patch = 4;  // (8/4)^2 = 4 tokens
  cfg.d_model = 8;
  cfg.n_blocks = 1;
  cfg.denoiser_heads = 2;
  cfg.timesteps = 6;
  cfg.batch_size = 2;
  return cfg;
}

EditSample tiny_sample(Rng& rng, int size) {
  EditSample s;
  s.id = "gradcheck";
  s.task = "removal";
  s.mode = "template";
  s.instruction = "remove the red circle.";
  s.src = RasterImage(size, size);
  s.tgt = RasterImage(size, size);
  for (auto& v : s.src.pixels) v = rng.uniform(0.0, 1.0);
  for (auto& v : s.tgt.pixels) v = rng.uniform(0.0, 1.0);
  s.mask = Mask(size, size);
  for (auto& b : s.mask.bits) b = rng.uniform() < 0.3 ? 1 : 0;
  return s;
}

GradCheckResult check_stage_loss(int stage, double tol) {
  const RunConfig cfg = tiny_config();
  EditModel model(cfg);
  Rng rng(7);
  // wake the zero-initialized paths so the whole graph carries gradient
  for (const auto& p : model.store().all())
    if (p->name.rfind("denoiser.head", 0) == 0 || p->name.find("cross_attn.img") != std::string::npos ||
        p->name == "bim.vis.expand" || p->name.find("lora.") == 0)
      p->tensor = random_tensor(p->tensor.shape(), rng, 0.3);
  std::vector<EditSample> data = {tiny_sample(rng, cfg.image_size), tiny_sample(rng, cfg.image_size)};
  std::vector<const EditSample*> batch = {&data[0], &data[1]};

  const auto mask = trainable_mask(stage);
  Harness h;
  for (const auto& p : model.store().all()) {
    const bool on = !p->frozen && name_in_mask(p->name, mask);
    p->tensor.set_requires_grad(on);
    if (on) h.leaves.push_back(&p->tensor);
  }
  // identical noise draws on every evaluation keep the loss deterministic
  h.forward = [&model, stage, &batch]() {
    Rng noise(99);
    std::vector<const EditSample*> b = batch;
    return stage_losses(model, stage, b, noise).total;
  };
  GradCheckResult res = h.run("stage" + std::to_string(stage) + "_loss", tol);
  for (const auto& p : model.store().all()) p->tensor.set_requires_grad(false);
  return res;
}

}  // namespace

GradCheckResult gradcheck_block(const std::string& name, double tol) {
  Rng rng(2026);

  if (name == "matmul") {
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
    ScalarLoss loss({3, 2}, rng);
    Harness h{{&a, &b}, [&]() { return loss(matmul(a, b)); }};
    return h.run(name, tol);
  }
  if (name == "softmax") {
    Tensor x = random_tensor({3, 5}, rng);
    ScalarLoss loss({3, 5}, rng);
    Harness h{{&x}, [&]() { return loss(softmax(x)); }};
    return h.run(name, tol);
  }
  if (name == "layer_norm") {
    Tensor x = random_tensor({4, 6}, rng);
    Tensor g = random_tensor({6}, rng), b = random_tensor({6}, rng);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 1.0;
    ScalarLoss loss({4, 6}, rng);
    Harness h{{&x, &g, &b}, [&]() { return loss(layer_norm(x, g, b)); }};
    return h.run(name, tol);
  }
  if (name == "attention") {
    Tensor q = random_tensor({3, 4}, rng), k = random_tensor({5, 4}, rng),
           v = random_tensor({5, 6}, rng);
    ScalarLoss loss({3, 6}, rng);
    Harness h{{&q, &k, &v}, [&]() { return loss(scaled_dot_attention(q, k, v)); }};
    return h.run(name, tol);
  }
  if (name == "lora") {
    Parameter base("base", random_tensor({5, 4}, rng), true);
    Parameter a("a", random_tensor({2, 4}, rng));
    Parameter b("b", random_tensor({5, 2}, rng));
    Tensor x = random_tensor({3, 4}, rng);
    ScalarLoss loss({3, 5}, rng);
    Harness h{{&x, &a.tensor, &b.tensor},
              [&]() { return loss(lora_linear(x, base, a, b, 2.0)); }};
    return h.run(name, tol);
  }
  if (name == "gelu") {
    Tensor x = random_tensor({4, 4}, rng, 1.5);
    ScalarLoss loss({4, 4}, rng);
    Harness h{{&x}, [&]() { return loss(gelu(x)); }};
    return h.run(name, tol);
  }
  if (name == "mse") {
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    Harness h{{&a, &b}, [&]() { return mse(a, b); }};
    return h.run(name, tol);
  }
  if (name == "nll") {
    Tensor logits = random_tensor({4, 6}, rng, 2.0);
    Harness h{{&logits}, [&]() { return nll_loss(logits, {1, 3, 0, 5}); }};
    return h.run(name, tol);
  }
  if (name == "qformer") {
    const RunConfig cfg = tiny_config();
    ParameterStore store;
    Rng init(5);
    QFormer qf(cfg, store, init);
    Tensor h_in = random_tensor({cfg.r_mm, cfg.d_llm}, rng);
    ScalarLoss loss({cfg.t_q, cfg.d_cond}, rng);
    Harness h{{&h_in}, [&]() { return loss(qf.forward(h_in)); }};
    for (const auto& p : store.all()) {
      p->tensor.set_requires_grad(true);
      h.leaves.push_back(&p->tensor);
    }
    return h.run(name, tol);
  }
  if (name == "bim") {
    const RunConfig cfg = tiny_config();
    ParameterStore store;
    Rng init(6);
    Bim bim(cfg, store, init);
    // exercise the spatial-expansion path too
    store.find("bim.vis.expand")->tensor = random_tensor(store.find("bim.vis.expand")->tensor.shape(), init, 0.4);
    const int grid = cfg.image_size / cfg.patch_size;
    Tensor img = random_tensor({grid * grid, cfg.d_vision}, rng);
    Tensor qp = random_tensor({cfg.t_q, cfg.d_cond}, rng);
    Rng wrng(8);
    ScalarLoss l1({cfg.t_q, cfg.d_cond}, wrng);
    const int s = cfg.image_size / cfg.latent_downsample;
    const int n_tokens = (s / cfg.denoiser_patch) * (s / cfg.denoiser_patch);
    ScalarLoss l2({n_tokens, cfg.d_model}, wrng);
    Harness h{{&img, &qp}, [&]() {
                auto [f_txt, v_txt] = bim.forward(img, qp);
                return add(l1(f_txt), l2(v_txt));
              }};
    for (const auto& p : store.all()) {
      p->tensor.set_requires_grad(true);
      h.leaves.push_back(&p->tensor);
    }
    return h.run(name, tol);
  }
  if (name == "iaa") {
    const RunConfig cfg = tiny_config();
    ParameterStore store;
    Rng init(9);
    Iaa iaa(cfg, store, init);
    Tensor h_in = random_tensor({cfg.r_mm, cfg.d_llm}, rng);
    Rng wrng(10);
    ScalarLoss l1({1, cfg.d_cond}, wrng);
    ScalarLoss l2({cfg.n_img_tokens, cfg.d_cond}, wrng);
    Harness h{{&h_in}, [&]() {
                auto [mapped, f_img] = iaa.forward(h_in);
                return add(l1(mapped), l2(f_img));
              }};
    for (const auto& p : store.all()) {
      p->tensor.set_requires_grad(true);
      h.leaves.push_back(&p->tensor);
    }
    return h.run(name, tol);
  }
  if (name == "denoiser") {
    const RunConfig cfg = tiny_config();
    ParameterStore store;
    Rng init(11);
    Denoiser den(cfg, store, init);
    // random head and image-branch weights so every path carries gradient
    for (const auto& p : store.all())
      if (p->tensor.size() && (p->name.rfind("denoiser.head", 0) == 0 ||
                               p->name.find("cross_attn.img") != std::string::npos))
        p->tensor = random_tensor(p->tensor.shape(), init, 0.3);
    const int s = cfg.image_size / cfg.latent_downsample;
    Tensor z_t = random_tensor({cfg.d_z, s, s}, rng);
    Tensor src = random_tensor({cfg.d_z, s, s}, rng);
    Tensor v_txt = random_tensor({den.n_tokens(), cfg.d_model}, rng, 0.3);
    Tensor f_txt = random_tensor({cfg.t_q, cfg.d_cond}, rng);
    Tensor f_img = random_tensor({cfg.n_img_tokens, cfg.d_cond}, rng);
    ScalarLoss loss({cfg.d_z, s, s}, rng);
    Harness h{{&z_t, &src, &v_txt, &f_txt, &f_img},
              [&]() { return loss(den.predict(z_t, src, v_txt, f_txt, f_img, 3, 0.7)); }};
    for (const auto& p : store.all()) {
      p->tensor.set_requires_grad(true);
      h.leaves.push_back(&p->tensor);
    }
    return h.run(name, tol);
  }
  if (name == "stage1_loss") return check_stage_loss(1, tol);
  if (name == "stage2_loss") return check_stage_loss(2, tol);
  if (name == "stage3_loss") return check_stage_loss(3, tol);

  throw std::invalid_argument("gradcheck: unknown block '" + name + "'");
}

std::vector<std::string> gradcheck_block_names() {
  return {"matmul", "softmax", "layer_norm", "attention", "lora", "gelu", "mse",  "nll",
          "qformer", "bim",    "iaa",        "denoiser",  "stage1_loss", "stage2_loss",
          "stage3_loss"};
}

std::vector<GradCheckResult> run_gradcheck(const std::string& which, bool verbose, double tol) {
  std::vector<std::string> names =
      which == "all" ? gradcheck_block_names() : std::vector<std::string>{which};
  std::vector<GradCheckResult> results;
  if (verbose) std::printf("%-14s %-12s %-10s %s\n", "block", "max_rel_err", "checked", "status");
  for (const auto& name : names) {
    GradCheckResult r = gradcheck_block(name, tol);
    if (verbose)
      std::printf("%-14s %-12.3e %-10zu %s\n", r.block.c_str(), r.max_rel_err, r.checked,
                  r.pass ? "ok" : "FAIL");
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace bridgecond
