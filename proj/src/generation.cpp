#include "bridgecond/generation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bridgecond/comprehension.hpp"  // sinusoid_table

namespace bridgecond {

using namespace ops;

namespace {

// Gram-Schmidt over the rows of `m`; rows are seeded candidates.
void orthonormalize_rows(Tensor& m) {
  const int rows = m.rows(), n = m.cols();
  for (int i = 0; i < rows; ++i) {
    double* ri = m.data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < i; ++j) {
      const double* rj = m.data() + static_cast<std::size_t>(j) * n;
      double dot = 0.0;
      for (int k = 0; k < n; ++k) dot += ri[k] * rj[k];
      for (int k = 0; k < n; ++k) ri[k] -= dot * rj[k];
    }
    double norm = 0.0;
    for (int k = 0; k < n; ++k) norm += ri[k] * ri[k];
    norm = std::sqrt(norm);
    if (norm < 1e-9) throw std::runtime_error("codec: degenerate basis candidate");
    for (int k = 0; k < n; ++k) ri[k] /= norm;
  }
}

}  // namespace

LatentCodec::LatentCodec(const RunConfig& cfg, Rng& rng)
    : factor_(cfg.latent_downsample), d_z_(cfg.d_z), image_size_(cfg.image_size) {
  side_ = image_size_ / factor_;
  const int n = 3 * factor_ * factor_;
  if (d_z_ <= n) {
    // orthonormal rows; seed the first three with per-channel constants so
    // flat color patches survive the projection
    Tensor cand({d_z_, n});
    const int per = factor_ * factor_;
    for (int c = 0; c < std::min(3, d_z_); ++c)
      for (int k = 0; k < per; ++k) cand.at(c, c * per + k) = 1.0;
    for (int r = std::min(3, d_z_); r < d_z_; ++r)
      for (int k = 0; k < n; ++k) cand.at(r, k) = rng.normal();
    orthonormalize_rows(cand);
    proj_ = cand;
  } else {
    // wider than the patch: orthonormal columns, encode is an isometry
    Tensor cand({n, d_z_});
    for (std::size_t i = 0; i < cand.size(); ++i) cand[i] = rng.normal();
    orthonormalize_rows(cand);  // rows of [n x d_z] == columns of proj
    proj_ = Tensor({d_z_, n});
    for (int c = 0; c < d_z_; ++c)
      for (int k = 0; k < n; ++k) proj_.at(c, k) = cand.at(k, c);
  }
  lo_.assign(static_cast<std::size_t>(d_z_), 0.0);
  hi_.assign(static_cast<std::size_t>(d_z_), 0.0);
  for (int c = 0; c < d_z_; ++c)
    for (int k = 0; k < n; ++k) {
      const double w = proj_.at(c, k);
      if (w < 0) lo_[static_cast<std::size_t>(c)] += w;
      else hi_[static_cast<std::size_t>(c)] += w;
    }
}

Tensor LatentCodec::encode(const RasterImage& img) const {
  if (img.width != image_size_ || img.height != image_size_)
    throw std::invalid_argument("encode_latent: image must be " + std::to_string(image_size_) +
                                "x" + std::to_string(image_size_));
  const int n = 3 * factor_ * factor_, per = factor_ * factor_;
  Tensor z({d_z_, side_, side_});
  std::vector<double> patch(static_cast<std::size_t>(n));
  for (int by = 0; by < side_; ++by)
    for (int bx = 0; bx < side_; ++bx) {
      int k = 0;
      for (int c = 0; c < 3; ++c)
        for (int py = 0; py < factor_; ++py)
          for (int px = 0; px < factor_; ++px)
            patch[static_cast<std::size_t>(k++)] = img.at(bx * factor_ + px, by * factor_ + py, c);
      for (int c = 0; c < d_z_; ++c) {
        double acc = 0.0;
        const double* row = proj_.data() + static_cast<std::size_t>(c) * n;
        for (int j = 0; j < n; ++j) acc += row[j] * patch[static_cast<std::size_t>(j)];
        z[(static_cast<std::size_t>(c) * side_ + by) * side_ + bx] = acc;
      }
      (void)per;
    }
  return z;
}

RasterImage LatentCodec::decode(const Tensor& z) const {
  if (z.rank() != 3 || z.dim(0) != d_z_ || z.dim(1) != side_ || z.dim(2) != side_)
    throw std::invalid_argument("decode: latent must be [d_z x s x s], got " + z.shape_str());
  const int n = 3 * factor_ * factor_;
  RasterImage img(image_size_, image_size_);
  for (int by = 0; by < side_; ++by)
    for (int bx = 0; bx < side_; ++bx) {
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int c = 0; c < d_z_; ++c)
          acc += proj_.at(c, j) * z[(static_cast<std::size_t>(c) * side_ + by) * side_ + bx];
        const int ch = j / (factor_ * factor_);
        const int rem = j % (factor_ * factor_);
        const int py = rem / factor_, px = rem % factor_;
        img.at(bx * factor_ + px, by * factor_ + py, ch) = std::clamp(acc, 0.0, 1.0);
      }
    }
  return img;
}

NoiseSchedule::NoiseSchedule(int steps, double beta_start, double beta_end) : T(steps) {
  if (T < 1) throw std::invalid_argument("NoiseSchedule: T must be >= 1");
  betas.resize(static_cast<std::size_t>(T));
  alphas.resize(static_cast<std::size_t>(T));
  alpha_bars.resize(static_cast<std::size_t>(T) + 1);
  alpha_bars[0] = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / (T - 1);
    const double b = beta_start + frac * (beta_end - beta_start);
    if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("NoiseSchedule: beta out of (0,1)");
    betas[static_cast<std::size_t>(t - 1)] = b;
    alphas[static_cast<std::size_t>(t - 1)] = 1.0 - b;
    alpha_bars[static_cast<std::size_t>(t)] = alpha_bars[static_cast<std::size_t>(t - 1)] * (1.0 - b);
  }
}

Tensor add_noise(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& ns) {
  if (t < 0 || t > ns.T)
    throw std::invalid_argument("add_noise: t=" + std::to_string(t) + " outside [0," +
                                std::to_string(ns.T) + "]");
  if (z0.shape() != eps.shape())
    throw std::invalid_argument("add_noise: z0/eps shape mismatch");
  const double ab = ns.alpha_bar(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  Tensor out(z0.shape());
  for (std::size_t i = 0; i < z0.size(); ++i) out[i] = a * z0[i] + b * eps[i];
  return out;
}

DecoupledCrossAttention::DecoupledCrossAttention(const std::string& txt_prefix,
                                                 const std::string& img_prefix,
                                                 const std::string& common_prefix, int d_model,
                                                 int d_cond, ParameterStore& store, Rng& rng) {
  wq_ = store.create(common_prefix + ".wq", linear_init(d_model, d_model, rng));
  wo_ = store.create(common_prefix + ".wo", linear_init(d_model, d_model, rng));
  t_wk_ = store.create(txt_prefix + ".wk", linear_init(d_model, d_cond, rng));
  t_wv_ = store.create(txt_prefix + ".wv", linear_init(d_model, d_cond, rng));
  // zero-init: the image branch starts as a no-op and stage 3 grows it
  i_wk_ = store.create(img_prefix + ".wk", zeros({d_model, d_cond}));
  i_wv_ = store.create(img_prefix + ".wv", zeros({d_model, d_cond}));
}

Tensor DecoupledCrossAttention::forward(const Tensor& x, const Tensor& f_txt, const Tensor& f_img,
                                        double lambda) const {
  if (lambda < 0.0) throw std::invalid_argument("decoupled_cross_attention: lambda must be >= 0");
  Tensor q = matmul_nt(x, wq_->tensor);
  Tensor z = scaled_dot_attention(q, matmul_nt(f_txt, t_wk_->tensor),
                                  matmul_nt(f_txt, t_wv_->tensor));
  if (lambda != 0.0) {
    Tensor zi = scaled_dot_attention(q, matmul_nt(f_img, i_wk_->tensor),
                                     matmul_nt(f_img, i_wv_->tensor));
    z = add(z, scale(zi, lambda));
  }
  return matmul_nt(z, wo_->tensor);
}

Denoiser::Denoiser(const RunConfig& cfg, ParameterStore& store, Rng& rng)
    : d_z_(cfg.d_z),
      side_(cfg.image_size / cfg.latent_downsample),
      patch_(cfg.denoiser_patch),
      d_model_(cfg.d_model),
      n_heads_(cfg.denoiser_heads),
      timesteps_(cfg.timesteps) {
  const int grid = side_ / patch_;
  n_tokens_ = grid * grid;
  token_dim_ = 2 * d_z_ * patch_ * patch_;
  in_w_ = store.create("denoiser.input.w", linear_init(d_model_, token_dim_, rng));
  in_b_ = store.create("denoiser.input.b", zeros({d_model_}));
  blocks_.resize(static_cast<std::size_t>(cfg.n_blocks));
  for (int i = 0; i < cfg.n_blocks; ++i) {
    auto& B = blocks_[static_cast<std::size_t>(i)];
    const std::string bi = ".b" + std::to_string(i);
    B.ln1_g = store.create("denoiser.norm" + bi + ".ln1.gamma", ones({d_model_}));
    B.ln1_b = store.create("denoiser.norm" + bi + ".ln1.beta", zeros({d_model_}));
    B.ln2_g = store.create("denoiser.norm" + bi + ".ln2.gamma", ones({d_model_}));
    B.ln2_b = store.create("denoiser.norm" + bi + ".ln2.beta", zeros({d_model_}));
    B.ln3_g = store.create("denoiser.norm" + bi + ".ln3.gamma", ones({d_model_}));
    B.ln3_b = store.create("denoiser.norm" + bi + ".ln3.beta", zeros({d_model_}));
    B.sa_wq = store.create("denoiser.self_attn" + bi + ".wq", linear_init(d_model_, d_model_, rng));
    B.sa_wk = store.create("denoiser.self_attn" + bi + ".wk", linear_init(d_model_, d_model_, rng));
    B.sa_wv = store.create("denoiser.self_attn" + bi + ".wv", linear_init(d_model_, d_model_, rng));
    B.sa_wo = store.create("denoiser.self_attn" + bi + ".wo", linear_init(d_model_, d_model_, rng));
    B.cross = std::make_unique<DecoupledCrossAttention>(
        "denoiser.cross_attn.txt" + bi, "denoiser.cross_attn.img" + bi,
        "denoiser.cross_attn.common" + bi, d_model_, cfg.d_cond, store, rng);
    const int hidden = 2 * d_model_;
    B.mlp_w1 = store.create("denoiser.mlp" + bi + ".w1", linear_init(hidden, d_model_, rng));
    B.mlp_b1 = store.create("denoiser.mlp" + bi + ".b1", zeros({hidden}));
    B.mlp_w2 = store.create("denoiser.mlp" + bi + ".w2", linear_init(d_model_, hidden, rng));
    B.mlp_b2 = store.create("denoiser.mlp" + bi + ".b2", zeros({d_model_}));
  }
  // zero-init head: the untrained predictor outputs exactly zero noise
  head_w_ = store.create("denoiser.head.w", zeros({d_z_ * patch_ * patch_, d_model_}));
  head_b_ = store.create("denoiser.head.b", zeros({d_z_ * patch_ * patch_}));

  // fixed 2-D sinusoid positions over the token grid
  pos_ = Tensor({n_tokens_, d_model_});
  for (int ti = 0; ti < n_tokens_; ++ti) {
    const int ty = ti / grid, tx = ti % grid;
    for (int j = 0; j < d_model_; ++j) {
      const int quad = j % 4;
      const double freq = std::pow(10000.0, -static_cast<double>(j / 4) * 4.0 / d_model_);
      double v = 0.0;
      switch (quad) {
        case 0: v = std::sin(tx * freq); break;
        case 1: v = std::cos(tx * freq); break;
        case 2: v = std::sin(ty * freq); break;
        default: v = std::cos(ty * freq); break;
      }
      pos_.at(ti, j) = v;
    }
  }

  // flat index maps between [2*d_z x s x s] (z_t channels first, then E(x))
  // and token-major patch layout
  patch_fwd_.resize(static_cast<std::size_t>(n_tokens_) * token_dim_);
  for (int ti = 0; ti < n_tokens_; ++ti) {
    const int ty = ti / grid, tx = ti % grid;
    int k = 0;
    for (int c = 0; c < 2 * d_z_; ++c)
      for (int py = 0; py < patch_; ++py)
        for (int px = 0; px < patch_; ++px) {
          const int y = ty * patch_ + py, x = tx * patch_ + px;
          patch_fwd_[static_cast<std::size_t>(ti) * token_dim_ + k++] =
              (c * side_ + y) * side_ + x;
        }
  }
  const int out_dim = d_z_ * patch_ * patch_;
  patch_inv_.resize(static_cast<std::size_t>(d_z_) * side_ * side_);
  for (int ti = 0; ti < n_tokens_; ++ti) {
    const int ty = ti / grid, tx = ti % grid;
    int k = 0;
    for (int c = 0; c < d_z_; ++c)
      for (int py = 0; py < patch_; ++py)
        for (int px = 0; px < patch_; ++px) {
          const int y = ty * patch_ + py, x = tx * patch_ + px;
          patch_inv_[static_cast<std::size_t>((c * side_ + y) * side_ + x)] = ti * out_dim + k++;
        }
  }

  Tensor temb_table = sinusoid_table(timesteps_ + 1, d_model_);
  time_emb_.reserve(static_cast<std::size_t>(timesteps_) + 1);
  for (int t = 0; t <= timesteps_; ++t) {
    Tensor row({d_model_});
    for (int j = 0; j < d_model_; ++j) row[static_cast<std::size_t>(j)] = temb_table.at(t, j);
    time_emb_.push_back(std::move(row));
  }
}

Tensor Denoiser::self_attention(const Block& blk, const Tensor& x) const {
  Tensor q = matmul_nt(x, blk.sa_wq->tensor);
  Tensor k = matmul_nt(x, blk.sa_wk->tensor);
  Tensor v = matmul_nt(x, blk.sa_wv->tensor);
  const int dh = d_model_ / n_heads_;
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(n_heads_));
  for (int h = 0; h < n_heads_; ++h) {
    heads.push_back(scaled_dot_attention(slice_cols(q, h * dh, (h + 1) * dh),
                                         slice_cols(k, h * dh, (h + 1) * dh),
                                         slice_cols(v, h * dh, (h + 1) * dh)));
  }
  return matmul_nt(concat_cols(heads), blk.sa_wo->tensor);
}

Tensor Denoiser::predict(const Tensor& z_t, const Tensor& src_latent, const Tensor& v_txt,
                         const Tensor& f_txt, const Tensor& f_img, int t, double lambda) const {
  if (z_t.shape() != src_latent.shape())
    throw std::invalid_argument("predict_noise: z_t " + z_t.shape_str() + " vs src " +
                                src_latent.shape_str());
  if (z_t.rank() != 3 || z_t.dim(0) != d_z_ || z_t.dim(1) != side_ || z_t.dim(2) != side_)
    throw std::invalid_argument("predict_noise: latent must be [d_z x s x s], got " +
                                z_t.shape_str());
  if (t < 0 || t > timesteps_) throw std::invalid_argument("predict_noise: t out of range");
  const int n = d_z_ * side_ * side_;
  Tensor zr = z_t.reshaped({1, n});
  Tensor sr = src_latent.reshaped({1, n});
  Tensor cat = concat_cols({zr, sr});
  Tensor tokens = gather_flat(cat, patch_fwd_, {n_tokens_, token_dim_});
  Tensor x = linear(tokens, in_w_->tensor, in_b_->tensor);
  x = add(x, pos_);
  if (v_txt.defined()) {
    if (v_txt.rank() != 2 || v_txt.rows() != n_tokens_ || v_txt.cols() != d_model_)
      throw std::invalid_argument("predict_noise: v_txt must be [n_tokens x d_model], got " +
                                  v_txt.shape_str());
    x = add(x, v_txt);
  }
  const Tensor& temb = time_emb_[static_cast<std::size_t>(t)];
  for (const auto& blk : blocks_) {
    x = add_row_vector(x, temb);
    x = add(x, self_attention(blk, layer_norm(x, blk.ln1_g->tensor, blk.ln1_b->tensor)));
    x = add(x, blk.cross->forward(layer_norm(x, blk.ln2_g->tensor, blk.ln2_b->tensor), f_txt,
                                  f_img, lambda));
    Tensor mid = gelu(linear(layer_norm(x, blk.ln3_g->tensor, blk.ln3_b->tensor),
                             blk.mlp_w1->tensor, blk.mlp_b1->tensor));
    x = add(x, linear(mid, blk.mlp_w2->tensor, blk.mlp_b2->tensor));
  }
  Tensor out_tokens = linear(x, head_w_->tensor, head_b_->tensor);
  return gather_flat(out_tokens, patch_inv_, {d_z_, side_, side_});
}

Tensor Denoiser::cross_site(int block, const Tensor& x, const Tensor& f_txt, const Tensor& f_img,
                            double lambda) const {
  return blocks_[static_cast<std::size_t>(block)].cross->forward(x, f_txt, f_img, lambda);
}

Tensor sd_loss(const Denoiser& den, const NoiseSchedule& ns, const std::vector<EditBatchItem>& batch,
               double lambda) {
  if (batch.empty()) throw std::invalid_argument("sd_loss: empty batch");
  Tensor acc;
  for (const auto& item : batch) {
    Tensor z_t = add_noise(item.tgt_latent, item.t, item.eps, ns);
    Tensor eps_hat =
        den.predict(z_t, item.src_latent, item.v_txt, item.f_txt, item.f_img, item.t, lambda);
    Tensor l = mse(item.eps, eps_hat);
    acc = acc.defined() ? add(acc, l) : l;
  }
  return scale(acc, 1.0 / static_cast<double>(batch.size()));
}

Tensor ddpm_sample(const Denoiser& den, const NoiseSchedule& ns, const LatentCodec& codec,
                   const Tensor& src_latent, const Tensor& v_txt, const Tensor& f_txt,
                   const Tensor& f_img, double lambda, int steps, Rng& rng) {
  if (steps < 1 || steps > ns.T)
    throw std::invalid_argument("sample: steps must lie in [1, T]");
  NoGradScope no_grad;
  const int d_z = src_latent.dim(0), side = src_latent.dim(1);
  const std::size_t n = src_latent.size();
  Tensor z(src_latent.shape());
  for (std::size_t i = 0; i < n; ++i) z[i] = rng.normal();

  std::vector<int> ts;
  ts.reserve(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    int t = static_cast<int>(std::llround(ns.T - frac * (ns.T - 1)));
    t = std::clamp(t, 1, ns.T);
    if (ts.empty() || t < ts.back()) ts.push_back(t);
  }

  const auto& lo = codec.channel_min();
  const auto& hi = codec.channel_max();
  const std::size_t plane = static_cast<std::size_t>(side) * side;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t_cur = ts[i];
    const int t_next = i + 1 < ts.size() ? ts[i + 1] : 0;
    Tensor eps_hat = den.predict(z, src_latent, v_txt, f_txt, f_img, t_cur, lambda);
    const double ab = ns.alpha_bar(t_cur);
    const double ab_next = ns.alpha_bar(t_next);
    const double beta_eff = 1.0 - ab / ab_next;
    const double c_z0 = std::sqrt(ab_next) * beta_eff / (1.0 - ab);
    const double c_z = std::sqrt(1.0 - beta_eff) * (1.0 - ab_next) / (1.0 - ab);
    const double sigma = t_next > 0 ? std::sqrt((1.0 - ab_next) / (1.0 - ab) * beta_eff) : 0.0;
    for (int c = 0; c < d_z; ++c) {
      const std::size_t base = static_cast<std::size_t>(c) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        double z0 = (z[base + j] - std::sqrt(1.0 - ab) * eps_hat[base + j]) / std::sqrt(ab);
        z0 = std::clamp(z0, lo[static_cast<std::size_t>(c)], hi[static_cast<std::size_t>(c)]);
        double m = c_z0 * z0 + c_z * z[base + j];
        if (sigma > 0.0) m += sigma * rng.normal();
        z[base + j] = m;
      }
    }
    ops::check_finite(z, "sample");
  }
  return z;
}

}  // namespace bridgecond
