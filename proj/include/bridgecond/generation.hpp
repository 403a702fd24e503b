#pragma once

#include <utility>
#include <vector>

#include "bridgecond/config.hpp"
#include "bridgecond/image.hpp"
#include "bridgecond/ops.hpp"
#include "bridgecond/params.hpp"

namespace bridgecond {

// Fixed linear patch codec standing in for the VAE. Pixel patches of
// 3*f*f values are projected onto d_z orthonormal directions; decode is the
// transpose, so decode(encode(.)) loses nothing when 3*f*f <= d_z and
// encode(decode(.)) is exact in general. Never trained.
class LatentCodec {
 public:
  LatentCodec(const RunConfig& cfg, Rng& rng);

  int side() const { return side_; }
  int d_z() const { return d_z_; }

  Tensor encode(const RasterImage& img) const;  // [d_z x s x s]
  RasterImage decode(const Tensor& z) const;    // clamped to [0,1]

  // exact elementwise bounds of encode() outputs over valid pixel patches
  const std::vector<double>& channel_min() const { return lo_; }
  const std::vector<double>& channel_max() const { return hi_; }

 private:
  int factor_, d_z_, side_, image_size_;
  Tensor proj_;  // [d_z x 3*f*f]
  std::vector<double> lo_, hi_;
};

// DDPM forward-process schedule. alpha_bar(0) = 1 by convention.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;       // betas[t-1] for t = 1..T
  std::vector<double> alphas;      // 1 - beta
  std::vector<double> alpha_bars;  // alpha_bars[t] for t = 0..T

  NoiseSchedule(int steps, double beta_start, double beta_end);

  double beta(int t) const { return betas[static_cast<std::size_t>(t - 1)]; }
  double alpha(int t) const { return alphas[static_cast<std::size_t>(t - 1)]; }
  double alpha_bar(int t) const { return alpha_bars[static_cast<std::size_t>(t)]; }
};

// sqrt(abar_t) z0 + sqrt(1-abar_t) eps
Tensor add_noise(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& ns);

// Eq. 6 site: Z = Attn(Q, K_txt, V_txt) + lambda * Attn(Q, K_img, V_img),
// followed by a shared output projection. Image-branch projections are
// zero-initialized; lambda = 0 skips the image branch entirely so the
// collapse to text-only attention is bit-exact.
class DecoupledCrossAttention {
 public:
  DecoupledCrossAttention(const std::string& txt_prefix, const std::string& img_prefix,
                          const std::string& common_prefix, int d_model, int d_cond,
                          ParameterStore& store, Rng& rng);

  Tensor forward(const Tensor& x, const Tensor& f_txt, const Tensor& f_img, double lambda) const;

 private:
  Parameter *wq_, *wo_;
  Parameter *t_wk_, *t_wv_;
  Parameter *i_wk_, *i_wv_;
};

// Attention-over-latent-tokens noise predictor with decoupled text/image
// cross-attention conditioning (Eq. 6/7 interface).
class Denoiser {
 public:
  Denoiser(const RunConfig& cfg, ParameterStore& store, Rng& rng);

  int n_tokens() const { return n_tokens_; }
  int d_model() const { return d_model_; }

  // z_t, src_latent: [d_z x s x s]; v_txt: [n_tokens x d_model] or undefined;
  // f_txt: [t_q x d_cond]; f_img: [N x d_cond]
  Tensor predict(const Tensor& z_t, const Tensor& src_latent, const Tensor& v_txt,
                 const Tensor& f_txt, const Tensor& f_img, int t, double lambda) const;

  // per-site forward used by the Eq. 6 invariant checks
  int n_blocks() const { return static_cast<int>(blocks_.size()); }
  Tensor cross_site(int block, const Tensor& x, const Tensor& f_txt, const Tensor& f_img,
                    double lambda) const;

 private:
  struct Block {
    Parameter *ln1_g, *ln1_b, *ln2_g, *ln2_b, *ln3_g, *ln3_b;
    Parameter *sa_wq, *sa_wk, *sa_wv, *sa_wo;
    std::unique_ptr<DecoupledCrossAttention> cross;
    Parameter *mlp_w1, *mlp_b1, *mlp_w2, *mlp_b2;
  };

  Tensor self_attention(const Block& blk, const Tensor& x) const;

  int d_z_, side_, patch_, n_tokens_, token_dim_, d_model_, n_heads_, timesteps_;
  Parameter *in_w_, *in_b_;
  Parameter *head_w_, *head_b_;
  std::vector<Block> blocks_;
  Tensor pos_;                        // fixed [n_tokens x d_model]
  std::vector<int> patch_fwd_;        // flat index maps for (un)patchify
  std::vector<int> patch_inv_;
  std::vector<Tensor> time_emb_;      // fixed per-t rows, t = 0..T
};

// Per-sample diffusion training batch (Eq. 7 expectation terms).
struct EditBatchItem {
  Tensor src_latent;  // E(x)
  Tensor tgt_latent;  // E(y)
  Tensor v_txt, f_txt, f_img;
  int t = 1;
  Tensor eps;
};

Tensor sd_loss(const Denoiser& den, const NoiseSchedule& ns, const std::vector<EditBatchItem>& batch,
               double lambda);

// Standard ancestral DDPM sampling from z_T ~ N(0,1), conditioning every step
// on the source latent; the implied z0 is clipped to the codec's valid box
// (the usual clip-denoised stabilization). steps <= T selects an evenly
// strided timestep subsequence.
Tensor ddpm_sample(const Denoiser& den, const NoiseSchedule& ns, const LatentCodec& codec,
                   const Tensor& src_latent, const Tensor& v_txt, const Tensor& f_txt,
                   const Tensor& f_img, double lambda, int steps, Rng& rng);

}  // namespace bridgecond
