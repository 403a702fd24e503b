#include "bridgecond/bridging.hpp"

#include <cmath>

namespace bridgecond {

using namespace ops;

QFormer::QFormer(const RunConfig& cfg, ParameterStore& store, Rng& rng) {
  query_ = store.create("qformer.query_tokens", uniform_init({cfg.t_q, cfg.d_cond}, rng, 0.1));
  wq_ = store.create("qformer.attn.wq", linear_init(cfg.d_cond, cfg.d_cond, rng));
  wk_ = store.create("qformer.attn.wk", linear_init(cfg.d_cond, cfg.d_llm, rng));
  wv_ = store.create("qformer.attn.wv", linear_init(cfg.d_cond, cfg.d_llm, rng));
  wo_ = store.create("qformer.attn.wo", linear_init(cfg.d_cond, cfg.d_cond, rng));
  const int hidden = 2 * cfg.d_cond;
  ffn_w1_ = store.create("qformer.ffn.w1", linear_init(hidden, cfg.d_cond, rng));
  ffn_b1_ = store.create("qformer.ffn.b1", zeros({hidden}));
  ffn_w2_ = store.create("qformer.ffn.w2", linear_init(cfg.d_cond, hidden, rng));
  ffn_b2_ = store.create("qformer.ffn.b2", zeros({cfg.d_cond}));
}

Tensor QFormer::forward(const Tensor& h) const {
  const Tensor& q = query_->tensor;
  Tensor att = scaled_dot_attention(matmul_nt(q, wq_->tensor), matmul_nt(h, wk_->tensor),
                                    matmul_nt(h, wv_->tensor));
  Tensor x = add(q, matmul_nt(att, wo_->tensor));
  Tensor ff = linear(gelu(linear(x, ffn_w1_->tensor, ffn_b1_->tensor)), ffn_w2_->tensor,
                     ffn_b2_->tensor);
  return add(x, ff);
}

Bim::Bim(const RunConfig& cfg, ParameterStore& store, Rng& rng) {
  const int dc = cfg.d_cond, dv = cfg.d_vision;
  t_wq_ = store.create("bim.txt.wq", linear_init(dc, dc, rng));
  t_wk_ = store.create("bim.txt.wk", linear_init(dc, dv, rng));
  t_wv_ = store.create("bim.txt.wv", linear_init(dc, dv, rng));
  t_wo_ = store.create("bim.txt.wo", linear_init(dc, dc, rng));
  v_wq_ = store.create("bim.vis.wq", linear_init(dc, dv, rng));
  v_wk_ = store.create("bim.vis.wk", linear_init(dc, dc, rng));
  v_wv_ = store.create("bim.vis.wv", linear_init(dv, dc, rng));
  v_wo_ = store.create("bim.vis.wo", linear_init(dv, dv, rng));
  v_feat_ = store.create("bim.vis.feat", linear_init(cfg.d_model, dv, rng));
  const int grid = cfg.image_size / cfg.patch_size;
  const int s = cfg.image_size / cfg.latent_downsample;
  const int n_tokens = (s / cfg.denoiser_patch) * (s / cfg.denoiser_patch);
  // zero-init: stage 2 starts with v_txt = 0 and grows the path via gradient
  v_expand_ = store.create("bim.vis.expand", zeros({n_tokens, grid * grid}));
}

std::pair<Tensor, Tensor> Bim::forward(const Tensor& img_feats, const Tensor& q_prime) const {
  // text side: queries q' over image features
  Tensor att_t = scaled_dot_attention(matmul_nt(q_prime, t_wq_->tensor),
                                      matmul_nt(img_feats, t_wk_->tensor),
                                      matmul_nt(img_feats, t_wv_->tensor));
  Tensor f_txt = add(q_prime, matmul_nt(att_t, t_wo_->tensor));

  // vision side: queries image features over q'
  Tensor att_v = scaled_dot_attention(matmul_nt(img_feats, v_wq_->tensor),
                                      matmul_nt(q_prime, v_wk_->tensor),
                                      matmul_nt(q_prime, v_wv_->tensor));
  Tensor y = add(img_feats, matmul_nt(att_v, v_wo_->tensor));
  Tensor v_txt = matmul(v_expand_->tensor, matmul_nt(y, v_feat_->tensor));
  return {f_txt, v_txt};
}

Iaa::Iaa(const RunConfig& cfg, ParameterStore& store, Rng& rng)
    : r_(cfg.r_mm), d_llm_(cfg.d_llm), d_cond_(cfg.d_cond), n_tokens_(cfg.n_img_tokens) {
  const int in_dim = r_ * d_llm_;
  const int hidden = 2 * d_cond_ > 64 ? 2 * d_cond_ : 64;
  map_w1_ = store.create("iaa.mapper.w1", linear_init(hidden, in_dim, rng));
  map_b1_ = store.create("iaa.mapper.b1", zeros({hidden}));
  map_w2_ = store.create("iaa.mapper.w2", linear_init(d_cond_, hidden, rng));
  map_b2_ = store.create("iaa.mapper.b2", zeros({d_cond_}));
  expand_w_ = store.create("iaa.expand.w", linear_init(n_tokens_ * d_cond_, d_cond_, rng));
  expand_b_ = store.create("iaa.expand.b", zeros({n_tokens_ * d_cond_}));
  ln_g_ = store.create("iaa.norm.gamma", ones({d_cond_}));
  ln_b_ = store.create("iaa.norm.beta", zeros({d_cond_}));
}

std::pair<Tensor, Tensor> Iaa::forward(const Tensor& h) const {
  if (h.rank() != 2 || h.rows() != r_ || h.cols() != d_llm_)
    throw std::invalid_argument("iaa: h must be [r x d_llm], got " + h.shape_str());
  Tensor flat = h.reshaped({1, r_ * d_llm_});
  Tensor mid = gelu(linear(flat, map_w1_->tensor, map_b1_->tensor));
  Tensor mapped = linear(mid, map_w2_->tensor, map_b2_->tensor);  // [1 x d_cond]
  Tensor seq = linear(mapped, expand_w_->tensor, expand_b_->tensor);
  Tensor f_img = layer_norm(seq.reshaped({n_tokens_, d_cond_}), ln_g_->tensor, ln_b_->tensor);
  return {mapped, f_img};
}

FrozenEmbedders::FrozenEmbedders(const RunConfig& cfg, const VocabSpec& vocab, Rng& rng)
    : vocab_(&vocab), t_q_(cfg.t_q), d_cond_(cfg.d_cond) {
  text_w_ = uniform_init({t_q_ * d_cond_, vocab.total()}, rng,
                         1.0 / std::sqrt(static_cast<double>(vocab.total())));
  img_w_ = uniform_init({d_cond_, 48}, rng, 1.0 / std::sqrt(48.0));
}

Tensor FrozenEmbedders::text_embed(const std::string& instruction) const {
  NoGradScope no_grad;
  Tensor counts({vocab_->total(), 1});
  for (int id : tokenize(*vocab_, instruction)) counts[static_cast<std::size_t>(id)] += 1.0;
  Tensor flat = matmul(text_w_, counts);  // [t_q*d_cond x 1]
  return flat.reshaped({t_q_, d_cond_});
}

Tensor FrozenEmbedders::image_embed(const RasterImage& img) const {
  NoGradScope no_grad;
  // 4x4 grid of per-channel block means
  Tensor stats({48, 1});
  const int gx = 4, gy = 4;
  for (int by = 0; by < gy; ++by)
    for (int bx = 0; bx < gx; ++bx) {
      const int x0 = bx * img.width / gx, x1 = (bx + 1) * img.width / gx;
      const int y0 = by * img.height / gy, y1 = (by + 1) * img.height / gy;
      double acc[3] = {0, 0, 0};
      int n = 0;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x, ++n)
          for (int c = 0; c < 3; ++c) acc[c] += img.at(x, y, c);
      for (int c = 0; c < 3; ++c)
        stats[static_cast<std::size_t>((by * gx + bx) * 3 + c)] = n ? acc[c] / n : 0.0;
    }
  Tensor out = matmul(img_w_, stats);  // [d_cond x 1]
  return out.reshaped({1, d_cond_});
}

Tensor iaa_loss(const Tensor& mapped, const RasterImage& target_img, const FrozenEmbedders& emb) {
  return mse(emb.image_embed(target_img), mapped);
}

Tensor stage1_text_feature_loss(const Tensor& q_prime, const std::string& instruction,
                                const FrozenEmbedders& emb) {
  return mse(q_prime, emb.text_embed(instruction));
}

Tensor stage1_image_feature_loss(const Tensor& mapped, const RasterImage& source_img,
                                 const FrozenEmbedders& emb) {
  return mse(emb.image_embed(source_img), mapped);
}

}  // namespace bridgecond
