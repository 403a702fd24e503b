#pragma once

#include <string>
#include <utility>

#include "bridgecond/config.hpp"
#include "bridgecond/image.hpp"
#include "bridgecond/ops.hpp"
#include "bridgecond/params.hpp"
#include "bridgecond/vocab.hpp"

namespace bridgecond {

// Textual branch, Eq. 3: learnable query tokens cross-attend into the [MM]
// hidden states, one block with residuals plus a feed-forward.
class QFormer {
 public:
  QFormer(const RunConfig& cfg, ParameterStore& store, Rng& rng);

  Tensor forward(const Tensor& h) const;  // q' [t_q x d_cond]

  Parameter* query_tokens() const { return query_; }

 private:
  Parameter* query_;                       // [t_q x d_cond]
  Parameter *wq_, *wk_, *wv_, *wo_;        // wk/wv read h (d_llm -> d_cond)
  Parameter *ffn_w1_, *ffn_b1_, *ffn_w2_, *ffn_b2_;
};

// Bidirectional interaction, Eq. 4: q' attends over image features (f_txt)
// and image features attend over q' (v_txt), each with residuals; the vision
// side is then projected to the denoiser's input feature map.
class Bim {
 public:
  Bim(const RunConfig& cfg, ParameterStore& store, Rng& rng);

  // (f_txt [t_q x d_cond], v_txt [n_tokens x d_model])
  std::pair<Tensor, Tensor> forward(const Tensor& img_feats, const Tensor& q_prime) const;

 private:
  Parameter *t_wq_, *t_wk_, *t_wv_, *t_wo_;  // text path
  Parameter *v_wq_, *v_wk_, *v_wv_, *v_wo_;  // vision path
  Parameter* v_feat_;                        // d_vision -> d_model
  Parameter* v_expand_;                      // [n_tokens x patch_grid], zero-init
};

// Image branch (Eq. 5): mapper MLP to a single embedding, linear expansion to
// N condition rows, layer normalization last.
class Iaa {
 public:
  Iaa(const RunConfig& cfg, ParameterStore& store, Rng& rng);

  // (mapped [1 x d_cond], f_img [N x d_cond])
  std::pair<Tensor, Tensor> forward(const Tensor& h) const;

 private:
  int r_, d_llm_, d_cond_, n_tokens_;
  Parameter *map_w1_, *map_b1_, *map_w2_, *map_b2_;
  Parameter *expand_w_, *expand_b_;
  Parameter *ln_g_, *ln_b_;
};

// Deterministic stand-ins for the frozen CLIP encoders: fixed random
// projections of bag-of-words counts (text) and 4x4 block means (images).
class FrozenEmbedders {
 public:
  FrozenEmbedders(const RunConfig& cfg, const VocabSpec& vocab, Rng& rng);

  Tensor text_embed(const std::string& instruction) const;   // [t_q x d_cond]
  Tensor image_embed(const RasterImage& img) const;          // [1 x d_cond]

 private:
  const VocabSpec* vocab_;
  int t_q_, d_cond_;
  Tensor text_w_;  // [t_q*d_cond x V]
  Tensor img_w_;   // [d_cond x 48]
};

// Alignment losses shared by the training stages.
Tensor iaa_loss(const Tensor& mapped, const RasterImage& target_img, const FrozenEmbedders& emb);
Tensor stage1_text_feature_loss(const Tensor& q_prime, const std::string& instruction,
                                const FrozenEmbedders& emb);
Tensor stage1_image_feature_loss(const Tensor& mapped, const RasterImage& source_img,
                                 const FrozenEmbedders& emb);

}  // namespace bridgecond
