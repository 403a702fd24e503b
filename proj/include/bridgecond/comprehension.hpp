#pragma once

#include <utility>
#include <vector>

#include "bridgecond/config.hpp"
#include "bridgecond/image.hpp"
#include "bridgecond/ops.hpp"
#include "bridgecond/params.hpp"
#include "bridgecond/vocab.hpp"

namespace bridgecond {

// Hidden states at the [MM] positions of the final decoder layer, r x d_llm.
struct HiddenStates {
  Tensor h;
};

// LoRA-wrapped projection: frozen base + trainable low-rank update.
struct LoraProj {
  Parameter* base = nullptr;
  Parameter* a = nullptr;
  Parameter* b = nullptr;
  double alpha = 0.0;

  Tensor apply(const Tensor& x) const { return ops::lora_linear(x, *base, *a, *b, alpha); }
};

// Frozen patch-embedding + feature-mixing stack. All projections are
// biasless so a black image maps to all-zero patch rows.
class VisionEncoder {
 public:
  VisionEncoder(const RunConfig& cfg, ParameterStore& store, Rng& rng);

  // [patch_grid x d_vision]
  Tensor encode(const RasterImage& img) const;

  int patch_grid() const { return grid_ * grid_; }

 private:
  int patch_size_, grid_, d_vision_;
  Parameter* patch_w_;  // [d_vision x 3*ps*ps]
  Parameter* mix_w1_;   // [d_vision x d_vision]
  Parameter* mix_w2_;   // [d_vision x d_vision]
};

// Single linear aligner from vision width into the decoder width.
class FcAlign {
 public:
  FcAlign(const RunConfig& cfg, ParameterStore& store, Rng& rng);
  Tensor apply(const Tensor& v_raw) const { return ops::linear(v_raw, w_->tensor, b_->tensor); }

 private:
  Parameter* w_;
  Parameter* b_;
};

// Causal decoder with a vision prefix, tied embedding head, frozen base
// weights, trainable [MM] embedding rows and LoRA adapters on all attention
// projections.
class Decoder {
 public:
  Decoder(const RunConfig& cfg, const VocabSpec& vocab, ParameterStore& store, Rng& rng);

  struct Output {
    Tensor logits;   // [seq x V]
    Tensor h;        // [r x d_llm] hidden rows at the [MM] positions
    int prefix_len;  // number of vision rows prepended
  };

  // vision_prefix may be undefined (text-only, stage-1 style)
  Output run(const Tensor& vision_prefix, const std::vector<int>& ids) const;

  // NLL restricted to predicting the [MM] ids from their preceding context
  Tensor llm_loss(const Tensor& logits, const std::vector<int>& ids, int prefix_len) const;

  const VocabSpec& vocab() const { return *vocab_; }

 private:
  struct Layer {
    LoraProj q, k, v, o;
    Parameter *ln1_g, *ln1_b, *ln2_g, *ln2_b;
    Parameter *mlp_w1, *mlp_b1, *mlp_w2, *mlp_b2;
  };

  Tensor full_embedding() const;  // concat of frozen base rows and trainable [MM] rows

  const VocabSpec* vocab_;
  int d_llm_, n_heads_, max_seq_;
  Parameter* embed_base_;  // frozen [base_size x d_llm]
  Parameter* embed_mm_;    // trainable theta [r x d_llm]
  Parameter *final_ln_g_, *final_ln_b_;
  std::vector<Layer> layers_;
  Tensor pos_;  // fixed sinusoidal [max_seq x d_llm]
};

// Fixed sinusoidal table, rows are positions.
Tensor sinusoid_table(int n_rows, int dim);

}  // namespace bridgecond
