#pragma once

#include <memory>
#include <string>
#include <vector>

#include "bridgecond/bridging.hpp"
#include "bridgecond/comprehension.hpp"
#include "bridgecond/config.hpp"
#include "bridgecond/generation.hpp"
#include "bridgecond/sample_types.hpp"

namespace bridgecond {

// The three bridging outputs plus the intermediates the losses need.
struct Conditions {
  Tensor h;        // [r x d_llm]
  Tensor q_prime;  // [t_q x d_cond]
  Tensor f_txt;    // [t_q x d_cond]
  Tensor v_txt;    // [n_tokens x d_model]
  Tensor mapped;   // [1 x d_cond]
  Tensor f_img;    // [N x d_cond]
};

// Full model: comprehension -> bridging -> generation, one parameter store.
class EditModel {
 public:
  explicit EditModel(const RunConfig& cfg);

  const RunConfig& cfg() const { return cfg_; }
  const VocabSpec& vocab() const { return vocab_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }

  const VisionEncoder& vision() const { return *vision_; }
  const FcAlign& fc_align() const { return *align_; }
  const Decoder& decoder() const { return *decoder_; }
  const QFormer& qformer() const { return *qformer_; }
  const Bim& bim() const { return *bim_; }
  const Iaa& iaa() const { return *iaa_; }
  const FrozenEmbedders& embedders() const { return *embedders_; }
  const LatentCodec& codec() const { return *codec_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const Denoiser& denoiser() const { return *denoiser_; }

  struct Forward {
    Tensor logits;
    std::vector<int> ids;
    int prefix_len = 0;
    Conditions cond;
  };

  // comprehension + bridging; with_image=false runs the decoder text-only
  // (stage-1 style) and leaves v_txt/f_txt vision interaction on zeros from
  // a zero image-feature matrix.
  Forward forward_conditioning(const RasterImage& src, const std::string& instruction,
                               bool with_image) const;

  Tensor llm_loss(const Forward& fwd) const {
    return decoder_->llm_loss(fwd.logits, fwd.ids, fwd.prefix_len);
  }

  // end-to-end edit: comprehension -> bridging -> DDPM sampling -> decode
  RasterImage edit(const RasterImage& src, const std::string& instruction, double lambda,
                   int steps, Rng& rng) const;

 private:
  RunConfig cfg_;
  VocabSpec vocab_;
  ParameterStore store_;
  std::unique_ptr<VisionEncoder> vision_;
  std::unique_ptr<FcAlign> align_;
  std::unique_ptr<Decoder> decoder_;
  std::unique_ptr<QFormer> qformer_;
  std::unique_ptr<Bim> bim_;
  std::unique_ptr<Iaa> iaa_;
  std::unique_ptr<FrozenEmbedders> embedders_;
  std::unique_ptr<LatentCodec> codec_;
  NoiseSchedule schedule_;
  std::unique_ptr<Denoiser> denoiser_;
};

}  // namespace bridgecond
