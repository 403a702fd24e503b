#include "bridgecond/model.hpp"

namespace bridgecond {

EditModel::EditModel(const RunConfig& cfg)
    : cfg_(cfg),
      vocab_(build_vocab(cfg.r_mm)),
      schedule_(cfg.timesteps, cfg.beta_start, cfg.beta_end) {
  Rng rng(cfg.seed ^ 0xb41dc0de00000001ULL);
  vision_ = std::make_unique<VisionEncoder>(cfg, store_, rng);
  align_ = std::make_unique<FcAlign>(cfg, store_, rng);
  decoder_ = std::make_unique<Decoder>(cfg, vocab_, store_, rng);
  qformer_ = std::make_unique<QFormer>(cfg, store_, rng);
  bim_ = std::make_unique<Bim>(cfg, store_, rng);
  iaa_ = std::make_unique<Iaa>(cfg, store_, rng);
  embedders_ = std::make_unique<FrozenEmbedders>(cfg, vocab_, rng);
  codec_ = std::make_unique<LatentCodec>(cfg, rng);
  denoiser_ = std::make_unique<Denoiser>(cfg, store_, rng);
}

EditModel::Forward EditModel::forward_conditioning(const RasterImage& src,
                                                   const std::string& instruction,
                                                   bool with_image) const {
  Forward out;
  out.ids = append_mm_tokens(vocab_, tokenize(vocab_, instruction));

  Tensor img_feats;  // [p x d_vision]
  Tensor prefix;     // [p x d_llm]
  if (with_image) {
    img_feats = vision_->encode(src);
    prefix = align_->apply(img_feats);
  } else {
    // stage 1 runs without the vision encoder; the bridge still expects an
    // image-feature matrix, so feed zeros
    img_feats = Tensor({vision_->patch_grid(), cfg_.d_vision});
  }

  Decoder::Output dec = decoder_->run(prefix, out.ids);
  out.logits = dec.logits;
  out.prefix_len = dec.prefix_len;
  out.cond.h = dec.h;
  out.cond.q_prime = qformer_->forward(dec.h);
  auto [f_txt, v_txt] = bim_->forward(img_feats, out.cond.q_prime);
  out.cond.f_txt = f_txt;
  out.cond.v_txt = v_txt;
  auto [mapped, f_img] = iaa_->forward(dec.h);
  out.cond.mapped = mapped;
  out.cond.f_img = f_img;
  return out;
}

RasterImage EditModel::edit(const RasterImage& src, const std::string& instruction, double lambda,
                            int steps, Rng& rng) const {
  NoGradScope no_grad;
  Forward fwd = forward_conditioning(src, instruction, true);
  Tensor src_latent = codec_->encode(src);
  Tensor z = ddpm_sample(*denoiser_, schedule_, *codec_, src_latent, fwd.cond.v_txt,
                         fwd.cond.f_txt, fwd.cond.f_img, lambda, steps, rng);
  return codec_->decode(z);
}

}  // namespace bridgecond
