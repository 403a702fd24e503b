#include "bridgecond/comprehension.hpp"

#include <cmath>
#include <stdexcept>

namespace bridgecond {

using namespace ops;

Tensor sinusoid_table(int n_rows, int dim) {
  Tensor t({n_rows, dim});
  for (int p = 0; p < n_rows; ++p)
    for (int j = 0; j < dim; ++j) {
      const double freq = std::pow(10000.0, -2.0 * (j / 2) / static_cast<double>(dim));
      t.at(p, j) = (j % 2 == 0) ? std::sin(p * freq) : std::cos(p * freq);
    }
  return t;
}

VisionEncoder::VisionEncoder(const RunConfig& cfg, ParameterStore& store, Rng& rng)
    : patch_size_(cfg.patch_size),
      grid_(cfg.image_size / cfg.patch_size),
      d_vision_(cfg.d_vision) {
  const int pdim = 3 * patch_size_ * patch_size_;
  patch_w_ = store.create("comprehension.vision.patch.w", linear_init(d_vision_, pdim, rng), true);
  mix_w1_ = store.create("comprehension.vision.mix.w1", linear_init(d_vision_, d_vision_, rng), true);
  mix_w2_ = store.create("comprehension.vision.mix.w2", linear_init(d_vision_, d_vision_, rng), true);
}

Tensor VisionEncoder::encode(const RasterImage& img) const {
  if (img.width % patch_size_ != 0 || img.height % patch_size_ != 0)
    throw std::invalid_argument("encode_image: image " + std::to_string(img.width) + "x" +
                                std::to_string(img.height) + " not divisible by patch size " +
                                std::to_string(patch_size_));
  const int gw = img.width / patch_size_, gh = img.height / patch_size_;
  const int pdim = 3 * patch_size_ * patch_size_;
  Tensor patches({gw * gh, pdim});
  for (int by = 0; by < gh; ++by)
    for (int bx = 0; bx < gw; ++bx) {
      double* row = patches.data() + static_cast<std::size_t>(by * gw + bx) * pdim;
      int k = 0;
      for (int c = 0; c < 3; ++c)
        for (int py = 0; py < patch_size_; ++py)
          for (int px = 0; px < patch_size_; ++px)
            row[k++] = img.at(bx * patch_size_ + px, by * patch_size_ + py, c);
    }
  Tensor x = matmul_nt(patches, patch_w_->tensor);
  Tensor mixed = matmul_nt(gelu(matmul_nt(x, mix_w1_->tensor)), mix_w2_->tensor);
  return add(x, mixed);
}

FcAlign::FcAlign(const RunConfig& cfg, ParameterStore& store, Rng& rng) {
  w_ = store.create("comprehension.fc_align.w", linear_init(cfg.d_llm, cfg.d_vision, rng), true);
  b_ = store.create("comprehension.fc_align.b", zeros({cfg.d_llm}), true);
}

Decoder::Decoder(const RunConfig& cfg, const VocabSpec& vocab, ParameterStore& store, Rng& rng)
    : vocab_(&vocab), d_llm_(cfg.d_llm), n_heads_(cfg.n_heads), max_seq_(cfg.max_seq_len) {
  embed_base_ = store.create("comprehension.decoder.embed.weight",
                             uniform_init({vocab.base_size, d_llm_}, rng, 0.08), true);
  embed_mm_ = store.create("mm_embeddings.weight", uniform_init({vocab.r, d_llm_}, rng, 0.08));
  layers_.resize(static_cast<std::size_t>(cfg.n_layers));
  const double lora_a_scale = 0.01;
  for (int i = 0; i < cfg.n_layers; ++i) {
    auto& L = layers_[static_cast<std::size_t>(i)];
    const std::string base = "comprehension.decoder.layer" + std::to_string(i);
    const std::string lora = "lora.layer" + std::to_string(i);
    const char* proj_names[4] = {"q", "k", "v", "o"};
    LoraProj* projs[4] = {&L.q, &L.k, &L.v, &L.o};
    for (int p = 0; p < 4; ++p) {
      projs[p]->base =
          store.create(base + ".attn." + proj_names[p] + ".w", linear_init(d_llm_, d_llm_, rng), true);
      projs[p]->a = store.create(lora + "." + proj_names[p] + ".a",
                                 uniform_init({cfg.lora_rank, d_llm_}, rng, lora_a_scale));
      projs[p]->b = store.create(lora + "." + proj_names[p] + ".b", zeros({d_llm_, cfg.lora_rank}));
      projs[p]->alpha = cfg.lora_alpha;
    }
    L.ln1_g = store.create(base + ".ln1.gamma", ones({d_llm_}), true);
    L.ln1_b = store.create(base + ".ln1.beta", zeros({d_llm_}), true);
    L.ln2_g = store.create(base + ".ln2.gamma", ones({d_llm_}), true);
    L.ln2_b = store.create(base + ".ln2.beta", zeros({d_llm_}), true);
    const int hidden = 4 * d_llm_;
    L.mlp_w1 = store.create(base + ".mlp.w1", linear_init(hidden, d_llm_, rng), true);
    L.mlp_b1 = store.create(base + ".mlp.b1", zeros({hidden}), true);
    L.mlp_w2 = store.create(base + ".mlp.w2", linear_init(d_llm_, hidden, rng), true);
    L.mlp_b2 = store.create(base + ".mlp.b2", zeros({d_llm_}), true);
  }
  final_ln_g_ = store.create("comprehension.decoder.final_ln.gamma", ones({d_llm_}), true);
  final_ln_b_ = store.create("comprehension.decoder.final_ln.beta", zeros({d_llm_}), true);
  pos_ = sinusoid_table(max_seq_, d_llm_);
}

Tensor Decoder::full_embedding() const {
  return concat_rows({embed_base_->tensor, embed_mm_->tensor});
}

Decoder::Output Decoder::run(const Tensor& vision_prefix, const std::vector<int>& ids) const {
  if (ids.empty()) throw std::invalid_argument("run_decoder: empty token sequence");
  const int prefix_len = vision_prefix.defined() ? vision_prefix.rows() : 0;
  const int seq = prefix_len + static_cast<int>(ids.size());
  if (seq > max_seq_)
    throw std::invalid_argument("run_decoder: sequence length " + std::to_string(seq) +
                                " exceeds max " + std::to_string(max_seq_));
  Tensor emb_table = full_embedding();
  Tensor tok = embedding_rows(emb_table, ids);
  Tensor x = vision_prefix.defined() ? concat_rows({vision_prefix, tok}) : tok;
  x = add(x, slice_rows(pos_, 0, seq));

  // causal mask, shared by every layer
  Tensor mask({seq, seq});
  for (int i = 0; i < seq; ++i)
    for (int j = i + 1; j < seq; ++j) mask.at(i, j) = -1e30;

  const int dh = d_llm_ / n_heads_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const auto& L : layers_) {
    Tensor xin = layer_norm(x, L.ln1_g->tensor, L.ln1_b->tensor);
    Tensor q = L.q.apply(xin), k = L.k.apply(xin), v = L.v.apply(xin);
    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(n_heads_));
    for (int hidx = 0; hidx < n_heads_; ++hidx) {
      Tensor qh = slice_cols(q, hidx * dh, (hidx + 1) * dh);
      Tensor kh = slice_cols(k, hidx * dh, (hidx + 1) * dh);
      Tensor vh = slice_cols(v, hidx * dh, (hidx + 1) * dh);
      Tensor scores = add(scale(matmul_nt(qh, kh), inv_sqrt), mask);
      heads.push_back(matmul(softmax(scores), vh));
    }
    x = add(x, L.o.apply(concat_cols(heads)));
    Tensor xmid = layer_norm(x, L.ln2_g->tensor, L.ln2_b->tensor);
    Tensor hmid = gelu(linear(xmid, L.mlp_w1->tensor, L.mlp_b1->tensor));
    x = add(x, linear(hmid, L.mlp_w2->tensor, L.mlp_b2->tensor));
  }
  x = layer_norm(x, final_ln_g_->tensor, final_ln_b_->tensor);

  Output out;
  out.prefix_len = prefix_len;
  out.logits = matmul_nt(x, emb_table);  // tied head
  // the r [MM] rows sit at the end of the sequence
  out.h = slice_rows(x, seq - vocab_->r, seq);
  return out;
}

Tensor Decoder::llm_loss(const Tensor& logits, const std::vector<int>& ids, int prefix_len) const {
  std::vector<std::pair<int, int>> row_targets;
  for (std::size_t j = 0; j < ids.size(); ++j) {
    if (vocab_->is_mm(ids[j])) {
      const int pos = prefix_len + static_cast<int>(j);
      if (pos == 0) throw std::invalid_argument("llm_loss: [MM] token has no preceding context");
      row_targets.emplace_back(pos - 1, ids[j]);
    }
  }
  if (static_cast<int>(row_targets.size()) != vocab_->r)
    throw std::invalid_argument("llm_loss: sequence must contain all " + std::to_string(vocab_->r) +
                                " [MM] tokens, found " + std::to_string(row_targets.size()));
  return nll_at(logits, row_targets);
}

}  // namespace bridgecond
