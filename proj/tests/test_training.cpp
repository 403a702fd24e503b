#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "bridgecond/pipeline.hpp"
#include "bridgecond/training.hpp"

namespace fs = std::filesystem;
using namespace bridgecond;

namespace {

RunConfig trainer_config() {
  RunConfig cfg;
  cfg.seed = 7;
  cfg.image_size = 16;
  cfg.patch_size = 4;
  cfg.d_vision = 8;
  cfg.d_llm = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.r_mm = 2;
  cfg.lora_rank = 2;
  cfg.max_seq_len = 48;
  cfg.t_q = 4;
  cfg.d_cond = 8;
  cfg.n_img_tokens = 2;
  cfg.d_z = 4;
  cfg.latent_downsample = 1;
  cfg.denoiser_patch = 4;
  cfg.d_model = 8;
  cfg.n_blocks = 1;
  cfg.denoiser_heads = 2;
  cfg.timesteps = 10;
  cfg.batch_size = 2;
  cfg.stage1_steps = 10;
  cfg.stage2_steps = 10;
  cfg.stage3_steps = 10;
  return cfg;
}

std::vector<EditSample> tiny_dataset(int n, int size) {
  std::vector<EditSample> out;
  Rng rng(100);
  for (int i = 0; i < n; ++i) {
    EditSample s;
    s.id = "t" + std::to_string(i);
    s.task = "removal";
    s.mode = "template";
    s.instruction = i % 2 ? "remove the red circle." : "remove the blue square.";
    s.src = RasterImage(size, size);
    s.tgt = RasterImage(size, size);
    for (auto& v : s.src.pixels) v = rng.uniform(0.0, 1.0);
    s.tgt.pixels = s.src.pixels;
    s.mask = Mask(size, size);
    for (int k = 0; k < size * size / 4; ++k)
      s.mask.bits[rng.uniform_int(s.mask.bits.size())] = 1;
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        if (s.mask.at(x, y))
          for (int c = 0; c < 3; ++c) s.tgt.at(x, y, c) = rng.uniform(0.0, 1.0);
    out.push_back(std::move(s));
  }
  return out;
}

std::string file_bytes(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("trainable_mask matches the stage schedules") {
  auto s1 = trainable_mask(1);
  CHECK(name_in_mask("lora.layer0.q.a", s1));
  CHECK(name_in_mask("mm_embeddings.weight", s1));
  CHECK(name_in_mask("qformer.attn.wq", s1));
  CHECK(name_in_mask("iaa.mapper.w1", s1));
  CHECK_FALSE(name_in_mask("iaa.expand.w", s1));
  CHECK_FALSE(name_in_mask("bim.txt.wq", s1));
  CHECK_FALSE(name_in_mask("denoiser.input.w", s1));

  auto s2 = trainable_mask(2);
  CHECK(name_in_mask("bim.vis.expand", s2));
  CHECK(name_in_mask("denoiser.self_attn.b0.wq", s2));
  CHECK(name_in_mask("denoiser.cross_attn.txt.b0.wk", s2));

  auto s3 = trainable_mask(3);
  CHECK(name_in_mask("iaa.mapper.w1", s3));
  CHECK(name_in_mask("iaa.expand.w", s3));
  CHECK(name_in_mask("iaa.norm.gamma", s3));
  CHECK(name_in_mask("denoiser.cross_attn.img.b0.wk", s3));
  CHECK_FALSE(name_in_mask("denoiser.cross_attn.txt.b0.wk", s3));
  CHECK_FALSE(name_in_mask("denoiser.cross_attn.common.b0.wq", s3));
  CHECK_FALSE(name_in_mask("qformer.attn.wq", s3));
  CHECK_FALSE(name_in_mask("bim.txt.wq", s3));
  CHECK_FALSE(name_in_mask("lora.layer0.q.a", s3));

  // prefixes respect dotted boundaries
  CHECK_FALSE(name_in_mask("iaahax.w", s3));
  CHECK_THROWS_AS(trainable_mask(4), std::invalid_argument);
}

TEST_CASE("adamw: zero grad is a no-op; one step matches the hand formula") {
  Parameter p("p", Tensor::from({1}, {1.0}));
  p.tensor.set_requires_grad(true);
  StageSchedule sched{1, 0.1, 0.0, 0.0, 100};
  AdamW opt;

  p.tensor.zero_grad();
  opt.step({&p}, sched);
  CHECK(p.tensor[0] == 1.0);  // zero gradient, zero decay

  // independent evaluation of the update rule for g = 0.5
  AdamW opt2;
  Parameter q("q", Tensor::from({1}, {1.0}));
  q.tensor.set_requires_grad(true);
  q.tensor.grad()[0] = 0.5;
  opt2.step({&q}, sched);
  const double m = 0.1 * 0.5;           // (1-beta1)*g
  const double v = 0.001 * 0.25;        // (1-beta2)*g^2
  const double mhat = m / (1 - 0.9);    // bias correction, t = 1
  const double vhat = v / (1 - 0.999);
  const double expect = 1.0 - 0.1 * (mhat / (std::sqrt(vhat) + 1e-8));
  CHECK(q.tensor[0] == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("adamw: warm-up starts at zero and plateaus") {
  AdamW opt;
  StageSchedule sched{2, 1e-3, 0.0, 0.1, 100};  // 10 warm-up steps
  CHECK(opt.effective_lr(sched, 0) == 0.0);
  double prev = -1;
  for (long s = 0; s <= 20; ++s) {
    const double lr = opt.effective_lr(sched, s);
    CHECK(lr >= prev);  // monotone during warm-up
    prev = lr;
  }
  CHECK(opt.effective_lr(sched, 10) == doctest::Approx(1e-3));
  CHECK(opt.effective_lr(sched, 50) == doctest::Approx(1e-3));

  // NaN gradient aborts with a diagnostic
  Parameter p("p", Tensor::from({1}, {1.0}));
  p.tensor.set_requires_grad(true);
  p.tensor.grad()[0] = std::nan("");
  CHECK_THROWS_AS(opt.step({&p}, sched), NumericError);
}

TEST_CASE("stage_losses: compositions match the schedule and sum exactly") {
  RunConfig cfg = trainer_config();
  EditModel model(cfg);
  auto data = tiny_dataset(3, cfg.image_size);
  std::vector<const EditSample*> batch = {&data[0], &data[1], &data[2]};

  Rng noise(1);
  TapeScope tape;
  LossParts s1 = stage_losses(model, 1, batch, noise);
  REQUIRE(s1.parts.size() == 3);
  CHECK(s1.parts[0].first == "L_LLM");
  CHECK(s1.parts[1].first == "L_text-feature");
  CHECK(s1.parts[2].first == "L_image-feature");

  LossParts s2 = stage_losses(model, 2, batch, noise);
  REQUIRE(s2.parts.size() == 3);
  CHECK(s2.parts[0].first == "L_LLM");
  CHECK(s2.parts[1].first == "L_SD");
  CHECK(s2.parts[2].first == "L_target-image-feature");

  LossParts s3 = stage_losses(model, 3, batch, noise);
  REQUIRE(s3.parts.size() == 2);
  CHECK(s3.parts[0].first == "L_target-image-feature");
  CHECK(s3.parts[1].first == "L_SD");

  for (const LossParts* lp : {&s1, &s2, &s3}) {
    double acc = lp->parts[0].second.item();
    for (std::size_t i = 1; i < lp->parts.size(); ++i) acc += lp->parts[i].second.item();
    CHECK(lp->total.item() == acc);  // exact, same summation order
  }
  CHECK_THROWS_AS(stage_losses(model, 4, batch, noise), std::invalid_argument);
}

TEST_CASE("train_stage: determinism, freeze integrity, descent") {
  RunConfig cfg = trainer_config();
  auto data = tiny_dataset(6, cfg.image_size);

  // stage 1 twice from identical models: identical traces and parameters
  EditModel m1(cfg), m2(cfg);
  TrainResult r1 = train_stage(m1, 1, data, 555);
  TrainResult r2 = train_stage(m2, 1, data, 555);
  REQUIRE(r1.trace.size() == r2.trace.size());
  for (std::size_t i = 0; i < r1.trace.size(); ++i) CHECK(r1.trace[i].total == r2.trace[i].total);
  for (std::size_t i = 0; i < m1.store().all().size(); ++i) {
    const auto& p1 = m1.store().all()[i];
    const auto& p2 = m2.store().all()[i];
    for (std::size_t k = 0; k < p1->tensor.size(); ++k)
      REQUIRE(p1->tensor[k] == p2->tensor[k]);
  }

  // frozen complement of the stage-3 mask is bit-invariant over a run
  EditModel m3(cfg);
  const auto mask3 = trainable_mask(3);
  std::vector<std::vector<double>> before;
  for (const auto& p : m3.store().all())
    if (!name_in_mask(p->name, mask3) || p->frozen)
      before.emplace_back(p->tensor.data(), p->tensor.data() + p->tensor.size());
  train_stage(m3, 3, data, 77);
  std::size_t idx = 0;
  for (const auto& p : m3.store().all()) {
    if (!name_in_mask(p->name, mask3) || p->frozen) {
      const auto& snap = before[idx++];
      for (std::size_t k = 0; k < snap.size(); ++k) REQUIRE(p->tensor[k] == snap[k]);
    }
  }

  // llm loss is non-increasing overall across a short stage-1 run
  CHECK(r1.trace.back().total < r1.trace.front().total);
}

TEST_CASE("checkpoint: save/load round-trip reproduces training bit-exactly") {
  RunConfig cfg = trainer_config();
  auto data = tiny_dataset(4, cfg.image_size);
  const auto dir = fs::temp_directory_path() / "bridgecond_test_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string path = (dir / "stage1.bin").string();

  EditModel model(cfg);
  train_stage(model, 1, data, 9);
  Rng rng(1234);
  rng.normal();
  save_checkpoint(path, model, nullptr, rng, CheckpointMeta{1, 10});

  // config echo readable without constructing the model
  CHECK(read_checkpoint_config(path).serialize() == cfg.serialize());

  EditModel loaded(cfg);
  LoadedCheckpoint ck = load_checkpoint(path, loaded);
  CHECK(ck.meta.stage == 1);
  CHECK(ck.meta.step == 10);
  CHECK(ck.rng.state() == rng.state());
  for (std::size_t i = 0; i < model.store().all().size(); ++i) {
    const auto& a = model.store().all()[i];
    const auto& b = loaded.store().all()[i];
    REQUIRE(a->name == b->name);
    for (std::size_t k = 0; k < a->tensor.size(); ++k) REQUIRE(a->tensor[k] == b->tensor[k]);
  }

  // continuing stage 2 from the loaded copy matches continuing the original
  EditModel cont_a(cfg);
  load_checkpoint(path, cont_a);
  TrainResult ra = train_stage(cont_a, 2, data, 10);
  TrainResult rb = train_stage(model, 2, data, 10);
  for (std::size_t i = 0; i < ra.trace.size(); ++i) REQUIRE(ra.trace[i].total == rb.trace[i].total);

  // mismatched config is refused
  RunConfig other = cfg;
  other.d_model = 16;
  EditModel wrong(other);
  CHECK_THROWS_AS(load_checkpoint(path, wrong), std::runtime_error);

  // checkpoint bytes themselves are reproducible
  const std::string path2 = (dir / "stage1b.bin").string();
  EditModel again(cfg);
  train_stage(again, 1, data, 9);
  Rng rng2(1234);
  rng2.normal();
  save_checkpoint(path2, again, nullptr, rng2, CheckpointMeta{1, 10});
  CHECK(file_bytes(path) == file_bytes(path2));
}

TEST_CASE("loss trace csv has the stage's part columns") {
  RunConfig cfg = trainer_config();
  cfg.stage1_steps = 3;
  auto data = tiny_dataset(2, cfg.image_size);
  EditModel model(cfg);
  const auto dir = fs::temp_directory_path() / "bridgecond_test_trace";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string trace = (dir / "t.csv").string();
  train_stage(model, 1, data, 5, trace);
  std::ifstream in(trace);
  std::string header;
  std::getline(in, header);
  CHECK(header == "step,stage,total,L_LLM,L_text-feature,L_image-feature");
  int lines = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++lines;
  CHECK(lines == 3);
}

TEST_CASE("train_stage rejects an empty dataset") {
  RunConfig cfg = trainer_config();
  EditModel model(cfg);
  std::vector<EditSample> empty;
  CHECK_THROWS_AS(train_stage(model, 1, empty, 1), std::invalid_argument);
}
