#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "bridgecond/metrics.hpp"
#include "bridgecond/pipeline.hpp"

namespace fs = std::filesystem;
using namespace bridgecond;

namespace {

RasterImage flat(int size, double r, double g, double b) {
  RasterImage img(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      img.at(x, y, 0) = r;
      img.at(x, y, 1) = g;
      img.at(x, y, 2) = b;
    }
  return img;
}

}  // namespace

TEST_CASE("psnr: cap on identical, exact formula values, errors") {
  RasterImage a = flat(16, 0.5, 0.5, 0.5);
  PsnrResult same = psnr(a, a);
  CHECK(same.capped);
  CHECK(same.db == kPsnrCap);

  // uniform offset d gives MSE d^2: d = 0.1 -> 20 dB, d = 1.0 -> 0 dB
  RasterImage b = flat(16, 0.6, 0.6, 0.6);
  PsnrResult r20 = psnr(a, b);
  CHECK_FALSE(r20.capped);
  CHECK(r20.db == doctest::Approx(20.0).epsilon(1e-9));

  RasterImage z = flat(16, 0, 0, 0);
  RasterImage o = flat(16, 1, 1, 1);
  CHECK(psnr(z, o).db == doctest::Approx(0.0).epsilon(1e-9));

  RasterImage small(8, 8);
  CHECK_THROWS_AS(psnr(a, small), std::invalid_argument);
  Mask empty(16, 16);
  CHECK_THROWS_AS(psnr(a, b, &empty), std::invalid_argument);
}

TEST_CASE("psnr: strictly decreasing under growing noise amplitude") {
  Rng rng(8);
  RasterImage ref(16, 16);
  for (auto& v : ref.pixels) v = rng.uniform(0.2, 0.8);
  double prev = std::numeric_limits<double>::infinity();
  for (double amp : {0.01, 0.05, 0.1}) {
    RasterImage noisy = ref;
    Rng nrng(9);
    for (auto& v : noisy.pixels) v = std::clamp(v + nrng.uniform(-amp, amp), 0.0, 1.0);
    const double db = psnr(ref, noisy).db;
    CHECK(db < prev);
    prev = db;
  }
}

TEST_CASE("psnr: region restriction uses only masked pixels") {
  RasterImage a = flat(16, 0.5, 0.5, 0.5);
  RasterImage b = a;
  // corrupt a single region; psnr restricted to the clean region stays capped
  Mask dirty(16, 16);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) dirty.at(x, y) = 1;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) b.at(x, y, 0) = 1.0;
  Mask clean(16, 16);
  for (std::size_t i = 0; i < clean.bits.size(); ++i) clean.bits[i] = dirty.bits[i] ? 0 : 1;
  CHECK(psnr(a, b, &clean).capped);
  CHECK_FALSE(psnr(a, b, &dirty).capped);
}

TEST_CASE("ssim: identity, symmetry, range, window oracle") {
  Rng rng(10);
  RasterImage a(16, 16), b(16, 16);
  for (auto& v : a.pixels) v = rng.uniform(0.0, 1.0);
  for (auto& v : b.pixels) v = rng.uniform(0.0, 1.0);

  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
  const double v = ssim(a, b);
  CHECK(v >= -1.0);
  CHECK(v <= 1.0);
  CHECK(v < 1.0 - 1e-12);  // different images stay below 1

  RasterImage tiny(4, 4);
  CHECK_THROWS_AS(ssim(tiny, tiny), std::invalid_argument);

  // single 8x8 window against a fully independent brute-force evaluation
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(64), y(64);
    for (auto& e : x) e = rng.uniform(0.0, 1.0);
    for (auto& e : y) e = rng.uniform(0.0, 1.0);
    double mx = 0, my = 0;
    for (int i = 0; i < 64; ++i) {
      mx += x[i] / 64;
      my += y[i] / 64;
    }
    double vx = 0, vy = 0, cov = 0;
    for (int i = 0; i < 64; ++i) {
      vx += (x[i] - mx) * (x[i] - mx) / 64;
      vy += (y[i] - my) * (y[i] - my) / 64;
      cov += (x[i] - mx) * (y[i] - my) / 64;
    }
    const double c1 = 1e-4, c2 = 9e-4;
    const double expect =
        ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    CHECK(std::abs(ssim_window(x, y) - expect) < 1e-12);
  }
}

TEST_CASE("masked_consistency: hand-built 2x2 case and error paths") {
  EditSample s;
  s.src = RasterImage(2, 2);
  s.tgt = RasterImage(2, 2);
  s.mask = Mask(2, 2);
  s.mask.at(0, 0) = 1;
  // inside pixel differs by (0.5, 0, 0); one outside pixel differs by (0, 0.3, 0)
  s.tgt.at(0, 0, 0) = 0.5;
  s.tgt.at(1, 1, 1) = 0.3;
  MaskedMse r = masked_consistency(s);
  CHECK(r.edit_mse == doctest::Approx(0.25 / 3.0).epsilon(1e-12));
  CHECK(r.bg_mse == doctest::Approx(0.09 / 9.0).epsilon(1e-12));

  EditSample s2 = s;
  s2.mask = Mask(2, 2);
  CHECK_THROWS_AS(masked_consistency(s2), std::invalid_argument);
  for (auto& b : s2.mask.bits) b = 1;
  CHECK_THROWS_AS(masked_consistency(s2), std::invalid_argument);

  // identical images measure zero on both sides
  EditSample s3;
  s3.src = flat(4, 0.2, 0.4, 0.6);
  s3.tgt = s3.src;
  s3.mask = Mask(4, 4);
  s3.mask.at(1, 1) = 1;
  MaskedMse r3 = masked_consistency(s3);
  CHECK(r3.edit_mse == 0.0);
  CHECK(r3.bg_mse == 0.0);
}

TEST_CASE("evaluate: perfect predictions, aggregates, missing rows") {
  RunConfig cfg;
  cfg.seed = 500;
  cfg.pipeline_tasks = "removal";
  cfg.pipeline_modes = "template";
  cfg.max_samples = 3;
  const auto dir = fs::temp_directory_path() / "bridgecond_test_eval";
  fs::remove_all(dir);
  Manifest manifest = run_pipeline(6, cfg, dir.string());
  REQUIRE(manifest.rows.size() == 3);

  // predictions equal to the targets
  const auto pred = dir / "pred";
  fs::create_directories(pred);
  for (const auto& row : manifest.rows) {
    const RasterImage tgt = read_ppm((dir / row.tgt_path).string());
    write_ppm(tgt, (pred / (row.id + ".ppm")).string());
  }
  ScorerAdapter mock("builtin-mock", 7.0);
  MetricReport rep = evaluate(manifest, dir.string(), pred.string(), &mock);
  REQUIRE(rep.rows.size() == 3);
  for (const auto& row : rep.rows) {
    CHECK(row.present);
    CHECK(row.psnr_capped);  // identical to target
    CHECK(row.ssim_full == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(row.scored);
    CHECK(row.vie == doctest::Approx(10.0));  // mock on a ground-truth pair
  }
  CHECK(rep.mean_ssim == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rep.have_vie);
  CHECK(rep.mean_vie == doctest::Approx(10.0));

  // copying sources instead of targets leaves edit-region error on removals
  const auto pred2 = dir / "pred_src";
  fs::create_directories(pred2);
  for (const auto& row : manifest.rows) {
    const RasterImage src = read_ppm((dir / row.src_path).string());
    write_ppm(src, (pred2 / (row.id + ".ppm")).string());
  }
  MetricReport rep2 = evaluate(manifest, dir.string(), pred2.string(), nullptr);
  for (const auto& row : rep2.rows) CHECK(row.masked_mse_edit > 0.0);

  // a missing prediction is excluded from aggregates and flagged
  fs::remove(pred / (manifest.rows[0].id + ".ppm"));
  MetricReport rep3 = evaluate(manifest, dir.string(), pred.string(), nullptr);
  CHECK(rep3.absent == 1);
  CHECK_FALSE(rep3.rows[0].present);

  // aggregate equals the mean of the present rows
  double acc = 0;
  int n = 0;
  for (const auto& row : rep3.rows)
    if (row.present) {
      acc += row.ssim_full;
      ++n;
    }
  CHECK(rep3.mean_ssim == doctest::Approx(acc / n));

  // report csv round-trips through disk without error
  write_report_csv(rep3, (dir / "report.csv").string());
  CHECK(fs::exists(dir / "report.csv"));
}

TEST_CASE("report aggregation is permutation-invariant") {
  RunConfig cfg;
  cfg.seed = 600;
  cfg.pipeline_tasks = "removal";
  cfg.pipeline_modes = "template";
  cfg.max_samples = 4;
  const auto dir = fs::temp_directory_path() / "bridgecond_test_perm";
  fs::remove_all(dir);
  Manifest manifest = run_pipeline(8, cfg, dir.string());
  const auto pred = dir / "pred";
  fs::create_directories(pred);
  Rng rng(3);
  for (const auto& row : manifest.rows) {
    RasterImage tgt = read_ppm((dir / row.tgt_path).string());
    for (auto& v : tgt.pixels) v = std::clamp(v + rng.uniform(-0.05, 0.05), 0.0, 1.0);
    write_ppm(tgt, (pred / (row.id + ".ppm")).string());
  }
  MetricReport a = evaluate(manifest, dir.string(), pred.string(), nullptr);
  Manifest shuffled = manifest;
  std::swap(shuffled.rows[0], shuffled.rows[3]);
  std::swap(shuffled.rows[1], shuffled.rows[2]);
  MetricReport b = evaluate(shuffled, dir.string(), pred.string(), nullptr);
  CHECK(a.mean_psnr_bg == doctest::Approx(b.mean_psnr_bg).epsilon(1e-12));
  CHECK(a.mean_ssim == doctest::Approx(b.mean_ssim).epsilon(1e-12));
  CHECK(a.mean_masked_mse_edit == doctest::Approx(b.mean_masked_mse_edit).epsilon(1e-12));
}
