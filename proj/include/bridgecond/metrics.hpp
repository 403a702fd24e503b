#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "bridgecond/pipeline.hpp"
#include "bridgecond/sample_types.hpp"

namespace bridgecond {

inline constexpr double kPsnrCap = 99.0;

// 10*log10(MAX^2/MSE), MAX=1 on normalized pixels; identical inputs cap at
// 99 dB. region restricts the MSE to its set pixels; pass nullptr for all.
struct PsnrResult {
  double db = 0.0;
  bool capped = false;
};
PsnrResult psnr(const RasterImage& a, const RasterImage& b, const Mask* region = nullptr);

// Mean local SSIM over sliding 8x8 uniform windows of the luma channel,
// K1=0.01, K2=0.03, L=1, population statistics.
double ssim(const RasterImage& a, const RasterImage& b);

// SSIM of a single window given raw luma arrays (the test oracle target).
double ssim_window(const std::vector<double>& x, const std::vector<double>& y);

struct MaskedMse {
  double bg_mse = 0.0;
  double edit_mse = 0.0;
};
MaskedMse masked_consistency(const EditSample& sample);

struct MetricRow {
  std::string id;
  bool present = false;
  double psnr_bg = 0.0;
  bool psnr_capped = false;
  double ssim_full = 0.0;
  double masked_mse_edit = 0.0;
  bool scored = false;
  double sc = 0.0, pq = 0.0, vie = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  int absent = 0;
  double mean_psnr_bg = 0.0;
  double mean_ssim = 0.0;
  double mean_masked_mse_edit = 0.0;
  bool have_vie = false;
  double mean_sc = 0.0, mean_pq = 0.0, mean_vie = 0.0;
};

// Prediction per manifest row expected at pred_dir/<id>.ppm; rows without a
// prediction are marked absent and excluded from aggregates.
MetricReport evaluate(const Manifest& manifest, const std::string& manifest_dir,
                      const std::string& pred_dir, ScorerAdapter* scorer, int workers = 1);

void write_report_csv(const MetricReport& report, const std::string& path);

// Aligned summary mirroring the paper's table column order; metrics that
// need pretrained backends render as n/a.
void print_summary(const MetricReport& report, std::ostream& os);

}  // namespace bridgecond
