#include "bridgecond/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

namespace fs = std::filesystem;

namespace bridgecond {

namespace {

void require_same_size(const RasterImage& a, const RasterImage& b, const char* op) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument(std::string(op) + ": image sizes differ (" +
                                std::to_string(a.width) + "x" + std::to_string(a.height) + " vs " +
                                std::to_string(b.width) + "x" + std::to_string(b.height) + ")");
}

std::vector<double> luma(const RasterImage& img) {
  std::vector<double> out(img.pixel_count());
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      out[static_cast<std::size_t>(y) * img.width + x] =
          0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
  return out;
}

}  // namespace

PsnrResult psnr(const RasterImage& a, const RasterImage& b, const Mask* region) {
  require_same_size(a, b, "psnr");
  if (region && (region->width != a.width || region->height != a.height))
    throw std::invalid_argument("psnr: region mask size mismatch");
  double acc = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      if (region && !region->at(x, y)) continue;
      for (int c = 0; c < 3; ++c) {
        const double d = a.at(x, y, c) - b.at(x, y, c);
        acc += d * d;
      }
      ++n;
    }
  if (n == 0) throw std::invalid_argument("psnr: empty region");
  const double mse = acc / static_cast<double>(3 * n);
  PsnrResult r;
  if (mse <= 0.0) {
    r.db = kPsnrCap;
    r.capped = true;
    return r;
  }
  r.db = 10.0 * std::log10(1.0 / mse);
  if (r.db > kPsnrCap) {
    r.db = kPsnrCap;
    r.capped = true;
  }
  return r;
}

double ssim_window(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.empty())
    throw std::invalid_argument("ssim_window: size mismatch");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double vx = 0, vy = 0, cov = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    vx += (x[i] - mx) * (x[i] - mx);
    vy += (y[i] - my) * (y[i] - my);
    cov += (x[i] - mx) * (y[i] - my);
  }
  vx /= n;
  vy /= n;
  cov /= n;
  constexpr double kC1 = 0.01 * 0.01;  // (K1*L)^2, L = 1
  constexpr double kC2 = 0.03 * 0.03;
  return ((2 * mx * my + kC1) * (2 * cov + kC2)) /
         ((mx * mx + my * my + kC1) * (vx + vy + kC2));
}

double ssim(const RasterImage& a, const RasterImage& b) {
  require_same_size(a, b, "ssim");
  constexpr int kWin = 8;
  if (a.width < kWin || a.height < kWin)
    throw std::invalid_argument("ssim: image smaller than the 8x8 window");
  const std::vector<double> la = luma(a), lb = luma(b);
  double acc = 0.0;
  int count = 0;
  std::vector<double> wx(kWin * kWin), wy(kWin * kWin);
  for (int y0 = 0; y0 + kWin <= a.height; ++y0)
    for (int x0 = 0; x0 + kWin <= a.width; ++x0) {
      int k = 0;
      for (int dy = 0; dy < kWin; ++dy)
        for (int dx = 0; dx < kWin; ++dx, ++k) {
          wx[static_cast<std::size_t>(k)] = la[static_cast<std::size_t>(y0 + dy) * a.width + x0 + dx];
          wy[static_cast<std::size_t>(k)] = lb[static_cast<std::size_t>(y0 + dy) * a.width + x0 + dx];
        }
      acc += ssim_window(wx, wy);
      ++count;
    }
  return acc / count;
}

MaskedMse masked_consistency(const EditSample& sample) {
  require_same_size(sample.src, sample.tgt, "masked_consistency");
  if (sample.mask.count() == 0)
    throw std::invalid_argument("masked_consistency: empty mask");
  if (sample.mask.count() == sample.mask.bits.size())
    throw std::invalid_argument("masked_consistency: empty mask complement");
  MaskedMse r;
  double acc_in = 0, acc_out = 0;
  std::size_t n_in = 0, n_out = 0;
  for (int y = 0; y < sample.src.height; ++y)
    for (int x = 0; x < sample.src.width; ++x) {
      double d2 = 0;
      for (int c = 0; c < 3; ++c) {
        const double d = sample.src.at(x, y, c) - sample.tgt.at(x, y, c);
        d2 += d * d;
      }
      if (sample.mask.at(x, y)) {
        acc_in += d2;
        ++n_in;
      } else {
        acc_out += d2;
        ++n_out;
      }
    }
  r.edit_mse = acc_in / static_cast<double>(3 * n_in);
  r.bg_mse = acc_out / static_cast<double>(3 * n_out);
  return r;
}

MetricReport evaluate(const Manifest& manifest, const std::string& manifest_dir,
                      const std::string& pred_dir, ScorerAdapter* scorer, int workers) {
  MetricReport report;
  report.rows.resize(manifest.rows.size());

  auto eval_row = [&](std::size_t i) {
    const EditSample& m = manifest.rows[i];
    MetricRow& row = report.rows[i];
    row.id = m.id;
    const std::string pred_path = (fs::path(pred_dir) / (m.id + ".ppm")).string();
    if (!fs::exists(pred_path)) {
      row.present = false;
      return;
    }
    const RasterImage pred = read_ppm(pred_path);
    const RasterImage tgt = read_ppm((fs::path(manifest_dir) / m.tgt_path).string());
    const Mask mask = read_pgm((fs::path(manifest_dir) / m.mask_path).string());
    Mask bg(mask.width, mask.height);
    for (std::size_t k = 0; k < bg.bits.size(); ++k) bg.bits[k] = mask.bits[k] ? 0 : 1;
    const PsnrResult p = psnr(pred, tgt, &bg);
    row.present = true;
    row.psnr_bg = p.db;
    row.psnr_capped = p.capped;
    row.ssim_full = ssim(pred, tgt);
    EditSample probe;
    probe.src = pred;
    probe.tgt = tgt;
    probe.mask = mask;
    row.masked_mse_edit = masked_consistency(probe).edit_mse;
  };

  const int nw = std::max(1, workers);
  if (nw == 1) {
    for (std::size_t i = 0; i < manifest.rows.size(); ++i) eval_row(i);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < nw; ++w)
      pool.emplace_back([&, w]() {
        for (std::size_t i = static_cast<std::size_t>(w); i < manifest.rows.size();
             i += static_cast<std::size_t>(nw))
          eval_row(i);
      });
    for (auto& th : pool) th.join();
  }

  // scoring runs sequentially in manifest order (external scorers are a
  // single child process)
  if (scorer) {
    for (std::size_t i = 0; i < manifest.rows.size(); ++i) {
      MetricRow& row = report.rows[i];
      if (!row.present) continue;
      const EditSample& m = manifest.rows[i];
      EditSample s;
      s.instruction = m.instruction;
      s.src = read_ppm((fs::path(manifest_dir) / m.src_path).string());
      s.tgt = read_ppm((fs::path(pred_dir) / (m.id + ".ppm")).string());
      s.mask = read_pgm((fs::path(manifest_dir) / m.mask_path).string());
      s.src_path = (fs::path(manifest_dir) / m.src_path).string();
      s.tgt_path = (fs::path(pred_dir) / (m.id + ".ppm")).string();
      quality_filter(s, *scorer);
      if (s.scored) {
        row.scored = true;
        row.sc = s.sc;
        row.pq = s.pq;
        row.vie = s.overall;
      }
    }
  }

  int n = 0, n_vie = 0;
  for (const auto& row : report.rows) {
    if (!row.present) {
      ++report.absent;
      continue;
    }
    ++n;
    report.mean_psnr_bg += row.psnr_bg;
    report.mean_ssim += row.ssim_full;
    report.mean_masked_mse_edit += row.masked_mse_edit;
    if (row.scored) {
      ++n_vie;
      report.mean_sc += row.sc;
      report.mean_pq += row.pq;
      report.mean_vie += row.vie;
    }
  }
  if (n) {
    report.mean_psnr_bg /= n;
    report.mean_ssim /= n;
    report.mean_masked_mse_edit /= n;
  }
  if (n_vie) {
    report.have_vie = true;
    report.mean_sc /= n_vie;
    report.mean_pq /= n_vie;
    report.mean_vie /= n_vie;
  }
  return report;
}

void write_report_csv(const MetricReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("report: cannot write " + path);
  out << "id,present,psnr_bg,psnr_capped,ssim,masked_mse_edit,sc,pq,vie\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (const auto& r : report.rows) {
    out << r.id << "," << (r.present ? 1 : 0);
    if (r.present) {
      out << "," << num(r.psnr_bg) << "," << (r.psnr_capped ? 1 : 0) << "," << num(r.ssim_full)
          << "," << num(r.masked_mse_edit);
      if (r.scored)
        out << "," << num(r.sc) << "," << num(r.pq) << "," << num(r.vie);
      else
        out << ",,,";
    } else {
      out << ",,,,,,,";
    }
    out << "\n";
  }
  out << "mean,," << num(report.mean_psnr_bg) << ",," << num(report.mean_ssim) << ","
      << num(report.mean_masked_mse_edit) << ",";
  if (report.have_vie)
    out << num(report.mean_sc) << "," << num(report.mean_pq) << "," << num(report.mean_vie);
  else
    out << ",,";
  out << "\n";
}

void print_summary(const MetricReport& report, std::ostream& os) {
  char line[256];
  const std::string vie = report.have_vie ? [&] {
    char b[32];
    std::snprintf(b, sizeof(b), "%.3f", report.mean_vie);
    return std::string(b);
  }() : std::string("n/a");
  char psnr_s[32], ssim_s[32];
  std::snprintf(psnr_s, sizeof(psnr_s), "%.3f", report.mean_psnr_bg);
  std::snprintf(ssim_s, sizeof(ssim_s), "%.3f", report.mean_ssim);
  std::snprintf(line, sizeof(line), "%-10s %-10s %-10s %-10s %-10s", "VIEScore", "CLIPScore",
                "PSNR", "SSIM", "LPIPS");
  os << line << "\n";
  std::snprintf(line, sizeof(line), "%-10s %-10s %-10s %-10s %-10s", vie.c_str(), "n/a", psnr_s,
                ssim_s, "n/a");
  os << line << "\n";
  if (report.absent)
    os << "warning: " << report.absent << " manifest rows had no prediction and were excluded\n";
}

}  // namespace bridgecond
