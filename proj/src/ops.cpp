#include "bridgecond/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace bridgecond {
namespace ops {

namespace {

bool want_grad(std::initializer_list<const Tensor*> inputs) {
  if (!tape_active()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
}

void require_2d(const Tensor& a, const char* op) {
  if (a.rank() != 2) throw std::invalid_argument(std::string(op) + ": expected 2-D, got " + a.shape_str());
}

}  // namespace

void check_finite(const Tensor& t, const char* op_name) {
  const double* p = t.data();
  for (std::size_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(p[i]))
      throw NumericError(std::string(op_name) + ": non-finite value at flat index " + std::to_string(i));
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const bool rec = want_grad({&a, &b});
  Tensor out(a.shape(), rec);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  check_finite(out, "add");
  if (rec) {
    out.ensure_grad();
    Tensor ac = a, bc = b, oc = out;
    GradTape::current()->record([ac, bc, oc]() mutable {
      if (ac.requires_grad()) {
        ac.ensure_grad();
        for (std::size_t i = 0; i < ac.size(); ++i) ac.grad()[i] += oc.grad()[i];
      }
      if (bc.requires_grad()) {
        bc.ensure_grad();
        for (std::size_t i = 0; i < bc.size(); ++i) bc.grad()[i] += oc.grad()[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const bool rec = want_grad({&a, &b});
  Tensor out(a.shape(), rec);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  check_finite(out, "sub");
  if (rec) {
    out.ensure_grad();
    Tensor ac = a, bc = b, oc = out;
    GradTape::current()->record([ac, bc, oc]() mutable {
      if (ac.requires_grad()) {
        ac.ensure_grad();
        for (std::size_t i = 0; i < ac.size(); ++i) ac.grad()[i] += oc.grad()[i];
      }
      if (bc.requires_grad()) {
        bc.ensure_grad();
        for (std::size_t i = 0; i < bc.size(); ++i) bc.grad()[i] -= oc.grad()[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const bool rec = want_grad({&a, &b});
  Tensor out(a.shape(), rec);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  check_finite(out, "mul");
  if (rec) {
    out.ensure_grad();
    Tensor ac = a, bc = b, oc = out;
    GradTape::current()->record([ac, bc, oc]() mutable {
      if (ac.requires_grad()) {
        ac.ensure_grad();
        for (std::size_t i = 0; i < ac.size(); ++i) ac.grad()[i] += oc.grad()[i] * bc[i];
      }
      if (bc.requires_grad()) {
        bc.ensure_grad();
        for (std::size_t i = 0; i < bc.size(); ++i) bc.grad()[i] += oc.grad()[i] * ac[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  if (!std::isfinite(c)) throw NumericError("scale: non-finite factor");
  const bool rec = want_grad({&a});
  Tensor out(a.shape(), rec);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * c;
  check_finite(out, "scale");
  if (rec) {
    out.ensure_grad();
    Tensor ac = a, oc = out;
    GradTape::current()->record([ac, oc, c]() mutable {
      if (!ac.requires_grad()) return;
      ac.ensure_grad();
      for (std::size_t i = 0; i < ac.size(); ++i) ac.grad()[i] += oc.grad()[i] * c;
    });
  }
  return out;
}

Tensor gelu(const Tensor& a) {
  // exact erf form; smooth everywhere so finite differences stay honest
  const bool rec = want_grad({&a});
  Tensor out(a.shape(), rec);
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  for (std::size_t i = 0; i < a.size(); ++i)
    out[i] = 0.5 * a[i] * (1.0 + std::erf(a[i] * kInvSqrt2));
  check_finite(out, "gelu");
  if (rec) {
    out.ensure_grad();
    Tensor ac = a, oc = out;
    GradTape::current()->record([ac, oc]() mutable {
      if (!ac.requires_grad()) return;
      ac.ensure_grad();
      constexpr double kInvSqrt2Pi = 0.3989422804014326779;
      for (std::size_t i = 0; i < ac.size(); ++i) {
        const double x = ac[i];
        const double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        ac.grad()[i] += oc.grad()[i] * (cdf + x * pdf);
      }
    });
  }
  return out;
}

Tensor add_row_vector(const Tensor& x, const Tensor& v) {
  require_2d(x, "add_row_vector");
  const int m = x.rows(), n = x.cols();
  if (static_cast<int>(v.size()) != n)
    throw std::invalid_argument("add_row_vector: vector size " + v.shape_str() + " vs cols " +
                                std::to_string(n));
  const bool rec = want_grad({&x, &v});
  Tensor out(x.shape(), rec);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] = x[static_cast<std::size_t>(i) * n + j] + v[j];
  check_finite(out, "add_row_vector");
  if (rec) {
    out.ensure_grad();
    Tensor xc = x, vc = v, oc = out;
    GradTape::current()->record([xc, vc, oc, m, n]() mutable {
      if (xc.requires_grad()) {
        xc.ensure_grad();
        for (std::size_t i = 0; i < xc.size(); ++i) xc.grad()[i] += oc.grad()[i];
      }
      if (vc.requires_grad()) {
        vc.ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) vc.grad()[j] += oc.grad()[static_cast<std::size_t>(i) * n + j];
      }
    });
  }
  return out;
}

namespace {

// c[m x n] += a[m x k] * b[k x n], raw buffers, ikj order
void gemm_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x n] += a[m x k] * b[n x k]^T
void gemm_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<std::size_t>(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// c[m x n] += a[k x m]^T * b[k x n]
void gemm_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int p = 0; p < k; ++p) {
    const double* arow = a + static_cast<std::size_t>(p) * m;
    const double* brow = b + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions differ, " + a.shape_str() + " vs " +
                                b.shape_str());
  const int m = a.rows(), k = a.cols(), n = b.cols();
  const bool rec = want_grad({&a, &b});
  Tensor out({m, n}, rec);
  gemm_acc(a.data(), b.data(), out.data(), m, k, n);
  check_finite(out, "matmul");
  if (rec) {
    out.ensure_grad();
    Tensor ac = a, bc = b, oc = out;
    GradTape::current()->record([ac, bc, oc, m, k, n]() mutable {
      if (ac.requires_grad()) {
        ac.ensure_grad();
        gemm_nt_acc(oc.grad(), bc.data(), ac.grad(), m, n, k);  // dA = dC * B^T
      }
      if (bc.requires_grad()) {
        bc.ensure_grad();
        gemm_tn_acc(ac.data(), oc.grad(), bc.grad(), k, m, n);  // dB = A^T * dC
      }
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  if (a.cols() != b.cols())
    throw std::invalid_argument("matmul_nt: inner dimensions differ, " + a.shape_str() + " vs " +
                                b.shape_str());
  const int m = a.rows(), k = a.cols(), n = b.rows();
  const bool rec = want_grad({&a, &b});
  Tensor out({m, n}, rec);
  gemm_nt_acc(a.data(), b.data(), out.data(), m, k, n);
  check_finite(out, "matmul_nt");
  if (rec) {
    out.ensure_grad();
    Tensor ac = a, bc = b, oc = out;
    GradTape::current()->record([ac, bc, oc, m, k, n]() mutable {
      if (ac.requires_grad()) {
        ac.ensure_grad();
        gemm_acc(oc.grad(), bc.data(), ac.grad(), m, n, k);  // dA = dC * B
      }
      if (bc.requires_grad()) {
        bc.ensure_grad();
        gemm_tn_acc(oc.grad(), ac.data(), bc.grad(), n, m, k);  // dB = dC^T * A
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const int m = a.rows(), n = a.cols();
  const bool rec = want_grad({&a});
  Tensor out({n, m}, rec);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  if (rec) {
    out.ensure_grad();
    Tensor ac = a, oc = out;
    GradTape::current()->record([ac, oc, m, n]() mutable {
      if (!ac.requires_grad()) return;
      ac.ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) ac.grad()[static_cast<std::size_t>(i) * n + j] += oc.grad()[static_cast<std::size_t>(j) * m + i];
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, int r0, int r1) {
  require_2d(x, "slice_rows");
  if (r0 < 0 || r1 > x.rows() || r0 >= r1)
    throw std::invalid_argument("slice_rows: bad range [" + std::to_string(r0) + "," +
                                std::to_string(r1) + ") for " + x.shape_str());
  const int n = x.cols(), m = r1 - r0;
  const bool rec = want_grad({&x});
  Tensor out({m, n}, rec);
  std::memcpy(out.data(), x.data() + static_cast<std::size_t>(r0) * n,
              static_cast<std::size_t>(m) * n * sizeof(double));
  if (rec) {
    out.ensure_grad();
    Tensor xc = x, oc = out;
    GradTape::current()->record([xc, oc, r0, m, n]() mutable {
      if (!xc.requires_grad()) return;
      xc.ensure_grad();
      for (std::size_t i = 0; i < static_cast<std::size_t>(m) * n; ++i)
        xc.grad()[static_cast<std::size_t>(r0) * n + i] += oc.grad()[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
  require_2d(x, "slice_cols");
  if (c0 < 0 || c1 > x.cols() || c0 >= c1)
    throw std::invalid_argument("slice_cols: bad range [" + std::to_string(c0) + "," +
                                std::to_string(c1) + ") for " + x.shape_str());
  const int m = x.rows(), n = x.cols(), w = c1 - c0;
  const bool rec = want_grad({&x});
  Tensor out({m, w}, rec);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < w; ++j) out.at(i, j) = x.at(i, c0 + j);
  if (rec) {
    out.ensure_grad();
    Tensor xc = x, oc = out;
    GradTape::current()->record([xc, oc, c0, m, n, w]() mutable {
      if (!xc.requires_grad()) return;
      xc.ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
          xc.grad()[static_cast<std::size_t>(i) * n + c0 + j] += oc.grad()[static_cast<std::size_t>(i) * w + j];
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
  const int n = parts[0].cols();
  int m = 0;
  bool rg = false;
  for (const auto& p : parts) {
    require_2d(p, "concat_rows");
    if (p.cols() != n) throw std::invalid_argument("concat_rows: column mismatch");
    m += p.rows();
    rg = rg || p.requires_grad();
  }
  const bool rec = tape_active() && rg;
  Tensor out({m, n}, rec);
  int row = 0;
  for (const auto& p : parts) {
    std::memcpy(out.data() + static_cast<std::size_t>(row) * n, p.data(), p.size() * sizeof(double));
    row += p.rows();
  }
  if (rec) {
    out.ensure_grad();
    std::vector<Tensor> pc = parts;
    Tensor oc = out;
    GradTape::current()->record([pc, oc, n]() mutable {
      int row = 0;
      for (auto& p : pc) {
        if (p.requires_grad()) {
          p.ensure_grad();
          for (std::size_t i = 0; i < p.size(); ++i)
            p.grad()[i] += oc.grad()[static_cast<std::size_t>(row) * n + i];
        }
        row += p.rows();
      }
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
  const int m = parts[0].rows();
  int n = 0;
  bool rg = false;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols");
    if (p.rows() != m) throw std::invalid_argument("concat_cols: row mismatch");
    n += p.cols();
    rg = rg || p.requires_grad();
  }
  const bool rec = tape_active() && rg;
  Tensor out({m, n}, rec);
  int col = 0;
  for (const auto& p : parts) {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < p.cols(); ++j) out.at(i, col + j) = p.at(i, j);
    col += p.cols();
  }
  if (rec) {
    out.ensure_grad();
    std::vector<Tensor> pc = parts;
    Tensor oc = out;
    GradTape::current()->record([pc, oc, m, n]() mutable {
      int col = 0;
      for (auto& p : pc) {
        if (p.requires_grad()) {
          p.ensure_grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < p.cols(); ++j)
              p.grad()[static_cast<std::size_t>(i) * p.cols() + j] += oc.grad()[static_cast<std::size_t>(i) * n + col + j];
        }
        col += p.cols();
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  const bool rec = want_grad({&x});
  Tensor out({1}, rec);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i];
  out[0] = acc;
  check_finite(out, "sum");
  if (rec) {
    out.ensure_grad();
    Tensor xc = x, oc = out;
    GradTape::current()->record([xc, oc]() mutable {
      if (!xc.requires_grad()) return;
      xc.ensure_grad();
      const double g = oc.grad()[0];
      for (std::size_t i = 0; i < xc.size(); ++i) xc.grad()[i] += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  Tensor s = sum(x);
  return scale(s, 1.0 / static_cast<double>(x.size()));
}

Tensor softmax(const Tensor& x) {
  require_2d(x, "softmax");
  const int m = x.rows(), n = x.cols();
  const bool rec = want_grad({&x});
  Tensor out(x.shape(), rec);
  for (int i = 0; i < m; ++i) {
    const double* xi = x.data() + static_cast<std::size_t>(i) * n;
    double* oi = out.data() + static_cast<std::size_t>(i) * n;
    double mx = xi[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      oi[j] = std::exp(xi[j] - mx);
      z += oi[j];
    }
    for (int j = 0; j < n; ++j) oi[j] /= z;
  }
  check_finite(out, "softmax");
  if (rec) {
    out.ensure_grad();
    Tensor xc = x, oc = out;
    GradTape::current()->record([xc, oc, m, n]() mutable {
      if (!xc.requires_grad()) return;
      xc.ensure_grad();
      for (int i = 0; i < m; ++i) {
        const double* y = oc.data() + static_cast<std::size_t>(i) * n;
        const double* gy = oc.grad() + static_cast<std::size_t>(i) * n;
        double* gx = xc.grad() + static_cast<std::size_t>(i) * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += y[j] * gy[j];
        for (int j = 0; j < n; ++j) gx[j] += y[j] * (gy[j] - dot);
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_2d(x, "layer_norm");
  const int m = x.rows(), n = x.cols();
  if (static_cast<int>(gamma.size()) != n || static_cast<int>(beta.size()) != n)
    throw std::invalid_argument("layer_norm: gamma/beta size must equal last dim");
  const bool rec = want_grad({&x, &gamma, &beta});
  Tensor out(x.shape(), rec);
  std::vector<double> mu(m), inv_sd(m);
  for (int i = 0; i < m; ++i) {
    const double* xi = x.data() + static_cast<std::size_t>(i) * n;
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += xi[j];
    mu[i] = s / n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (xi[j] - mu[i]) * (xi[j] - mu[i]);
    var /= n;
    inv_sd[i] = 1.0 / std::sqrt(var + eps);
    double* oi = out.data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) oi[j] = gamma[j] * (xi[j] - mu[i]) * inv_sd[i] + beta[j];
  }
  check_finite(out, "layer_norm");
  if (rec) {
    out.ensure_grad();
    Tensor xc = x, gc = gamma, bc = beta, oc = out;
    GradTape::current()->record([xc, gc, bc, oc, mu, inv_sd, m, n]() mutable {
      for (int i = 0; i < m; ++i) {
        const double* xi = xc.data() + static_cast<std::size_t>(i) * n;
        const double* go = oc.grad() + static_cast<std::size_t>(i) * n;
        // xhat_j = (x_j - mu) * inv_sd
        if (bc.requires_grad()) {
          bc.ensure_grad();
          for (int j = 0; j < n; ++j) bc.grad()[j] += go[j];
        }
        if (gc.requires_grad()) {
          gc.ensure_grad();
          for (int j = 0; j < n; ++j) gc.grad()[j] += go[j] * (xi[j] - mu[i]) * inv_sd[i];
        }
        if (xc.requires_grad()) {
          xc.ensure_grad();
          double* gx = xc.grad() + static_cast<std::size_t>(i) * n;
          double sum_g = 0.0, sum_gx = 0.0;
          for (int j = 0; j < n; ++j) {
            const double gh = go[j] * gc[j];  // d/d xhat
            const double xh = (xi[j] - mu[i]) * inv_sd[i];
            sum_g += gh;
            sum_gx += gh * xh;
          }
          for (int j = 0; j < n; ++j) {
            const double gh = go[j] * gc[j];
            const double xh = (xi[j] - mu[i]) * inv_sd[i];
            gx[j] += inv_sd[i] * (gh - sum_g / n - xh * sum_gx / n);
          }
        }
      }
    });
  }
  return out;
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  require_2d(q, "scaled_dot_attention");
  require_2d(k, "scaled_dot_attention");
  require_2d(v, "scaled_dot_attention");
  if (q.cols() != k.cols())
    throw std::invalid_argument("scaled_dot_attention: Q/K width mismatch " + q.shape_str() +
                                " vs " + k.shape_str());
  if (k.rows() != v.rows())
    throw std::invalid_argument("scaled_dot_attention: K/V row mismatch " + k.shape_str() + " vs " +
                                v.shape_str());
  Tensor scores = matmul_nt(q, k);
  scores = scale(scores, 1.0 / std::sqrt(static_cast<double>(q.cols())));
  Tensor w = softmax(scores);
  return matmul(w, v);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul_nt(x, w);
  if (b.defined()) y = add_row_vector(y, b);
  return y;
}

Tensor lora_linear(const Tensor& x, const Parameter& base_w, const Parameter& a,
                   const Parameter& b, double alpha) {
  const int r = a.tensor.rows();
  if (r < 1) throw std::invalid_argument("lora_linear: rank must be >= 1");
  if (a.tensor.cols() != base_w.tensor.cols())
    throw std::invalid_argument("lora_linear: A width " + a.tensor.shape_str() +
                                " vs base " + base_w.tensor.shape_str());
  if (b.tensor.cols() != r || b.tensor.rows() != base_w.tensor.rows())
    throw std::invalid_argument("lora_linear: B shape " + b.tensor.shape_str() +
                                " vs base " + base_w.tensor.shape_str());
  Tensor y = matmul_nt(x, base_w.tensor);
  if (alpha == 0.0) return y;
  Tensor low = matmul_nt(x, a.tensor);          // [m x r]
  Tensor up = matmul_nt(low, b.tensor);         // [m x d_out]
  return add(y, scale(up, alpha / static_cast<double>(r)));
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  Tensor d = sub(a, b);
  return mean(mul(d, d));
}

Tensor nll_loss(const Tensor& logits, const std::vector<int>& targets) {
  require_2d(logits, "nll_loss");
  if (static_cast<int>(targets.size()) != logits.rows())
    throw std::invalid_argument("nll_loss: one target per row required");
  std::vector<std::pair<int, int>> rt;
  rt.reserve(targets.size());
  for (int i = 0; i < logits.rows(); ++i) rt.emplace_back(i, targets[i]);
  return nll_at(logits, rt);
}

Tensor nll_at(const Tensor& logits, const std::vector<std::pair<int, int>>& row_targets) {
  require_2d(logits, "nll_at");
  if (row_targets.empty()) throw std::invalid_argument("nll_at: no target positions");
  const int n = logits.cols();
  for (auto [r, t] : row_targets) {
    if (r < 0 || r >= logits.rows()) throw std::invalid_argument("nll_at: row out of range");
    if (t < 0 || t >= n)
      throw std::invalid_argument("nll_at: target id " + std::to_string(t) + " out of vocab " +
                                  std::to_string(n));
  }
  const bool rec = want_grad({&logits});
  Tensor out({1}, rec);
  const double inv_cnt = 1.0 / static_cast<double>(row_targets.size());
  double loss = 0.0;
  for (auto [r, t] : row_targets) {
    const double* row = logits.data() + static_cast<std::size_t>(r) * n;
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    loss += (std::log(z) + mx) - row[t];
  }
  out[0] = loss * inv_cnt;
  check_finite(out, "nll_at");
  if (rec) {
    out.ensure_grad();
    Tensor lc = logits, oc = out;
    auto rt = row_targets;
    GradTape::current()->record([lc, oc, rt, n, inv_cnt]() mutable {
      if (!lc.requires_grad()) return;
      lc.ensure_grad();
      const double g = oc.grad()[0] * inv_cnt;
      for (auto [r, t] : rt) {
        const double* row = lc.data() + static_cast<std::size_t>(r) * n;
        double* grow = lc.grad() + static_cast<std::size_t>(r) * n;
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < n; ++j) z += std::exp(row[j] - mx);
        for (int j = 0; j < n; ++j) grow[j] += g * std::exp(row[j] - mx) / z;
        grow[t] -= g;
      }
    });
  }
  return out;
}

Tensor gather_flat(const Tensor& x, const std::vector<int>& idx, std::vector<int> out_shape) {
  if (Tensor::count(out_shape) != idx.size())
    throw std::invalid_argument("gather_flat: index count does not match output shape");
  for (int i : idx)
    if (i < 0 || static_cast<std::size_t>(i) >= x.size())
      throw std::invalid_argument("gather_flat: index out of range");
  const bool rec = want_grad({&x});
  Tensor out(std::move(out_shape), rec);
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = x[static_cast<std::size_t>(idx[i])];
  if (rec) {
    out.ensure_grad();
    Tensor xc = x, oc = out;
    const std::vector<int>* idxp = &idx;  // idx owned by caller; copy for safety
    std::vector<int> idc = *idxp;
    GradTape::current()->record([xc, oc, idc]() mutable {
      if (!xc.requires_grad()) return;
      xc.ensure_grad();
      for (std::size_t i = 0; i < idc.size(); ++i)
        xc.grad()[static_cast<std::size_t>(idc[i])] += oc.grad()[i];
    });
  }
  return out;
}

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
  require_2d(table, "embedding_rows");
  const int n = table.cols();
  for (int id : ids)
    if (id < 0 || id >= table.rows())
      throw std::invalid_argument("embedding_rows: id " + std::to_string(id) + " out of range");
  const bool rec = want_grad({&table});
  Tensor out({static_cast<int>(ids.size()), n}, rec);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::memcpy(out.data() + i * n, table.data() + static_cast<std::size_t>(ids[i]) * n,
                static_cast<std::size_t>(n) * sizeof(double));
  if (rec) {
    out.ensure_grad();
    Tensor tc = table, oc = out;
    auto idc = ids;
    GradTape::current()->record([tc, oc, idc, n]() mutable {
      if (!tc.requires_grad()) return;
      tc.ensure_grad();
      for (std::size_t i = 0; i < idc.size(); ++i)
        for (int j = 0; j < n; ++j)
          tc.grad()[static_cast<std::size_t>(idc[i]) * n + j] += oc.grad()[i * n + j];
    });
  }
  return out;
}

}  // namespace ops
}  // namespace bridgecond
