#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace bridgecond {

// Raised when an op produces or receives NaN/Inf; the CLI maps it to exit 3.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense row-major tensor of 64-bit floats. Copies share the underlying data
// and gradient buffers (shallow value semantics, like the graph needs).
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape, bool requires_grad = false)
      : shape_(std::move(shape)), requires_grad_(requires_grad) {
    data_ = std::make_shared<std::vector<double>>(count(shape_), 0.0);
    if (requires_grad_) ensure_grad();
  }

  static Tensor scalar(double v) {
    Tensor t({1});
    (*t.data_)[0] = v;
    return t;
  }

  static Tensor from(std::vector<int> shape, std::vector<double> data) {
    Tensor t;
    t.shape_ = std::move(shape);
    if (data.size() != count(t.shape_))
      throw std::invalid_argument("Tensor::from: data length " + std::to_string(data.size()) +
                                  " does not match shape product " + std::to_string(count(t.shape_)));
    t.data_ = std::make_shared<std::vector<double>>(std::move(data));
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return data_ ? data_->size() : 0; }
  bool defined() const { return static_cast<bool>(data_); }

  // 2-D helpers; most of the model lives in matrices
  int rows() const { return shape_[0]; }
  int cols() const { return shape_[1]; }

  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }
  double& operator[](std::size_t i) { return (*data_)[i]; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double& at(int r, int c) { return (*data_)[static_cast<std::size_t>(r) * shape_[1] + c]; }
  double at(int r, int c) const { return (*data_)[static_cast<std::size_t>(r) * shape_[1] + c]; }
  double item() const {
    if (size() != 1) throw std::invalid_argument("item(): tensor is not a scalar");
    return (*data_)[0];
  }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool v) {
    requires_grad_ = v;
    // eager allocation keeps the grad buffer shared across reshaped views
    if (v && data_) ensure_grad();
  }

  bool has_grad() const { return static_cast<bool>(grad_); }
  double* grad() { return grad_->data(); }
  const double* grad() const { return grad_->data(); }
  std::vector<double>& grad_vec() { return *grad_; }

  void ensure_grad() {
    if (!grad_) grad_ = std::make_shared<std::vector<double>>(size(), 0.0);
  }
  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
  }
  void drop_grad() { grad_.reset(); }

  // View with a new shape over the same buffers. No tape node is needed:
  // gradients flow through the shared grad buffer.
  Tensor reshaped(std::vector<int> new_shape) const {
    if (count(new_shape) != size())
      throw std::invalid_argument("reshape: element count mismatch");
    Tensor t = *this;
    t.shape_ = std::move(new_shape);
    return t;
  }

  bool same_buffer(const Tensor& other) const { return data_ == other.data_; }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i)
      s += (i ? "x" : "") + std::to_string(shape_[i]);
    return s + "]";
  }

  static std::size_t count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  std::shared_ptr<std::vector<double>> data_;
  std::shared_ptr<std::vector<double>> grad_;
  bool requires_grad_ = false;

  friend class GradTape;
};

// Named model weight. `frozen` marks weights that never train in any stage
// (vision encoder, base LM projections); per-stage masks are applied on top.
struct Parameter {
  Tensor tensor;
  std::string name;
  bool frozen = false;

  Parameter() = default;
  Parameter(std::string n, Tensor t, bool frz = false)
      : tensor(std::move(t)), name(std::move(n)), frozen(frz) {}
};

// Ordered record of backward rules. Ops append during forward evaluation, so
// iterating in reverse is a valid topological replay.
class GradTape {
 public:
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape*& current();

  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Seeds d(loss)/d(loss)=1, replays the tape in reverse, then clears it.
  void backward(Tensor& loss);

 private:
  std::vector<std::function<void()>> nodes_;
};

// Installs a tape as the active recording context for the current thread.
class TapeScope {
 public:
  TapeScope() : prev_(GradTape::current()) { GradTape::current() = &tape_; }
  ~TapeScope() { GradTape::current() = prev_; }
  GradTape& tape() { return tape_; }

 private:
  GradTape tape_;
  GradTape* prev_;
};

// Temporarily disables recording (finite-difference probes, inference).
class NoGradScope {
 public:
  NoGradScope() : prev_(GradTape::current()) { GradTape::current() = nullptr; }
  ~NoGradScope() { GradTape::current() = prev_; }

 private:
  GradTape* prev_;
};

inline bool tape_active() { return GradTape::current() != nullptr; }

void backward(Tensor& loss);

// Central-difference gradient of a scalar function w.r.t. p's elements.
Tensor finite_diff_grad(const std::function<double()>& f, Tensor& p, double h_step = 1e-5);

}  // namespace bridgecond
