#include "bridgecond/tensor.hpp"

#include <cmath>

namespace bridgecond {

GradTape*& GradTape::current() {
  thread_local GradTape* tape = nullptr;
  return tape;
}

void GradTape::backward(Tensor& loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be a scalar, got " + loss.shape_str());
  if (!loss.requires_grad())
    throw std::invalid_argument("backward: loss does not require grad");
  loss.ensure_grad();
  (*loss.grad_)[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  clear();
}

void backward(Tensor& loss) {
  if (!tape_active()) throw std::runtime_error("backward: no active GradTape");
  GradTape::current()->backward(loss);
}

Tensor finite_diff_grad(const std::function<double()>& f, Tensor& p, double h_step) {
  NoGradScope no_grad;
  Tensor g(p.shape());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double saved = p[i];
    p[i] = saved + h_step;
    const double fp = f();
    p[i] = saved - h_step;
    const double fm = f();
    p[i] = saved;
    g[i] = (fp - fm) / (2.0 * h_step);
  }
  return g;
}

}  // namespace bridgecond
