#include <doctest.h>

#include <cmath>

#include "bridgecond/gradcheck.hpp"
#include "bridgecond/ops.hpp"
#include "bridgecond/rng.hpp"
#include "bridgecond/tensor.hpp"

using namespace bridgecond;
using namespace bridgecond::ops;

namespace {

Tensor rnd(std::vector<int> shape, Rng& rng, double s = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-s, s);
  return t;
}

}  // namespace

TEST_CASE("matmul: identity, zero and hand-computed product") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor id = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor zero({2, 2});
  Tensor r1 = matmul(a, id);
  for (int i = 0; i < 4; ++i) CHECK(r1[i] == a[i]);
  Tensor r2 = matmul(a, zero);
  for (int i = 0; i < 4; ++i) CHECK(r2[i] == 0.0);
  Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
  Tensor r3 = matmul(a, b);
  CHECK(r3[0] == 19.0);
  CHECK(r3[1] == 22.0);
  CHECK(r3[2] == 43.0);
  CHECK(r3[3] == 50.0);
}

TEST_CASE("matmul: shape mismatch names both shapes") {
  Tensor a({2, 3}), b({2, 2});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), std::invalid_argument);
}

TEST_CASE("softmax: symmetry, closed form, shift invariance, stability") {
  Tensor x = Tensor::from({1, 3}, {0, 0, 0});
  Tensor y = softmax(x);
  for (int i = 0; i < 3; ++i) CHECK(y[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));

  for (double c : {0.0, -3.5, 100.0}) {
    Tensor v = Tensor::from({1, 2}, {c, c + std::log(2.0)});
    Tensor s = softmax(v);
    CHECK(s[0] == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(s[1] == doctest::Approx(2.0 / 3).epsilon(1e-12));
  }

  Tensor big = Tensor::from({1, 2}, {1000.0, 0.0});
  Tensor sb = softmax(big);
  CHECK(sb[0] == doctest::Approx(1.0));
  CHECK(sb[1] == doctest::Approx(0.0));
}

TEST_CASE("softmax rows sum to one and shifts cancel (property)") {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = rnd({4, 7}, rng, 5.0);
    Tensor y = softmax(x);
    for (int i = 0; i < 4; ++i) {
      double s = 0;
      for (int j = 0; j < 7; ++j) s += y.at(i, j);
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
    const double shift = rng.uniform(-50, 50);
    Tensor xs = x;
    Tensor x2(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) x2[i] = x[i] + shift;
    Tensor y2 = softmax(x2);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - y2[i]) < 1e-12);
  }
}

TEST_CASE("layer_norm: constant row, closed form, affine collapse") {
  Tensor gamma = Tensor::from({2}, {1, 1});
  Tensor beta = Tensor::from({2}, {0, 0});
  Tensor c = Tensor::from({1, 2}, {5, 5});
  Tensor yc = layer_norm(c, gamma, beta);
  CHECK(yc[0] == doctest::Approx(0.0));
  CHECK(yc[1] == doctest::Approx(0.0));

  Tensor x = Tensor::from({1, 2}, {1, 3});
  Tensor y = layer_norm(x, gamma, beta, 0.0);
  CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-12));

  Tensor g0 = Tensor::from({2}, {0, 0});
  Tensor b7 = Tensor::from({2}, {7, 7});
  Tensor yb = layer_norm(x, g0, b7);
  CHECK(yb[0] == 7.0);
  CHECK(yb[1] == 7.0);
}

TEST_CASE("scaled_dot_attention: single key, zero values, two-key oracle") {
  Rng rng(1);
  Tensor q = rnd({3, 4}, rng);
  Tensor k1 = rnd({1, 4}, rng);
  Tensor v1 = rnd({1, 5}, rng);
  Tensor out = scaled_dot_attention(q, k1, v1);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j) CHECK(out.at(i, j) == doctest::Approx(v1[j]).epsilon(1e-12));

  Tensor k2 = rnd({4, 4}, rng);
  Tensor v0({4, 5});
  Tensor out0 = scaled_dot_attention(q, k2, v0);
  for (std::size_t i = 0; i < out0.size(); ++i) CHECK(out0[i] == 0.0);

  // brute-force two-key evaluation
  Tensor q1 = Tensor::from({1, 2}, {1.0, -0.5});
  Tensor kk = Tensor::from({2, 2}, {0.5, 1.0, -1.0, 0.25});
  Tensor vv = Tensor::from({2, 1}, {2.0, -3.0});
  const double s0 = (1.0 * 0.5 + -0.5 * 1.0) / std::sqrt(2.0);
  const double s1 = (1.0 * -1.0 + -0.5 * 0.25) / std::sqrt(2.0);
  const double m = std::max(s0, s1);
  const double w0 = std::exp(s0 - m), w1 = std::exp(s1 - m);
  const double expected = (w0 * 2.0 + w1 * -3.0) / (w0 + w1);
  Tensor r = scaled_dot_attention(q1, kk, vv);
  CHECK(r[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("lora_linear: zero-init B is bit-identical to the frozen base") {
  Rng rng(7);
  Parameter base("w", rnd({6, 4}, rng), true);
  Parameter a("a", rnd({2, 4}, rng, 0.01));
  Parameter b("b", Tensor({6, 2}));
  Tensor x = rnd({3, 4}, rng);
  Tensor with_adapter = lora_linear(x, base, a, b, 8.0);
  Tensor base_only = matmul_nt(x, base.tensor);
  REQUIRE(with_adapter.size() == base_only.size());
  for (std::size_t i = 0; i < base_only.size(); ++i) CHECK(with_adapter[i] == base_only[i]);

  // alpha = 0 also collapses to the base
  Parameter b2("b2", rnd({6, 2}, rng));
  Tensor alpha0 = lora_linear(x, base, a, b2, 0.0);
  for (std::size_t i = 0; i < base_only.size(); ++i) CHECK(alpha0[i] == base_only[i]);
}

TEST_CASE("lora_linear: rank-one update matches the dense oracle") {
  Rng rng(8);
  Parameter base("w", rnd({5, 3}, rng), true);
  Parameter a("a", rnd({1, 3}, rng));
  Parameter b("b", rnd({5, 1}, rng));
  const double alpha = 2.5;
  Tensor x = rnd({4, 3}, rng);
  Tensor got = lora_linear(x, base, a, b, alpha);
  // dense W' = W + (alpha/1) B A
  Tensor wdense = base.tensor;
  Tensor w2(wdense.shape());
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j) w2.at(i, j) = wdense.at(i, j) + alpha * b.tensor[i] * a.tensor[j];
  Tensor want = matmul_nt(x, w2);
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("mse: zero, unit and asymmetric cases") {
  Tensor a = Tensor::from({1, 2}, {1, 1});
  Tensor b = Tensor::from({1, 2}, {0, 0});
  CHECK(mse(a, a).item() == 0.0);
  CHECK(mse(a, b).item() == doctest::Approx(1.0));
  Tensor c = Tensor::from({1, 2}, {2, 0});
  CHECK(mse(c, b).item() == doctest::Approx(2.0));
  Tensor bad({2, 1});
  CHECK_THROWS_AS(mse(a, bad), std::invalid_argument);
}

TEST_CASE("nll_loss: perfect, uniform, closed form, range errors") {
  Tensor sure = Tensor::from({2, 3}, {100, 0, 0, 0, 100, 0});
  CHECK(nll_loss(sure, {0, 1}).item() == doctest::Approx(0.0).epsilon(1e-12));

  const int v = 7;
  Tensor uni({3, v});
  CHECK(nll_loss(uni, {0, 3, 6}).item() == doctest::Approx(std::log(double(v))).epsilon(1e-12));

  Tensor two = Tensor::from({1, 2}, {0.0, std::log(3.0)});
  CHECK(nll_loss(two, {1}).item() == doctest::Approx(-std::log(3.0 / 4.0)).epsilon(1e-12));

  CHECK_THROWS_AS(nll_loss(two, {5}), std::invalid_argument);
}

TEST_CASE("backward: sum gives ones; frozen tensors stay grad-free") {
  Rng rng(3);
  Tensor x = rnd({3, 4}, rng);
  x.set_requires_grad(true);
  Tensor frozen = rnd({3, 4}, rng);
  {
    TapeScope tape;
    Tensor loss = sum(add(x, frozen));
    backward(loss);
    CHECK(tape.tape().size() == 0);  // cleared after replay
  }
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(x.grad()[i] == 1.0);
  bool frozen_grad_zero = true;
  if (frozen.has_grad())
    for (std::size_t i = 0; i < frozen.size(); ++i)
      frozen_grad_zero = frozen_grad_zero && frozen.grad()[i] == 0.0;
  CHECK(frozen_grad_zero);
}

TEST_CASE("backward: non-scalar loss is rejected") {
  Tensor x({2, 2});
  x.set_requires_grad(true);
  TapeScope tape;
  Tensor y = add(x, x);
  CHECK_THROWS_AS(backward(y), std::invalid_argument);
}

TEST_CASE("finite_diff_grad: analytic 2p and constant function") {
  Tensor p = Tensor::from({2}, {1, 2});
  Tensor g = finite_diff_grad([&]() { return p[0] * p[0] + p[1] * p[1]; }, p, 1e-5);
  CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-8));

  Tensor c = Tensor::from({3}, {1, 2, 3});
  Tensor gc = finite_diff_grad([]() { return 7.5; }, c);
  for (int i = 0; i < 3; ++i) CHECK(gc[i] == 0.0);
}

TEST_CASE("backward matches finite differences on a 2-layer MLP") {
  Rng rng(11);
  Tensor w1 = rnd({5, 4}, rng), b1 = rnd({5}, rng, 0.1);
  Tensor w2 = rnd({2, 5}, rng), b2 = rnd({2}, rng, 0.1);
  Tensor x = rnd({3, 4}, rng);
  Tensor target = rnd({3, 2}, rng);
  for (Tensor* t : {&w1, &b1, &w2, &b2, &x}) t->set_requires_grad(true);

  auto forward = [&]() {
    Tensor h = gelu(linear(x, w1, b1));
    return mse(linear(h, w2, b2), target);
  };
  {
    TapeScope tape;
    Tensor loss = forward();
    backward(loss);
  }
  for (Tensor* t : {&w1, &b1, &w2, &b2, &x}) {
    Tensor numeric = finite_diff_grad([&]() { return forward().item(); }, *t, 1e-5);
    for (std::size_t i = 0; i < t->size(); ++i)
      CHECK(grad_rel_err(t->grad()[i], numeric[i]) < 1e-4);
  }
}

TEST_CASE("ops are deterministic: repeated evaluation is bit-identical") {
  Rng rng(21);
  Tensor a = rnd({6, 6}, rng), b = rnd({6, 6}, rng);
  Tensor g = rnd({6}, rng), be = rnd({6}, rng);
  auto run = [&]() {
    Tensor t = matmul(a, b);
    t = softmax(t);
    t = layer_norm(t, g, be);
    return sum(t).item();
  };
  const double first = run();
  for (int i = 0; i < 5; ++i) CHECK(run() == first);
}

TEST_CASE("non-finite inputs are rejected as numeric errors") {
  Tensor a = Tensor::from({1, 2}, {1.0, std::numeric_limits<double>::infinity()});
  Tensor b = Tensor::from({1, 2}, {1.0, 1.0});
  CHECK_THROWS_AS(add(a, b), NumericError);
}

TEST_CASE("gradcheck core blocks stay under 1e-4") {
  for (const char* block : {"matmul", "softmax", "layer_norm", "attention", "lora", "gelu"}) {
    GradCheckResult r = gradcheck_block(block);
    INFO(block, " rel err ", r.max_rel_err);
    CHECK(r.pass);
  }
}
