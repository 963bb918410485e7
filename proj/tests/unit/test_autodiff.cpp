#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "mseg/autograd.hpp"
#include "mseg/errors.hpp"
#include "mseg/gradcheck.hpp"
#include "mseg/ops.hpp"
#include "mseg/optim.hpp"

using namespace mseg;

namespace {

Tensor t64(Shape shape, std::vector<double> values) {
  return Tensor::from_data(std::move(shape), std::move(values), DType::f64);
}

void check_close(const Tensor& t, const std::vector<double>& expected, double tol) {
  REQUIRE(t.numel() == static_cast<std::int64_t>(expected.size()));
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(std::abs(t.data()[i] - expected[i]) <= tol * std::max(1.0, std::abs(expected[i])));
  }
}

}  // namespace

TEST_CASE("matmul examples") {
  Tensor eye = t64({2, 2}, {1, 0, 0, 1});
  Tensor m = t64({2, 2}, {1, 2, 3, 4});
  check_close(matmul(eye, m), {1, 2, 3, 4}, 0);
  Tensor ones = t64({2, 1}, {1, 1});
  Tensor r = matmul(m, ones);
  CHECK(r.shape() == Shape{2, 1});
  check_close(r, {3, 7}, 0);
  Rng rng(1);
  Tensor z = matmul(Tensor::zeros({2, 3}, DType::f64), Tensor::randn({3, 4}, rng, DType::f64));
  CHECK(z.shape() == Shape{2, 4});
  for (double v : z.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ValidationError);
}

TEST_CASE("matmul broadcasts batch dimensions") {
  Rng rng(2);
  Tensor a = Tensor::randn({3, 2, 4}, rng, DType::f64);
  Tensor b = Tensor::randn({4, 5}, rng, DType::f64);
  Tensor c = matmul(a, b);
  CHECK(c.shape() == Shape{3, 2, 5});
  for (std::int64_t t = 0; t < 3; ++t) {
    Tensor at = slice(a, 0, t, 1);
    Tensor ct = matmul(reshape(at, {2, 4}), b);
    for (std::int64_t i = 0; i < 10; ++i) CHECK(c.data()[t * 10 + i] == ct.data()[i]);
  }
}

TEST_CASE("conv2d examples") {
  Tensor x = Tensor::ones({1, 1, 3, 3}, DType::f64);
  Tensor w = Tensor::ones({1, 1, 3, 3}, DType::f64);
  Tensor y = conv2d(x, w, Tensor(), 1, 0);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == 9.0);

  Rng rng(3);
  Tensor img = Tensor::randn({2, 1, 5, 4}, rng, DType::f64);
  Tensor id = conv2d(img, Tensor::ones({1, 1, 1, 1}, DType::f64), Tensor(), 1, 0);
  CHECK(id.shape() == img.shape());
  for (std::int64_t i = 0; i < img.numel(); ++i) CHECK(id.data()[i] == img.data()[i]);

  Tensor four = conv2d(Tensor::ones({1, 1, 4, 4}, DType::f64), Tensor::ones({1, 1, 2, 2}, DType::f64),
                       Tensor(), 2, 0);
  CHECK(four.shape() == Shape{1, 1, 2, 2});
  for (double v : four.data()) CHECK(v == 4.0);

  CHECK_THROWS_AS(conv2d(Tensor::ones({1, 1, 2, 2}), Tensor::ones({1, 1, 3, 3}), Tensor(), 1, 0),
                  ValidationError);
  // Padding makes the same kernel legal.
  CHECK(conv2d(Tensor::ones({1, 1, 2, 2}), Tensor::ones({1, 1, 3, 3}), Tensor(), 1, 1).shape() ==
        Shape{1, 1, 2, 2});
}

TEST_CASE("conv2d output size and cross-correlation convention") {
  // Asymmetric kernel: cross-correlation does not flip it.
  Tensor x = t64({1, 1, 1, 3}, {1, 2, 3});
  Tensor w = t64({1, 1, 1, 2}, {10, 1});
  Tensor y = conv2d(x, w, Tensor(), 1, 0);
  check_close(y, {12, 23}, 0);
  Tensor big = Tensor::zeros({1, 2, 7, 9});
  CHECK(conv2d(big, Tensor::zeros({3, 2, 3, 3}), Tensor(), 2, 1).shape() == Shape{1, 3, 4, 5});
}

TEST_CASE("layer_norm examples") {
  Tensor g = Tensor::ones({2}, DType::f64), b = Tensor::zeros({2}, DType::f64);
  check_close(layer_norm(t64({2}, {1, 3}), g, b, 1e-12), {-1, 1}, 1e-9);
  Tensor beta = t64({3}, {0.5, -1, 2});
  Tensor y = layer_norm(t64({3}, {7, 7, 7}), Tensor::ones({3}, DType::f64), beta);
  check_close(y, {0.5, -1, 2}, 1e-12);
  Rng rng(4);
  Tensor z = layer_norm(Tensor::randn({4, 3}, rng, DType::f64), Tensor::zeros({3}, DType::f64), beta);
  for (std::int64_t r = 0; r < 4; ++r) {
    for (std::int64_t c = 0; c < 3; ++c) CHECK(z.at({r, c}) == beta.data()[static_cast<std::size_t>(c)]);
  }
}

TEST_CASE("softmax examples and row sums") {
  check_close(softmax(t64({2}, {0, 0}), 0), {0.5, 0.5}, 1e-15);
  check_close(softmax(t64({2}, {1000, 1000}), 0), {0.5, 0.5}, 1e-15);
  check_close(softmax(t64({2}, {0, std::log(3.0)}), 0), {0.25, 0.75}, 1e-12);
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = Tensor::uniform({3, 7, 5}, rng, -1e3, 1e3, DType::f64);
    for (int axis = 0; axis < 3; ++axis) {
      Tensor s = sum_axes(softmax(x, axis), {axis});
      for (double v : s.data()) CHECK(std::abs(v - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("gelu examples") {
  CHECK(gelu(t64({1}, {0})).item() == 0.0);
  CHECK(gelu(t64({1}, {1})).item() == doctest::Approx(0.8413447460685429).epsilon(1e-12));
  CHECK(std::abs(gelu(t64({1}, {-10})).item()) < 1e-6);
}

TEST_CASE("dropout") {
  Rng rng(6);
  Tensor x = Tensor::randn({100}, rng, DType::f64);
  Rng r1(9), r2(9);
  Tensor same = dropout(x, 0.0, true, r1);
  for (std::int64_t i = 0; i < 100; ++i) CHECK(same.data()[i] == x.data()[i]);
  Tensor eval = dropout(x, 0.7, false, r1);
  for (std::int64_t i = 0; i < 100; ++i) CHECK(eval.data()[i] == x.data()[i]);

  Rng a(42), b(42);
  Tensor da = dropout(x, 0.5, true, a), db = dropout(x, 0.5, true, b);
  int zeros = 0;
  for (std::int64_t i = 0; i < 100; ++i) {
    CHECK(da.data()[i] == db.data()[i]);
    if (da.data()[i] == 0.0) {
      ++zeros;
    } else {
      CHECK(da.data()[i] == doctest::Approx(2.0 * x.data()[i]));
    }
  }
  CHECK(zeros > 20);
  CHECK(zeros < 80);
  CHECK_THROWS_AS(dropout(x, 1.0, true, a), ValidationError);
  CHECK_THROWS_AS(dropout(x, -0.1, true, a), ValidationError);
}

TEST_CASE("cyclic_shift examples") {
  // [[a,b],[c,d]] with a..d = 1..4
  Tensor g = t64({1, 2, 2, 1}, {1, 2, 3, 4});
  check_close(cyclic_shift(g, 0, 0), {1, 2, 3, 4}, 0);
  check_close(cyclic_shift(g, 1, 1), {4, 3, 2, 1}, 0);
  Rng rng(7);
  Tensor x = Tensor::randn({2, 5, 6, 3}, rng, DType::f64);
  Tensor back = cyclic_shift(cyclic_shift(x, 2, 3), -2, -3);
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(back.data()[i] == x.data()[i]);
}

TEST_CASE("backward examples") {
  Tensor w = Tensor::ones({2, 3}, DType::f64, true);
  backward(sum(w));
  for (double g : w.grad_data()) CHECK(g == 1.0);

  Tensor v = Tensor::from_data({2}, {1, 2}, DType::f64, true);
  Tensor unused = Tensor::ones({3}, DType::f64, true);
  ParameterStore params;
  params.add("v", v);
  params.add("unused", unused);
  auto grads = backward(sum(mul(v, v)), params);
  check_close(grads.at("v"), {2, 4}, 0);
  for (double g : grads.at("unused").data()) CHECK(g == 0.0);

  Tensor nonscalar = mul(v, v);
  CHECK_THROWS_AS(backward(nonscalar), ValidationError);
}

TEST_CASE("tape visits every record once in topological order") {
  Tensor a = Tensor::ones({2}, DType::f64, true);
  Tensor b = mul(a, a);
  Tensor c = add(b, a);
  Tensor loss = sum(add(c, b));
  Tape tape = Tape::record(loss);
  std::set<std::size_t> seen;
  for (const auto& rec : tape.records()) {
    for (auto in : rec.inputs) CHECK(seen.count(in) == 1);
    CHECK(seen.insert(rec.output).second);
  }
  CHECK(tape.size() == 5);
}

TEST_CASE("finite differences") {
  Rng rng(8);
  Tensor x = Tensor::randn({2, 3}, rng, DType::f64);
  Tensor g = finite_difference_gradient([](const Tensor& t) { return sum(t); }, x);
  for (double v : g.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
  Tensor three = t64({1}, {3});
  Tensor g2 = finite_difference_gradient([](const Tensor& t) { return sum(mul(t, t)); }, three);
  CHECK(std::abs(g2.item() - 6.0) < 1e-6);

  // gelu ∘ linear chain against backward.
  Tensor in = Tensor::randn({4, 5}, rng, DType::f64);
  Tensor w = Tensor::randn({3, 5}, rng, DType::f64, 0.5);
  Tensor b = Tensor::randn({3}, rng, DType::f64);
  auto f = [&](const Tensor& ww) { return sum(gelu(linear(in, ww, b))); };
  Tensor numeric = finite_difference_gradient(f, w);
  w.set_requires_grad(true);
  backward(f(w));
  for (std::int64_t i = 0; i < w.numel(); ++i) {
    CHECK(gradient_relative_error(w.grad_data()[i], numeric.data()[i]) < 1e-5);
  }
}

TEST_CASE("op gradient suite") {
  for (const auto& r : run_op_gradient_suite(123, 3)) {
    INFO(r.name);
    CHECK(r.max_rel_error < 1e-5);
  }
}

TEST_CASE("adamw and adam steps") {
  AdamHyper hyper;
  hyper.weight_decay = 0.05;
  Tensor w = t64({1}, {1.0});
  OptimizerState st;
  const std::vector<double> g{1.0};
  adamw_step(w, g, st, 0.1, hyper);
  CHECK(w.item() == doctest::Approx(0.895).epsilon(1e-7));
  CHECK(st.step == 1);

  Tensor w0 = t64({1}, {1.0});
  OptimizerState s0;
  adamw_step(w0, g, s0, 0.0, hyper);
  CHECK(w0.item() == 1.0);

  Tensor wa = t64({1}, {1.0});
  OptimizerState sa;
  adam_step(wa, g, sa, 0.1, hyper);
  CHECK(wa.item() == doctest::Approx(0.9).epsilon(1e-7));

  Tensor wz = t64({1}, {1.0});
  OptimizerState sz;
  const std::vector<double> zero{0.0};
  adam_step(wz, zero, sz, 0.1, hyper);
  CHECK(wz.item() == 1.0);

  Rng rng(10);
  Tensor p1 = Tensor::randn({6}, rng, DType::f64);
  Tensor p2 = p1.clone();
  OptimizerState q1, q2;
  AdamHyper nodecay;
  for (int step = 0; step < 5; ++step) {
    Tensor gr = Tensor::randn({6}, rng, DType::f64);
    adam_step(p1, gr.data(), q1, 0.01, hyper);
    adamw_step(p2, gr.data(), q2, 0.01, nodecay);
  }
  for (std::int64_t i = 0; i < 6; ++i) CHECK(p1.data()[i] == p2.data()[i]);
  CHECK(q1.step == 5);
}

TEST_CASE("f32 tensors are rounded to single precision") {
  Tensor a = Tensor::from_data({1}, {0.1}, DType::f32);
  CHECK(a.item() == static_cast<double>(0.1f));
  Tensor b = add(a, Tensor::from_data({1}, {0.2}, DType::f32));
  CHECK(b.item() == static_cast<double>(static_cast<float>(0.1f + 0.2f)));
  CHECK(add(a, Tensor::scalar(0.2, DType::f64)).dtype() == DType::f64);
}
