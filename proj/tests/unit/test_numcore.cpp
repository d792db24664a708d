#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "sgac/adam.hpp"
#include "sgac/rng.hpp"
#include "sgac/tape.hpp"

using namespace sgac;
using sgac::testing::max_gradient_error;

namespace {

Tensor vec(std::initializer_list<double> v) {
  Eigen::ArrayXd a(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) a[i++] = x;
  return Tensor(Shape{a.size()}, a);
}

// Direct nested-loop convolution, independent of the im2col path.
Tensor direct_conv(const Tensor& x, const Tensor& w, Index stride, Index pad) {
  const Index cin = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
  const Index cout = w.shape()[0], k = w.shape()[2];
  const Index oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  Tensor out(Shape{cout, oh, ow});
  for (Index o = 0; o < cout; ++o)
    for (Index i = 0; i < oh; ++i)
      for (Index j = 0; j < ow; ++j) {
        double acc = 0;
        for (Index c = 0; c < cin; ++c)
          for (Index a = 0; a < k; ++a)
            for (Index b = 0; b < k; ++b) {
              const Index r = i * stride - pad + a, s = j * stride - pad + b;
              if (r < 0 || r >= h || s < 0 || s >= wd) continue;
              acc += x.at(c, r, s) * w[((o * cin + c) * k + a) * k + b];
            }
        out.at(o, i, j) = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("elementwise add") {
  Tape tape;
  Var r = add(tape.constant(vec({1, 2})), tape.constant(vec({3, 4})));
  CHECK(r.value()[0] == 4);
  CHECK(r.value()[1] == 6);
}

TEST_CASE("matmul with identity returns the other operand") {
  Rng rng(3);
  Tensor a = sgac::testing::random_tensor(rng, {3, 3}, -5, 5);
  Tensor eye(Shape{3, 3});
  for (Index i = 0; i < 3; ++i) eye[i * 3 + i] = 1;
  Tape tape;
  Var r = matmul(tape.constant(eye), tape.constant(a));
  CHECK((r.value().data() == a.data()).all());
}

TEST_CASE("conv2d of ones by ones kernel sums nine taps") {
  Tape tape;
  Var r = conv2d(tape.constant(Tensor::constant({1, 5, 5}, 1.0)), tape.constant(Tensor::constant({1, 1, 3, 3}, 1.0)), 1, 0);
  CHECK(r.shape() == Shape{1, 3, 3});
  CHECK((r.value().data() == 9.0).all());
}

TEST_CASE("conv2d matches direct summation for strided padded kernels") {
  Rng rng(11);
  for (Index stride : {1, 2})
    for (Index pad : {0, 1}) {
      Tensor x = sgac::testing::random_tensor(rng, {3, 8, 8}, -1, 1);
      Tensor w = sgac::testing::random_tensor(rng, {4, 3, 4, 4}, -1, 1);
      Tape tape;
      Var r = conv2d(tape.constant(x), tape.constant(w), stride, pad);
      Tensor expect = direct_conv(x, w, stride, pad);
      REQUIRE(r.shape() == expect.shape());
      CHECK((r.value().data() - expect.data()).abs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
  // <conv(x), y> == <x, conv_t(y)> with one weight tensor shared by both ops.
  Rng rng(5);
  Tensor x = sgac::testing::random_tensor(rng, {2, 8, 8}, -1, 1);
  Tensor w = sgac::testing::random_tensor(rng, {3, 2, 4, 4}, -1, 1);
  Tape tape;
  Var cx = conv2d(tape.constant(x), tape.constant(w), 2, 1);
  Tensor y = sgac::testing::random_tensor(rng, cx.shape(), -1, 1);
  // conv2d weight [Cout=3,Cin=2] read as transposed-conv weight [Cin'=3,Cout'=2].
  Var ty = conv_transpose2d(tape.constant(y), tape.constant(w), 2, 1);
  REQUIRE(ty.shape() == x.shape());
  const double lhs = (cx.value().data() * y.data()).sum();
  const double rhs = (x.data() * ty.value().data()).sum();
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("backward of sum of squares") {
  Tape tape;
  Var x = tape.variable(vec({1, 2, 3}));
  tape.backward(sum(square(x)));
  const Eigen::ArrayXd g = tape.grad(x);
  CHECK(g[0] == 2);
  CHECK(g[1] == 4);
  CHECK(g[2] == 6);
}

TEST_CASE("sigmoid derivative at zero is one quarter") {
  Tape tape;
  Var x = tape.variable(Tensor::scalar(0.0));
  tape.backward(sigmoid(x));
  CHECK(tape.grad(x)[0] == 0.25);
}

TEST_CASE("random 20-parameter MLP gradient matches finite differences") {
  // 3 -> 4 -> 1 network: W1 (12) + b1 (4) + W2 (4) = 20 parameters.
  Rng rng(42);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Tensor> params{sgac::testing::random_tensor(rng, {4, 3}, -1, 1), sgac::testing::random_tensor(rng, {4, 1}, -1, 1),
                               sgac::testing::random_tensor(rng, {1, 4}, -1, 1)};
    const Tensor input = sgac::testing::random_tensor(rng, {3, 1}, -1, 1);
    auto mlp = [input](Tape& tape, const std::vector<Var>& p) {
      Var h = softplus(add(matmul(p[0], tape.constant(input)), p[1]));
      return sum(square(matmul(p[2], h)));
    };
    CHECK(max_gradient_error(mlp, params) < 1e-4);
  }
}

TEST_CASE("every op passes a randomized gradient check") {
  Rng rng(7);
  for (const auto& c : sgac::testing::op_cases()) {
    CAPTURE(c.name);
    for (int trial = 0; trial < 10; ++trial)
      CHECK(max_gradient_error(sgac::testing::contracted(c, 1000 + trial), c.inputs(rng)) < 1e-4);
  }
}

TEST_CASE("gradient reaches every reachable leaf") {
  Tape tape;
  Var a = tape.variable(vec({1, 2}));
  Var b = tape.variable(vec({3, 4}));
  Var unused = tape.variable(vec({5}));
  tape.backward(sum(mul(a, b)));
  CHECK(tape.grad(a)[0] == 3);
  CHECK(tape.grad(b)[1] == 2);
  CHECK(tape.grad(unused)[0] == 0);
}

TEST_CASE("clamp passes gradient inside the interval only") {
  Tape tape;
  Var x = tape.variable(vec({-2, 0.5, 3}));
  tape.backward(sum(clamp(x, -1, 1)));
  const Eigen::ArrayXd g = tape.grad(x);
  CHECK(g[0] == 0);
  CHECK(g[1] == 1);
  CHECK(g[2] == 0);
}

TEST_CASE("error paths") {
  Tape tape;
  Var a = tape.variable(vec({1, 2}));
  Var b = tape.variable(vec({1, 2, 3}));
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(atanh(tape.constant(vec({1.0}))), DomainError);
  CHECK_THROWS_AS(exp(tape.constant(vec({1000.0}))), NumericError);
  CHECK_THROWS_AS(tape.constant(vec({std::nan("")})), NumericError);
  CHECK_THROWS_AS(matmul(tape.constant(Tensor({2, 3})), tape.constant(Tensor({2, 3}))), ShapeError);
  CHECK_THROWS_AS(tape.backward(a), ShapeError);

  Tape once;
  Var x = once.variable(vec({1}));
  Var loss = square(x);
  once.backward(loss);
  CHECK_THROWS_AS(once.backward(loss), std::logic_error);
}

TEST_CASE("identical computations are bit-identical") {
  auto run = [] {
    Rng rng(99);
    Tensor x = sgac::testing::random_tensor(rng, {2, 8, 8}, -1, 1);
    Tensor w = sgac::testing::random_tensor(rng, {3, 2, 4, 4}, -1, 1);
    Tape tape;
    Var vw = tape.variable(w);
    Var loss = sum(softplus(conv2d(tape.constant(x), vw, 2, 1)));
    tape.backward(loss);
    return std::make_pair(loss.item(), tape.grad(vw));
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  CHECK(l1 == l2);
  CHECK((g1 == g2).all());
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Tensor p = vec({1, -2, 3});
  AdamState s(3, {});
  adam_step(p, Eigen::ArrayXd::Zero(3), s);
  CHECK((p.data() == vec({1, -2, 3}).data()).all());
  CHECK(s.step_count == 1);
}

TEST_CASE("adam: first step moves by the learning rate") {
  // t=1: m_hat = g, v_hat = g^2, delta = -lr * g / (|g| + eps).
  Tensor p = vec({0.0});
  AdamState s(1, {.learning_rate = 0.005});
  adam_step(p, Eigen::ArrayXd::Ones(1), s);
  CHECK(p[0] == doctest::Approx(-0.005 / (1 + 1e-8)).epsilon(1e-14));
}

TEST_CASE("adam: minimizes x^2 from x=3 within 1000 steps") {
  // lr 0.005 only reaches |x| ~ 0.19 in 1000 steps; 0.01 is the smallest round rate that converges.
  // Hand-rolled scalar Adam as the oracle for the vectorized update.
  double x_ref = 3, m = 0, v = 0;
  for (int t = 1; t <= 1000; ++t) {
    const double g = 2 * x_ref;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x_ref -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  Tensor p = vec({3.0});
  AdamState s(1, {.learning_rate = 0.01});
  for (int t = 0; t < 1000; ++t) adam_step(p, 2 * p.data(), s);
  CHECK(p[0] == doctest::Approx(x_ref).epsilon(1e-12));
  CHECK(std::abs(p[0]) < 0.1);
  CHECK(s.step_count == 1000);
}

TEST_CASE("adam: length mismatch") {
  Tensor p = vec({1, 2});
  AdamState s(2, {});
  CHECK_THROWS_AS(adam_step(p, Eigen::ArrayXd::Zero(3), s), ShapeError);
}
