#pragma once

// Central finite-difference oracle for tape gradients, plus the randomized
// per-op cases shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sgac/rng.hpp"
#include "sgac/tape.hpp"

namespace sgac::testing {

using LossBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

inline double evaluate_loss(const LossBuilder& build, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(tape.constant(t));
  return build(tape, leaves).item();
}

/// Max over all input coordinates of |autodiff - fd| / max(|autodiff|, |fd|, 1e-3).
inline double max_gradient_error(const LossBuilder& build, const std::vector<Tensor>& inputs, double h = 1e-5) {
  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(tape.variable(t));
  Var loss = build(tape, leaves);
  tape.backward(loss);

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Eigen::ArrayXd analytic = tape.grad(leaves[k]);
    for (Index i = 0; i < inputs[k].size(); ++i) {
      std::vector<Tensor> plus = inputs, minus = inputs;
      plus[k][i] += h;
      minus[k][i] -= h;
      const double fd = (evaluate_loss(build, plus) - evaluate_loss(build, minus)) / (2 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(fd), 1e-3});
      worst = std::max(worst, std::abs(analytic[i] - fd) / denom);
    }
  }
  return worst;
}

inline Tensor random_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

/// Values with |v| in [lo, hi] and random sign.
inline Tensor random_away_from_zero(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  return t;
}

struct OpCase {
  std::string name;
  // Draws fresh inputs for one randomized trial.
  std::function<std::vector<Tensor>(Rng&)> inputs;
  // Op under test; its output is contracted against fixed random weights.
  std::function<Var(const std::vector<Var>&)> op;
};

/// Contracts the op output with a weight tensor derived from `seed` so every
/// output coordinate contributes a distinct gradient.
inline LossBuilder contracted(const OpCase& c, std::uint64_t seed) {
  return [&c, seed](Tape& tape, const std::vector<Var>& in) {
    Var out = c.op(in);
    Rng wrng(seed);
    Var w = tape.constant(random_tensor(wrng, out.shape(), -1.0, 1.0));
    return sum(mul(out, w));
  };
}

inline std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  auto pair = [](Shape s, double lo, double hi) {
    return [s, lo, hi](Rng& r) { return std::vector<Tensor>{random_tensor(r, s, lo, hi), random_tensor(r, s, lo, hi)}; };
  };
  auto one = [](Shape s, double lo, double hi) {
    return [s, lo, hi](Rng& r) { return std::vector<Tensor>{random_tensor(r, s, lo, hi)}; };
  };
  auto away = [](Shape s, double lo, double hi) {
    return [s, lo, hi](Rng& r) { return std::vector<Tensor>{random_away_from_zero(r, s, lo, hi)}; };
  };

  cases.push_back({"add", pair({2, 3}, -2, 2), [](auto& v) { return add(v[0], v[1]); }});
  cases.push_back({"sub", pair({2, 3}, -2, 2), [](auto& v) { return sub(v[0], v[1]); }});
  cases.push_back({"mul", pair({2, 3}, -2, 2), [](auto& v) { return mul(v[0], v[1]); }});
  cases.push_back({"div",
                   [](Rng& r) {
                     return std::vector<Tensor>{random_tensor(r, {2, 3}, -2, 2), random_away_from_zero(r, {2, 3}, 0.5, 2)};
                   },
                   [](auto& v) { return div(v[0], v[1]); }});
  cases.push_back({"scale", one({5}, -2, 2), [](auto& v) { return scale(v[0], -1.7); }});
  cases.push_back({"add_scalar", one({5}, -2, 2), [](auto& v) { return add_scalar(v[0], 0.3); }});
  cases.push_back({"neg", one({5}, -2, 2), [](auto& v) { return neg(v[0]); }});
  cases.push_back({"matmul",
                   [](Rng& r) { return std::vector<Tensor>{random_tensor(r, {3, 4}, -1, 1), random_tensor(r, {4, 2}, -1, 1)}; },
                   [](auto& v) { return matmul(v[0], v[1]); }});
  cases.push_back({"conv2d",
                   [](Rng& r) {
                     return std::vector<Tensor>{random_tensor(r, {2, 6, 6}, -1, 1), random_tensor(r, {3, 2, 3, 3}, -1, 1)};
                   },
                   [](auto& v) { return conv2d(v[0], v[1], 2, 1); }});
  cases.push_back({"conv_transpose2d",
                   [](Rng& r) {
                     return std::vector<Tensor>{random_tensor(r, {2, 3, 3}, -1, 1), random_tensor(r, {2, 3, 4, 4}, -1, 1)};
                   },
                   [](auto& v) { return conv_transpose2d(v[0], v[1], 2, 1); }});
  cases.push_back({"channel_add",
                   [](Rng& r) { return std::vector<Tensor>{random_tensor(r, {3, 2, 2}, -1, 1), random_tensor(r, {3}, -1, 1)}; },
                   [](auto& v) { return channel_add(v[0], v[1]); }});
  cases.push_back({"channel_mul",
                   [](Rng& r) { return std::vector<Tensor>{random_tensor(r, {3, 2, 2}, -1, 1), random_tensor(r, {3}, -1, 1)}; },
                   [](auto& v) { return channel_mul(v[0], v[1]); }});
  cases.push_back({"leaky_relu", away({6}, 0.05, 2), [](auto& v) { return leaky_relu(v[0], 0.01); }});
  cases.push_back({"exp", one({6}, -2, 2), [](auto& v) { return exp(v[0]); }});
  cases.push_back({"log", one({6}, 0.2, 3), [](auto& v) { return log(v[0]); }});
  cases.push_back({"softplus", one({6}, -4, 4), [](auto& v) { return softplus(v[0]); }});
  cases.push_back({"sigmoid", one({6}, -4, 4), [](auto& v) { return sigmoid(v[0]); }});
  cases.push_back({"tanh", one({6}, -3, 3), [](auto& v) { return tanh(v[0]); }});
  cases.push_back({"atanh", one({6}, -0.8, 0.8), [](auto& v) { return atanh(v[0]); }});
  cases.push_back({"abs", away({6}, 0.05, 2), [](auto& v) { return abs(v[0]); }});
  cases.push_back({"square", one({6}, -2, 2), [](auto& v) { return square(v[0]); }});
  cases.push_back({"normal_cdf", one({6}, -3, 3), [](auto& v) { return normal_cdf(v[0]); }});
  cases.push_back({"clamp",
                   [](Rng& r) {
                     // Keep clear of the kinks at +-1.
                     Tensor t(Shape{6});
                     for (Index i = 0; i < 6; ++i) {
                       const double m = r.uniform(0.0, 0.9);
                       t[i] = r.uniform() < 0.5 ? m * (r.uniform() < 0.5 ? -1 : 1) : (1.1 + m) * (r.uniform() < 0.5 ? -1 : 1);
                     }
                     return std::vector<Tensor>{t};
                   },
                   [](auto& v) { return clamp(v[0], -1.0, 1.0); }});
  cases.push_back({"sum", one({2, 3}, -2, 2), [](auto& v) { return sum(v[0]); }});
  cases.push_back({"mean", one({2, 3}, -2, 2), [](auto& v) { return mean(v[0]); }});
  cases.push_back({"reshape", one({2, 3}, -2, 2), [](auto& v) { return reshape(v[0], {3, 2}); }});
  cases.push_back({"slice_channels", one({4, 2}, -2, 2), [](auto& v) { return slice_channels(v[0], 1, 2); }});
  return cases;
}

}  // namespace sgac::testing
