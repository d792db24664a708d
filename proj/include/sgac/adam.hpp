#pragma once

#include <cstdint>

#include "sgac/tensor.hpp"

namespace sgac {

struct AdamOptions {
  double learning_rate = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment estimates for one parameter tensor.
struct AdamState {
  AdamState() = default;
  AdamState(Index length, AdamOptions opts);

  std::int64_t step_count = 0;
  Eigen::ArrayXd first_moment;
  Eigen::ArrayXd second_moment;
  AdamOptions options;
};

/// One bias-corrected Adam update of `params` in place.
void adam_step(Tensor& params, const Eigen::ArrayXd& grads, AdamState& state);

}  // namespace sgac
