#include "sgac/adam.hpp"

#include <cmath>
#include <string>

namespace sgac {

AdamState::AdamState(Index length, AdamOptions opts)
    : first_moment(Eigen::ArrayXd::Zero(length)), second_moment(Eigen::ArrayXd::Zero(length)), options(opts) {
  if (!(opts.learning_rate > 0)) throw ConfigError("adam: learning rate must be positive");
  if (!(opts.beta1 > 0 && opts.beta1 < 1 && opts.beta2 > 0 && opts.beta2 < 1))
    throw ConfigError("adam: betas must lie in (0, 1)");
  if (!(opts.epsilon > 0 && opts.epsilon < 1e-2)) throw ConfigError("adam: epsilon must lie in (0, 1e-2)");
}

void adam_step(Tensor& params, const Eigen::ArrayXd& grads, AdamState& state) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size())
    throw ShapeError("adam_step: length mismatch (params " + std::to_string(params.size()) + ", grads " +
                     std::to_string(grads.size()) + ", state " + std::to_string(state.first_moment.size()) + ")");
  const AdamOptions& o = state.options;
  ++state.step_count;
  state.first_moment = o.beta1 * state.first_moment + (1.0 - o.beta1) * grads;
  state.second_moment = o.beta2 * state.second_moment + (1.0 - o.beta2) * grads.square();
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  params.data() -= o.learning_rate * (state.first_moment / c1) / ((state.second_moment / c2).sqrt() + o.epsilon);
}

}  // namespace sgac
