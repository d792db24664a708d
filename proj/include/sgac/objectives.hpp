#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "sgac/model.hpp"
#include "sgac/rng.hpp"
#include "sgac/rounding.hpp"

namespace sgac {

/// Rate in bits, squared-error distortion, and their lambda-weighted sum.
struct RDLoss {
  double rate_bits = 0;
  double distortion = 0;
  double lambda = 0;
  double total = 0;

  static RDLoss make(double rate_bits, double distortion, double lambda) {
    return {rate_bits, distortion, lambda, rate_bits + lambda * distortion};
  }
};

/// Recorded counterpart of RDLoss.
struct RDVars {
  Var rate_z;
  Var rate_y;
  Var distortion;
  Var total;
};

/// Rate of (y, z) under the discretized models evaluated at possibly non-integer
/// points (the uniform-convolved densities), plus lambda * ||x - g(y)||^2.
RDVars rd_terms(const BoundModel& m, Var x, Var y, Var z);

/// -log2 P(z_hat) and -log2 P(y_hat | z_hat) separately.
struct RateSplit {
  double z_bits = 0;
  double y_bits = 0;
};
RateSplit true_rate(const Model& m, const Tensor& y_hat, const Tensor& z_hat);

/// Discrete rate-distortion loss at integer latents.
RDLoss true_rd(const Model& m, const Tensor& x, const Tensor& y_hat, const Tensor& z_hat);

/// One-sample relaxed NELBO with additive uniform noise on both latents.
/// With `noise` off this is the convolved-density R-D loss at (mu_y, mu_z).
Var nelbo_uniform(const BoundModel& m, Var x, Var mu_y, Var mu_z, Rng& rng, bool noise = true);

/// R-D loss at Gumbel-softmax relaxed roundings of both latents, averaged over n_samples.
Var sga_objective(const BoundModel& m, Var x, Var mu_y, Var mu_z, double tau, int n_samples, Rng& rng);

/// Sum over coordinates of the Gaussian entropy 1/2 log2(2 pi e var), in bits.
Var gaussian_entropy_bits(Var logvar);

/// Bits-back NELBO: -log2 p(z) - log2 p(y|z) + lambda D - H[q(z)], z = mu_z + sigma * eps.
/// `y_relax` / `tau` select how mu_y is relaxed (uniform noise in training, Gumbel at compression).
Var nelbo_bitsback(const BoundModel& m, Var x, Var mu_y, Var mu_z, Var logvar_z, Rng& rng,
                   Relaxation y_relax = Relaxation::kUniformNoise, double tau = 0.5);

/// Same objective without the distortion, for an integer y_hat held fixed.
Var bbvi_objective(const BoundModel& m, Var y_hat, Var mu_z, Var logvar_z, Rng& rng);

struct TrainOptions {
  int steps = 5000;
  int batch_size = 8;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  /// Evaluation cadence for the history; 0 disables intermediate evaluation.
  int eval_every = 500;
};

struct TrainPoint {
  int step = 0;
  double nelbo = 0;
};

struct TrainReport {
  double initial_nelbo = 0;
  double final_nelbo = 0;
  std::vector<TrainPoint> history;
};

/// Mean NELBO in bits per image with noise drawn from a fixed seed, so
/// evaluations before and after training are comparable.
double evaluate_nelbo(const Model& model, const std::vector<Tensor>& images, std::uint64_t seed);

/// Adam on the mean NELBO over random minibatches. On a non-finite loss the
/// model keeps its last finite weights and NumericError propagates.
TrainReport train(Model& model, const std::vector<Tensor>& train_set, const std::vector<Tensor>& eval_set,
                  const TrainOptions& opts, const std::function<void(const TrainPoint&)>& on_eval = {});

}  // namespace sgac
