#pragma once

#include "sgac/rng.hpp"
#include "sgac/tape.hpp"

namespace sgac {

/// atanh arguments are clipped to [0, kAtanhClip] before dividing by the temperature.
inline constexpr double kAtanhClip = 1.0 - 1e-9;

/// Tempered two-point rounding distribution over floor(mu) and floor(mu) + 1.
struct RoundingDistribution {
  Tensor p_down;
  Tensor p_up;
};

/// p_down ∝ exp(-atanh(mu - floor(mu)) / tau), p_up ∝ exp(-atanh(floor(mu) + 1 - mu) / tau).
/// Integer mu rounds to itself with probability one.
RoundingDistribution round_probs(const Tensor& mu, double tau);

/// One hard draw from round_probs via the Gumbel-max trick.
Tensor sample_rounding(const Tensor& mu, double tau, Rng& rng);

/// How a continuous latent is turned into the value fed to the objective.
enum class Relaxation {
  kNone,           // mu itself
  kUniformNoise,   // mu + u, u ~ U(-1/2, 1/2)
  kGumbel,         // Gumbel-softmax relaxed rounding at temperature tau
  kExpected,       // floor(mu) + p_up: deterministic annealing
  kStraightThrough // round(mu) forward, identity backward
};

/// floor(mu) + r_up with r the relaxed one-hot of round_probs at temperature tau.
Var gumbel_relaxed(Var mu, double tau, Rng& rng);
Var expected_rounding(Var mu, double tau);
Var straight_through(Var mu);
Var uniform_noise(Var mu, Rng& rng);

Var relax(Var mu, Relaxation kind, double tau, Rng& rng);

}  // namespace sgac
