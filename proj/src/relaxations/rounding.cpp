#include "sgac/rounding.hpp"

#include <algorithm>
#include <cmath>

#include "sgac/errors.hpp"

namespace sgac {
namespace {

void check_tau(double tau) {
  if (!(tau > 0) || !std::isfinite(tau)) throw DomainError("temperature must be positive");
}

double clipped_atanh(double v) { return std::atanh(std::clamp(v, 0.0, kAtanhClip)); }

// Logit of p_up: (atanh(frac) - atanh(1 - frac)) / tau.
Var up_logit(Var mu, double tau, Var& floor_mu) {
  Tape& tape = *mu.tape();
  floor_mu = tape.constant(floor(mu.value()));
  Var frac = mu - floor_mu;
  Var a_down = atanh(clamp(frac, 0.0, kAtanhClip));
  Var a_up = atanh(clamp(1.0 - frac, 0.0, kAtanhClip));
  return scale(a_down - a_up, 1.0 / tau);
}

}  // namespace

RoundingDistribution round_probs(const Tensor& mu, double tau) {
  check_tau(tau);
  RoundingDistribution out{Tensor(mu.shape()), Tensor(mu.shape())};
  for (Index i = 0; i < mu.size(); ++i) {
    const double frac = mu[i] - std::floor(mu[i]);
    double up = 0.0;
    if (frac > 0) {
      const double logit = (clipped_atanh(frac) - clipped_atanh(1.0 - frac)) / tau;
      up = logit >= 0 ? 1.0 / (1.0 + std::exp(-logit)) : std::exp(logit) / (1.0 + std::exp(logit));
    }
    out.p_up[i] = up;
    out.p_down[i] = 1.0 - up;
  }
  return out;
}

Tensor sample_rounding(const Tensor& mu, double tau, Rng& rng) {
  const RoundingDistribution p = round_probs(mu, tau);
  Tensor out(mu.shape());
  for (Index i = 0; i < mu.size(); ++i) {
    // Gumbel-max over log p_down, log p_up; a zero probability never wins.
    const double g_down = rng.gumbel(), g_up = rng.gumbel();
    const bool up = p.p_up[i] > 0 &&
                    (p.p_down[i] == 0 || std::log(p.p_up[i]) + g_up > std::log(p.p_down[i]) + g_down);
    out[i] = std::floor(mu[i]) + (up ? 1.0 : 0.0);
  }
  return out;
}

Var gumbel_relaxed(Var mu, double tau, Rng& rng) {
  check_tau(tau);
  Var floor_mu;
  Var logit = up_logit(mu, tau, floor_mu);
  Tensor noise(mu.shape());
  for (Index i = 0; i < noise.size(); ++i) {
    const double g_down = rng.gumbel();
    noise[i] = rng.gumbel() - g_down;
  }
  // The relaxed one-hot uses the same temperature as the rounding distribution.
  Var r_up = sigmoid(scale(logit + mu.tape()->constant(std::move(noise)), 1.0 / tau));
  return floor_mu + r_up;
}

Var expected_rounding(Var mu, double tau) {
  check_tau(tau);
  Var floor_mu;
  Var logit = up_logit(mu, tau, floor_mu);
  return floor_mu + sigmoid(logit);
}

Var straight_through(Var mu) {
  const Tensor& v = mu.value();
  return mu + mu.tape()->constant(Tensor(v.shape(), v.data().round() - v.data()));
}

Var uniform_noise(Var mu, Rng& rng) {
  Tensor u(mu.shape());
  for (Index i = 0; i < u.size(); ++i) u[i] = rng.uniform() - 0.5;
  return mu + mu.tape()->constant(std::move(u));
}

Var relax(Var mu, Relaxation kind, double tau, Rng& rng) {
  switch (kind) {
    case Relaxation::kNone: return mu;
    case Relaxation::kUniformNoise: return uniform_noise(mu, rng);
    case Relaxation::kGumbel: return gumbel_relaxed(mu, tau, rng);
    case Relaxation::kExpected: return expected_rounding(mu, tau);
    case Relaxation::kStraightThrough: return straight_through(mu);
  }
  throw ConfigError("unknown relaxation");
}

}  // namespace sgac
