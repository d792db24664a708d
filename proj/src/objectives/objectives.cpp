#include "sgac/objectives.hpp"

#include <cmath>
#include <numbers>

#include "sgac/adam.hpp"
#include "sgac/errors.hpp"

namespace sgac {

RDVars rd_terms(const BoundModel& m, Var x, Var y, Var z) {
  PriorVars prior = hyper_decode(m, z);
  Var rate_z = neg(sum(hyperprior_log2mass(m, z)));
  Var rate_y = neg(sum(gaussian_log2mass(y, prior.loc, prior.scale)));
  Var distortion = squared_error(x, decode(m, y));
  Var total = rate_z + rate_y + scale(distortion, m.config().lambda);
  return {rate_z, rate_y, distortion, total};
}

RateSplit true_rate(const Model& m, const Tensor& y_hat, const Tensor& z_hat) {
  if (!is_integer_valued(y_hat) || !is_integer_valued(z_hat)) throw DomainError("true rate needs integer latents");
  Tape tape;
  BoundModel bm(m, tape, false);
  Var z = tape.constant(z_hat);
  PriorVars prior = hyper_decode(bm, z);
  return {-hyperprior_log2mass(bm, z).value().data().sum(),
          -gaussian_log2mass(tape.constant(y_hat), prior.loc, prior.scale).value().data().sum()};
}

RDLoss true_rd(const Model& m, const Tensor& x, const Tensor& y_hat, const Tensor& z_hat) {
  const RateSplit r = true_rate(m, y_hat, z_hat);
  const double d = likelihood_distortion(x, m.decode(y_hat));
  return RDLoss::make(r.z_bits + r.y_bits, d, m.config().lambda);
}

Var nelbo_uniform(const BoundModel& m, Var x, Var mu_y, Var mu_z, Rng& rng, bool noise) {
  Var y = noise ? uniform_noise(mu_y, rng) : mu_y;
  Var z = noise ? uniform_noise(mu_z, rng) : mu_z;
  return rd_terms(m, x, y, z).total;
}

Var sga_objective(const BoundModel& m, Var x, Var mu_y, Var mu_z, double tau, int n_samples, Rng& rng) {
  if (!(tau > 0)) throw DomainError("temperature must be positive");
  if (n_samples < 1) throw ConfigError("need at least one sample");
  Var total;
  for (int s = 0; s < n_samples; ++s) {
    Var y = gumbel_relaxed(mu_y, tau, rng);
    Var z = gumbel_relaxed(mu_z, tau, rng);
    Var l = rd_terms(m, x, y, z).total;
    total = s == 0 ? l : total + l;
  }
  return n_samples == 1 ? total : scale(total, 1.0 / n_samples);
}

Var gaussian_entropy_bits(Var logvar) {
  const double per_coordinate = 0.5 * std::log2(2 * std::numbers::pi * std::numbers::e);
  return add_scalar(scale(sum(logvar), 0.5 / std::numbers::ln2), per_coordinate * static_cast<double>(logvar.size()));
}

namespace {

Var sample_posterior(Var mu_z, Var logvar_z, Rng& rng) {
  if (mu_z.shape() != logvar_z.shape()) throw ShapeError("posterior mean and variance differ in shape");
  Tensor eps(mu_z.shape());
  for (Index i = 0; i < eps.size(); ++i) eps[i] = rng.normal();
  return mu_z + mul(exp(scale(logvar_z, 0.5)), mu_z.tape()->constant(std::move(eps)));
}

}  // namespace

Var nelbo_bitsback(const BoundModel& m, Var x, Var mu_y, Var mu_z, Var logvar_z, Rng& rng, Relaxation y_relax,
                   double tau) {
  Var z = sample_posterior(mu_z, logvar_z, rng);
  Var y = relax(mu_y, y_relax, tau, rng);
  PriorVars prior = hyper_decode(m, z);
  Var rate = neg(sum(hyperprior_log2pdf(m, z))) - sum(gaussian_log2mass(y, prior.loc, prior.scale));
  Var distortion = squared_error(x, decode(m, y));
  return rate + scale(distortion, m.config().lambda) - gaussian_entropy_bits(logvar_z);
}

Var bbvi_objective(const BoundModel& m, Var y_hat, Var mu_z, Var logvar_z, Rng& rng) {
  Var z = sample_posterior(mu_z, logvar_z, rng);
  PriorVars prior = hyper_decode(m, z);
  Var rate = neg(sum(hyperprior_log2pdf(m, z))) - sum(gaussian_log2mass(y_hat, prior.loc, prior.scale));
  return rate - gaussian_entropy_bits(logvar_z);
}

namespace {

Var image_nelbo(const BoundModel& m, const Tensor& image, Rng& rng) {
  Tape& tape = m.tape();
  Var x = tape.constant(image);
  InferenceVars inf = infer(m, x);
  if (inf.logvar_z) return nelbo_bitsback(m, x, inf.mu_y, inf.mu_z, *inf.logvar_z, rng);
  return nelbo_uniform(m, x, inf.mu_y, inf.mu_z, rng);
}

}  // namespace

double evaluate_nelbo(const Model& model, const std::vector<Tensor>& images, std::uint64_t seed) {
  if (images.empty()) throw ConfigError("empty evaluation set");
  Rng rng(seed);
  double total = 0;
  for (const Tensor& image : images) {
    Tape tape;
    BoundModel m(model, tape, false);
    total += image_nelbo(m, image, rng).item();
  }
  return total / static_cast<double>(images.size());
}

TrainReport train(Model& model, const std::vector<Tensor>& train_set, const std::vector<Tensor>& eval_set,
                  const TrainOptions& opts, const std::function<void(const TrainPoint&)>& on_eval) {
  if (opts.steps < 0 || opts.batch_size < 1 || !(opts.learning_rate > 0)) throw ConfigError("invalid training options");
  if (train_set.empty()) throw ConfigError("empty training set");
  const std::uint64_t eval_seed = opts.seed ^ 0xe7a1ULL;
  TrainReport report;
  report.initial_nelbo = evaluate_nelbo(model, eval_set, eval_seed);
  report.history.push_back({0, report.initial_nelbo});
  if (on_eval) on_eval(report.history.back());

  ParameterSet& params = model.params();
  std::vector<AdamState> states;
  for (std::size_t i = 0; i < params.size(); ++i)
    states.emplace_back(params.tensor(i).size(), AdamOptions{.learning_rate = opts.learning_rate});

  Rng rng(opts.seed);
  for (int step = 1; step <= opts.steps; ++step) {
    Tape tape;
    BoundModel m(model, tape, true);
    Var loss;
    for (int b = 0; b < opts.batch_size; ++b) {
      const auto pick = static_cast<std::size_t>(rng.next_u64() % train_set.size());
      Var l = image_nelbo(m, train_set[pick], rng);
      loss = b == 0 ? l : loss + l;
    }
    loss = scale(loss, 1.0 / opts.batch_size);
    // A NumericError here leaves `model` at the last finite weights.
    tape.backward(loss);
    for (std::size_t i = 0; i < params.size(); ++i) adam_step(params.tensor(i), tape.grad(m.vars()[i]), states[i]);

    if ((opts.eval_every > 0 && step % opts.eval_every == 0) || step == opts.steps) {
      const double nelbo = evaluate_nelbo(model, eval_set, eval_seed);
      if (!std::isfinite(nelbo)) throw NumericError("non-finite NELBO at step " + std::to_string(step));
      report.history.push_back({step, nelbo});
      if (on_eval) on_eval(report.history.back());
    }
  }
  report.final_nelbo = report.history.back().nelbo;
  return report;
}

}  // namespace sgac
