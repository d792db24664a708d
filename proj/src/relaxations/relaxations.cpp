#include "sgac/relaxations.hpp"

#include <cmath>
#include <ostream>

#include "sgac/adam.hpp"
#include "sgac/errors.hpp"
#include "sgac/rounding.hpp"

namespace sgac {

double TemperatureSchedule::operator()(int step) const {
  return std::min(tau0, tau0 * std::exp(-rate * (static_cast<double>(step) - hold)));
}

void TemperatureSchedule::validate() const {
  if (!(tau0 > 0) || !(rate >= 0) || hold < 0) throw ConfigError("invalid temperature schedule");
}

std::string_view method_name(Method method) {
  switch (method) {
    case Method::kSGA: return "sga";
    case Method::kMAP: return "map";
    case Method::kSTE: return "ste";
    case Method::kUniformNoise: return "uniform";
    case Method::kDetAnneal: return "det_anneal";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::kSGA, Method::kMAP, Method::kSTE, Method::kUniformNoise, Method::kDetAnneal})
    if (method_name(m) == name) return m;
  throw ConfigError("unknown method '" + std::string(name) + "' (sga, map, ste, uniform, det_anneal)");
}

InferenceConfig InferenceConfig::defaults(Method method) {
  InferenceConfig cfg;
  cfg.method = method;
  cfg.learning_rate = method == Method::kSTE ? 1e-4 : 5e-3;
  cfg.early_stopping = method == Method::kMAP || method == Method::kSTE;
  return cfg;
}

void InferenceConfig::validate() const {
  // Zero steps is a valid no-op: the result is the rounded initialization.
  if (steps < 0) throw ConfigError("steps must be non-negative");
  if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (record_every < 1 || diagnostic_samples < 1) throw ConfigError("record cadence and sample count must be positive");
  schedule.validate();
}

Var ImageProblem::objective(Tape& tape, std::span<const Var> latents) const {
  if (latents.size() != 2) throw ConfigError("image problem expects (y, z)");
  BoundModel m(*model_, tape, false);
  return rd_terms(m, tape.constant(image_), latents[0], latents[1]).total;
}

RDLoss ImageProblem::evaluate(std::span<const Tensor> rounded) const {
  if (rounded.size() != 2) throw ConfigError("image problem expects (y, z)");
  return true_rd(*model_, image_, rounded[0], rounded[1]);
}

Var FunctionProblem::objective(Tape&, std::span<const Var> latents) const {
  if (latents.size() != 1) throw ConfigError("function problem expects one latent");
  return f_(latents[0]);
}

RDLoss FunctionProblem::evaluate(std::span<const Tensor> rounded) const {
  Tape tape;
  const Var latent = tape.constant(rounded[0]);
  return RDLoss::make(objective(tape, {&latent, 1}).item(), 0, 1);
}

namespace {

Relaxation relaxation_for(Method m) {
  switch (m) {
    case Method::kSGA: return Relaxation::kGumbel;
    case Method::kMAP: return Relaxation::kNone;
    case Method::kSTE: return Relaxation::kStraightThrough;
    case Method::kUniformNoise: return Relaxation::kUniformNoise;
    case Method::kDetAnneal: return Relaxation::kExpected;
  }
  return Relaxation::kNone;
}

std::vector<Tensor> rounded(const std::vector<Tensor>& mu) {
  std::vector<Tensor> out;
  for (const Tensor& t : mu) out.push_back(round(t));
  return out;
}

double relaxed_loss(const LatentProblem& problem, const std::vector<Tensor>& mu, Relaxation kind, double tau, Rng& rng) {
  Tape tape;
  std::vector<Var> latents;
  for (const Tensor& t : mu) latents.push_back(relax(tape.constant(t), kind, tau, rng));
  return problem.objective(tape, latents).item();
}

}  // namespace

InferenceResult optimize_latents(const LatentProblem& problem, std::vector<Tensor> init, const InferenceConfig& cfg) {
  cfg.validate();
  const Relaxation kind = relaxation_for(cfg.method);
  Rng rng(cfg.seed);

  InferenceResult result;
  result.mu = std::move(init);
  result.initial = problem.evaluate(rounded(result.mu));
  const double limit = 10.0 * std::abs(result.initial.total);

  std::vector<AdamState> states;
  for (const Tensor& t : result.mu) states.emplace_back(t.size(), AdamOptions{.learning_rate = cfg.learning_rate});

  std::vector<Tensor> best = rounded(result.mu);
  RDLoss best_loss = result.initial;

  for (int step = 0; step < cfg.steps; ++step) {
    const double tau = cfg.schedule(step);
    Tape tape;
    std::vector<Var> leaves, latents;
    for (const Tensor& t : result.mu) {
      leaves.push_back(tape.variable(t));
      latents.push_back(relax(leaves.back(), kind, tau, rng));
    }
    Var loss = problem.objective(tape, latents);

    if (step % cfg.record_every == 0) {
      std::vector<Tensor> hard = rounded(result.mu);
      const RDLoss now = problem.evaluate(hard);
      result.trace.push_back({step, tau, loss.item(), now.total, now.rate_bits, now.distortion});
      if (now.total > limit && limit > 0) {
        result.diverged = true;
        result.diagnostic = std::string(method_name(cfg.method)) + " diverged at step " + std::to_string(step) +
                            ": true loss " + std::to_string(now.total) + " exceeds 10x initial " +
                            std::to_string(result.initial.total);
        break;
      }
      if (now.total < best_loss.total) {
        best_loss = now;
        best = std::move(hard);
      }
    }

    tape.backward(loss);
    for (std::size_t i = 0; i < result.mu.size(); ++i) adam_step(result.mu[i], tape.grad(leaves[i]), states[i]);
  }

  if (!result.diverged) {
    const int end = cfg.steps;
    const double tau = cfg.schedule(end);
    double relaxed = 0;
    for (int s = 0; s < cfg.diagnostic_samples; ++s) relaxed += relaxed_loss(problem, result.mu, kind, tau, rng);
    relaxed /= cfg.diagnostic_samples;
    std::vector<Tensor> hard = rounded(result.mu);
    const RDLoss now = problem.evaluate(hard);
    result.trace.push_back({end, tau, relaxed, now.total, now.rate_bits, now.distortion});
    if (now.total < best_loss.total || !cfg.early_stopping) {
      best_loss = now;
      best = std::move(hard);
    }
  }
  result.rounded = std::move(best);
  result.final = best_loss;
  return result;
}

InferenceResult sga_optimize(const LatentProblem& problem, std::vector<Tensor> init, const InferenceConfig& cfg) {
  if (cfg.method != Method::kSGA) throw ConfigError("sga_optimize requires method sga");
  InferenceResult r = optimize_latents(problem, std::move(init), cfg);
  if (r.diverged) throw NumericError(r.diagnostic);
  return r;
}

InferenceResult ablation_optimize(const LatentProblem& problem, std::vector<Tensor> init, const InferenceConfig& cfg) {
  if (cfg.method == Method::kSGA) throw ConfigError("ablation_optimize does not run sga");
  return optimize_latents(problem, std::move(init), cfg);
}

InferenceResult refine_image(const Model& model, const Tensor& image, const InferenceConfig& cfg) {
  Inference inf = model.infer(image);
  ImageProblem problem(model, image);
  std::vector<Tensor> init{std::move(inf.mu_y), std::move(inf.mu_z)};
  return cfg.method == Method::kSGA ? sga_optimize(problem, std::move(init), cfg)
                                    : ablation_optimize(problem, std::move(init), cfg);
}

std::vector<double> discretization_gap(const Trace& trace) {
  if (trace.empty()) throw ConfigError("empty trace");
  std::vector<double> gap;
  gap.reserve(trace.size());
  for (const TraceRow& r : trace) gap.push_back(r.true_rd - r.relaxed_loss);
  return gap;
}

double final_gap(const Trace& trace) { return discretization_gap(trace).back(); }

void write_trace_csv(std::ostream& out, const Trace& trace) {
  out << "step,tau,relaxed_loss,true_rd,rate_bits,distortion\n";
  out.precision(17);
  for (const TraceRow& r : trace)
    out << r.step << ',' << r.tau << ',' << r.relaxed_loss << ',' << r.true_rd << ',' << r.rate_bits << ','
        << r.distortion << '\n';
}

}  // namespace sgac
