#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sgac/model.hpp"
#include "sgac/objectives.hpp"

namespace sgac {

/// tau(t) = min(tau0, tau0 * exp(-rate * (t - hold))).
struct TemperatureSchedule {
  double tau0 = 0.5;
  double rate = 0.001;
  int hold = 700;

  double operator()(int step) const;
  void validate() const;
};

enum class Method { kSGA, kMAP, kSTE, kUniformNoise, kDetAnneal };

std::string_view method_name(Method method);
Method parse_method(std::string_view name);

struct InferenceConfig {
  Method method = Method::kSGA;
  int steps = 2000;
  double learning_rate = 0.005;
  TemperatureSchedule schedule;
  /// Return the best rounded iterate seen instead of the last one.
  bool early_stopping = false;
  std::uint64_t seed = 0;
  /// Trace and early-stopping cadence in steps.
  int record_every = 10;
  /// Relaxed-loss samples averaged for the final trace row.
  int diagnostic_samples = 10;

  /// Per-method learning rate and early-stopping defaults.
  static InferenceConfig defaults(Method method);
  void validate() const;
};

struct TraceRow {
  int step = 0;
  double tau = 0;
  double relaxed_loss = 0;
  double true_rd = 0;
  double rate_bits = 0;
  double distortion = 0;
};

using Trace = std::vector<TraceRow>;

/// A set of continuous latents with a relaxed objective and a discrete evaluation.
class LatentProblem {
 public:
  virtual ~LatentProblem() = default;
  /// Differentiable loss at relaxed latent values.
  virtual Var objective(Tape& tape, std::span<const Var> latents) const = 0;
  /// Loss at integer latents.
  virtual RDLoss evaluate(std::span<const Tensor> rounded) const = 0;
};

/// (y, z) of one image under a trained model.
class ImageProblem final : public LatentProblem {
 public:
  ImageProblem(const Model& model, Tensor image) : model_(&model), image_(std::move(image)) {}
  Var objective(Tape& tape, std::span<const Var> latents) const override;
  RDLoss evaluate(std::span<const Tensor> rounded) const override;
  const Tensor& image() const { return image_; }

 private:
  const Model* model_;
  Tensor image_;
};

/// A single latent tensor scored by an arbitrary recorded function; the discrete
/// loss is that function at the rounded value, reported as rate.
class FunctionProblem final : public LatentProblem {
 public:
  explicit FunctionProblem(std::function<Var(Var)> f) : f_(std::move(f)) {}
  Var objective(Tape& tape, std::span<const Var> latents) const override;
  RDLoss evaluate(std::span<const Tensor> rounded) const override;

 private:
  std::function<Var(Var)> f_;
};

struct InferenceResult {
  std::vector<Tensor> mu;
  std::vector<Tensor> rounded;
  RDLoss initial;
  RDLoss final;
  Trace trace;
  bool diverged = false;
  std::string diagnostic;
};

/// Iterative inference with any method. Divergence (true loss above ten times its
/// initial value) stops the run and sets `diverged`.
InferenceResult optimize_latents(const LatentProblem& problem, std::vector<Tensor> init, const InferenceConfig& cfg);

/// SGA only; divergence throws NumericError.
InferenceResult sga_optimize(const LatentProblem& problem, std::vector<Tensor> init, const InferenceConfig& cfg);
/// MAP, STE, uniform noise or deterministic annealing; divergence is reported, not thrown.
InferenceResult ablation_optimize(const LatentProblem& problem, std::vector<Tensor> init, const InferenceConfig& cfg);

/// Convenience for one image: initializes from the amortized encoder.
InferenceResult refine_image(const Model& model, const Tensor& image, const InferenceConfig& cfg);

/// true_rd - relaxed_loss per trace row.
std::vector<double> discretization_gap(const Trace& trace);
double final_gap(const Trace& trace);

void write_trace_csv(std::ostream& out, const Trace& trace);

}  // namespace sgac
