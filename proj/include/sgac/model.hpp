#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sgac/tape.hpp"
#include "sgac/tensor.hpp"

namespace sgac {

/// Masses handed to the rate terms and the entropy coder never drop below this.
inline constexpr double kMinMass = 0x1.0p-32;
/// Floor added to the softplus of the predicted prior scale.
inline constexpr double kMinScale = 1e-6;

/// Layer sizes of the two-level codec. Every layer is a 4x4 kernel, stride 2,
/// padding 1 (transposed in the synthesis networks).
struct ModelConfig {
  Index image_channels = 1;
  Index hidden_channels = 32;
  Index latent_channels = 8;
  Index hyper_hidden_channels = 16;
  Index hyper_channels = 4;
  double lambda = 0.01;
  bool bitsback_mode = false;
  double leaky_slope = 0.01;

  static constexpr Index kernel = 4;
  static constexpr Index stride = 2;
  static constexpr Index padding = 1;
  /// Image extent per hyperlatent cell (four stride-2 stages).
  static constexpr Index downsampling = 16;

  /// sigma_x^2 under which the R-D objective is a Gaussian-likelihood NELBO.
  double likelihood_variance() const { return 1.0 / (2.0 * lambda * std::log(2.0)); }
  Index hyper_analysis_channels() const { return bitsback_mode ? 2 * hyper_channels : hyper_channels; }
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Named weight tensors in a fixed order.
class ParameterSet {
 public:
  void add(std::string name, Tensor value);
  const Tensor& operator[](const std::string& name) const;
  Tensor& operator[](const std::string& name);

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const Tensor& tensor(std::size_t i) const { return tensors_[i]; }
  Tensor& tensor(std::size_t i) { return tensors_[i]; }
  Index total_size() const;

 private:
  std::size_t index_of(const std::string& name) const;

  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

/// Amortized variational parameters for one image.
struct Inference {
  Tensor mu_y;
  Tensor mu_z;
  /// Present only in bits-back mode; strictly positive.
  std::optional<Tensor> var_z;
};

/// Conditional prior p(y|z) parameters.
struct PriorParams {
  Tensor loc;
  Tensor scale;
};

class Model {
 public:
  Model(ModelConfig config, ParameterSet params);

  /// Fresh weights drawn from `seed`.
  static Model initialize(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const ParameterSet& params() const { return params_; }
  ParameterSet& params() { return params_; }

  Shape latent_shape(Index height, Index width) const;
  Shape hyper_shape(Index height, Index width) const;

  Inference infer(const Tensor& x) const;
  PriorParams hyper_decode(const Tensor& z) const;
  /// Unclamped reconstruction.
  Tensor decode(const Tensor& y) const;
  /// Hyper-analysis of a (possibly integer) latent, as used by the decoder side.
  Inference hyper_analysis(const Tensor& y) const;

  /// Sum of log2 P(z_hat) over integer hyperlatents.
  double hyperprior_log2mass(const Tensor& z_hat) const;
  /// Sum of log2 p(z) under the unconvolved density.
  double hyperprior_log2pdf(const Tensor& z) const;
  /// Per-channel CDF c(v) for every v in `points`; result is [channels x points].
  Eigen::ArrayXXd hyperprior_cdf(std::span<const double> points) const;

  std::vector<std::uint8_t> serialize() const;
  static Model deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::string& path) const;
  static Model load(const std::string& path);
  /// Content hash of the serialized weights; identifies the model in bitstreams.
  std::uint64_t hash() const;

 private:
  ModelConfig config_;
  ParameterSet params_;
};

/// Model weights placed on a tape, either as trainable leaves or constants.
class BoundModel {
 public:
  BoundModel(const Model& model, Tape& tape, bool trainable);

  Var operator[](const std::string& name) const;
  Tape& tape() const { return *tape_; }
  const ModelConfig& config() const { return model_->config(); }
  const Model& model() const { return *model_; }
  /// Leaves in ParameterSet order.
  const std::vector<Var>& vars() const { return vars_; }

 private:
  const Model* model_;
  Tape* tape_;
  std::vector<Var> vars_;
};

struct InferenceVars {
  Var mu_y;
  Var mu_z;
  std::optional<Var> logvar_z;
};

struct HyperPosteriorVars {
  Var mu_z;
  std::optional<Var> logvar_z;
};

struct PriorVars {
  Var loc;
  Var scale;
};

InferenceVars infer(const BoundModel& m, Var x);
HyperPosteriorVars hyper_analysis(const BoundModel& m, Var y);
PriorVars hyper_decode(const BoundModel& m, Var z);
Var decode(const BoundModel& m, Var y);

/// Logit of the per-channel hyperprior CDF at every element of z [C,...].
Var hyperprior_logits(const BoundModel& m, Var z);
/// Elementwise log2 of c(z+1/2) - c(z-1/2), floored at kMinMass.
Var hyperprior_log2mass(const BoundModel& m, Var z);
/// Elementwise log2 of the CDF derivative.
Var hyperprior_log2pdf(const BoundModel& m, Var z);

/// Elementwise log2 of the Gaussian(loc, scale) mass on [y-1/2, y+1/2], floored at kMinMass.
Var gaussian_log2mass(Var y, Var loc, Var scale);

/// ||x - x'||^2 summed over all pixels.
Var squared_error(Var x, Var reconstruction);
double likelihood_distortion(const Tensor& x, const Tensor& reconstruction);

}  // namespace sgac
