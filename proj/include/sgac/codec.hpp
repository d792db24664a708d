#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "sgac/coder.hpp"
#include "sgac/model.hpp"
#include "sgac/objectives.hpp"
#include "sgac/relaxations.hpp"

namespace sgac {

inline constexpr std::uint8_t kBitstreamVersion = 1;
/// Seeds reproducible_bbvi on both sides; part of the version-1 stream contract.
inline constexpr std::uint64_t kProtocolSeed = 0x5eed'b175'bac0'0001ULL;

enum class StreamMode : std::uint8_t { kStandard = 0, kBitsBack = 1 };

/// Container: "SGAC", version, mode, true width/height, model hash, lambda index, payload.
struct Bitstream {
  StreamMode mode = StreamMode::kStandard;
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::uint64_t model_hash = 0;
  /// Informational; kCustomLambda when lambda is not in the preset table.
  std::uint8_t lambda_index = 255;
  std::vector<std::uint8_t> payload;

  std::vector<std::uint8_t> serialize() const;
  static Bitstream parse(std::span<const std::uint8_t> bytes);
};

inline constexpr std::uint8_t kCustomLambda = 255;
/// Preset lambdas for the [0,1]-scale summed squared error.
inline constexpr double kLambdaPresets[] = {30, 100, 300, 1000, 3000};
std::uint8_t lambda_index(double lambda);

/// Per-channel tables of the discretized hyperprior over the full symbol window.
std::vector<QuantizedModel> hyperprior_tables(const Model& model);

/// Latents to be coded: (y_hat, z_hat) plus the padded image they describe.
struct StandardEncoding {
  Bitstream stream;
  Tensor y_hat;
  Tensor z_hat;
  /// Model estimate -log2 P(z_hat) - log2 P(y_hat | z_hat) and distortion on the padded image.
  RDLoss estimate;
  /// Cropped, unclamped g(y_hat).
  Tensor reconstruction;
  /// Present when an iterative method chose the latents.
  std::optional<InferenceResult> inference;
};

/// Pads to a multiple of 16, picks (y_hat, z_hat) by direct rounding or `method`, and
/// rANS-codes z_hat under P(z) then y_hat under P(y|z_hat). Latents outside the coding
/// support are clamped to it before the estimate is computed.
StandardEncoding encode_standard(const Model& model, const Tensor& image,
                                 const std::optional<InferenceConfig>& method = std::nullopt);
/// Cropped, unclamped reconstruction.
Tensor decode_standard(const Model& model, const Bitstream& stream);

struct Posterior {
  Tensor mu_z;
  Tensor var_z;
};

struct BbviOptions {
  int steps = 2000;
  double learning_rate = 0.003;
  std::uint64_t seed = kProtocolSeed;
};

/// (mu_z, var_z) <- f_h(y_hat), then Adam on -log2 p(z) - log2 p(y_hat|z) - H[q] with
/// draws from `seed`. Depends only on (y_hat, options, checkpoint).
Posterior reproducible_bbvi(const Model& model, const Tensor& y_hat, const BbviOptions& opts = {});
/// Objective above estimated with `samples` draws from `seed`.
double bbvi_loss(const Model& model, const Tensor& y_hat, const Posterior& q, int samples, std::uint64_t seed);

struct BitsBackOptions {
  /// Joint iterations: one SGA step on mu_y, one BBVI step on (mu_z, log var_z).
  int joint_steps = 2000;
  double joint_learning_rate = 0.005;
  TemperatureSchedule schedule;
  std::uint64_t seed = 0;
  /// Replay length, written into the stream; learning rate and seed are fixed by the version.
  int bbvi_steps = 2000;
  /// Without it y_hat = round(f(x)) and (mu_z, var_z) = f_h(y_hat): no optimization at all.
  bool optimize = true;
};

/// Everything the encoder fixes before it touches the side information.
struct BitsBackPlan {
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  Tensor padded;
  Tensor y_hat;
  Posterior posterior;
  int bbvi_steps = 0;
};

struct BitsBackEncoding {
  Bitstream stream;
  Tensor y_hat;
  Tensor z_hat;
  Posterior posterior;
  Tensor reconstruction;
  /// Payload bits minus side-information bits.
  double net_rate_bits = 0;
  /// -log2 P(z_hat) - log2 P(y_hat|z_hat) + log2 Q(z_hat), from the coder tables.
  double ledger_bits = 0;
  /// Zero bytes appended because the side information ran out.
  std::size_t padding_bytes = 0;
  RDLoss estimate;
};

BitsBackPlan plan_bitsback(const Model& model, const Tensor& image, const BitsBackOptions& opts = {});
/// Lines 4-5: decode z_hat from the side information under Q, then encode z_hat and y_hat.
BitsBackEncoding encode_bitsback_plan(const Model& model, const BitsBackPlan& plan,
                                      std::span<const std::uint8_t> side_info);
BitsBackEncoding bitsback_encode(const Model& model, const Tensor& image, std::span<const std::uint8_t> side_info,
                                 const BitsBackOptions& opts = {});

struct BitsBackDecoding {
  Tensor reconstruction;
  std::vector<std::uint8_t> side_info;
  Tensor y_hat;
  Tensor z_hat;
  Posterior posterior;
};

BitsBackDecoding bitsback_decode(const Model& model, const Bitstream& stream);

}  // namespace sgac
