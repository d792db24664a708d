#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sgac/model.hpp"
#include "sgac/relaxations.hpp"

namespace sgac {

/// Reported for identical images.
inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) for images in [0, 1]; capped at kPsnrCap.
double psnr(const Tensor& x, const Tensor& reconstruction);

/// Direct rounding plus the compared compression-time procedures.
enum class Codec {
  kRound,              // amortized inference, direct rounding
  kSGA,                // M1
  kMAP,                // A1
  kSTE,                // A2
  kUniformNoise,       // A3
  kDetAnneal,          // A4
  kBitsBack,           // M2
  kBitsBackNoSGA,      // A5: BBVI on the hyperlatents only
  kBitsBackAmortized,  // A6: no compression-time optimization
};

std::string_view codec_id(Codec codec);
std::string_view codec_label(Codec codec);
/// Accepts ids ("M1", "A3", "round") and labels ("sga", "uniform").
Codec parse_codec(std::string_view name);
bool is_bitsback(Codec codec);
std::vector<Codec> all_codecs();

struct RDPoint {
  /// Codec id, suffixed ":bb" for a standard codec run on a bits-back checkpoint.
  std::string method;
  double lambda = 0;
  /// -1 for corpus means.
  int image_id = -1;
  double bpp = 0;
  double psnr = 0;
  bool psnr_capped = false;
  /// Measured payload bits (net of side information for bits-back).
  double bits = 0;
  double distortion = 0;
  /// bits + lambda * distortion.
  double rd_loss = 0;
};

struct SweepOptions {
  int inference_steps = 2000;
  int bbvi_steps = 2000;
  /// Random side information handed to bits-back codecs per image.
  std::size_t side_info_bytes = 512;
  std::uint64_t seed = 1;
  std::function<void(const RDPoint&)> on_point;
};

struct CodecRun {
  RDPoint point;
  /// Optimization trace for the iterative standard codecs.
  std::optional<Trace> trace;
};

/// Codes one image, verifies the decode, and measures it.
CodecRun run_codec(const Model& model, const Tensor& image, Codec codec, int image_id, const SweepOptions& opts);

struct Sweep {
  std::vector<RDPoint> points;
  /// Traces per method id, in image order.
  std::vector<std::pair<std::string, std::vector<Trace>>> traces;
};

/// Every codec on every image for every model; bits-back codecs skip standard models.
/// Throws ConfigError when no model is given.
Sweep rd_sweep(std::span<const Tensor> corpus, std::span<const Codec> codecs, std::span<const Model> models,
               const SweepOptions& opts = {});

/// Mean point per (method, lambda), in first-seen order.
std::vector<RDPoint> mean_points(std::span<const RDPoint> points);

/// Bjontegaard delta rate in percent of test against reference; negative means savings.
/// Needs >= 4 points per curve and overlapping PSNR ranges.
double bd_rate(std::span<const RDPoint> reference, std::span<const RDPoint> test);

/// Row-wise mean of equally sampled traces.
Trace mean_trace(std::span<const Trace> traces);

void write_points_csv(std::ostream& out, std::span<const RDPoint> points);
std::vector<RDPoint> read_points_csv(std::istream& in);
std::string points_json(std::span<const RDPoint> points);
std::vector<RDPoint> parse_points_json(std::string_view text);

/// Markdown table of mean bpp, PSNR and R-D loss per method and lambda, with the change in
/// R-D loss against `baseline` and, where every curve has >= 4 lambdas, BD rate against it.
void write_report(std::ostream& out, std::span<const RDPoint> points, std::string_view baseline = "round");

}  // namespace sgac
