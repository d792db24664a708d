#include "sgac/bench.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fmt/format.h>
#include <istream>
#include <map>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>

#include <Eigen/Dense>

#include "sgac/codec.hpp"
#include "sgac/errors.hpp"
#include "sgac/rng.hpp"

namespace sgac {
namespace {

struct CodecInfo {
  Codec codec;
  std::string_view id;
  std::string_view label;
};

constexpr std::array<CodecInfo, 9> kCodecs{{
    {Codec::kRound, "round", "round"},
    {Codec::kSGA, "M1", "sga"},
    {Codec::kMAP, "A1", "map"},
    {Codec::kSTE, "A2", "ste"},
    {Codec::kUniformNoise, "A3", "uniform"},
    {Codec::kDetAnneal, "A4", "det_anneal"},
    {Codec::kBitsBack, "M2", "bitsback"},
    {Codec::kBitsBackNoSGA, "A5", "bitsback_no_sga"},
    {Codec::kBitsBackAmortized, "A6", "bitsback_amortized"},
}};

const CodecInfo& info(Codec codec) {
  return *std::find_if(kCodecs.begin(), kCodecs.end(), [&](const CodecInfo& c) { return c.codec == codec; });
}

std::optional<Method> inference_method(Codec codec) {
  switch (codec) {
    case Codec::kSGA: return Method::kSGA;
    case Codec::kMAP: return Method::kMAP;
    case Codec::kSTE: return Method::kSTE;
    case Codec::kUniformNoise: return Method::kUniformNoise;
    case Codec::kDetAnneal: return Method::kDetAnneal;
    default: return std::nullopt;
  }
}

std::vector<std::uint8_t> side_information(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::uint8_t> out(n);
  for (auto& b : out) b = static_cast<std::uint8_t>(rng.next_u64());
  return out;
}

RDPoint measure(const Model& model, const Tensor& image, std::string_view method, int image_id, double bits,
                const Tensor& reconstruction) {
  RDPoint p;
  p.method = method;
  p.lambda = model.config().lambda;
  p.image_id = image_id;
  const double pixels = static_cast<double>(image.shape()[1] * image.shape()[2]);
  p.bits = bits;
  p.bpp = bits / pixels;
  p.psnr = psnr(image, reconstruction);
  p.psnr_capped = p.psnr == kPsnrCap;
  p.distortion = likelihood_distortion(image, reconstruction);
  p.rd_loss = bits + p.lambda * p.distortion;
  return p;
}

// Least-squares cubic in PSNR for log-rate, integrated over [lo, hi].
double integrated_log_rate(std::span<const RDPoint> curve, double lo, double hi) {
  const auto n = static_cast<Index>(curve.size());
  const double mid = 0.5 * (lo + hi);
  Eigen::MatrixXd a(n, 4);
  Eigen::VectorXd b(n);
  for (Index i = 0; i < n; ++i) {
    const double p = curve[static_cast<std::size_t>(i)].psnr - mid;
    a.row(i) << 1, p, p * p, p * p * p;
    b[i] = std::log(curve[static_cast<std::size_t>(i)].bpp);
  }
  const Eigen::Vector4d c = a.colPivHouseholderQr().solve(b);
  const auto antiderivative = [&](double p) {
    p -= mid;
    return c[0] * p + c[1] * p * p / 2 + c[2] * p * p * p / 3 + c[3] * p * p * p * p / 4;
  };
  return antiderivative(hi) - antiderivative(lo);
}

std::pair<double, double> psnr_range(std::span<const RDPoint> curve) {
  const auto [lo, hi] = std::minmax_element(curve.begin(), curve.end(),
                                            [](const RDPoint& a, const RDPoint& b) { return a.psnr < b.psnr; });
  return {lo->psnr, hi->psnr};
}

constexpr std::string_view kCsvHeader = "method,lambda,image,bpp,psnr,psnr_capped,bits,distortion,rd_loss";

}  // namespace

double psnr(const Tensor& x, const Tensor& reconstruction) {
  if (x.shape() != reconstruction.shape()) throw ShapeError("psnr: shape mismatch");
  if (x.size() == 0) throw ShapeError("psnr: empty image");
  const double mse = (x.data() - reconstruction.data()).square().mean();
  if (mse == 0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

std::string_view codec_id(Codec codec) { return info(codec).id; }
std::string_view codec_label(Codec codec) { return info(codec).label; }

Codec parse_codec(std::string_view name) {
  for (const CodecInfo& c : kCodecs)
    if (c.id == name || c.label == name) return c.codec;
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

bool is_bitsback(Codec codec) {
  return codec == Codec::kBitsBack || codec == Codec::kBitsBackNoSGA || codec == Codec::kBitsBackAmortized;
}

std::vector<Codec> all_codecs() {
  std::vector<Codec> out;
  for (const CodecInfo& c : kCodecs) out.push_back(c.codec);
  return out;
}

CodecRun run_codec(const Model& model, const Tensor& image, Codec codec, int image_id, const SweepOptions& opts) {
  CodecRun run;
  // Standard codecs on a bits-back checkpoint are reported separately from the standard model's.
  const std::string id = std::string(codec_id(codec)) + (!is_bitsback(codec) && model.config().bitsback_mode ? ":bb" : "");
  if (!is_bitsback(codec)) {
    std::optional<InferenceConfig> cfg;
    if (const auto method = inference_method(codec)) {
      cfg = InferenceConfig::defaults(*method);
      cfg->steps = opts.inference_steps;
      cfg->seed = opts.seed ^ static_cast<std::uint64_t>(image_id);
    }
    const StandardEncoding enc = encode_standard(model, image, cfg);
    const Tensor decoded = decode_standard(model, Bitstream::parse(enc.stream.serialize()));
    if (!(decoded.data() == enc.reconstruction.data()).all()) throw ProtocolError("decoded image differs from the encoder's");
    run.point = measure(model, image, id, image_id, 8.0 * static_cast<double>(enc.stream.payload.size()), decoded);
    if (enc.inference) run.trace = enc.inference->trace;
  } else {
    BitsBackOptions o;
    o.seed = opts.seed ^ static_cast<std::uint64_t>(image_id);
    o.bbvi_steps = opts.bbvi_steps;
    o.joint_steps = codec == Codec::kBitsBack ? opts.inference_steps : 0;
    o.optimize = codec != Codec::kBitsBackAmortized;
    const auto side = side_information(opts.side_info_bytes, o.seed ^ 0x51de);
    const BitsBackEncoding enc = bitsback_encode(model, image, side, o);
    const BitsBackDecoding dec = bitsback_decode(model, Bitstream::parse(enc.stream.serialize()));
    if (dec.side_info != side) throw ProtocolError("side information was not recovered");
    run.point = measure(model, image, id, image_id, enc.net_rate_bits, dec.reconstruction);
  }
  if (opts.on_point) opts.on_point(run.point);
  return run;
}

Sweep rd_sweep(std::span<const Tensor> corpus, std::span<const Codec> codecs, std::span<const Model> models,
               const SweepOptions& opts) {
  if (models.empty()) throw ConfigError("rd_sweep needs at least one checkpoint");
  Sweep sweep;
  std::map<std::string, std::size_t> trace_slot;
  for (const Model& model : models) {
    for (Codec codec : codecs) {
      if (is_bitsback(codec) && !model.config().bitsback_mode) continue;
      for (std::size_t i = 0; i < corpus.size(); ++i) {
        CodecRun run = run_codec(model, corpus[i], codec, static_cast<int>(i), opts);
        if (run.trace) {
          const std::string key = fmt::format("{}@{}", run.point.method, run.point.lambda);
          auto [it, fresh] = trace_slot.try_emplace(key, sweep.traces.size());
          if (fresh) sweep.traces.emplace_back(key, std::vector<Trace>{});
          sweep.traces[it->second].second.push_back(std::move(*run.trace));
        }
        sweep.points.push_back(std::move(run.point));
      }
    }
  }
  return sweep;
}

std::vector<RDPoint> mean_points(std::span<const RDPoint> points) {
  std::vector<RDPoint> means;
  std::vector<int> counts;
  for (const RDPoint& p : points) {
    auto it = std::find_if(means.begin(), means.end(),
                           [&](const RDPoint& m) { return m.method == p.method && m.lambda == p.lambda; });
    if (it == means.end()) {
      RDPoint m;
      m.method = p.method;
      m.lambda = p.lambda;
      means.push_back(m);
      counts.push_back(0);
      it = means.end() - 1;
    }
    const auto k = static_cast<std::size_t>(it - means.begin());
    it->bpp += p.bpp;
    it->psnr += p.psnr;
    it->bits += p.bits;
    it->distortion += p.distortion;
    it->rd_loss += p.rd_loss;
    it->psnr_capped = it->psnr_capped || p.psnr_capped;
    ++counts[k];
  }
  for (std::size_t k = 0; k < means.size(); ++k) {
    const double n = counts[k];
    means[k].bpp /= n;
    means[k].psnr /= n;
    means[k].bits /= n;
    means[k].distortion /= n;
    means[k].rd_loss /= n;
  }
  return means;
}

double bd_rate(std::span<const RDPoint> reference, std::span<const RDPoint> test) {
  if (reference.size() < 4 || test.size() < 4) throw DomainError("bd_rate needs at least four points per curve");
  for (const auto curve : {reference, test})
    for (const RDPoint& p : curve)
      if (!(p.bpp > 0) || !std::isfinite(p.psnr)) throw DomainError("bd_rate needs positive rates and finite PSNR");
  const auto [ref_lo, ref_hi] = psnr_range(reference);
  const auto [test_lo, test_hi] = psnr_range(test);
  const double lo = std::max(ref_lo, test_lo), hi = std::min(ref_hi, test_hi);
  if (!(hi > lo)) throw DomainError("bd_rate: PSNR ranges do not overlap");
  const double mean_diff = (integrated_log_rate(test, lo, hi) - integrated_log_rate(reference, lo, hi)) / (hi - lo);
  return 100.0 * std::expm1(mean_diff);
}

Trace mean_trace(std::span<const Trace> traces) {
  if (traces.empty()) return {};
  const std::size_t rows = std::min_element(traces.begin(), traces.end(), [](const Trace& a, const Trace& b) {
                             return a.size() < b.size();
                           })->size();
  Trace out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    out[r].step = traces[0][r].step;
    out[r].tau = traces[0][r].tau;
    for (const Trace& t : traces) {
      out[r].relaxed_loss += t[r].relaxed_loss;
      out[r].true_rd += t[r].true_rd;
      out[r].rate_bits += t[r].rate_bits;
      out[r].distortion += t[r].distortion;
    }
    const double n = static_cast<double>(traces.size());
    out[r].relaxed_loss /= n;
    out[r].true_rd /= n;
    out[r].rate_bits /= n;
    out[r].distortion /= n;
  }
  return out;
}

void write_points_csv(std::ostream& out, std::span<const RDPoint> points) {
  out << kCsvHeader << '\n';
  for (const RDPoint& p : points)
    out << fmt::format("{},{},{},{:.9g},{:.9g},{},{:.9g},{:.9g},{:.9g}\n", p.method, p.lambda, p.image_id, p.bpp, p.psnr,
                       p.psnr_capped ? 1 : 0, p.bits, p.distortion, p.rd_loss);
}

std::vector<RDPoint> read_points_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw ConfigError("not a results CSV (unexpected header)");
  std::vector<RDPoint> points;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 9) throw ConfigError("malformed results row: " + line);
    try {
      points.push_back({f[0], std::stod(f[1]), std::stoi(f[2]), std::stod(f[3]), std::stod(f[4]), f[5] == "1",
                        std::stod(f[6]), std::stod(f[7]), std::stod(f[8])});
    } catch (const std::logic_error&) {
      throw ConfigError("malformed results row: " + line);
    }
  }
  return points;
}

std::string points_json(std::span<const RDPoint> points) {
  nlohmann::json rows = nlohmann::json::array();
  for (const RDPoint& p : points)
    rows.push_back({{"method", p.method}, {"lambda", p.lambda}, {"image", p.image_id}, {"bpp", p.bpp},
                    {"psnr", p.psnr}, {"psnr_capped", p.psnr_capped}, {"bits", p.bits},
                    {"distortion", p.distortion}, {"rd_loss", p.rd_loss}});
  return rows.dump(2);
}

std::vector<RDPoint> parse_points_json(std::string_view text) {
  std::vector<RDPoint> points;
  try {
    for (const auto& r : nlohmann::json::parse(text))
      points.push_back({r.at("method"), r.at("lambda"), r.at("image"), r.at("bpp"), r.at("psnr"), r.at("psnr_capped"),
                        r.at("bits"), r.at("distortion"), r.at("rd_loss")});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed results JSON: ") + e.what());
  }
  return points;
}

void write_report(std::ostream& out, std::span<const RDPoint> points, std::string_view baseline) {
  const std::vector<RDPoint> means = mean_points(points);
  std::vector<std::string> methods;
  for (const RDPoint& m : means)
    if (std::find(methods.begin(), methods.end(), m.method) == methods.end()) methods.push_back(m.method);
  const auto curve = [&](const std::string& method) {
    std::vector<RDPoint> c;
    for (const RDPoint& m : means)
      if (m.method == method) c.push_back(m);
    return c;
  };
  const std::vector<RDPoint> base = curve(std::string(baseline));

  out << "| method | lambda | bpp | PSNR (dB) | R-D loss | vs " << baseline << " |\n";
  out << "|---|---|---|---|---|---|\n";
  for (const RDPoint& m : means) {
    std::string delta = "n/a";
    const auto ref = std::find_if(base.begin(), base.end(), [&](const RDPoint& b) { return b.lambda == m.lambda; });
    if (ref != base.end() && ref->rd_loss != 0) delta = fmt::format("{:+.2f}%", 100.0 * (m.rd_loss / ref->rd_loss - 1));
    out << fmt::format("| {} | {} | {:.4f} | {:.2f} | {:.2f} | {} |\n", m.method, m.lambda, m.bpp, m.psnr, m.rd_loss,
                       delta);
  }
  out << "\n| method | BD rate vs " << baseline << " |\n|---|---|\n";
  for (const std::string& method : methods) {
    if (method == baseline) continue;
    std::string cell = "n/a (needs >= 4 lambdas)";
    const std::vector<RDPoint> c = curve(method);
    if (c.size() >= 4 && base.size() >= 4) {
      try {
        cell = fmt::format("{:+.2f}%", bd_rate(base, c));
      } catch (const DomainError& e) {
        cell = std::string("n/a (") + e.what() + ")";
      }
    }
    out << "| " << method << " | " << cell << " |\n";
  }

  // Bits-back net rate against the standard path on the same checkpoint.
  std::string rows;
  for (const RDPoint& m : means) {
    if (m.method != "M2" && m.method != "A5" && m.method != "A6") continue;
    const auto ref = std::find_if(means.begin(), means.end(),
                                  [&](const RDPoint& b) { return b.method == "round:bb" && b.lambda == m.lambda; });
    if (ref == means.end()) continue;
    rows += fmt::format("| {} | {} | {:.1f} | {:.1f} | {:+.2f}% |\n", m.method, m.lambda, m.bits, ref->bits,
                        100.0 * (m.bits / ref->bits - 1));
  }
  if (!rows.empty())
    out << "\n| method | lambda | net bits | standard-path bits | change |\n|---|---|---|---|---|\n" << rows;
}

}  // namespace sgac
