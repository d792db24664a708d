#include <algorithm>
#include <filesystem>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <fstream>
#include <ostream>
#include <sstream>

#include "sgac/bytes.hpp"
#include "sgac/cli.hpp"
#include "sgac/codec.hpp"
#include "sgac/data.hpp"
#include "sgac/errors.hpp"

namespace sgac {
namespace {

namespace fs = std::filesystem;

void require(bool ok, std::string_view message) {
  if (!ok) throw ConfigError(std::string(message));
}

void require_file(const std::string& path, std::string_view what) {
  require(!path.empty(), fmt::format("missing {} path", what));
  require(fs::is_regular_file(path), fmt::format("{} not found: {}", what, path));
}

TemperatureSchedule schedule(const RunConfig& cfg) {
  TemperatureSchedule s{cfg.tau0, cfg.tau_rate, cfg.tau_hold};
  s.validate();
  return s;
}

double pixels(const Tensor& image) { return static_cast<double>(image.shape()[1] * image.shape()[2]); }

std::string file_stem(std::string key) {
  std::replace_if(key.begin(), key.end(), [](char c) { return c == ':' || c == '@' || c == '/'; }, '_');
  return key;
}

}  // namespace

std::vector<Tensor> load_corpus(const RunConfig& cfg) {
  require(cfg.corpus_count > 0 && cfg.corpus_size > 0, "corpus_count and corpus_size must be positive");
  if (cfg.corpus == "synthetic")
    return synthetic_corpus({.count = cfg.corpus_count, .size = cfg.corpus_size, .channels = 1, .seed = cfg.corpus_seed});
  std::vector<std::string> paths;
  if (fs::is_directory(cfg.corpus)) {
    for (const auto& e : fs::directory_iterator(cfg.corpus))
      if (e.is_regular_file() && e.path().extension() == ".png") paths.push_back(e.path().string());
    std::sort(paths.begin(), paths.end());
  } else {
    std::stringstream ss(cfg.corpus);
    for (std::string p; std::getline(ss, p, ',');)
      if (!p.empty()) paths.push_back(p);
  }
  for (const auto& p : paths) require_file(p, "corpus image");
  std::vector<Tensor> tiles = png_patches(paths, cfg.corpus_size, 1);
  require(!tiles.empty(), "corpus has no complete tiles");
  if (static_cast<Index>(tiles.size()) > cfg.corpus_count) tiles.resize(static_cast<std::size_t>(cfg.corpus_count));
  return tiles;
}

void cmd_train(const RunConfig& cfg, std::ostream& log) {
  const std::string out = cfg.output.empty() ? cfg.checkpoint : cfg.output;
  require(!out.empty(), "train needs an output checkpoint path");
  ModelConfig mc;
  mc.lambda = cfg.lambda;
  mc.bitsback_mode = cfg.bitsback;
  mc.validate();
  const TrainOptions opts{.steps = cfg.steps, .batch_size = cfg.batch, .learning_rate = cfg.lr, .seed = cfg.seed};
  const std::vector<Tensor> corpus = load_corpus(cfg);
  const std::vector<Tensor> eval(corpus.begin(), corpus.begin() + std::min<std::ptrdiff_t>(16, std::ssize(corpus)));

  Model model = Model::initialize(mc, cfg.seed);
  try {
    const TrainReport r = train(model, corpus, eval, opts, [&](const TrainPoint& p) {
      fmt::print(log, "step {} nelbo {:.4f}\n", p.step, p.nelbo);
    });
    fmt::print(log, "nelbo {:.4f} -> {:.4f}\n", r.initial_nelbo, r.final_nelbo);
  } catch (const NumericError&) {
    model.save(out);
    fmt::print(log, "non-finite loss; last good weights written to {}\n", out);
    throw;
  }
  model.save(out);
  fmt::print(log, "wrote {} (hash {:016x}, hyper-analysis channels {})\n", out, model.hash(),
             model.config().hyper_analysis_channels());
}

void cmd_compress(const RunConfig& cfg, std::ostream& log) {
  require_file(cfg.checkpoint, "checkpoint");
  require_file(cfg.input, "input image");
  require(!cfg.output.empty(), "compress needs an output path");
  const Codec codec = parse_codec(cfg.method);
  if (!cfg.side_info.empty()) require_file(cfg.side_info, "side-information file");
  const Model model = Model::load(cfg.checkpoint);
  require(!is_bitsback(codec) || model.config().bitsback_mode,
          fmt::format("method {} needs a bits-back checkpoint", cfg.method));
  require(is_bitsback(codec) || cfg.side_info.empty(), "side information is only used by bits-back methods");
  const Tensor image = read_png(cfg.input);

  Bitstream stream;
  Tensor reconstruction;
  double bits = 0;
  if (!is_bitsback(codec)) {
    std::optional<InferenceConfig> ic;
    if (codec != Codec::kRound) {
      ic = InferenceConfig::defaults(parse_method(codec_label(codec)));
      ic->steps = cfg.inference_steps;
      ic->schedule = schedule(cfg);
      ic->seed = cfg.seed;
    }
    StandardEncoding enc = encode_standard(model, image, ic);
    stream = std::move(enc.stream);
    reconstruction = std::move(enc.reconstruction);
    bits = 8.0 * static_cast<double>(stream.payload.size());
  } else {
    const std::vector<std::uint8_t> side = cfg.side_info.empty() ? std::vector<std::uint8_t>{} : read_file(cfg.side_info);
    BitsBackOptions o;
    o.joint_steps = codec == Codec::kBitsBack ? cfg.inference_steps : 0;
    o.bbvi_steps = cfg.bbvi_steps;
    o.schedule = schedule(cfg);
    o.seed = cfg.seed;
    o.optimize = codec != Codec::kBitsBackAmortized;
    BitsBackEncoding enc = bitsback_encode(model, image, side, o);
    stream = std::move(enc.stream);
    reconstruction = std::move(enc.reconstruction);
    bits = enc.net_rate_bits;
    if (enc.padding_bytes > 0)
      fmt::print(log, "side information ran out; {} zero bytes padded\n", enc.padding_bytes);
  }
  const auto bytes = stream.serialize();
  write_file(cfg.output, bytes);
  fmt::print(log, "wrote {} ({} bytes) bpp {:.6f} psnr {:.6f}\n", cfg.output, bytes.size(), bits / pixels(image),
             psnr(image, reconstruction));
}

void cmd_decompress(const RunConfig& cfg, std::ostream& log) {
  require_file(cfg.checkpoint, "checkpoint");
  require_file(cfg.input, "bitstream");
  require(!cfg.output.empty(), "decompress needs an output PNG path");
  if (!cfg.reference.empty()) require_file(cfg.reference, "reference image");
  const Model model = Model::load(cfg.checkpoint);
  const Bitstream stream = Bitstream::parse(read_file(cfg.input));
  require(stream.mode == StreamMode::kStandard || !cfg.side_info_out.empty(),
          "bits-back stream: pass side_info_out to receive the side information");
  require(stream.mode == StreamMode::kStandard || model.config().bitsback_mode,
          "bits-back stream needs a bits-back checkpoint");

  Tensor reconstruction;
  double bits = 8.0 * static_cast<double>(stream.payload.size());
  if (stream.mode == StreamMode::kStandard) {
    reconstruction = decode_standard(model, stream);
  } else {
    BitsBackDecoding dec = bitsback_decode(model, stream);
    write_file(cfg.side_info_out, dec.side_info);
    // Same accounting as compress: rANS bytes net of the returned side information.
    bits -= 8.0 * (6 + static_cast<double>(dec.side_info.size()));
    reconstruction = std::move(dec.reconstruction);
  }
  write_png(cfg.output, reconstruction);
  std::string line = fmt::format("wrote {} bpp {:.6f}", cfg.output, bits / pixels(reconstruction));
  if (!cfg.reference.empty()) line += fmt::format(" psnr {:.6f}", psnr(read_png(cfg.reference), reconstruction));
  fmt::print(log, "{}\n", line);
}

void cmd_ablate(const RunConfig& cfg, std::ostream& log) {
  require(!cfg.output.empty(), "ablate needs an output directory");
  std::vector<std::string> paths = cfg.checkpoints;
  if (paths.empty() && !cfg.checkpoint.empty()) paths.push_back(cfg.checkpoint);
  require(!paths.empty(), "ablate needs at least one checkpoint");
  std::vector<Codec> codecs;
  for (const auto& m : cfg.methods) codecs.push_back(parse_codec(m));
  if (codecs.empty()) codecs = all_codecs();
  const std::vector<Tensor> corpus = load_corpus(cfg);

  std::vector<Model> models;
  for (const auto& p : paths) {
    if (!fs::is_regular_file(p)) {
      fmt::print(log, "missing checkpoint: {}\n", p);
      continue;
    }
    models.push_back(Model::load(p));
  }
  require(!models.empty(), "none of the checkpoints exist");

  SweepOptions so;
  so.inference_steps = cfg.inference_steps;
  so.bbvi_steps = cfg.bbvi_steps;
  so.side_info_bytes = cfg.side_info_bytes;
  so.seed = cfg.seed;
  so.on_point = [&](const RDPoint& p) {
    fmt::print(log, "{} lambda {} image {} bpp {:.4f} psnr {:.2f} rd {:.2f}\n", p.method, p.lambda, p.image_id, p.bpp,
               p.psnr, p.rd_loss);
  };
  const Sweep sweep = rd_sweep(corpus, codecs, models, so);

  fs::create_directories(cfg.output);
  const fs::path dir(cfg.output);
  {
    std::ofstream csv(dir / "results.csv");
    write_points_csv(csv, sweep.points);
    std::ofstream(dir / "results.json") << points_json(sweep.points) << '\n';
  }
  for (const auto& [key, traces] : sweep.traces) {
    std::ofstream gap(dir / ("gap_" + file_stem(key) + ".csv"));
    write_trace_csv(gap, mean_trace(traces));
  }
  std::ostringstream report;
  write_report(report, sweep.points);
  std::ofstream(dir / "report.md") << report.str();
  log << report.str();
}

void cmd_report(const RunConfig& cfg, std::ostream& log) {
  require_file(cfg.input, "results file");
  std::vector<RDPoint> points;
  if (fs::path(cfg.input).extension() == ".json") {
    std::ifstream in(cfg.input);
    std::stringstream ss;
    ss << in.rdbuf();
    points = parse_points_json(ss.str());
  } else {
    std::ifstream in(cfg.input);
    points = read_points_csv(in);
  }
  std::ostringstream report;
  write_report(report, points);
  if (!cfg.output.empty()) std::ofstream(cfg.output) << report.str();
  log << report.str();
}

}  // namespace sgac
