// One PASS/FAIL line per acceptance criterion. Tolerances are fixed below.

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fmt/format.h>
#include <functional>
#include <iostream>
#include <optional>
#include <set>

#include "gradcheck.hpp"
#include "sgac/bench.hpp"
#include "sgac/codec.hpp"
#include "sgac/data.hpp"
#include "sgac/objectives.hpp"
#include "sgac/relaxations.hpp"
#include "sgac/rounding.hpp"

using namespace sgac;

namespace {

// Criterion 1
constexpr int kGradTrialsPerOp = 100;
constexpr double kGradTolerance = 1e-4;
// Criterion 2
constexpr double kRoundProbTolerance = 1e-12;
// Criterion 3
constexpr int kToySeeds = 10;
constexpr int kToySteps = 2000;
// Criterion 4
constexpr double kSgaGapFraction = 0.005;
// Criterion 5
constexpr double kSgaWinFraction = 0.90;
// Criterion 6
constexpr std::size_t kCoderSymbols = 100000;
constexpr double kCoderRelative = 0.01;
constexpr double kCoderSlackBits = 32;
constexpr double kFileRelative = 0.005;
constexpr double kFileSlackBytes = 8;
// Criterion 7
constexpr std::array<std::size_t, 3> kSideInfoBytes{8, 64, 512};
constexpr double kLedgerBitsPerSymbol = 1.0;
// Criterion 8
constexpr int kReplayLatents = 50;
// Criterion 10
constexpr double kNelboDrop = 0.20;
constexpr double kBdTolerance = 1e-6;

// Shared setup.
constexpr int kTrainSteps = 5000;
constexpr Index kImages = 20;
const std::vector<double> kRdLambdas{300, 1000};

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Fixtures {
 public:
  explicit Fixtures(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

  const Model& model(double lambda, bool bitsback) {
    const std::string key = fmt::format("{}{}", lambda, bitsback ? "_bb" : "");
    if (auto it = models_.find(key); it != models_.end()) return it->second;
    ModelConfig cfg;
    cfg.lambda = lambda;
    cfg.bitsback_mode = bitsback;
    Model m = Model::initialize(cfg, 1);
    const auto t0 = Clock::now();
    const TrainReport r = train(m, train_set(), eval_set(), {.steps = kTrainSteps, .seed = 1, .eval_every = 0});
    std::cout << fmt::format("  trained lambda={}{}: nelbo {:.2f} -> {:.2f} ({:.0f} s)\n", lambda,
                             bitsback ? " bits-back" : "", r.initial_nelbo, r.final_nelbo, seconds_since(t0));
    m.save((dir_ / ("model_" + key + ".sgam")).string());
    reports_[key] = r;
    return models_.emplace(key, std::move(m)).first->second;
  }

  const TrainReport& report(double lambda, bool bitsback) {
    model(lambda, bitsback);
    return reports_.at(fmt::format("{}{}", lambda, bitsback ? "_bb" : ""));
  }

  const std::vector<Tensor>& train_set() {
    if (train_.empty()) train_ = synthetic_corpus({.count = 256, .size = 32, .seed = 1});
    return train_;
  }
  const std::vector<Tensor>& eval_set() {
    if (eval_.empty()) eval_ = synthetic_corpus({.count = 32, .size = 32, .seed = 2});
    return eval_;
  }
  /// Held-out images for compression-time inference.
  const std::vector<Tensor>& inference_corpus() {
    if (inference_.empty()) inference_ = synthetic_corpus({.count = kImages, .size = 32, .seed = 1001});
    return inference_;
  }
  /// Larger held-out images for file-level coding.
  const std::vector<Tensor>& coding_corpus() {
    if (coding_.empty()) coding_ = synthetic_corpus({.count = kImages, .size = 64, .seed = 2002});
    return coding_;
  }

  /// Per-method inference results on the inference corpus.
  const std::vector<InferenceResult>& inference(double lambda, Method method) {
    const auto key = std::make_pair(lambda, method);
    if (auto it = inference_results_.find(key); it != inference_results_.end()) return it->second;
    const Model& m = model(lambda, false);
    std::vector<InferenceResult> out;
    for (std::size_t i = 0; i < inference_corpus().size(); ++i) {
      InferenceConfig cfg = InferenceConfig::defaults(method);
      cfg.seed = i;
      out.push_back(refine_image(m, inference_corpus()[i], cfg));
    }
    return inference_results_.emplace(key, std::move(out)).first->second;
  }

  struct BitsBackTrial {
    std::size_t side_bytes;
    bool side_ok;
    bool image_ok;
    bool posterior_ok;
    double net_bits;
    double ledger_bits;
    std::size_t padding;
    Index symbols;
  };

  const std::vector<BitsBackTrial>& bitsback_trials() {
    if (!trials_.empty()) return trials_;
    const Model& m = model(300, true);
    Rng rng(77);
    for (std::size_t i = 0; i < coding_corpus().size(); ++i) {
      BitsBackOptions o;
      o.seed = i;
      const BitsBackPlan plan = plan_bitsback(m, coding_corpus()[i], o);
      for (std::size_t bytes : kSideInfoBytes) {
        std::vector<std::uint8_t> side(bytes);
        for (auto& b : side) b = static_cast<std::uint8_t>(rng.next_u64());
        const BitsBackEncoding enc = encode_bitsback_plan(m, plan, side);
        const BitsBackDecoding dec = bitsback_decode(m, Bitstream::parse(enc.stream.serialize()));
        trials_.push_back({bytes, dec.side_info == side,
                           (dec.reconstruction.data() == enc.reconstruction.data()).all(),
                           (dec.posterior.mu_z.data() == plan.posterior.mu_z.data()).all() &&
                               (dec.posterior.var_z.data() == plan.posterior.var_z.data()).all(),
                           enc.net_rate_bits, enc.ledger_bits, enc.padding_bytes, enc.y_hat.size() + enc.z_hat.size()});
      }
    }
    return trials_;
  }

  static double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
  }

 private:
  std::filesystem::path dir_;
  std::map<std::string, Model> models_;
  std::map<std::string, TrainReport> reports_;
  std::vector<Tensor> train_, eval_, inference_, coding_;
  std::map<std::pair<double, Method>, std::vector<InferenceResult>> inference_results_;
  std::vector<BitsBackTrial> trials_;
};

double mean_of(const std::vector<InferenceResult>& rs, const std::function<double(const InferenceResult&)>& f) {
  double s = 0;
  for (const auto& r : rs) s += f(r);
  return s / static_cast<double>(rs.size());
}

Outcome gradient_correctness() {
  Rng rng(2024);
  double worst = 0;
  std::string worst_op;
  int cases = 0;
  for (const auto& c : testing::op_cases()) {
    for (int trial = 0; trial < kGradTrialsPerOp; ++trial, ++cases) {
      const double e = testing::max_gradient_error(testing::contracted(c, 5000 + trial), c.inputs(rng));
      if (e > worst) worst = e, worst_op = c.name;
    }
  }
  return {worst < kGradTolerance,
          fmt::format("{} cases over {} ops, max relative error {:.2e} ({})", cases, cases / kGradTrialsPerOp, worst,
                      worst_op)};
}

Outcome rounding_oracle() {
  bool ok = true;
  for (double tau : {0.5, 0.1, 0.01}) {
    const auto half = round_probs(Tensor::scalar(2.5), tau), whole = round_probs(Tensor::scalar(3.0), tau);
    ok = ok && half.p_down[0] == 0.5 && half.p_up[0] == 0.5 && whole.p_down[0] == 1.0 && whole.p_up[0] == 0.0;
  }
  // Direct scalar evaluation: weights exp(-atanh(distance)/tau) for the two neighbours.
  const double tau = 0.2, v = 2.75;
  const double down = std::exp(-std::atanh(v - 2.0) / tau), up = std::exp(-std::atanh(3.0 - v) / tau);
  const auto p = round_probs(Tensor::scalar(v), tau);
  const double err = std::max(std::abs(p.p_down[0] - down / (down + up)), std::abs(p.p_up[0] - up / (down + up)));
  return {ok && err < kRoundProbTolerance,
          fmt::format("exact at 2.5 and 3.0: {}; |error| at (2.75, 0.2) = {:.1e}", ok ? "yes" : "no", err)};
}

Outcome toy_quadratic() {
  int converged = 0, runs = 0;
  for (double x0 : {2.3, -1.7, 0.6}) {
    for (int seed = 0; seed < kToySeeds; ++seed, ++runs) {
      FunctionProblem problem([](Var z) { return sum(square(z)); });
      InferenceConfig cfg = InferenceConfig::defaults(Method::kSGA);
      cfg.steps = kToySteps;
      cfg.seed = static_cast<std::uint64_t>(seed);
      Tensor init(Shape{1});
      init[0] = x0;
      const InferenceResult r = sga_optimize(problem, {init}, cfg);
      converged += r.rounded[0][0] == 0.0 && r.final.total == 0.0;
    }
  }
  return {converged == runs, fmt::format("{}/{} runs end at z=0 with objective 0", converged, runs)};
}

Outcome discretization_gap_property(Fixtures& fx) {
  const double lambda = 300;
  const auto& sga = fx.inference(lambda, Method::kSGA);
  const double sga_gap = mean_of(sga, [](const auto& r) { return std::abs(final_gap(r.trace)) / r.trace.back().true_rd; });
  const double uni_gap = mean_of(fx.inference(lambda, Method::kUniformNoise), [](const auto& r) { return final_gap(r.trace); });
  std::string losses;
  bool sga_best = true;
  const double sga_loss = mean_of(sga, [](const auto& r) { return r.final.total; });
  for (Method m : {Method::kSGA, Method::kMAP, Method::kSTE, Method::kUniformNoise, Method::kDetAnneal}) {
    const double loss = mean_of(fx.inference(lambda, m), [](const auto& r) { return r.final.total; });
    losses += fmt::format(" {} {:.1f}", method_name(m), loss);
    if (m != Method::kSGA) sga_best = sga_best && sga_loss < loss;
  }
  return {sga_gap < kSgaGapFraction && uni_gap < 0 && sga_best,
          fmt::format("lambda {} on {} images: SGA |gap| {:.3f}% of L, uniform-noise gap {:.2f} bits; mean true loss:{}",
                      lambda, sga.size(), 100 * sga_gap, uni_gap, losses)};
}

Outcome iterative_improvement(Fixtures& fx) {
  bool ok = true;
  std::string detail;
  for (double lambda : kRdLambdas) {
    const auto& sga = fx.inference(lambda, Method::kSGA);
    const auto& uni = fx.inference(lambda, Method::kUniformNoise);
    int wins = 0;
    for (const auto& r : sga) wins += r.final.total < r.initial.total;
    const double sga_gain = mean_of(sga, [](const auto& r) { return r.initial.total - r.final.total; });
    const double uni_gain = mean_of(uni, [](const auto& r) { return r.initial.total - r.final.total; });
    const bool here = wins >= kSgaWinFraction * static_cast<double>(sga.size()) && uni_gain > 0 && uni_gain < sga_gain;
    ok = ok && here;
    detail += fmt::format("lambda {}: SGA better on {}/{}, mean gain SGA {:.1f} vs uniform {:.1f}; ", lambda, wins,
                          sga.size(), sga_gain, uni_gain);
  }
  return {ok, detail + "rate-distortion checkpoints only"};
}

Outcome coder_exactness(Fixtures& fx) {
  // Symbol-level: i.i.d. unit Gaussian, and varying models.
  bool exact = true, rate_ok = true;
  double worst_excess = 0;
  Rng rng(6);
  for (int variant = 0; variant < 2; ++variant) {
    std::vector<QuantizedModel> models;
    std::vector<int> symbols;
    double ideal = 0;
    for (std::size_t i = 0; i < kCoderSymbols; ++i) {
      if (variant == 0) {
        if (models.empty()) models.push_back(QuantizedModel::gaussian(0, 1));
      } else {
        models.push_back(QuantizedModel::gaussian(rng.uniform(-10, 10), std::exp(rng.uniform(-2, 3))));
      }
      const QuantizedModel& q = models.back();
      const int k = q.clamp(static_cast<int>(std::round(
          variant == 0 ? rng.normal() : q.symbol_at(static_cast<std::uint32_t>(rng.next_u64() % kTotalFrequency)))));
      symbols.push_back(k);
      ideal -= q.log2_probability(k);
    }
    const auto bytes = rans_encode(symbols, models);
    exact = exact && rans_decode(bytes, models, symbols.size()) == symbols;
    const double bits = 8.0 * static_cast<double>(bytes.size());
    rate_ok = rate_ok && std::abs(bits - ideal) <= kCoderRelative * ideal + kCoderSlackBits;
    worst_excess = std::max(worst_excess, (bits - ideal) / ideal);
  }
  // File-level: payload against the model's rate estimate, direct rounding and SGA.
  const Model& m = fx.model(300, false);
  double worst_file = -1e300;
  bool file_ok = true;
  int files = 0;
  for (const Tensor& x : fx.coding_corpus()) {
    for (bool sga : {false, true}) {
      std::optional<InferenceConfig> cfg;
      if (sga) cfg = InferenceConfig::defaults(Method::kSGA);
      const StandardEncoding enc = encode_standard(m, x, cfg);
      const double est_bytes = enc.estimate.rate_bits / 8, actual = static_cast<double>(enc.stream.payload.size());
      const double limit = kFileRelative * est_bytes + kFileSlackBytes;
      file_ok = file_ok && std::abs(actual - est_bytes) <= limit;
      exact = exact && (decode_standard(m, enc.stream).data() == enc.reconstruction.data()).all();
      worst_file = std::max(worst_file, std::abs(actual - est_bytes) - limit);
      ++files;
    }
  }
  return {exact && rate_ok && file_ok,
          fmt::format("round trips exact: {}; worst symbol-rate excess {:.3f}%; {} files, worst "
                      "|size - estimate| minus allowance {:.2f} bytes",
                      exact ? "yes" : "no", 100 * worst_excess, files, worst_file)};
}

Outcome bitsback_protocol(Fixtures& fx) {
  const auto& trials = fx.bitsback_trials();
  std::map<std::size_t, int> ok_by_size;
  double worst_per_symbol = 0;
  bool ledger_ok = true;
  std::size_t padded = 0;
  for (const auto& t : trials) {
    ok_by_size[t.side_bytes] += t.side_ok && t.image_ok;
    // Zero padding past the end of the side information is paid for in the payload.
    const double diff = std::abs(t.net_bits - t.ledger_bits - 8.0 * static_cast<double>(t.padding));
    worst_per_symbol = std::max(worst_per_symbol, diff / static_cast<double>(t.symbols));
    ledger_ok = ledger_ok && diff <= kLedgerBitsPerSymbol * static_cast<double>(t.symbols);
    padded += t.padding > 0;
  }
  bool all = ledger_ok;
  std::string counts;
  for (std::size_t b : kSideInfoBytes) {
    all = all && ok_by_size[b] == static_cast<int>(kImages);
    counts += fmt::format(" {} bits {}/{};", 8 * b, ok_by_size[b], kImages);
  }
  return {all, fmt::format("recovered:{} worst ledger mismatch {:.4f} bits/symbol; {} trials needed zero padding",
                           counts, worst_per_symbol, padded)};
}

Outcome replay_determinism(Fixtures& fx) {
  const Model& m = fx.model(300, true);
  const auto images = synthetic_corpus({.count = kReplayLatents, .size = 32, .seed = 3003});
  int identical = 0;
  for (const Tensor& x : images) {
    const Tensor y = round(m.infer(x).mu_y);
    const Posterior a = reproducible_bbvi(m, y), b = reproducible_bbvi(m, y);
    identical += (a.mu_z.data() == b.mu_z.data()).all() && (a.var_z.data() == b.var_z.data()).all();
  }
  int paths = 0;
  const auto& trials = fx.bitsback_trials();
  for (const auto& t : trials) paths += t.posterior_ok;
  return {identical == kReplayLatents && paths == static_cast<int>(trials.size()),
          fmt::format("repeat calls identical {}/{}; encoder vs decoder posteriors identical {}/{}", identical,
                      kReplayLatents, paths, trials.size())};
}

Outcome amortized_bitsback_direction(Fixtures& fx) {
  const Model& bb = fx.model(300, true);
  const Model& standard = fx.model(300, false);
  Rng rng(99);
  double a6 = 0, same_ckpt = 0, other_ckpt = 0;
  const auto& corpus = fx.coding_corpus();
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    std::vector<std::uint8_t> side(512);
    for (auto& b : side) b = static_cast<std::uint8_t>(rng.next_u64());
    BitsBackOptions o;
    o.optimize = false;
    a6 += bitsback_encode(bb, corpus[i], side, o).net_rate_bits;
    same_ckpt += 8.0 * static_cast<double>(encode_standard(bb, corpus[i]).stream.payload.size());
    other_ckpt += 8.0 * static_cast<double>(encode_standard(standard, corpus[i]).stream.payload.size());
  }
  const double n = static_cast<double>(corpus.size());
  return {a6 > same_ckpt,
          fmt::format("mean bits: bits-back without optimization {:.1f} vs standard path {:.1f} (same checkpoint); "
                      "standard checkpoint {:.1f}",
                      a6 / n, same_ckpt / n, other_ckpt / n)};
}

Outcome training_sanity(Fixtures& fx) {
  const TrainReport& r = fx.report(0.01, false);
  const double drop = 1 - r.final_nelbo / r.initial_nelbo;
  std::vector<RDPoint> ref, lower;
  for (double bpp : {0.1, 0.3, 0.6, 1.0, 1.8}) {
    RDPoint p;
    p.bpp = bpp;
    p.psnr = 25 + 8 * std::log2(1 + bpp);
    ref.push_back(p);
    p.bpp *= 0.9;
    lower.push_back(p);
  }
  const double same = bd_rate(ref, ref), saving = bd_rate(ref, lower);
  const bool bd_ok = std::abs(same) < kBdTolerance && std::abs(saving + 10) < kBdTolerance;
  return {drop >= kNelboDrop && bd_ok,
          fmt::format("NELBO {:.2f} -> {:.2f} ({:.1f}% drop); BD identical {:.1e}, x0.9 {:.8f}%", r.initial_nelbo,
                      r.final_nelbo, 100 * drop, same, saving)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::set<int> only;
  std::string workdir = "acceptance_artifacts";
  app.add_option("--only", only, "run only these criteria (development)");
  app.add_option("--workdir", workdir, "where trained checkpoints are written");
  CLI11_PARSE(app, argc, argv);

  Fixtures fx(workdir);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"rounding-probability oracle", rounding_oracle},
      {"SGA on z^2", toy_quadratic},
      {"discretization gap", [&] { return discretization_gap_property(fx); }},
      {"iterative inference improvement", [&] { return iterative_improvement(fx); }},
      {"coder exactness", [&] { return coder_exactness(fx); }},
      {"bits-back protocol", [&] { return bitsback_protocol(fx); }},
      {"replay determinism", [&] { return replay_determinism(fx); }},
      {"bits-back without optimization vs standard path", [&] { return amortized_bitsback_direction(fx); }},
      {"training sanity and BD rate", [&] { return training_sanity(fx); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << fmt::format("{} {:2d} {}: {} [{:.1f} s]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail,
                             Fixtures::seconds_since(t0))
              << std::flush;
  }
  return failed == 0 ? 0 : 1;
}
