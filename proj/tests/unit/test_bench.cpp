#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "sgac/bench.hpp"
#include "sgac/codec.hpp"
#include "sgac/data.hpp"
#include "sgac/errors.hpp"

using namespace sgac;

namespace {

Model tiny(bool bitsback = false) {
  ModelConfig cfg;
  cfg.hidden_channels = 4;
  cfg.latent_channels = 2;
  cfg.hyper_hidden_channels = 4;
  cfg.hyper_channels = 2;
  cfg.lambda = 50;
  cfg.bitsback_mode = bitsback;
  return Model::initialize(cfg, 7);
}

std::vector<RDPoint> curve(double rate_scale, std::string method = "ref") {
  std::vector<RDPoint> c;
  for (double bpp : {0.1, 0.25, 0.5, 0.9, 1.6}) {
    RDPoint p;
    p.method = method;
    p.bpp = bpp * rate_scale;
    // A concave, non-polynomial R-D shape.
    p.psnr = 28 + 6 * std::log2(bpp / 0.1) - 0.3 * std::sqrt(bpp);
    c.push_back(p);
  }
  return c;
}

Tensor filled(double v) {
  Tensor t(Shape{1, 4, 4});
  t.data().setConstant(v);
  return t;
}

}  // namespace

TEST_CASE("psnr of identical images is capped") {
  const Tensor x = filled(0.4);
  CHECK(psnr(x, x) == kPsnrCap);
}

TEST_CASE("psnr follows the formula") {
  CHECK(psnr(filled(0.5), filled(0.6)) == doctest::Approx(20.0).epsilon(1e-12));
  const Tensor a = filled(0.5);
  Tensor b = filled(0.5);
  b.data() += std::sqrt(0.001);
  CHECK(psnr(a, b) == doctest::Approx(30.0).epsilon(1e-12));
  CHECK_THROWS_AS(psnr(a, Tensor(Shape{1, 4, 5})), ShapeError);
}

TEST_CASE("psnr decreases as noise grows") {
  const Tensor x = synthetic_corpus({.count = 1, .size = 16, .seed = 3})[0];
  double last = kPsnrCap + 1;
  for (double amp : {0.001, 0.01, 0.05, 0.2}) {
    Tensor y = x;
    for (Index i = 0; i < y.size(); ++i) y[i] += (i % 2 ? amp : -amp);
    const double p = psnr(x, y);
    CHECK(p < last);
    last = p;
  }
}

TEST_CASE("bd rate of identical curves is zero") { CHECK(std::abs(bd_rate(curve(1), curve(1))) < 1e-9); }

TEST_CASE("bd rate of uniformly scaled rates is the scale") {
  CHECK(std::abs(bd_rate(curve(1), curve(0.9)) + 10.0) < 1e-6);
  CHECK(std::abs(bd_rate(curve(1), curve(1.25)) - 25.0) < 1e-6);
}

TEST_CASE("bd rate is antisymmetric under curve swap") {
  const double ab = bd_rate(curve(1), curve(0.8)) / 100, ba = bd_rate(curve(0.8), curve(1)) / 100;
  CHECK(std::abs(ab + ba / (1 + ba)) < 1e-9);
}

TEST_CASE("bd rate rejects short and disjoint curves") {
  auto short_curve = curve(1);
  short_curve.resize(3);
  CHECK_THROWS_AS(bd_rate(short_curve, curve(1)), DomainError);
  auto shifted = curve(1);
  for (auto& p : shifted) p.psnr += 100;
  CHECK_THROWS_AS(bd_rate(curve(1), shifted), DomainError);
}

TEST_CASE("codec ids parse from ids and labels") {
  for (Codec c : all_codecs()) {
    CHECK(parse_codec(codec_id(c)) == c);
    CHECK(parse_codec(codec_label(c)) == c);
  }
  CHECK(codec_id(Codec::kSGA) == "M1");
  CHECK(codec_id(Codec::kBitsBackAmortized) == "A6");
  CHECK_THROWS_AS(parse_codec("nope"), ConfigError);
}

TEST_CASE("sweep over an empty corpus is empty") {
  const std::vector<Model> models{tiny()};
  const std::vector<Codec> codecs{Codec::kRound};
  CHECK(rd_sweep({}, codecs, models).points.empty());
  CHECK_THROWS_AS(rd_sweep({}, codecs, std::span<const Model>{}), ConfigError);
}

TEST_CASE("direct rounding row matches the standard encoder's file") {
  const Model m = tiny();
  const std::vector<Tensor> corpus{synthetic_corpus({.count = 1, .size = 16, .seed = 4})[0]};
  const std::vector<Codec> codecs{Codec::kRound};
  const Sweep s = rd_sweep(corpus, codecs, std::span<const Model>(&m, 1));
  REQUIRE(s.points.size() == 1);
  const StandardEncoding enc = encode_standard(m, corpus[0]);
  CHECK(s.points[0].bits == 8.0 * enc.stream.payload.size());
  CHECK(s.points[0].bpp == 8.0 * enc.stream.payload.size() / 256);
  CHECK(s.points[0].psnr == psnr(corpus[0], enc.reconstruction));
  CHECK(s.points[0].method == "round");
  CHECK(s.traces.empty());
}

TEST_CASE("sweeps are deterministic and skip bits-back codecs on standard models") {
  const std::vector<Model> models{tiny(), tiny(true)};
  const auto corpus = synthetic_corpus({.count = 2, .size = 16, .seed = 5});
  const std::vector<Codec> codecs{Codec::kSGA, Codec::kBitsBackAmortized};
  SweepOptions o;
  o.inference_steps = 20;
  o.bbvi_steps = 5;
  o.side_info_bytes = 16;
  const Sweep a = rd_sweep(corpus, codecs, models, o), b = rd_sweep(corpus, codecs, models, o);
  CHECK(a.points.size() == 2 + 2 + 2);
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    CHECK(a.points[i].bits == b.points[i].bits);
    CHECK(a.points[i].psnr == b.points[i].psnr);
  }
  REQUIRE(a.traces.size() == 2);
  CHECK(a.traces[0].second.size() == 2);
  const Trace mean = mean_trace(a.traces[0].second);
  CHECK(mean.size() == a.traces[0].second[0].size());
  CHECK(mean[0].true_rd ==
        doctest::Approx((a.traces[0].second[0][0].true_rd + a.traces[0].second[1][0].true_rd) / 2));
}

TEST_CASE("mean points average per method and lambda") {
  std::vector<RDPoint> pts(3);
  pts[0] = {"M1", 300, 0, 0.2, 30, false, 10, 1, 310};
  pts[1] = {"M1", 300, 1, 0.4, 32, false, 20, 2, 620};
  pts[2] = {"round", 300, 0, 0.5, 29, false, 30, 3, 930};
  const auto m = mean_points(pts);
  REQUIRE(m.size() == 2);
  CHECK(m[0].bpp == doctest::Approx(0.3));
  CHECK(m[0].psnr == doctest::Approx(31));
  CHECK(m[0].image_id == -1);
  CHECK(m[1].rd_loss == 930);
}

TEST_CASE("results round-trip through CSV and JSON") {
  std::vector<RDPoint> pts(2);
  pts[0] = {"A3", 1000, 4, 0.123456789, 31.5, false, 500.25, 0.5, 1000.25};
  pts[1] = {"round", 1000, 5, 0.5, 100, true, 512, 0, 512};
  std::stringstream csv;
  write_points_csv(csv, pts);
  const auto back = read_points_csv(csv);
  const auto json = parse_points_json(points_json(pts));
  for (const auto& got : {back, json}) {
    REQUIRE(got.size() == 2);
    CHECK(got[0].method == "A3");
    CHECK(got[0].bpp == doctest::Approx(0.123456789));
    CHECK(got[1].psnr_capped);
    CHECK(got[1].image_id == 5);
  }
  std::stringstream bad("method,lambda\nx,1\n");
  CHECK_THROWS_AS(read_points_csv(bad), ConfigError);
  CHECK_THROWS_AS(parse_points_json("{"), ConfigError);
}

TEST_CASE("report lists each method and BD rate when curves are long enough") {
  auto pts = curve(1, "round");
  auto better = curve(0.9, "M1");
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i].lambda = better[i].lambda = 10.0 * (i + 1);
  pts.insert(pts.end(), better.begin(), better.end());
  std::stringstream out;
  write_report(out, pts);
  CHECK(out.str().find("| M1 | -10.00% |") != std::string::npos);

  std::stringstream single;
  write_report(single, std::vector<RDPoint>(better.begin(), better.begin() + 1), "round");
  CHECK(single.str().find("| M1 |") != std::string::npos);
  CHECK(single.str().find("| round |") == std::string::npos);
}
