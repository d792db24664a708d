#include "sgac/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "sgac/bytes.hpp"
#include "sgac/rng.hpp"

namespace sgac {
namespace {

constexpr std::array<std::uint8_t, 4> kCheckpointMagic{'S', 'G', 'A', 'M'};
constexpr std::uint32_t kCheckpointVersion = 1;
// Hidden units per layer of the monotone hyperprior network.
constexpr Index kDensityUnits = 3;

std::string unit(const char* prefix, Index j) { return std::string(prefix) + std::to_string(j); }
std::string unit(const char* prefix, Index j, Index i) {
  return std::string(prefix) + std::to_string(j) + "." + std::to_string(i);
}

Var conv_layer(const BoundModel& m, Var x, const std::string& name) {
  Var y = conv2d(x, m[name + ".weight"], ModelConfig::stride, ModelConfig::padding);
  return channel_add(y, m[name + ".bias"]);
}

Var deconv_layer(const BoundModel& m, Var x, const std::string& name) {
  Var y = conv_transpose2d(x, m[name + ".weight"], ModelConfig::stride, ModelConfig::padding);
  return channel_add(y, m[name + ".bias"]);
}

void check_image(const ModelConfig& cfg, const Shape& s) {
  if (s.rank() != 3 || s[0] != cfg.image_channels || s[1] % ModelConfig::downsampling != 0 ||
      s[2] % ModelConfig::downsampling != 0 || s[1] == 0 || s[2] == 0)
    throw ShapeError("image " + s.str() + " incompatible with model: need [" + std::to_string(cfg.image_channels) +
                     ",H,W] with H and W multiples of " + std::to_string(ModelConfig::downsampling));
}

void check_grid(const Shape& s, Index channels, Index factor, const char* what) {
  if (s.rank() != 3 || s[0] != channels)
    throw ShapeError(std::string(what) + " has shape " + s.str() + ", expected " + std::to_string(channels) +
                     " channels");
  (void)factor;
}

// Monotone network h(v) = v + tanh(a) * tanh(v) after each affine layer, all
// weights exp-reparameterized. Optionally propagates d(logit)/dz alongside.
struct DensityPass {
  Var logits;
  std::optional<Var> slope;
};

DensityPass density_network(const BoundModel& m, Var z, bool with_slope) {
  std::vector<Var> h;
  std::vector<Var> dh;

  auto activation = [&](Var u, Var a, Var du, bool want_slope) {
    Var ta = tanh(a);
    Var tu = tanh(u);
    Var out = u + channel_mul(tu, ta);
    std::optional<Var> d;
    if (want_slope) d = du * (1.0 + channel_mul(1.0 - square(tu), ta));
    return std::make_pair(out, d);
  };

  Tape& tape = m.tape();
  Var one = tape.constant(Tensor::constant(z.shape(), 1.0));
  for (Index j = 0; j < kDensityUnits; ++j) {
    Var w = exp(m[unit("density.l1.w", j)]);
    Var u = channel_add(channel_mul(z, w), m[unit("density.l1.b", j)]);
    Var du = with_slope ? channel_mul(one, w) : u;
    auto [out, d] = activation(u, m[unit("density.l1.a", j)], du, with_slope);
    h.push_back(out);
    if (d) dh.push_back(*d);
  }

  std::vector<Var> h2, dh2;
  for (Index j = 0; j < kDensityUnits; ++j) {
    Var u, du;
    for (Index i = 0; i < kDensityUnits; ++i) {
      Var w = exp(m[unit("density.l2.w", j, i)]);
      Var term = channel_mul(h[static_cast<std::size_t>(i)], w);
      u = i == 0 ? term : u + term;
      if (with_slope) {
        Var dterm = channel_mul(dh[static_cast<std::size_t>(i)], w);
        du = i == 0 ? dterm : du + dterm;
      }
    }
    u = channel_add(u, m[unit("density.l2.b", j)]);
    auto [out, d] = activation(u, m[unit("density.l2.a", j)], with_slope ? du : u, with_slope);
    h2.push_back(out);
    if (d) dh2.push_back(*d);
  }

  Var logits, slope;
  for (Index i = 0; i < kDensityUnits; ++i) {
    Var w = exp(m[unit("density.l3.w", i)]);
    Var term = channel_mul(h2[static_cast<std::size_t>(i)], w);
    logits = i == 0 ? term : logits + term;
    if (with_slope) {
      Var dterm = channel_mul(dh2[static_cast<std::size_t>(i)], w);
      slope = i == 0 ? dterm : slope + dterm;
    }
  }
  logits = channel_add(logits, m["density.l3.b"]);
  return {logits, with_slope ? std::optional<Var>(slope) : std::nullopt};
}

Var log2_floored(Var mass) { return scale(log(clamp(mass, kMinMass, 1.0)), 1.0 / std::numbers::ln2); }

void add_conv(ParameterSet& p, Rng& rng, const std::string& name, Index a, Index b, bool transposed) {
  // Weight layout: [Cout,Cin,k,k] for conv, [Cin,Cout,k,k] for transposed conv.
  const Index k = ModelConfig::kernel;
  const Index cin = transposed ? a : b;
  const Index cout = transposed ? b : a;
  const double bound = std::sqrt(6.0 / static_cast<double>((cin + cout) * k * k)) * 2.0;
  Tensor w(Shape{a, b, k, k});
  for (Index i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
  p.add(name + ".weight", std::move(w));
  p.add(name + ".bias", Tensor(Shape{cout}));
}

}  // namespace

void ModelConfig::validate() const {
  if (image_channels != 1 && image_channels != 3) throw ConfigError("image_channels must be 1 or 3");
  if (hidden_channels < 1 || latent_channels < 1 || hyper_hidden_channels < 1 || hyper_channels < 1)
    throw ConfigError("channel counts must be positive");
  if (!(lambda > 0) || !std::isfinite(lambda)) throw ConfigError("lambda must be positive");
  if (!(leaky_slope >= 0 && leaky_slope < 1)) throw ConfigError("leaky slope must lie in [0, 1)");
}

void ParameterSet::add(std::string name, Tensor value) {
  if (std::find(names_.begin(), names_.end(), name) != names_.end())
    throw ConfigError("duplicate parameter " + name);
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
}

std::size_t ParameterSet::index_of(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw ConfigError("unknown parameter " + name);
  return static_cast<std::size_t>(it - names_.begin());
}

const Tensor& ParameterSet::operator[](const std::string& name) const { return tensors_[index_of(name)]; }
Tensor& ParameterSet::operator[](const std::string& name) { return tensors_[index_of(name)]; }

Index ParameterSet::total_size() const {
  Index n = 0;
  for (const Tensor& t : tensors_) n += t.size();
  return n;
}

Model::Model(ModelConfig config, ParameterSet params) : config_(config), params_(std::move(params)) {
  config_.validate();
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (!params_.tensor(i).all_finite()) throw NumericError("non-finite weights in " + params_.name(i));
  const Shape hyper_out = params_["hyper_analysis.1.weight"].shape();
  if (hyper_out[0] != config_.hyper_analysis_channels())
    throw ConfigError("hyper-analysis output channels do not match the bits-back mode");
}

Model Model::initialize(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParameterSet p;
  add_conv(p, rng, "analysis.0", cfg.hidden_channels, cfg.image_channels, false);
  add_conv(p, rng, "analysis.1", cfg.latent_channels, cfg.hidden_channels, false);
  add_conv(p, rng, "hyper_analysis.0", cfg.hyper_hidden_channels, cfg.latent_channels, false);
  add_conv(p, rng, "hyper_analysis.1", cfg.hyper_analysis_channels(), cfg.hyper_hidden_channels, false);
  add_conv(p, rng, "synthesis.0", cfg.latent_channels, cfg.hidden_channels, true);
  add_conv(p, rng, "synthesis.1", cfg.hidden_channels, cfg.image_channels, true);
  add_conv(p, rng, "hyper_synthesis.0", cfg.hyper_channels, cfg.hyper_hidden_channels, true);
  add_conv(p, rng, "hyper_synthesis.1", cfg.hyper_hidden_channels, 2 * cfg.latent_channels, true);
  // Start the predicted prior scale near softplus(0.55) ~ 1.
  p["hyper_synthesis.1.bias"].data().tail(cfg.latent_channels).setConstant(0.55);
  if (cfg.bitsback_mode) p["hyper_analysis.1.bias"].data().tail(cfg.hyper_channels).setConstant(-1.0);

  // Density starts as a logistic CDF of width ~10: per-layer scale 10^(1/4).
  const Index c = cfg.hyper_channels;
  const double layer_scale = std::pow(10.0, 0.25);
  auto filled = [c](double v) { return Tensor::constant(Shape{c}, v); };
  auto uniform = [c, &rng](double lo, double hi) {
    Tensor t(Shape{c});
    for (Index i = 0; i < c; ++i) t[i] = rng.uniform(lo, hi);
    return t;
  };
  for (Index j = 0; j < kDensityUnits; ++j) {
    p.add(unit("density.l1.w", j), filled(std::log(1.0 / layer_scale / kDensityUnits)));
    p.add(unit("density.l1.b", j), uniform(-0.5, 0.5));
    p.add(unit("density.l1.a", j), filled(0.0));
  }
  for (Index j = 0; j < kDensityUnits; ++j) {
    for (Index i = 0; i < kDensityUnits; ++i)
      p.add(unit("density.l2.w", j, i), filled(std::log(1.0 / layer_scale / kDensityUnits)));
    p.add(unit("density.l2.b", j), uniform(-0.5, 0.5));
    p.add(unit("density.l2.a", j), filled(0.0));
  }
  for (Index i = 0; i < kDensityUnits; ++i) p.add(unit("density.l3.w", i), filled(std::log(1.0 / layer_scale)));
  p.add("density.l3.b", uniform(-0.5, 0.5));
  return Model(cfg, std::move(p));
}

Shape Model::latent_shape(Index height, Index width) const {
  return Shape{config_.latent_channels, height / 4, width / 4};
}

Shape Model::hyper_shape(Index height, Index width) const {
  return Shape{config_.hyper_channels, height / ModelConfig::downsampling, width / ModelConfig::downsampling};
}

Inference Model::infer(const Tensor& x) const {
  Tape tape;
  BoundModel m(*this, tape, false);
  InferenceVars v = sgac::infer(m, tape.constant(x));
  Inference out{v.mu_y.value(), v.mu_z.value(), std::nullopt};
  if (v.logvar_z) out.var_z = Tensor(v.logvar_z->shape(), v.logvar_z->value().data().exp());
  return out;
}

Inference Model::hyper_analysis(const Tensor& y) const {
  Tape tape;
  BoundModel m(*this, tape, false);
  HyperPosteriorVars v = sgac::hyper_analysis(m, tape.constant(y));
  Inference out{y, v.mu_z.value(), std::nullopt};
  if (v.logvar_z) out.var_z = Tensor(v.logvar_z->shape(), v.logvar_z->value().data().exp());
  return out;
}

PriorParams Model::hyper_decode(const Tensor& z) const {
  Tape tape;
  BoundModel m(*this, tape, false);
  PriorVars v = sgac::hyper_decode(m, tape.constant(z));
  return {v.loc.value(), v.scale.value()};
}

Tensor Model::decode(const Tensor& y) const {
  Tape tape;
  BoundModel m(*this, tape, false);
  return sgac::decode(m, tape.constant(y)).value();
}

double Model::hyperprior_log2mass(const Tensor& z_hat) const {
  if (!is_integer_valued(z_hat)) throw DomainError("hyperprior_log2mass needs integer hyperlatents");
  Tape tape;
  BoundModel m(*this, tape, false);
  return sgac::hyperprior_log2mass(m, tape.constant(z_hat)).value().data().sum();
}

double Model::hyperprior_log2pdf(const Tensor& z) const {
  Tape tape;
  BoundModel m(*this, tape, false);
  return sgac::hyperprior_log2pdf(m, tape.constant(z)).value().data().sum();
}

Eigen::ArrayXXd Model::hyperprior_cdf(std::span<const double> points) const {
  const Index c = config_.hyper_channels;
  const Index n = static_cast<Index>(points.size());
  Tensor grid(Shape{c, n});
  for (Index ch = 0; ch < c; ++ch)
    for (Index i = 0; i < n; ++i) grid[ch * n + i] = points[static_cast<std::size_t>(i)];
  Tape tape;
  BoundModel m(*this, tape, false);
  const Tensor logits = sgac::hyperprior_logits(m, tape.constant(grid)).value();
  Eigen::ArrayXXd out(c, n);
  for (Index ch = 0; ch < c; ++ch)
    for (Index i = 0; i < n; ++i) {
      const double l = logits[ch * n + i];
      out(ch, i) = l >= 0 ? 1.0 / (1.0 + std::exp(-l)) : std::exp(l) / (1.0 + std::exp(l));
    }
  return out;
}

std::vector<std::uint8_t> Model::serialize() const {
  ByteWriter w;
  w.put_bytes(kCheckpointMagic);
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint32_t>(config_.image_channels));
  w.put(static_cast<std::uint32_t>(config_.hidden_channels));
  w.put(static_cast<std::uint32_t>(config_.latent_channels));
  w.put(static_cast<std::uint32_t>(config_.hyper_hidden_channels));
  w.put(static_cast<std::uint32_t>(config_.hyper_channels));
  w.put(static_cast<std::uint8_t>(config_.bitsback_mode ? 1 : 0));
  w.put_f64(config_.lambda);
  w.put_f64(config_.leaky_slope);
  w.put(static_cast<std::uint32_t>(params_.size()));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor& t = params_.tensor(i);
    w.put_string(params_.name(i));
    w.put(static_cast<std::uint32_t>(t.shape().rank()));
    for (Index d : t.shape().dims()) w.put(static_cast<std::uint32_t>(d));
    for (Index k = 0; k < t.size(); ++k) w.put_f64(t[k]);
  }
  const std::uint64_t h = fnv1a64(w.bytes());
  w.put(h);
  return w.take();
}

Model Model::deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw ProtocolError("checkpoint too short");
  const auto body = bytes.first(bytes.size() - 8);
  ByteReader trailer(bytes.last(8));
  if (trailer.get<std::uint64_t>() != fnv1a64(body)) throw ProtocolError("checkpoint hash mismatch");

  ByteReader r(body);
  const auto magic = r.get_bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kCheckpointMagic.begin())) throw ProtocolError("not a checkpoint");
  if (r.get<std::uint32_t>() != kCheckpointVersion) throw ProtocolError("unsupported checkpoint version");
  ModelConfig cfg;
  cfg.image_channels = r.get<std::uint32_t>();
  cfg.hidden_channels = r.get<std::uint32_t>();
  cfg.latent_channels = r.get<std::uint32_t>();
  cfg.hyper_hidden_channels = r.get<std::uint32_t>();
  cfg.hyper_channels = r.get<std::uint32_t>();
  cfg.bitsback_mode = r.get<std::uint8_t>() != 0;
  cfg.lambda = r.get_f64();
  cfg.leaky_slope = r.get_f64();
  const auto count = r.get<std::uint32_t>();
  ParameterSet params;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    std::vector<Index> dims;
    for (std::uint32_t d = 0; d < rank; ++d) dims.push_back(r.get<std::uint32_t>());
    Tensor t{Shape(std::move(dims))};
    for (Index k = 0; k < t.size(); ++k) t[k] = r.get_f64();
    params.add(std::move(name), std::move(t));
  }
  if (r.remaining() != 0) throw ProtocolError("trailing bytes in checkpoint");
  return Model(cfg, std::move(params));
}

void Model::save(const std::string& path) const { write_file(path, serialize()); }
Model Model::load(const std::string& path) { return deserialize(read_file(path)); }

std::uint64_t Model::hash() const {
  const auto bytes = serialize();
  ByteReader r(std::span<const std::uint8_t>(bytes).last(8));
  return r.get<std::uint64_t>();
}

BoundModel::BoundModel(const Model& model, Tape& tape, bool trainable) : model_(&model), tape_(&tape) {
  const ParameterSet& p = model.params();
  vars_.reserve(p.size());
  for (std::size_t i = 0; i < p.size(); ++i)
    vars_.push_back(trainable ? tape.variable(p.tensor(i)) : tape.constant(p.tensor(i)));
}

Var BoundModel::operator[](const std::string& name) const {
  const ParameterSet& p = model_->params();
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p.name(i) == name) return vars_[i];
  throw ConfigError("unknown parameter " + name);
}

InferenceVars infer(const BoundModel& m, Var x) {
  check_image(m.config(), x.shape());
  Var h = leaky_relu(conv_layer(m, x, "analysis.0"), m.config().leaky_slope);
  Var mu_y = conv_layer(m, h, "analysis.1");
  HyperPosteriorVars hp = hyper_analysis(m, mu_y);
  return {mu_y, hp.mu_z, hp.logvar_z};
}

HyperPosteriorVars hyper_analysis(const BoundModel& m, Var y) {
  const ModelConfig& cfg = m.config();
  check_grid(y.shape(), cfg.latent_channels, 4, "latent");
  if (y.shape()[1] % 4 != 0 || y.shape()[2] % 4 != 0)
    throw ShapeError("latent grid " + y.shape().str() + " not divisible by the hyper downsampling");
  Var h = leaky_relu(conv_layer(m, y, "hyper_analysis.0"), cfg.leaky_slope);
  Var out = conv_layer(m, h, "hyper_analysis.1");
  if (!cfg.bitsback_mode) return {out, std::nullopt};
  return {slice_channels(out, 0, cfg.hyper_channels), slice_channels(out, cfg.hyper_channels, cfg.hyper_channels)};
}

PriorVars hyper_decode(const BoundModel& m, Var z) {
  const ModelConfig& cfg = m.config();
  check_grid(z.shape(), cfg.hyper_channels, 16, "hyperlatent");
  Var h = leaky_relu(deconv_layer(m, z, "hyper_synthesis.0"), cfg.leaky_slope);
  Var out = deconv_layer(m, h, "hyper_synthesis.1");
  Var loc = slice_channels(out, 0, cfg.latent_channels);
  Var scale = add_scalar(softplus(slice_channels(out, cfg.latent_channels, cfg.latent_channels)), kMinScale);
  return {loc, scale};
}

Var decode(const BoundModel& m, Var y) {
  const ModelConfig& cfg = m.config();
  check_grid(y.shape(), cfg.latent_channels, 4, "latent");
  Var h = leaky_relu(deconv_layer(m, y, "synthesis.0"), cfg.leaky_slope);
  return deconv_layer(m, h, "synthesis.1");
}

Var hyperprior_logits(const BoundModel& m, Var z) {
  if (z.shape().rank() < 1 || z.shape()[0] != m.config().hyper_channels)
    throw ShapeError("hyperprior input " + z.shape().str() + " does not match hyperlatent channels");
  return density_network(m, z, false).logits;
}

Var hyperprior_log2mass(const BoundModel& m, Var z) {
  Var upper = hyperprior_logits(m, add_scalar(z, 0.5));
  Var lower = hyperprior_logits(m, add_scalar(z, -0.5));
  // Evaluate in whichever tail keeps the two sigmoids away from 1.
  Tensor flip(upper.shape());
  flip.data() = ((upper.value().data() + lower.value().data()) > 0).select(-1.0, Eigen::ArrayXd::Ones(flip.size()));
  Var s = m.tape().constant(std::move(flip));
  Var mass = abs(sigmoid(mul(upper, s)) - sigmoid(mul(lower, s)));
  return log2_floored(mass);
}

Var hyperprior_log2pdf(const BoundModel& m, Var z) {
  if (z.shape().rank() < 1 || z.shape()[0] != m.config().hyper_channels)
    throw ShapeError("hyperprior input " + z.shape().str() + " does not match hyperlatent channels");
  DensityPass pass = density_network(m, z, true);
  // log c'(z) = log sigmoid(l) + log sigmoid(-l) + log(dl/dz).
  Var log_density = log(*pass.slope) - softplus(pass.logits) - softplus(neg(pass.logits));
  return scale(log_density, 1.0 / std::numbers::ln2);
}

Var gaussian_log2mass(Var y, Var loc, Var scale) {
  if (y.shape() != loc.shape() || y.shape() != scale.shape())
    throw ShapeError("gaussian_log2mass: latent " + y.shape().str() + " vs prior " + loc.shape().str());
  // The mass depends on |y - loc| only; using the lower tail keeps both CDF values small.
  Var d = abs(y - loc);
  Var mass = normal_cdf((0.5 - d) / scale) - normal_cdf((-0.5 - d) / scale);
  return log2_floored(mass);
}

Var squared_error(Var x, Var reconstruction) {
  if (x.shape() != reconstruction.shape())
    throw ShapeError("distortion: " + x.shape().str() + " vs " + reconstruction.shape().str());
  return sum(square(x - reconstruction));
}

double likelihood_distortion(const Tensor& x, const Tensor& reconstruction) {
  if (x.shape() != reconstruction.shape())
    throw ShapeError("distortion: " + x.shape().str() + " vs " + reconstruction.shape().str());
  return (x.data() - reconstruction.data()).square().sum();
}

}  // namespace sgac
