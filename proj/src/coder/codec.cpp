#include "sgac/codec.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "sgac/adam.hpp"
#include "sgac/bytes.hpp"
#include "sgac/data.hpp"
#include "sgac/errors.hpp"
#include "sgac/rounding.hpp"

namespace sgac {
namespace {

constexpr std::array<std::uint8_t, 4> kStreamMagic{'S', 'G', 'A', 'C'};
// Bits-back streams start the coder from 2^32 + (four side-information bytes).
constexpr std::uint64_t kSeededStateBase = 1ull << 32;

struct Geometry {
  Index height;
  Index width;
};

Geometry padded_geometry(Index height, Index width) {
  const Index m = ModelConfig::downsampling;
  return {(height + m - 1) / m * m, (width + m - 1) / m * m};
}

void check_image(const Model& model, const Tensor& image) {
  const Shape& s = image.shape();
  if (s.rank() != 3 || s[0] != model.config().image_channels)
    throw ShapeError("image " + s.str() + " does not match the model's channel count");
  if (s[1] < 1 || s[2] < 1 || s[1] > 65535 || s[2] > 65535) throw ShapeError("image extent out of range");
}

void check_stream(const Model& model, const Bitstream& stream, StreamMode mode) {
  if (stream.model_hash != model.hash()) throw ProtocolError("bitstream was produced with a different checkpoint");
  if (stream.mode != mode) throw ProtocolError("unexpected bitstream mode");
}

Tensor clamp_to_window(const Tensor& t) {
  return Tensor(t.shape(), t.data().max(double(kWindowMin)).min(double(kWindowMax)));
}

// Bits-back cannot clamp latents after sampling the hyperlatents, so it codes over the whole window.
std::vector<QuantizedModel> conditional_tables(const Model& model, const Tensor& z_hat, bool full_window = false) {
  const PriorParams prior = model.hyper_decode(z_hat);
  std::vector<QuantizedModel> tables;
  tables.reserve(static_cast<std::size_t>(prior.loc.size()));
  for (Index i = 0; i < prior.loc.size(); ++i) tables.push_back(QuantizedModel::gaussian(prior.loc[i], prior.scale[i], full_window));
  return tables;
}

std::vector<QuantizedModel> posterior_tables(const Posterior& q) {
  std::vector<QuantizedModel> tables;
  tables.reserve(static_cast<std::size_t>(q.mu_z.size()));
  for (Index i = 0; i < q.mu_z.size(); ++i) tables.push_back(QuantizedModel::gaussian(q.mu_z[i], std::sqrt(q.var_z[i])));
  return tables;
}

// Hyperlatent element i belongs to channel i / (cells per channel).
const QuantizedModel& hyper_table(const std::vector<QuantizedModel>& tables, const Tensor& z, Index i) {
  return tables[static_cast<std::size_t>(i / (z.size() / static_cast<Index>(tables.size())))];
}

int as_symbol(double v) { return static_cast<int>(v); }

// Raster order on decode means reverse raster order on encode.
void push_latents(RansCoder& coder, const Tensor& y, const std::vector<QuantizedModel>& y_tables, const Tensor& z,
                  const std::vector<QuantizedModel>& z_tables) {
  for (Index i = y.size(); i-- > 0;) coder.encode(as_symbol(y[i]), y_tables[static_cast<std::size_t>(i)]);
  for (Index i = z.size(); i-- > 0;) coder.encode(as_symbol(z[i]), hyper_table(z_tables, z, i));
}

double table_bits(const Tensor& y, const std::vector<QuantizedModel>& y_tables, const Tensor& z,
                  const std::vector<QuantizedModel>& z_tables) {
  double bits = 0;
  for (Index i = 0; i < y.size(); ++i) bits -= y_tables[static_cast<std::size_t>(i)].log2_probability(as_symbol(y[i]));
  for (Index i = 0; i < z.size(); ++i) bits -= hyper_table(z_tables, z, i).log2_probability(as_symbol(z[i]));
  return bits;
}

Tensor decode_hyperlatents(RansCoder& coder, const Model& model, Shape shape) {
  const auto tables = hyperprior_tables(model);
  Tensor z(std::move(shape));
  for (Index i = 0; i < z.size(); ++i) z[i] = coder.decode(hyper_table(tables, z, i));
  return z;
}

Tensor decode_latents(RansCoder& coder, const std::vector<QuantizedModel>& tables, Shape shape) {
  Tensor y(std::move(shape));
  for (Index i = 0; i < y.size(); ++i) y[i] = coder.decode(tables[static_cast<std::size_t>(i)]);
  return y;
}

Tensor reconstruct(const Model& model, const Tensor& y_hat, Index height, Index width) {
  return crop(model.decode(y_hat), height, width);
}

}  // namespace

std::vector<std::uint8_t> Bitstream::serialize() const {
  ByteWriter w;
  w.put_bytes(kStreamMagic);
  w.put(kBitstreamVersion);
  w.put(static_cast<std::uint8_t>(mode));
  w.put(width);
  w.put(height);
  w.put(model_hash);
  w.put(lambda_index);
  w.put(static_cast<std::uint32_t>(payload.size()));
  w.put_bytes(payload);
  return w.take();
}

Bitstream Bitstream::parse(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto magic = r.get_bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kStreamMagic.begin())) throw ProtocolError("not an SGAC bitstream");
  if (r.get<std::uint8_t>() != kBitstreamVersion) throw ProtocolError("unsupported bitstream version");
  Bitstream s;
  const auto mode = r.get<std::uint8_t>();
  if (mode > 1) throw ProtocolError("unknown bitstream mode");
  s.mode = static_cast<StreamMode>(mode);
  s.width = r.get<std::uint16_t>();
  s.height = r.get<std::uint16_t>();
  if (s.width == 0 || s.height == 0) throw ProtocolError("empty image in bitstream");
  s.model_hash = r.get<std::uint64_t>();
  s.lambda_index = r.get<std::uint8_t>();
  const auto length = r.get<std::uint32_t>();
  if (length != r.remaining()) throw ProtocolError("payload length does not match the stream size");
  const auto payload = r.get_bytes(length);
  s.payload.assign(payload.begin(), payload.end());
  return s;
}

std::uint8_t lambda_index(double lambda) {
  for (std::size_t i = 0; i < std::size(kLambdaPresets); ++i)
    if (kLambdaPresets[i] == lambda) return static_cast<std::uint8_t>(i);
  return kCustomLambda;
}

std::vector<QuantizedModel> hyperprior_tables(const Model& model) {
  std::vector<double> edges;
  for (int k = kWindowMin; k <= kWindowMax + 1; ++k) edges.push_back(k - 0.5);
  const Eigen::ArrayXXd cdf = model.hyperprior_cdf(edges);
  std::vector<QuantizedModel> tables;
  const auto n = static_cast<std::size_t>(kWindowMax - kWindowMin + 1);
  for (Index c = 0; c < cdf.rows(); ++c) {
    std::vector<double> masses(n);
    for (std::size_t k = 0; k < n; ++k) masses[k] = cdf(c, static_cast<Index>(k) + 1) - cdf(c, static_cast<Index>(k));
    // Fold the tails beyond the window into the edge symbols.
    masses.front() += cdf(c, 0);
    masses.back() += 1.0 - cdf(c, cdf.cols() - 1);
    for (double& m : masses) m = std::max(m, 0.0);
    tables.push_back(QuantizedModel::from_masses(kWindowMin, masses));
  }
  return tables;
}

StandardEncoding encode_standard(const Model& model, const Tensor& image, const std::optional<InferenceConfig>& method) {
  check_image(model, image);
  const Index height = image.shape()[1], width = image.shape()[2];
  const Tensor padded = pad_to_multiple(image, ModelConfig::downsampling);

  StandardEncoding out;
  Tensor y, z;
  if (method) {
    out.inference = refine_image(model, padded, *method);
    y = out.inference->rounded[0];
    z = out.inference->rounded[1];
  } else {
    const Inference inf = model.infer(padded);
    y = round(inf.mu_y);
    z = round(inf.mu_z);
  }
  z = clamp_to_window(z);
  const auto z_tables = hyperprior_tables(model);
  const auto y_tables = conditional_tables(model, z);
  for (Index i = 0; i < y.size(); ++i) y[i] = y_tables[static_cast<std::size_t>(i)].clamp(as_symbol(y[i]));

  RansCoder coder;
  push_latents(coder, y, y_tables, z, z_tables);

  out.stream.mode = StreamMode::kStandard;
  out.stream.width = static_cast<std::uint16_t>(width);
  out.stream.height = static_cast<std::uint16_t>(height);
  out.stream.model_hash = model.hash();
  out.stream.lambda_index = lambda_index(model.config().lambda);
  out.stream.payload = coder.bytes();
  out.estimate = true_rd(model, padded, y, z);
  out.reconstruction = reconstruct(model, y, height, width);
  out.y_hat = std::move(y);
  out.z_hat = std::move(z);
  return out;
}

Tensor decode_standard(const Model& model, const Bitstream& stream) {
  check_stream(model, stream, StreamMode::kStandard);
  const Geometry g = padded_geometry(stream.height, stream.width);
  RansCoder coder = RansCoder::from_bytes(stream.payload);
  const Tensor z = decode_hyperlatents(coder, model, model.hyper_shape(g.height, g.width));
  const Tensor y = decode_latents(coder, conditional_tables(model, z), model.latent_shape(g.height, g.width));
  if (!coder.is_initial()) throw ProtocolError("corrupt payload: coder did not return to its initial state");
  return reconstruct(model, y, stream.height, stream.width);
}

Posterior reproducible_bbvi(const Model& model, const Tensor& y_hat, const BbviOptions& opts) {
  if (!model.config().bitsback_mode) throw ConfigError("bits-back inference needs a bits-back checkpoint");
  if (!is_integer_valued(y_hat)) throw DomainError("reproducible_bbvi needs integer latents");
  if (opts.steps < 0 || !(opts.learning_rate > 0)) throw ConfigError("invalid BBVI options");
  const Inference init = model.hyper_analysis(y_hat);
  Tensor mu = init.mu_z;
  Tensor logvar(init.var_z->shape(), init.var_z->data().log());
  AdamState s_mu(mu.size(), {.learning_rate = opts.learning_rate});
  AdamState s_lv(logvar.size(), {.learning_rate = opts.learning_rate});
  Rng rng(opts.seed);
  for (int step = 0; step < opts.steps; ++step) {
    Tape tape;
    BoundModel m(model, tape, false);
    Var vmu = tape.variable(mu), vlv = tape.variable(logvar);
    tape.backward(bbvi_objective(m, tape.constant(y_hat), vmu, vlv, rng));
    adam_step(mu, tape.grad(vmu), s_mu);
    adam_step(logvar, tape.grad(vlv), s_lv);
  }
  Posterior q{std::move(mu), Tensor(logvar.shape(), logvar.data().exp())};
  if (!q.mu_z.all_finite() || !q.var_z.all_finite() || (q.var_z.data() <= 0).any())
    throw NumericError("BBVI produced invalid posterior parameters");
  return q;
}

double bbvi_loss(const Model& model, const Tensor& y_hat, const Posterior& q, int samples, std::uint64_t seed) {
  Rng rng(seed);
  double total = 0;
  const Tensor logvar(q.var_z.shape(), q.var_z.data().log());
  for (int s = 0; s < samples; ++s) {
    Tape tape;
    BoundModel m(model, tape, false);
    total += bbvi_objective(m, tape.constant(y_hat), tape.constant(q.mu_z), tape.constant(logvar), rng).item();
  }
  return total / samples;
}

BitsBackPlan plan_bitsback(const Model& model, const Tensor& image, const BitsBackOptions& opts) {
  if (!model.config().bitsback_mode) throw ConfigError("bits-back coding needs a bits-back checkpoint");
  check_image(model, image);
  if (opts.joint_steps < 0 || opts.bbvi_steps < 0 || opts.bbvi_steps > 65535 || !(opts.joint_learning_rate > 0))
    throw ConfigError("invalid bits-back options");
  opts.schedule.validate();

  BitsBackPlan plan;
  plan.height = static_cast<std::uint16_t>(image.shape()[1]);
  plan.width = static_cast<std::uint16_t>(image.shape()[2]);
  plan.padded = pad_to_multiple(image, ModelConfig::downsampling);
  const Inference init = model.infer(plan.padded);

  if (!opts.optimize) {
    plan.y_hat = clamp_to_window(round(init.mu_y));
    const Inference q = model.hyper_analysis(plan.y_hat);
    plan.posterior = {q.mu_z, *q.var_z};
    plan.bbvi_steps = 0;
    return plan;
  }

  // Joint refinement: SGA on mu_y alternating with BBVI on (mu_z, log var_z).
  Tensor mu_y = init.mu_y, mu_z = init.mu_z;
  Tensor logvar(init.var_z->shape(), init.var_z->data().log());
  const AdamOptions adam{.learning_rate = opts.joint_learning_rate};
  AdamState s_y(mu_y.size(), adam), s_z(mu_z.size(), adam), s_v(logvar.size(), adam);
  Rng rng(opts.seed);
  for (int step = 0; step < opts.joint_steps; ++step) {
    const double tau = opts.schedule(step);
    {
      Tape tape;
      BoundModel m(model, tape, false);
      Var y = tape.variable(mu_y);
      tape.backward(nelbo_bitsback(m, tape.constant(plan.padded), y, tape.constant(mu_z), tape.constant(logvar), rng,
                                   Relaxation::kGumbel, tau));
      adam_step(mu_y, tape.grad(y), s_y);
    }
    {
      Tape tape;
      BoundModel m(model, tape, false);
      Var z = tape.variable(mu_z), v = tape.variable(logvar);
      // The distortion does not depend on z, so the rate part alone carries the gradient.
      tape.backward(bbvi_objective(m, gumbel_relaxed(tape.constant(mu_y), tau, rng), z, v, rng));
      adam_step(mu_z, tape.grad(z), s_z);
      adam_step(logvar, tape.grad(v), s_v);
    }
  }
  plan.y_hat = clamp_to_window(round(mu_y));
  plan.bbvi_steps = opts.bbvi_steps;
  plan.posterior = reproducible_bbvi(model, plan.y_hat, {.steps = opts.bbvi_steps});
  return plan;
}

BitsBackEncoding encode_bitsback_plan(const Model& model, const BitsBackPlan& plan,
                                      std::span<const std::uint8_t> side_info) {
  if (side_info.size() > 0xffffffffu) throw ConfigError("side information too long");
  const auto q_tables = posterior_tables(plan.posterior);
  Tensor z(plan.posterior.mu_z.shape());

  RansCoder coder;
  if (side_info.empty()) {
    for (Index i = 0; i < z.size(); ++i) z[i] = q_tables[static_cast<std::size_t>(i)].mode();
  } else {
    coder = RansCoder(RansCoder::kLower, std::vector<std::uint8_t>(side_info.begin(), side_info.end()));
    coder.allow_underflow(true);
    std::uint64_t seeded = 0;
    for (int b = 0; b < 4; ++b) seeded = (seeded << 8) | coder.pop_byte();
    coder.set_state(kSeededStateBase + seeded);
    for (Index i = 0; i < z.size(); ++i) z[i] = coder.decode(q_tables[static_cast<std::size_t>(i)]);
    coder.allow_underflow(false);
  }

  const auto z_tables = hyperprior_tables(model);
  const auto y_tables = conditional_tables(model, z, true);
  for (Index i = 0; i < plan.y_hat.size(); ++i)
    if (!y_tables[static_cast<std::size_t>(i)].contains(as_symbol(plan.y_hat[i])))
      throw ProtocolError("latent outside the coding support for the sampled hyperlatents");
  push_latents(coder, plan.y_hat, y_tables, z, z_tables);

  BitsBackEncoding out;
  ByteWriter payload;
  payload.put(static_cast<std::uint32_t>(side_info.size()));
  payload.put(static_cast<std::uint16_t>(plan.bbvi_steps));
  const auto coded = coder.bytes();
  payload.put_bytes(coded);

  out.stream.mode = StreamMode::kBitsBack;
  out.stream.width = plan.width;
  out.stream.height = plan.height;
  out.stream.model_hash = model.hash();
  out.stream.lambda_index = lambda_index(model.config().lambda);
  out.stream.payload = payload.take();
  out.padding_bytes = coder.underflow_bytes();
  out.net_rate_bits = 8.0 * static_cast<double>(coded.size()) - 8.0 * static_cast<double>(side_info.size());
  double q_bits = 0;
  if (!side_info.empty())
    for (Index i = 0; i < z.size(); ++i) q_bits -= q_tables[static_cast<std::size_t>(i)].log2_probability(as_symbol(z[i]));
  out.ledger_bits = table_bits(plan.y_hat, y_tables, z, z_tables) - q_bits;
  out.estimate = true_rd(model, plan.padded, plan.y_hat, z);
  out.reconstruction = reconstruct(model, plan.y_hat, plan.height, plan.width);
  out.y_hat = plan.y_hat;
  out.z_hat = std::move(z);
  out.posterior = plan.posterior;
  return out;
}

BitsBackEncoding bitsback_encode(const Model& model, const Tensor& image, std::span<const std::uint8_t> side_info,
                                 const BitsBackOptions& opts) {
  return encode_bitsback_plan(model, plan_bitsback(model, image, opts), side_info);
}

BitsBackDecoding bitsback_decode(const Model& model, const Bitstream& stream) {
  if (!model.config().bitsback_mode) throw ConfigError("bits-back decoding needs a bits-back checkpoint");
  check_stream(model, stream, StreamMode::kBitsBack);
  ByteReader r(stream.payload);
  const auto side_length = r.get<std::uint32_t>();
  const auto bbvi_steps = r.get<std::uint16_t>();
  RansCoder coder = RansCoder::from_bytes(r.get_bytes(r.remaining()));

  const Geometry g = padded_geometry(stream.height, stream.width);
  BitsBackDecoding out;
  out.z_hat = decode_hyperlatents(coder, model, model.hyper_shape(g.height, g.width));
  out.y_hat = decode_latents(coder, conditional_tables(model, out.z_hat, true), model.latent_shape(g.height, g.width));
  out.reconstruction = reconstruct(model, out.y_hat, stream.height, stream.width);
  if (bbvi_steps > 0) {
    out.posterior = reproducible_bbvi(model, out.y_hat, {.steps = bbvi_steps});
  } else {
    const Inference q = model.hyper_analysis(out.y_hat);
    out.posterior = {q.mu_z, *q.var_z};
  }

  if (side_length == 0) {
    if (!coder.is_initial()) throw ProtocolError("corrupt payload: coder did not return to its initial state");
    return out;
  }
  // Give the side information back: re-encode z_hat under Q in reverse decode order.
  const auto q_tables = posterior_tables(out.posterior);
  for (Index i = out.z_hat.size(); i-- > 0;) {
    const int k = as_symbol(out.z_hat[i]);
    if (!q_tables[static_cast<std::size_t>(i)].contains(k))
      throw ProtocolError("replay diverged: hyperlatent outside the replayed posterior support");
    coder.encode(k, q_tables[static_cast<std::size_t>(i)]);
  }
  const std::uint64_t state = coder.state();
  if (state < kSeededStateBase || state >= 2 * kSeededStateBase)
    throw ProtocolError("replay diverged: side-information state out of range");
  const std::uint64_t seeded = state - kSeededStateBase;
  for (int b = 0; b < 4; ++b) coder.push_byte(static_cast<std::uint8_t>(seeded >> (8 * b)));

  const auto& stack = coder.stack();
  if (stack.size() < side_length) throw ProtocolError("replay diverged: side information shorter than recorded");
  const std::size_t pad = stack.size() - side_length;
  if (std::any_of(stack.begin(), stack.begin() + static_cast<std::ptrdiff_t>(pad), [](std::uint8_t b) { return b != 0; }))
    throw ProtocolError("replay diverged: nonzero padding below the side information");
  out.side_info.assign(stack.begin() + static_cast<std::ptrdiff_t>(pad), stack.end());
  return out;
}

}  // namespace sgac
