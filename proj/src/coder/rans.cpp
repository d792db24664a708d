#include <cmath>

#include "sgac/coder.hpp"
#include "sgac/errors.hpp"

namespace sgac {

RansCoder::RansCoder(std::uint64_t state, std::vector<std::uint8_t> stack) : stack_(std::move(stack)) {
  set_state(state);
}

void RansCoder::set_state(std::uint64_t state) {
  if (state < kLower || state >= kUpper) throw ProtocolError("rANS state out of range");
  state_ = state;
}

RansCoder RansCoder::from_bytes(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 5) throw ProtocolError("rANS stream shorter than its final state");
  std::uint64_t state = 0;
  const auto tail = bytes.last(5);
  for (int i = 4; i >= 0; --i) state = (state << 8) | tail[static_cast<std::size_t>(i)];
  const auto body = bytes.first(bytes.size() - 5);
  return RansCoder(state, std::vector<std::uint8_t>(body.begin(), body.end()));
}

std::vector<std::uint8_t> RansCoder::bytes() const {
  std::vector<std::uint8_t> out = stack_;
  for (int i = 0; i < 5; ++i) out.push_back(static_cast<std::uint8_t>(state_ >> (8 * i)));
  return out;
}

double RansCoder::content_bits() const {
  return 8.0 * static_cast<double>(stack_.size()) + std::log2(static_cast<double>(state_) / kLower);
}

std::uint8_t RansCoder::pop_byte() {
  if (stack_.empty()) {
    if (!allow_underflow_) throw ProtocolError("rANS stream truncated");
    ++underflow_;
    return 0;
  }
  const std::uint8_t b = stack_.back();
  stack_.pop_back();
  return b;
}

void RansCoder::encode(int symbol, const QuantizedModel& model) {
  const std::uint64_t freq = model.frequency(symbol);
  const std::uint64_t start = model.start(symbol);
  const std::uint64_t limit = ((kLower >> kPrecisionBits) << 8) * freq;
  while (state_ >= limit) {
    stack_.push_back(static_cast<std::uint8_t>(state_ & 0xff));
    state_ >>= 8;
  }
  state_ = ((state_ / freq) << kPrecisionBits) + state_ % freq + start;
}

int RansCoder::decode(const QuantizedModel& model) {
  const auto slot = static_cast<std::uint32_t>(state_ & (kTotalFrequency - 1));
  const int symbol = model.symbol_at(slot);
  state_ = model.frequency(symbol) * (state_ >> kPrecisionBits) + slot - model.start(symbol);
  while (state_ < kLower) state_ = (state_ << 8) | pop_byte();
  return symbol;
}

namespace {

const QuantizedModel& model_for(std::span<const QuantizedModel> models, std::size_t i, std::size_t count) {
  if (models.size() == 1) return models[0];
  if (models.size() != count) throw ShapeError("need one model per symbol or a single shared model");
  return models[i];
}

}  // namespace

std::vector<std::uint8_t> rans_encode(std::span<const int> symbols, std::span<const QuantizedModel> models) {
  if (models.empty() && !symbols.empty()) throw ShapeError("no models given");
  RansCoder coder;
  for (std::size_t i = symbols.size(); i-- > 0;) coder.encode(symbols[i], model_for(models, i, symbols.size()));
  return coder.bytes();
}

std::vector<int> rans_decode(std::span<const std::uint8_t> bytes, std::span<const QuantizedModel> models,
                             std::size_t count) {
  if (models.empty() && count > 0) throw ShapeError("no models given");
  RansCoder coder = RansCoder::from_bytes(bytes);
  std::vector<int> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = coder.decode(model_for(models, i, count));
  if (!coder.is_initial()) throw ProtocolError("rANS stream has trailing data");
  return out;
}

}  // namespace sgac
