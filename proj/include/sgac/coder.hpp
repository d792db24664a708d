#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace sgac {

/// Frequencies of every codeable symbol sum to 2^kPrecisionBits.
inline constexpr int kPrecisionBits = 16;
inline constexpr std::uint32_t kTotalFrequency = 1u << kPrecisionBits;
/// Global symbol window; every support lies inside it.
inline constexpr int kWindowMin = -255;
inline constexpr int kWindowMax = 256;
/// Gaussian supports extend this many scales either side of the rounded location.
inline constexpr double kSupportScales = 16.0;

/// Integer-frequency table over a contiguous support [k_min, k_max].
class QuantizedModel {
 public:
  /// Discretized Gaussian: mass(k) = Phi((k+1/2-loc)/scale) - Phi((k-1/2-loc)/scale),
  /// tails folded into the edge symbols. `full_window` widens the support to the whole window.
  static QuantizedModel gaussian(double loc, double scale, bool full_window = false);
  /// Arbitrary nonnegative masses for k_min, k_min+1, ...; renormalized.
  static QuantizedModel from_masses(int k_min, std::span<const double> masses);

  int k_min() const { return k_min_; }
  int k_max() const { return k_min_ + static_cast<int>(freq_.size()) - 1; }
  int size() const { return static_cast<int>(freq_.size()); }
  bool contains(int k) const { return k >= k_min() && k <= k_max(); }
  int clamp(int k) const;

  std::uint32_t frequency(int k) const;
  /// Cumulative frequency below k.
  std::uint32_t start(int k) const;
  /// Symbol whose [start, start+freq) interval contains `slot`.
  int symbol_at(std::uint32_t slot) const;
  /// Most probable symbol (lowest on ties).
  int mode() const;
  /// log2(freq(k) / 2^16).
  double log2_probability(int k) const;

 private:
  int k_min_ = 0;
  std::vector<std::uint32_t> freq_;
  std::vector<std::uint32_t> cdf_;  // size()+1 entries, cdf_.back() == kTotalFrequency
};

/// rANS stack coder: 64-bit state in [2^31, 2^39), byte-wise renormalization.
/// The final state is written as five little-endian bytes after the byte stack.
class RansCoder {
 public:
  static constexpr std::uint64_t kLower = 1ull << 31;
  static constexpr std::uint64_t kUpper = kLower << 8;

  RansCoder() = default;
  RansCoder(std::uint64_t state, std::vector<std::uint8_t> stack);
  /// Inverse of bytes(); throws ProtocolError on malformed input.
  static RansCoder from_bytes(std::span<const std::uint8_t> bytes);

  void encode(int symbol, const QuantizedModel& model);
  int decode(const QuantizedModel& model);

  /// When set, popping from an empty stack yields zero bytes (counted) instead of an error.
  void allow_underflow(bool on) { allow_underflow_ = on; }
  std::size_t underflow_bytes() const { return underflow_; }

  void push_byte(std::uint8_t b) { stack_.push_back(b); }
  std::uint8_t pop_byte();

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t state);
  const std::vector<std::uint8_t>& stack() const { return stack_; }
  /// True after decoding everything a fresh coder encoded.
  bool is_initial() const { return state_ == kLower && stack_.empty(); }
  /// Stack followed by the five state bytes.
  std::vector<std::uint8_t> bytes() const;
  /// Information currently held, in bits: 8 * stack size + log2(state / 2^31).
  double content_bits() const;

 private:
  std::uint64_t state_ = kLower;
  std::vector<std::uint8_t> stack_;
  bool allow_underflow_ = false;
  std::size_t underflow_ = 0;
};

/// Encodes symbols so that rans_decode returns them in the same order. `models` has
/// one entry shared by every symbol or one entry per symbol.
std::vector<std::uint8_t> rans_encode(std::span<const int> symbols, std::span<const QuantizedModel> models);
/// Decodes `count` symbols and requires the stream to be consumed exactly.
std::vector<int> rans_decode(std::span<const std::uint8_t> bytes, std::span<const QuantizedModel> models,
                             std::size_t count);

}  // namespace sgac
