#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "sgac/coder.hpp"
#include "sgac/errors.hpp"

namespace sgac {
namespace {

double lower_tail(double v) { return 0.5 * std::erfc(-v / std::numbers::sqrt2); }
double upper_tail(double v) { return 0.5 * std::erfc(v / std::numbers::sqrt2); }

}  // namespace

QuantizedModel QuantizedModel::gaussian(double loc, double scale, bool full_window) {
  if (!(scale > 0) || !std::isfinite(scale) || !std::isfinite(loc)) throw DomainError("gaussian model needs finite loc and positive scale");
  const int center = static_cast<int>(std::clamp(std::round(loc), double(kWindowMin), double(kWindowMax)));
  const double reach = std::min(std::ceil(kSupportScales * scale), double(kWindowMax - kWindowMin));
  const int lo = full_window ? kWindowMin : std::max(kWindowMin, center - static_cast<int>(reach));
  const int hi = full_window ? kWindowMax : std::min(kWindowMax, center + static_cast<int>(reach));
  std::vector<double> masses(static_cast<std::size_t>(hi - lo + 1));
  for (int k = lo; k <= hi; ++k) {
    // Integrate on whichever side of loc keeps the tail probabilities small.
    const double a = (k - 0.5 - loc) / scale, b = (k + 0.5 - loc) / scale;
    double m;
    if (k == lo && k == hi) m = 1.0;
    else if (k == lo) m = b <= 0 ? lower_tail(b) : 1.0 - upper_tail(b);
    else if (k == hi) m = a >= 0 ? upper_tail(a) : 1.0 - lower_tail(a);
    else m = a >= 0 ? upper_tail(a) - upper_tail(b) : lower_tail(b) - lower_tail(a);
    masses[static_cast<std::size_t>(k - lo)] = std::max(m, 0.0);
  }
  return from_masses(lo, masses);
}

QuantizedModel QuantizedModel::from_masses(int k_min, std::span<const double> masses) {
  const auto n = masses.size();
  if (n == 0) throw DomainError("empty support");
  if (n > kTotalFrequency / 2) throw DomainError("support too large for the frequency precision");
  double total = 0;
  for (double m : masses) {
    if (!(m >= 0) || !std::isfinite(m)) throw DomainError("masses must be finite and nonnegative");
    total += m;
  }
  if (!(total > 0)) throw DomainError("masses sum to zero");

  // One guaranteed count per symbol; the rest proportional, largest remainders first.
  QuantizedModel q;
  q.k_min_ = k_min;
  q.freq_.assign(n, 1);
  const double spare = static_cast<double>(kTotalFrequency - n);
  std::vector<double> remainder(n);
  std::uint64_t assigned = n;
  for (std::size_t i = 0; i < n; ++i) {
    const double share = masses[i] / total * spare;
    const double whole = std::floor(share);
    q.freq_[i] += static_cast<std::uint32_t>(whole);
    remainder[i] = share - whole;
    assigned += static_cast<std::uint64_t>(whole);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < kTotalFrequency; ++i, ++assigned) ++q.freq_[order[i % n]];
  // Rounding in the shares can overshoot by a count or two; take it from the largest bins.
  while (assigned > kTotalFrequency) {
    auto it = std::max_element(q.freq_.begin(), q.freq_.end());
    --*it;
    --assigned;
  }

  q.cdf_.resize(n + 1);
  q.cdf_[0] = 0;
  for (std::size_t i = 0; i < n; ++i) q.cdf_[i + 1] = q.cdf_[i] + q.freq_[i];
  return q;
}

int QuantizedModel::clamp(int k) const { return std::clamp(k, k_min(), k_max()); }

std::uint32_t QuantizedModel::frequency(int k) const {
  if (!contains(k)) throw DomainError("symbol " + std::to_string(k) + " outside support");
  return freq_[static_cast<std::size_t>(k - k_min_)];
}

std::uint32_t QuantizedModel::start(int k) const {
  if (!contains(k)) throw DomainError("symbol " + std::to_string(k) + " outside support");
  return cdf_[static_cast<std::size_t>(k - k_min_)];
}

int QuantizedModel::symbol_at(std::uint32_t slot) const {
  const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), slot);
  return k_min_ + static_cast<int>(it - cdf_.begin()) - 1;
}

int QuantizedModel::mode() const {
  return k_min_ + static_cast<int>(std::max_element(freq_.begin(), freq_.end()) - freq_.begin());
}

double QuantizedModel::log2_probability(int k) const {
  return std::log2(static_cast<double>(frequency(k))) - kPrecisionBits;
}

}  // namespace sgac
