#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sgac/tensor.hpp"

namespace sgac {

/// Bumped whenever the generator changes what a given seed produces.
inline constexpr int kCorpusVersion = 1;

/// Gaussian-random-field textures mixing several length scales, values in [0,1].
struct CorpusOptions {
  Index count = 64;
  Index size = 32;
  Index channels = 1;
  std::uint64_t seed = 1;
};

std::vector<Tensor> synthetic_corpus(const CorpusOptions& opts);

/// 8-bit grayscale or RGB PNG as [C,H,W] in [0,1]. Grayscale+alpha and RGBA drop alpha.
Tensor read_png(const std::string& path);
/// Clamps to [0,1] and quantizes to 8 bits.
void write_png(const std::string& path, const Tensor& image);

/// Non-overlapping size x size tiles from each PNG, raster order; partial tiles are dropped.
std::vector<Tensor> png_patches(const std::vector<std::string>& paths, Index size, Index channels);

/// Zero-pads [C,H,W] on the bottom/right to multiples of `multiple`.
Tensor pad_to_multiple(const Tensor& image, Index multiple);
Tensor crop(const Tensor& image, Index height, Index width);

}  // namespace sgac
