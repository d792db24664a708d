#include "sgac/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>

#include "sgac/errors.hpp"
#include "sgac/rng.hpp"

namespace sgac {
namespace {

constexpr Index kCellSizes[] = {2, 4, 8, 16};

// Bilinear upsampling of white noise on a coarse grid of `cell`-pixel spacing.
Eigen::ArrayXXd smooth_noise(Rng& rng, Index size, Index cell) {
  const Index n = size / cell + 2;
  Eigen::ArrayXXd grid(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) grid(i, j) = rng.normal();
  const double ox = rng.uniform(0.0, 1.0), oy = rng.uniform(0.0, 1.0);
  Eigen::ArrayXXd out(size, size);
  for (Index r = 0; r < size; ++r)
    for (Index c = 0; c < size; ++c) {
      const double u = static_cast<double>(r) / cell + oy, v = static_cast<double>(c) / cell + ox;
      const Index i = static_cast<Index>(u), j = static_cast<Index>(v);
      const double a = u - i, b = v - j;
      out(r, c) = (1 - a) * (1 - b) * grid(i, j) + (1 - a) * b * grid(i, j + 1) + a * (1 - b) * grid(i + 1, j) +
                  a * b * grid(i + 1, j + 1);
    }
  return out;
}

}  // namespace

std::vector<Tensor> synthetic_corpus(const CorpusOptions& opts) {
  if (opts.count < 0 || opts.size < 1 || (opts.channels != 1 && opts.channels != 3))
    throw ConfigError("invalid corpus options");
  Rng rng(opts.seed ^ (0x9e3779b97f4a7c15ULL * kCorpusVersion));
  std::vector<Tensor> corpus;
  corpus.reserve(static_cast<std::size_t>(opts.count));
  for (Index k = 0; k < opts.count; ++k) {
    // Random per-image mixing weights make some patches smooth and others busy.
    double weights[std::size(kCellSizes)];
    double norm = 0;
    for (double& w : weights) {
      w = rng.uniform(0.05, 1.0);
      norm += w * w;
    }
    const double mean = rng.uniform(0.3, 0.7);
    const double contrast = rng.uniform(0.08, 0.2);
    Tensor img(Shape{opts.channels, opts.size, opts.size});
    for (Index ch = 0; ch < opts.channels; ++ch) {
      Eigen::ArrayXXd field = Eigen::ArrayXXd::Zero(opts.size, opts.size);
      for (std::size_t s = 0; s < std::size(kCellSizes); ++s)
        field += weights[s] / std::sqrt(norm) * smooth_noise(rng, opts.size, kCellSizes[s]);
      for (Index r = 0; r < opts.size; ++r)
        for (Index c = 0; c < opts.size; ++c) img.at(ch, r, c) = std::clamp(mean + contrast * field(r, c), 0.0, 1.0);
    }
    corpus.push_back(std::move(img));
  }
  return corpus;
}

Tensor read_png(const std::string& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw ProtocolError("cannot read PNG " + path + ": " + image.message);
  const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const Index channels = gray ? 1 : 3;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw ProtocolError("cannot decode PNG " + path + ": " + image.message);
  }
  const Index h = image.height, w = image.width;
  Tensor out(Shape{channels, h, w});
  for (Index r = 0; r < h; ++r)
    for (Index c = 0; c < w; ++c)
      for (Index ch = 0; ch < channels; ++ch)
        out.at(ch, r, c) = buffer[static_cast<std::size_t>((r * w + c) * channels + ch)] / 255.0;
  return out;
}

void write_png(const std::string& path, const Tensor& img) {
  const Shape& s = img.shape();
  if (s.rank() != 3 || (s[0] != 1 && s[0] != 3)) throw ShapeError("write_png expects [1|3,H,W], got " + s.str());
  const Index channels = s[0], h = s[1], w = s[2];
  std::vector<png_byte> buffer(static_cast<std::size_t>(channels * h * w));
  for (Index r = 0; r < h; ++r)
    for (Index c = 0; c < w; ++c)
      for (Index ch = 0; ch < channels; ++ch)
        buffer[static_cast<std::size_t>((r * w + c) * channels + ch)] =
            static_cast<png_byte>(std::lround(std::clamp(img.at(ch, r, c), 0.0, 1.0) * 255.0));
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0, nullptr))
    throw ProtocolError("cannot write PNG " + path + ": " + image.message);
}

std::vector<Tensor> png_patches(const std::vector<std::string>& paths, Index size, Index channels) {
  std::vector<Tensor> out;
  for (const auto& path : paths) {
    Tensor img = read_png(path);
    if (img.shape()[0] != channels)
      throw ConfigError(path + " has " + std::to_string(img.shape()[0]) + " channels, model expects " +
                        std::to_string(channels));
    for (Index r = 0; r + size <= img.shape()[1]; r += size)
      for (Index c = 0; c + size <= img.shape()[2]; c += size) {
        Tensor patch(Shape{channels, size, size});
        for (Index ch = 0; ch < channels; ++ch)
          for (Index i = 0; i < size; ++i)
            for (Index j = 0; j < size; ++j) patch.at(ch, i, j) = img.at(ch, r + i, c + j);
        out.push_back(std::move(patch));
      }
  }
  return out;
}

Tensor pad_to_multiple(const Tensor& image, Index multiple) {
  const Shape& s = image.shape();
  if (s.rank() != 3) throw ShapeError("expected [C,H,W], got " + s.str());
  const Index h = (s[1] + multiple - 1) / multiple * multiple;
  const Index w = (s[2] + multiple - 1) / multiple * multiple;
  Tensor out(Shape{s[0], h, w});
  for (Index ch = 0; ch < s[0]; ++ch)
    for (Index r = 0; r < s[1]; ++r)
      for (Index c = 0; c < s[2]; ++c) out.at(ch, r, c) = image.at(ch, r, c);
  return out;
}

Tensor crop(const Tensor& image, Index height, Index width) {
  const Shape& s = image.shape();
  if (s.rank() != 3 || height > s[1] || width > s[2]) throw ShapeError("cannot crop " + s.str());
  Tensor out(Shape{s[0], height, width});
  for (Index ch = 0; ch < s[0]; ++ch)
    for (Index r = 0; r < height; ++r)
      for (Index c = 0; c < width; ++c) out.at(ch, r, c) = image.at(ch, r, c);
  return out;
}

}  // namespace sgac
