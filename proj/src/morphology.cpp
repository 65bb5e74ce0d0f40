#include <algorithm>
#include <random>

#include "mismatch/synth.hpp"

namespace mismatch {

Map2D morph_binary(const Map2D& mask, MorphOp op, std::size_t radius) {
  if (radius < 1) throw std::invalid_argument("morph_binary: radius must be >= 1");
  const auto h = static_cast<std::ptrdiff_t>(mask.height);
  const auto w = static_cast<std::ptrdiff_t>(mask.width);
  const auto r = static_cast<std::ptrdiff_t>(radius);
  const bool dilate = op == MorphOp::dilate;
  const double outside = dilate ? 0.0 : 1.0;
  Map2D out(mask.height, mask.width);
  for (std::ptrdiff_t i = 0; i < h; ++i) {
    for (std::ptrdiff_t j = 0; j < w; ++j) {
      bool hit = !dilate;  // erosion: all ones; dilation: any one
      for (std::ptrdiff_t di = -r; di <= r && hit == !dilate; ++di) {
        for (std::ptrdiff_t dj = -r; dj <= r; ++dj) {
          const auto y = i + di, x = j + dj;
          const double v = (y < 0 || y >= h || x < 0 || x >= w)
                               ? outside
                               : mask.values[static_cast<std::size_t>(y * w + x)];
          const bool on = v > 0.5;
          if (dilate && on) {
            hit = true;
            break;
          }
          if (!dilate && !on) {
            hit = false;
            break;
          }
        }
      }
      out.values[static_cast<std::size_t>(i * w + j)] = hit ? 1.0 : 0.0;
    }
  }
  return out;
}

Map2D boundary_band(const Map2D& mask) {
  const Map2D outer = morph_binary(mask, MorphOp::dilate, 1);
  const Map2D inner = morph_binary(mask, MorphOp::erode, 1);
  Map2D band(mask.height, mask.width);
  for (std::size_t i = 0; i < band.values.size(); ++i) {
    band.values[i] = (outer.values[i] > 0.5 && inner.values[i] < 0.5) ? 1.0 : 0.0;
  }
  return band;
}

namespace {

Map2D flip(const Map2D& m, bool horizontal) {
  Map2D out(m.height, m.width);
  for (std::size_t i = 0; i < m.height; ++i) {
    for (std::size_t j = 0; j < m.width; ++j) {
      out(i, j) = horizontal ? m(i, m.width - 1 - j) : m(m.height - 1 - i, j);
    }
  }
  return out;
}

}  // namespace

Map2D augment(const Map2D& image, AugmentKind kind, double sigma, std::uint64_t seed) {
  switch (kind) {
    case AugmentKind::hflip: return flip(image, true);
    case AugmentKind::vflip: return flip(image, false);
    case AugmentKind::gaussian_noise: {
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> noise(0.0, sigma);
      Map2D out = image;
      for (auto& v : out.values) v += noise(rng);
      return out;
    }
  }
  throw std::invalid_argument("unknown augmentation");
}

Sample augment(const Sample& sample, AugmentKind kind, double sigma, std::uint64_t seed) {
  Sample out = sample;
  out.image = augment(sample.image, kind, sigma, seed);
  if (kind != AugmentKind::gaussian_noise) out.mask = augment(sample.mask, kind, sigma, seed);
  return out;
}

}  // namespace mismatch
