#pragma once

// Feature-squeezing input transforms and the squeeze pipeline.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "advlab/data.hpp"
#include "advlab/errors.hpp"
#include "advlab/matrix.hpp"
#include "advlab/svd.hpp"

namespace advlab {

// round(x * (2^i - 1)) / (2^i - 1) per coordinate, i in [1, 7].
inline Vec reduce_bit_depth(std::span<const double> x, int bits) {
  if (bits < 1 || bits > 7) throw ParameterError("bit depth must be in [1,7], got " + std::to_string(bits));
  const double levels = static_cast<double>((1 << bits) - 1);
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::round(x[i] * levels) / levels;
  return out;
}

// Mirror an out-of-range index back into [0, n), duplicating the edge pixel
// (... b a | a b c ... c | c b ...).
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  const auto len = static_cast<std::ptrdiff_t>(n);
  const std::ptrdiff_t period = 2 * len;
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < len ? i : period - 1 - i);
}

inline double reflected(const Matrix& img, std::ptrdiff_t r, std::ptrdiff_t c) {
  return img(reflect_index(r, img.rows), reflect_index(c, img.cols));
}

// 2x2 median with the target pixel at the window's bottom-right corner. Of the
// two middle values the larger is taken.
inline Matrix median_smooth(const Matrix& image) {
  if (image.rows == 0 || image.cols == 0) throw ShapeError("median_smooth needs a non-empty image");
  Matrix out(image.rows, image.cols);
  for (std::size_t r = 0; r < image.rows; ++r) {
    for (std::size_t c = 0; c < image.cols; ++c) {
      const auto rr = static_cast<std::ptrdiff_t>(r), cc = static_cast<std::ptrdiff_t>(c);
      std::array<double, 4> w = {reflected(image, rr - 1, cc - 1), reflected(image, rr - 1, cc),
                                 reflected(image, rr, cc - 1), image(r, c)};
      std::sort(w.begin(), w.end());
      out(r, c) = w[2];
    }
  }
  return out;
}

struct NonLocalConfig {
  std::size_t search_window = 5;  // odd; side of the square of candidate centres
  std::size_t patch_size = 3;     // odd; side of the compared patches
  double h = 0.5;                 // filter strength
  double sigma = 1.0;             // std of the Gaussian weighting inside a patch

  void validate() const {
    if (search_window % 2 == 0 || patch_size % 2 == 0) throw ParameterError("non-local window and patch must be odd");
    if (patch_size > search_window) throw ParameterError("non-local patch larger than search window");
    if (!(h > 0.0) || !(sigma > 0.0)) throw ParameterError("non-local h and sigma must be > 0");
  }
};

// Non-local means. For each pixel p, candidates q range over the in-bounds
// centres of the search window around p and receive weight
//   exp(-D(p, q) / h^2),  D(p, q) = sum_o g(o) (I(p + o) - I(q + o))^2,
// g(o) = exp(-|o|^2 / (2 sigma^2)) over patch offsets o, with reflected
// borders. The output is the weight-normalised mean of I(q).
inline Matrix nonlocal_smooth(const Matrix& image, const NonLocalConfig& cfg) {
  cfg.validate();
  if (image.rows == 0 || image.cols == 0) throw ShapeError("nonlocal_smooth needs a non-empty image");
  const auto pr = static_cast<std::ptrdiff_t>(cfg.patch_size / 2);
  const auto sr = static_cast<std::ptrdiff_t>(cfg.search_window / 2);
  const auto rows = static_cast<std::ptrdiff_t>(image.rows), cols = static_cast<std::ptrdiff_t>(image.cols);
  std::vector<double> kernel;
  for (std::ptrdiff_t a = -pr; a <= pr; ++a)
    for (std::ptrdiff_t b = -pr; b <= pr; ++b)
      kernel.push_back(std::exp(-static_cast<double>(a * a + b * b) / (2.0 * cfg.sigma * cfg.sigma)));
  const double h2 = cfg.h * cfg.h;
  Matrix out(image.rows, image.cols);
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    for (std::ptrdiff_t c = 0; c < cols; ++c) {
      double wsum = 0.0, acc = 0.0;
      for (std::ptrdiff_t qr = std::max<std::ptrdiff_t>(0, r - sr); qr <= std::min(rows - 1, r + sr); ++qr) {
        for (std::ptrdiff_t qc = std::max<std::ptrdiff_t>(0, c - sr); qc <= std::min(cols - 1, c + sr); ++qc) {
          double dist = 0.0;
          std::size_t k = 0;
          for (std::ptrdiff_t a = -pr; a <= pr; ++a) {
            for (std::ptrdiff_t b = -pr; b <= pr; ++b, ++k) {
              const double d = reflected(image, r + a, c + b) - reflected(image, qr + a, qc + b);
              dist += kernel[k] * d * d;
            }
          }
          const double w = std::exp(-dist / h2);
          wsum += w;
          acc += w * image(static_cast<std::size_t>(qr), static_cast<std::size_t>(qc));
        }
      }
      // wsum >= 1: the centre candidate always has distance 0.
      out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = acc / wsum;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline

struct IdentitySqueeze {};
struct BitDepthSqueeze {
  int bits = 4;
};
struct MedianSqueeze {};
struct NonLocalSqueeze {
  NonLocalConfig config;
};
struct SvdSqueeze {
  std::size_t k = 3;
};

using SqueezeOp = std::variant<IdentitySqueeze, BitDepthSqueeze, MedianSqueeze, NonLocalSqueeze, SvdSqueeze>;

// Ordered list of transforms applied left to right.
using SqueezePipeline = std::vector<SqueezeOp>;

inline std::string squeeze_op_name(const SqueezeOp& op) {
  struct {
    std::string operator()(const IdentitySqueeze&) const { return "identity"; }
    std::string operator()(const BitDepthSqueeze&) const { return "bit_depth"; }
    std::string operator()(const MedianSqueeze&) const { return "median"; }
    std::string operator()(const NonLocalSqueeze&) const { return "nonlocal"; }
    std::string operator()(const SvdSqueeze&) const { return "svd"; }
  } visitor;
  return std::visit(visitor, op);
}

inline Vec apply_squeeze(const SqueezeOp& op, std::span<const double> x, std::optional<ImageShape> shape) {
  auto need_image = [&](const char* name) {
    if (!shape) throw ConfigError(std::string(name) + " squeezing needs an image dataset");
    return image_from_vector(x, *shape);
  };
  if (std::holds_alternative<IdentitySqueeze>(op)) return Vec(x.begin(), x.end());
  if (const auto* b = std::get_if<BitDepthSqueeze>(&op)) return reduce_bit_depth(x, b->bits);
  if (std::holds_alternative<MedianSqueeze>(op)) return median_smooth(need_image("median")).data;
  if (const auto* nl = std::get_if<NonLocalSqueeze>(&op)) return nonlocal_smooth(need_image("nonlocal"), nl->config).data;
  const auto& s = std::get<SvdSqueeze>(op);
  return svd_denoise(need_image("svd"), s.k).data;
}

inline Vec apply_pipeline(const SqueezePipeline& pipeline, std::span<const double> x,
                          std::optional<ImageShape> shape) {
  Vec v(x.begin(), x.end());
  for (const auto& op : pipeline) v = apply_squeeze(op, v, shape);
  return v;
}

}  // namespace advlab
