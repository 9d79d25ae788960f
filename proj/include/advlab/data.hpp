#pragma once

// Datasets, synthetic generators and file codecs (IDX, CSV, PGM).

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "advlab/errors.hpp"
#include "advlab/matrix.hpp"
#include "advlab/nn.hpp"
#include "advlab/rng.hpp"

namespace advlab {

struct ImageShape {
  std::size_t height = 0;
  std::size_t width = 0;
  bool operator==(const ImageShape&) const = default;
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t class_count = 0;
  std::size_t feature_dim = 0;
  std::string provenance;            // "idx", "csv" or "synthetic:<name>"
  std::optional<ImageShape> image;   // set for raster datasets

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  // Uniform feature_dim, labels < class_count, features in [0,1].
  void validate() const {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      if (s.x.size() != feature_dim) {
        throw ShapeError("sample " + std::to_string(i) + " has " + std::to_string(s.x.size()) +
                         " features, dataset declares " + std::to_string(feature_dim));
      }
      for (double v : s.x) {
        if (!(v >= 0.0 && v <= 1.0)) {
          throw ParameterError("sample " + std::to_string(i) + " has a feature outside [0,1]");
        }
      }
      if (hard_label(s.y) >= class_count) {
        throw ShapeError("sample " + std::to_string(i) + " label outside class range");
      }
    }
  }
};

// Splits off the trailing `test_fraction` of a seeded permutation.
inline std::pair<Dataset, Dataset> split(const Dataset& d, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) throw ParameterError("test fraction must be in [0,1]");
  Rng rng(seed);
  const auto perm = rng.permutation(d.size());
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(d.size())));
  Dataset train = d, test = d;
  train.samples.clear();
  test.samples.clear();
  for (std::size_t i = 0; i < perm.size(); ++i) {
    (i < perm.size() - n_test ? train : test).samples.push_back(d.samples[perm[i]]);
  }
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Synthetic generators

// Two interleaving half circles (outer arc class 0, inner arc class 1), mapped
// into [0,1]^2 by a fixed affine map: x' = (x + 1.5) / 4, y' = (y + 1) / 2.5.
// Noise is added before the map and the result clamped to [0,1].
inline Dataset gen_moons(std::size_t n, double noise_sigma, std::uint64_t seed) {
  if (n == 0) throw ParameterError("gen_moons needs n >= 1");
  Rng rng(seed);
  const std::size_t n_outer = n / 2 + n % 2;
  const std::size_t n_inner = n - n_outer;
  Dataset d;
  d.class_count = 2;
  d.feature_dim = 2;
  d.provenance = "synthetic:moons";
  auto emit = [&](double x, double y, std::size_t label) {
    if (noise_sigma > 0.0) {
      x += noise_sigma * rng.normal();
      y += noise_sigma * rng.normal();
    }
    d.samples.push_back({{clamp01((x + 1.5) / 4.0), clamp01((y + 1.0) / 2.5)}, label});
  };
  auto angle = [](std::size_t i, std::size_t count) {
    return count <= 1 ? 0.0 : std::numbers::pi * static_cast<double>(i) / static_cast<double>(count - 1);
  };
  for (std::size_t i = 0; i < n_outer; ++i) {
    const double t = angle(i, n_outer);
    emit(std::cos(t), std::sin(t), 0);
  }
  for (std::size_t i = 0; i < n_inner; ++i) {
    const double t = angle(i, n_inner);
    emit(1.0 - std::cos(t), 1.0 - std::sin(t) - 0.5, 1);
  }
  rng.shuffle(std::span<Sample>(d.samples));
  return d;
}

// Isotropic Gaussian blobs; sample i belongs to component i % k. Means are
// given in feature space and samples are clamped to [0,1].
inline Dataset gen_gmm(const std::vector<Vec>& component_means, double sigma, std::size_t n,
                       std::uint64_t seed) {
  if (n == 0) throw ParameterError("gen_gmm needs n >= 1");
  if (component_means.empty()) throw ParameterError("gen_gmm needs at least one component");
  const std::size_t dim = component_means.front().size();
  for (const auto& m : component_means)
    if (m.size() != dim) throw ShapeError("gen_gmm component means differ in dimension");
  Rng rng(seed);
  Dataset d;
  d.class_count = component_means.size();
  d.feature_dim = dim;
  d.provenance = "synthetic:gmm";
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % component_means.size();
    Vec x(dim);
    for (std::size_t j = 0; j < dim; ++j) x[j] = clamp01(component_means[c][j] + sigma * rng.normal());
    d.samples.push_back({std::move(x), c});
  }
  return d;
}

namespace detail {

// 8x8 glyph templates for digits 0-9.
inline const std::array<std::array<const char*, 8>, 10>& digit_glyphs() {
  static const std::array<std::array<const char*, 8>, 10> glyphs = {{
      {"..####..", ".##..##.", ".##..##.", ".##..##.", ".##..##.", ".##..##.", "..####..", "........"},
      {"...##...", "..###...", "...##...", "...##...", "...##...", "...##...", "..####..", "........"},
      {"..####..", ".##..##.", ".....##.", "....##..", "...##...", "..##....", ".######.", "........"},
      {"..####..", ".##..##.", ".....##.", "...###..", ".....##.", ".##..##.", "..####..", "........"},
      {"....##..", "...###..", "..#.##..", ".#..##..", ".######.", "....##..", "....##..", "........"},
      {".######.", ".##.....", ".#####..", ".....##.", ".....##.", ".##..##.", "..####..", "........"},
      {"..####..", ".##.....", ".#####..", ".##..##.", ".##..##.", ".##..##.", "..####..", "........"},
      {".######.", ".....##.", "....##..", "...##...", "...##...", "...##...", "...##...", "........"},
      {"..####..", ".##..##.", ".##..##.", "..####..", ".##..##.", ".##..##.", "..####..", "........"},
      {"..####..", ".##..##.", ".##..##.", "..#####.", ".....##.", "....##..", "..###...", "........"},
  }};
  return glyphs;
}

}  // namespace detail

// Blurred digit glyphs with seeded jitter: +-1 pixel shift, stroke intensity,
// light 3x3 blur and additive Gaussian noise. Sample i has class i % 10.
inline Dataset gen_digits8x8(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ParameterError("gen_digits8x8 needs n >= 1");
  constexpr int side = 8;
  Rng rng(seed);
  Dataset d;
  d.class_count = 10;
  d.feature_dim = side * side;
  d.provenance = "synthetic:digits8x8";
  d.image = ImageShape{side, side};
  const auto& glyphs = detail::digit_glyphs();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % 10;
    const int dx = static_cast<int>(rng.uniform_index(3)) - 1;
    const int dy = static_cast<int>(rng.uniform_index(3)) - 1;
    const double ink = rng.uniform(0.75, 1.0);
    std::array<double, side * side> raw{};
    for (int r = 0; r < side; ++r) {
      for (int c = 0; c < side; ++c) {
        const int sr = r - dy, sc = c - dx;
        if (sr < 0 || sr >= side || sc < 0 || sc >= side) continue;
        if (glyphs[label][static_cast<std::size_t>(sr)][sc] == '#') raw[static_cast<std::size_t>(r * side + c)] = ink;
      }
    }
    constexpr std::array<double, 3> k = {0.125, 0.75, 0.125};
    Vec x(side * side, 0.0);
    for (int r = 0; r < side; ++r) {
      for (int c = 0; c < side; ++c) {
        double acc = 0.0;
        for (int a = -1; a <= 1; ++a) {
          for (int b = -1; b <= 1; ++b) {
            const int rr = r + a, cc = c + b;
            if (rr < 0 || rr >= side || cc < 0 || cc >= side) continue;
            acc += k[static_cast<std::size_t>(a + 1)] * k[static_cast<std::size_t>(b + 1)] *
                   raw[static_cast<std::size_t>(rr * side + cc)];
          }
        }
        x[static_cast<std::size_t>(r * side + c)] = acc;
      }
    }
    // Blur attenuates strokes; rescale so the peak sits near the ink level.
    const double peak = norm_linf(x);
    for (double& v : x) {
      if (peak > 0.0) v *= ink / peak;
      v = clamp01(v + 0.05 * rng.normal());
    }
    d.samples.push_back({std::move(x), label});
  }
  return d;
}

// ---------------------------------------------------------------------------
// IDX

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t offset,
                               const std::string& what) {
  if (offset + 4 > b.size()) {
    throw ParseError(what + ": truncated header at offset " + std::to_string(offset));
  }
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) |
         (std::uint32_t{b[offset + 2]} << 8) | std::uint32_t{b[offset + 3]};
}

}  // namespace detail

inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto img = detail::read_file_bytes(images_path);
  const auto lab = detail::read_file_bytes(labels_path);
  const std::string iname = images_path.string(), lname = labels_path.string();
  const std::uint32_t imagic = detail::read_be32(img, 0, iname);
  if (imagic != 0x00000803u) throw ParseError(iname + ": bad magic at offset 0");
  const std::uint32_t count = detail::read_be32(img, 4, iname);
  const std::uint32_t rows = detail::read_be32(img, 8, iname);
  const std::uint32_t cols = detail::read_be32(img, 12, iname);
  const std::uint32_t lmagic = detail::read_be32(lab, 0, lname);
  if (lmagic != 0x00000801u) throw ParseError(lname + ": bad magic at offset 0");
  const std::uint32_t lcount = detail::read_be32(lab, 4, lname);
  if (lcount != count) {
    throw ParseError(lname + ": label count " + std::to_string(lcount) + " at offset 4 does not match image count " +
                     std::to_string(count));
  }
  const std::size_t pixels = std::size_t{rows} * cols;
  const std::size_t need = 16 + std::size_t{count} * pixels;
  if (img.size() < need) {
    throw ParseError(iname + ": truncated pixel data at offset " + std::to_string(img.size()) + ", expected " +
                     std::to_string(need) + " bytes");
  }
  if (lab.size() < 8 + std::size_t{count}) {
    throw ParseError(lname + ": truncated label data at offset " + std::to_string(lab.size()));
  }
  Dataset d;
  d.feature_dim = pixels;
  d.provenance = "idx";
  d.image = ImageShape{rows, cols};
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < count; ++i) {
    Vec x(pixels);
    for (std::size_t p = 0; p < pixels; ++p) x[p] = static_cast<double>(img[16 + i * pixels + p]) / 255.0;
    const std::size_t label = lab[8 + i];
    max_label = std::max(max_label, label);
    d.samples.push_back({std::move(x), label});
  }
  d.class_count = count == 0 ? 0 : max_label + 1;
  return d;
}

inline void write_idx(const Dataset& d, const std::filesystem::path& images_path,
                      const std::filesystem::path& labels_path) {
  if (!d.image) throw ShapeError("write_idx needs an image dataset");
  auto be32 = [](std::ofstream& out, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                       static_cast<char>(v)};
    out.write(b, 4);
  };
  std::ofstream img(images_path, std::ios::binary), lab(labels_path, std::ios::binary);
  if (!img || !lab) throw ParseError("cannot write IDX files");
  be32(img, 0x00000803u);
  be32(img, static_cast<std::uint32_t>(d.size()));
  be32(img, static_cast<std::uint32_t>(d.image->height));
  be32(img, static_cast<std::uint32_t>(d.image->width));
  be32(lab, 0x00000801u);
  be32(lab, static_cast<std::uint32_t>(d.size()));
  for (const auto& s : d.samples) {
    for (double v : s.x) img.put(static_cast<char>(std::lround(clamp01(v) * 255.0)));
    lab.put(static_cast<char>(hard_label(s.y)));
  }
}

// ---------------------------------------------------------------------------
// CSV

struct CsvDataset {
  Dataset dataset;
  std::vector<std::string> feature_names;
  Vec column_min;  // scaling: x' = (x - min) / (max - min), constant columns map to 0
  Vec column_max;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    std::size_t start = 0;
    while (start < cell.size() && cell[start] == ' ') ++start;
    cells.push_back(cell.substr(start));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) return std::nullopt;
  return v;
}

}  // namespace detail

inline CsvDataset load_csv(const std::filesystem::path& path, const std::string& label_column) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": missing header row");
  const auto header = detail::split_csv_line(line);
  std::size_t label_idx = header.size();
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == label_column) label_idx = i;
  if (label_idx == header.size()) {
    throw ConfigError(path.string() + ": no label column named '" + label_column + "'");
  }
  CsvDataset out;
  for (std::size_t i = 0; i < header.size(); ++i)
    if (i != label_idx) out.feature_names.push_back(header[i]);
  std::vector<Vec> rows;
  std::vector<std::size_t> labels;
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError(path.string() + ": row " + std::to_string(row_no) + " has " + std::to_string(cells.size()) +
                       " cells, header has " + std::to_string(header.size()));
    }
    Vec x;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto v = detail::parse_double(cells[i]);
      if (!v || !std::isfinite(*v)) {
        throw ParseError(path.string() + ": row " + std::to_string(row_no) + " column '" + header[i] +
                         "' is not numeric");
      }
      if (i == label_idx) {
        if (*v < 0.0 || std::floor(*v) != *v) {
          throw ParseError(path.string() + ": row " + std::to_string(row_no) + " label is not a class index");
        }
        labels.push_back(static_cast<std::size_t>(*v));
      } else {
        x.push_back(*v);
      }
    }
    rows.push_back(std::move(x));
  }
  const std::size_t dim = out.feature_names.size();
  out.column_min.assign(dim, 0.0);
  out.column_max.assign(dim, 0.0);
  for (std::size_t j = 0; j < dim && !rows.empty(); ++j) {
    out.column_min[j] = out.column_max[j] = rows[0][j];
    for (const auto& r : rows) {
      out.column_min[j] = std::min(out.column_min[j], r[j]);
      out.column_max[j] = std::max(out.column_max[j], r[j]);
    }
  }
  Dataset& d = out.dataset;
  d.feature_dim = dim;
  d.provenance = "csv";
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    Vec x(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      const double range = out.column_max[j] - out.column_min[j];
      x[j] = range > 0.0 ? (rows[i][j] - out.column_min[j]) / range : 0.0;
    }
    max_label = std::max(max_label, labels[i]);
    d.samples.push_back({std::move(x), labels[i]});
  }
  d.class_count = rows.empty() ? 0 : max_label + 1;
  return out;
}

// ---------------------------------------------------------------------------
// PGM (P5, maxval 255)

inline Matrix image_from_vector(std::span<const double> x, ImageShape shape) {
  if (x.size() != shape.height * shape.width) throw ShapeError("vector length does not match image shape");
  return Matrix(shape.height, shape.width, Vec(x.begin(), x.end()));
}

inline std::string pgm_bytes(const Matrix& image) {
  std::string out = "P5\n" + std::to_string(image.cols) + ' ' + std::to_string(image.rows) + "\n255\n";
  out.reserve(out.size() + image.data.size());
  for (double v : image.data) {
    if (!(v >= 0.0 && v <= 1.0)) throw ParameterError("PGM pixel outside [0,1]");
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
  return out;
}

inline void write_pgm(const Matrix& image, const std::filesystem::path& path) {
  const std::string bytes = pgm_bytes(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Matrix read_pgm(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  std::size_t pos = 0;
  auto fail = [&](const std::string& why) {
    throw ParseError(path.string() + ": " + why + " at offset " + std::to_string(pos));
  };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&] {
    skip_space();
    std::size_t v = 0;
    const std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
    if (pos == start) fail("expected an integer");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') fail("not a P5 PGM");
  pos = 2;
  const std::size_t width = read_uint();
  const std::size_t height = read_uint();
  const std::size_t maxval = read_uint();
  if (maxval != 255) fail("maxval must be 255");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) fail("missing header terminator");
  ++pos;
  if (bytes.size() - pos != width * height) {
    fail("payload of " + std::to_string(bytes.size() - pos) + " bytes for a " + std::to_string(width) + "x" +
         std::to_string(height) + " image");
  }
  Matrix img(height, width);
  for (std::size_t i = 0; i < width * height; ++i) img.data[i] = static_cast<double>(bytes[pos + i]) / 255.0;
  return img;
}

}  // namespace advlab
