#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dataset.hpp"
#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "util.hpp"

namespace alrelu {

struct CsvOptions {
  char delimiter = ',';
  /// Columns to ignore entirely (ids, free text).
  std::vector<std::string> drop_columns;
};

namespace detail {

inline std::vector<std::string_view> split_line(std::string_view line, char delim) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return cells;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool parse_number(std::string_view cell, double& out) {
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  if (cell.empty()) return false;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
  return ec == std::errc{} && ptr == cell.data() + cell.size() && std::isfinite(out);
}

}  // namespace detail

/// Loads a headered numeric CSV. Every non-label column becomes a feature,
/// min-max scaled to [0, 1] (constant columns become 0). Class ids follow
/// first appearance of each label value.
inline Dataset load_csv(const std::filesystem::path& path, const std::string& label_column,
                        const CsvOptions& options = {}) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open CSV file " + path.string());
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty()) {
    throw ParseError(path.string() + ": empty file (header row required)");
  }
  std::vector<std::string> header;
  for (auto cell : detail::split_line(detail::trim(line), options.delimiter)) header.emplace_back(detail::trim(cell));

  std::size_t label_idx = header.size();
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == label_column) {
      label_idx = c;
    } else if (std::find(options.drop_columns.begin(), options.drop_columns.end(), header[c]) ==
               options.drop_columns.end()) {
      feature_cols.push_back(c);
    }
  }
  if (label_idx == header.size()) {
    throw ParseError(path.string() + ": label column \"" + label_column + "\" not found in header");
  }
  for (const auto& dropped : options.drop_columns) {
    if (std::find(header.begin(), header.end(), dropped) == header.end()) {
      throw ParseError(path.string() + ": column \"" + dropped + "\" not found in header");
    }
  }
  if (feature_cols.empty()) throw ParseError(path.string() + ": no feature columns");

  std::vector<double> values;
  std::vector<std::size_t> labels;
  std::vector<std::string> class_names;
  std::unordered_map<std::string, std::size_t> class_ids;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    const std::string_view trimmed = detail::trim(line);
    if (trimmed.empty()) continue;
    ++row;
    const auto cells = detail::split_line(trimmed, options.delimiter);
    if (cells.size() != header.size()) {
      throw ParseError(path.string() + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                       " cells, header has " + std::to_string(header.size()));
    }
    for (std::size_t c : feature_cols) {
      double v = 0.0;
      const auto cell = detail::trim(cells[c]);
      if (!detail::parse_number(cell, v)) {
        throw ParseError(path.string() + ": row " + std::to_string(row) + ", column \"" + header[c] +
                         "\": cannot parse \"" + std::string(cell) + "\" as a number");
      }
      values.push_back(v);
    }
    const std::string name(detail::trim(cells[label_idx]));
    auto [it, inserted] = class_ids.try_emplace(name, class_names.size());
    if (inserted) class_names.push_back(name);
    labels.push_back(it->second);
  }
  if (labels.empty()) throw ParseError(path.string() + ": no data rows");

  const std::size_t d = feature_cols.size();
  Tensor features(Shape{labels.size(), d});
  for (std::size_t c = 0; c < d; ++c) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t r = 0; r < labels.size(); ++r) {
      lo = std::min(lo, values[r * d + c]);
      hi = std::max(hi, values[r * d + c]);
    }
    const double range = hi - lo;
    for (std::size_t r = 0; r < labels.size(); ++r) {
      features[r * d + c] = range > 0.0 ? static_cast<float>((values[r * d + c] - lo) / range) : 0.0f;
    }
  }
  return Dataset{std::move(features), std::move(labels), std::move(class_names), FeatureKind::Tabular};
}

/// Writes a tabular dataset as CSV with columns f0..f{d-1} and the label
/// column holding class names.
inline void write_csv(const Dataset& data, const std::filesystem::path& path, const std::string& label_column = "label") {
  if (data.feature_kind != FeatureKind::Tabular) throw ValidationError("write_csv needs a tabular dataset");
  const std::size_t d = data.features.extent(1);
  std::ostringstream os;
  for (std::size_t c = 0; c < d; ++c) os << 'f' << c << ',';
  os << label_column << '\n';
  char buf[32];
  for (std::size_t r = 0; r < data.size(); ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      const auto res = std::to_chars(buf, buf + sizeof buf, data.features[r * d + c]);
      os << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf)) << ',';
    }
    os << data.class_names.at(data.labels[r]) << '\n';
  }
  write_file_atomic(path, os.str());
}

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

/// Binary "P5" with maxval 255. Comment lines in the header are skipped.
inline GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open PGM file " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto fail = [&](const std::string& why) -> ParseError { return ParseError(path.string() + ": " + why); };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
    throw fail("not a binary PGM (expected magic number P5)");
  }
  std::size_t pos = 2;
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; };
  auto next_int = [&](const char* what) {
    while (pos < bytes.size()) {
      if (is_space(bytes[pos])) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    std::size_t value = 0;
    const auto [ptr, ec] = std::from_chars(bytes.data() + pos, bytes.data() + bytes.size(), value);
    if (ec != std::errc{} || ptr == bytes.data() + pos) throw fail(std::string("malformed header field ") + what);
    pos = static_cast<std::size_t>(ptr - bytes.data());
    return value;
  };
  GrayImage img;
  img.width = next_int("width");
  img.height = next_int("height");
  const std::size_t maxval = next_int("maxval");
  if (img.width == 0 || img.height == 0) throw fail("zero image dimension");
  if (maxval != 255) throw fail("maxval must be 255, got " + std::to_string(maxval));
  if (pos >= bytes.size() || !is_space(bytes[pos])) throw fail("missing whitespace after header");
  ++pos;
  const std::size_t need = img.width * img.height;
  if (bytes.size() - pos < need) {
    throw fail("truncated pixel data (" + std::to_string(bytes.size() - pos) + " of " + std::to_string(need) +
               " bytes)");
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + need));
  return img;
}

inline void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(img.pixels.begin(), img.pixels.end());
  write_file_atomic(path, out);
}

/// One subdirectory per class (ids in lexicographic name order), each with
/// *.pgm files of identical size. Pixels are scaled to [0, 1].
inline Dataset load_pgm_dir(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw ParseError(root.string() + ": not a directory");
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) class_dirs.push_back(e.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw ParseError(root.string() + ": no class subdirectories");

  Dataset ds;
  ds.feature_kind = FeatureKind::Image;
  std::vector<float> pixels;
  std::size_t width = 0, height = 0;
  for (const auto& dir : class_dirs) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ParseError(dir.string() + ": class directory has no .pgm files");
    const std::size_t id = ds.class_names.size();
    ds.class_names.push_back(dir.filename().string());
    for (const auto& f : files) {
      const GrayImage img = read_pgm(f);
      if (width == 0) {
        width = img.width;
        height = img.height;
      } else if (img.width != width || img.height != height) {
        throw ParseError(f.string() + ": image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                         ", expected " + std::to_string(width) + "x" + std::to_string(height));
      }
      for (std::uint8_t p : img.pixels) pixels.push_back(static_cast<float>(p) / 255.0f);
      ds.labels.push_back(id);
    }
  }
  ds.features = Tensor(Shape{ds.labels.size(), height, width, 1}, std::move(pixels));
  return ds;
}

/// Gaussian clusters (unit variance). Class c is centered at
/// +/- separation along axis (c mod dim), alternating sign every `dim`
/// classes and shifting diagonally once both signs of every axis are used.
/// Samples are interleaved by class.
inline Dataset make_blobs(std::size_t n_per_class, std::size_t n_classes, std::size_t dim, double separation,
                          std::uint64_t seed) {
  if (n_per_class == 0 || n_classes == 0 || dim == 0) throw ValidationError("make_blobs: counts must be positive");
  Rng rng(derive_seed(seed, 0x626c6f62ULL));
  std::vector<std::vector<double>> centers(n_classes, std::vector<double>(dim, 0.0));
  for (std::size_t c = 0; c < n_classes; ++c) {
    const double sign = (c / dim) % 2 == 0 ? 1.0 : -1.0;
    const double shift = static_cast<double>(c / (2 * dim)) * separation;
    for (std::size_t j = 0; j < dim; ++j) centers[c][j] = shift;
    centers[c][c % dim] += sign * separation;
  }
  Dataset ds;
  ds.features = Tensor(Shape{n_per_class * n_classes, dim});
  for (std::size_t i = 0; i < n_per_class; ++i)
    for (std::size_t c = 0; c < n_classes; ++c) {
      const std::size_t row = ds.labels.size();
      for (std::size_t j = 0; j < dim; ++j) {
        ds.features[row * dim + j] = static_cast<float>(centers[c][j] + rng.normal());
      }
      ds.labels.push_back(c);
    }
  for (std::size_t c = 0; c < n_classes; ++c) ds.class_names.push_back("class" + std::to_string(c));
  return ds;
}

/// Two-class data with every feature <= -1, so that with strongly negative
/// biases rectifier pre-activations start out negative. Class 1 is pushed a
/// further 2 units down on even-numbered features.
inline Dataset make_dying_relu_stress(std::size_t n, std::size_t dim, std::uint64_t seed) {
  if (n < 2) throw ValidationError("make_dying_relu_stress: n must be >= 2");
  if (dim == 0) throw ValidationError("make_dying_relu_stress: dim must be >= 1");
  Rng rng(derive_seed(seed, 0x73747273ULL));
  Dataset ds;
  ds.features = Tensor(Shape{n, dim});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % 2;
    for (std::size_t j = 0; j < dim; ++j) {
      double v = -1.0 - std::abs(rng.normal());
      if (label == 1 && j % 2 == 0) v -= 2.0;
      ds.features[i * dim + j] = static_cast<float>(v);
    }
    ds.labels.push_back(label);
  }
  ds.class_names = {"class0", "class1"};
  return ds;
}

}  // namespace alrelu
