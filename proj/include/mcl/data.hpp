#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mcl/errors.hpp"
#include "mcl/nn.hpp"
#include "mcl/random.hpp"

namespace mcl {

/// Labelled examples with one input row per example.
struct Dataset {
  Matrix inputs;
  std::vector<std::size_t> labels;
  std::size_t n_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t input_dim() const { return inputs.cols; }

  void validate() const {
    detail::require(n_classes >= 1, "dataset needs at least one class");
    detail::require(inputs.rows == labels.size(), "dataset inputs and labels disagree in length");
    std::vector<bool> present(n_classes, false);
    for (auto y : labels) {
      detail::require(y < n_classes, "dataset label outside [0, n_classes)");
      present[y] = true;
    }
    detail::require(std::all_of(present.begin(), present.end(), [](bool b) { return b; }),
                    "dataset has a class without examples");
  }

  Batch gather(std::span<const std::size_t> idx) const {
    Batch b{Matrix(idx.size(), input_dim()), {}};
    b.labels.reserve(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto src = inputs.row(idx[r]);
      std::copy(src.begin(), src.end(), b.inputs.row(r).begin());
      b.labels.push_back(labels[idx[r]]);
    }
    return b;
  }

  bool operator==(const Dataset&) const = default;
};

/// Indices of the examples whose label is in classes.
inline std::vector<std::size_t> indices_of_classes(const Dataset& ds, std::span<const std::size_t> classes) {
  std::vector<bool> want(ds.n_classes, false);
  for (auto c : classes) {
    detail::require(c < ds.n_classes, "class outside the dataset's range");
    want[c] = true;
  }
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (want[ds.labels[i]]) idx.push_back(i);
  return idx;
}

// ---------------------------------------------------------------------------
// Synthetic Gaussian blobs
// ---------------------------------------------------------------------------

/// Class centres drawn uniformly on the sphere of radius class_sep.
inline Matrix synthetic_class_means(std::size_t n_classes, std::size_t input_dim, double class_sep,
                                    std::uint64_t seed) {
  detail::require(n_classes >= 1 && input_dim >= 1, "synthetic dataset needs classes and features");
  detail::require(class_sep > 0.0, "class separation must be positive");
  Rng rng = make_rng(seed, {stream_tag::data, 0});
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix means(n_classes, input_dim);
  for (std::size_t c = 0; c < n_classes; ++c) {
    auto row = means.row(c);
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (auto& v : row) {
        v = normal(rng);
        norm2 += v * v;
      }
    } while (norm2 == 0.0);
    const double scale = class_sep / std::sqrt(norm2);
    for (auto& v : row) v *= scale;
  }
  return means;
}

/// n_per_class examples per class, mean + noise * N(0, I). The class means depend
/// only on seed; `draw` selects an independent sample around the same means
/// (e.g. draw 0 for training, draw 1 for the test split).
inline Dataset make_synthetic_gaussians(std::size_t n_classes, std::size_t input_dim, std::size_t n_per_class,
                                        double class_sep, double noise, std::uint64_t seed,
                                        std::uint64_t draw = 0) {
  detail::require(n_per_class >= 1, "need at least one example per class");
  detail::require(noise > 0.0, "noise must be positive");
  const Matrix means = synthetic_class_means(n_classes, input_dim, class_sep, seed);
  Rng rng = make_rng(seed, {stream_tag::data, 1, draw});
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset ds{Matrix(n_classes * n_per_class, input_dim), {}, n_classes};
  ds.labels.reserve(n_classes * n_per_class);
  std::size_t r = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t k = 0; k < n_per_class; ++k, ++r) {
      auto row = ds.inputs.row(r);
      const auto mu = means.row(c);
      for (std::size_t i = 0; i < input_dim; ++i) row[i] = mu[i] + noise * normal(rng);
      ds.labels.push_back(c);
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// IDX (MNIST) files
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError(path, 0, "cannot open file");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t off, const std::string& path) {
  if (off + 4 > buf.size()) throw TruncatedFileError(path, off, "header ends early");
  return (std::uint32_t{buf[off]} << 24) | (std::uint32_t{buf[off + 1]} << 16) |
         (std::uint32_t{buf[off + 2]} << 8) | std::uint32_t{buf[off + 3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Reads an IDX image/label pair. Pixels are scaled to [0, 1] and flattened row-major;
/// n_classes is one past the largest label.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = detail::read_all(images_path);
  const auto lab = detail::read_all(labels_path);

  const auto img_magic = detail::read_be32(img, 0, images_path);
  if (img_magic != kIdxImageMagic) throw BadMagicError(images_path, 0, "not an IDX image file");
  const auto lab_magic = detail::read_be32(lab, 0, labels_path);
  if (lab_magic != kIdxLabelMagic) throw BadMagicError(labels_path, 0, "not an IDX label file");

  const std::size_t n_img = detail::read_be32(img, 4, images_path);
  const std::size_t rows = detail::read_be32(img, 8, images_path);
  const std::size_t cols = detail::read_be32(img, 12, images_path);
  const std::size_t n_lab = detail::read_be32(lab, 4, labels_path);
  if (n_img != n_lab)
    throw CountMismatchError(labels_path, 4,
                             "label count " + std::to_string(n_lab) + " != image count " + std::to_string(n_img));

  const std::size_t dim = rows * cols;
  constexpr std::size_t kImgHeader = 16, kLabHeader = 8;
  if (img.size() < kImgHeader + n_img * dim)
    throw TruncatedFileError(images_path, img.size(), "pixel data ends early");
  if (lab.size() < kLabHeader + n_lab) throw TruncatedFileError(labels_path, lab.size(), "label data ends early");
  if (n_img == 0 || dim == 0) throw IngestError(images_path, 4, "file holds no pixels");

  Dataset ds{Matrix(n_img, dim), std::vector<std::size_t>(n_img), 0};
  for (std::size_t k = 0; k < n_img * dim; ++k) ds.inputs.data[k] = img[kImgHeader + k] / 255.0;
  for (std::size_t k = 0; k < n_img; ++k) ds.labels[k] = lab[kLabHeader + k];
  ds.n_classes = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  return ds;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    cells.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  for (auto& c : cells) {
    while (!c.empty() && (c.front() == ' ' || c.front() == '\t')) c.remove_prefix(1);
    while (!c.empty() && (c.back() == ' ' || c.back() == '\t' || c.back() == '\r')) c.remove_suffix(1);
  }
  return cells;
}

inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

}  // namespace detail

/// Numeric CSV table; label_column indexes the label (negative counts from the end).
/// A first row whose first cell is not numeric is treated as a header.
inline Dataset load_csv(const std::string& path, int label_column = -1) {
  std::ifstream in(path);
  if (!in) throw IngestError(path, 0, "cannot open file");
  std::vector<std::vector<double>> features;
  std::vector<std::size_t> labels;
  std::size_t width = 0;
  std::string line;
  std::size_t lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = detail::split_commas(line);
    double probe = 0.0;
    if (first && !detail::parse_double(cells.front(), probe)) {
      first = false;
      continue;
    }
    first = false;
    if (width == 0) {
      width = cells.size();
      if (width < 2) throw ParseError(path, lineno, "need at least one feature and a label column");
    } else if (cells.size() != width) {
      throw ParseError(path, lineno,
                       "ragged row: " + std::to_string(cells.size()) + " cells, expected " + std::to_string(width));
    }
    const int lc = label_column < 0 ? static_cast<int>(width) + label_column : label_column;
    if (lc < 0 || lc >= static_cast<int>(width)) throw ParseError(path, lineno, "label column out of range");
    std::vector<double> row;
    row.reserve(width - 1);
    for (std::size_t c = 0; c < width; ++c) {
      double v = 0.0;
      if (!detail::parse_double(cells[c], v))
        throw ParseError(path, lineno, "non-numeric cell '" + std::string(cells[c]) + "'");
      if (static_cast<int>(c) == lc) {
        if (v < 0.0 || v != std::floor(v)) throw ParseError(path, lineno, "label is not a class index");
        labels.push_back(static_cast<std::size_t>(v));
      } else {
        row.push_back(v);
      }
    }
    features.push_back(std::move(row));
  }
  if (labels.empty()) throw ParseError(path, lineno, "no data rows");

  Dataset ds{Matrix(labels.size(), width - 1), std::move(labels), 0};
  for (std::size_t r = 0; r < features.size(); ++r)
    std::copy(features[r].begin(), features[r].end(), ds.inputs.row(r).begin());
  ds.n_classes = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  return ds;
}

}  // namespace mcl
