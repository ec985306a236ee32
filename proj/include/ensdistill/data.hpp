#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ensdistill/error.hpp"
#include "ensdistill/matrix.hpp"
#include "ensdistill/rng.hpp"

namespace ensdistill {

enum class SplitTag { train, val, test, ood };

inline std::string to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::train: return "train";
    case SplitTag::val: return "val";
    case SplitTag::test: return "test";
    case SplitTag::ood: return "ood";
  }
  return "?";
}

inline SplitTag split_tag_from_string(const std::string& s) {
  if (s == "train") return SplitTag::train;
  if (s == "val") return SplitTag::val;
  if (s == "test") return SplitTag::test;
  if (s == "ood") return SplitTag::ood;
  throw FormatError("unknown split tag '" + s + "'");
}

/// Row-major inputs with optional labels. Images are stored flattened with
/// `image_side` recording the side length of the square image (0 otherwise).
struct Dataset {
  Matrix inputs;
  std::optional<std::vector<std::size_t>> labels;
  std::size_t num_classes = 0;
  SplitTag split_tag = SplitTag::train;
  std::size_t image_side = 0;

  std::size_t size() const noexcept { return inputs.rows(); }
  std::size_t dim() const noexcept { return inputs.cols(); }
  bool labeled() const noexcept { return labels.has_value(); }

  const std::vector<std::size_t>& require_labels() const {
    if (!labels) throw DomainError("dataset has no labels");
    return *labels;
  }

  void validate() const {
    if (inputs.rows() < 1) throw DomainError("dataset must contain at least one sample");
    if (labels) {
      if (labels->size() != inputs.rows()) throw ShapeError("label count does not match input rows");
      for (auto y : *labels) {
        if (y >= num_classes) throw DomainError("label " + std::to_string(y) + " out of range");
      }
    }
    if (image_side != 0 && image_side * image_side != inputs.cols()) {
      throw ShapeError("image_side does not match input dimension");
    }
  }

  Dataset subset(std::span<const std::size_t> indices, SplitTag tag) const {
    Dataset out{inputs.gather_rows(indices), std::nullopt, num_classes, tag, image_side};
    if (labels) {
      std::vector<std::size_t> picked;
      picked.reserve(indices.size());
      for (auto i : indices) picked.push_back((*labels)[i]);
      out.labels = std::move(picked);
    }
    return out;
  }

  Dataset without_labels(SplitTag tag = SplitTag::ood) const {
    Dataset out = *this;
    out.labels.reset();
    out.split_tag = tag;
    return out;
  }

  bool operator==(const Dataset&) const = default;
};

/// Two interleaving half circles: class 0 on the unit upper arc centred at the
/// origin, class 1 on the lower arc centred at (1, 0.5).
inline Dataset make_two_moons(std::size_t n, double noise_sigma, std::uint64_t seed) {
  if (n < 2) throw DomainError("make_two_moons: n must be >= 2");
  if (noise_sigma < 0.0) throw DomainError("make_two_moons: noise must be >= 0");
  Rng rng = make_rng(seed, {0x6d6f6f6e});
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset ds{Matrix(n, 2), std::vector<std::size_t>(n), 2, SplitTag::train, 0};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % 2;
    const double t = angle(rng);
    double x = label == 0 ? std::cos(t) : 1.0 - std::cos(t);
    double y = label == 0 ? std::sin(t) : 0.5 - std::sin(t);
    const double nx = noise(rng);
    const double ny = noise(rng);
    ds.inputs(i, 0) = x + noise_sigma * nx;
    ds.inputs(i, 1) = y + noise_sigma * ny;
    (*ds.labels)[i] = label;
  }
  return ds;
}

/// K centres evenly spaced on a circle of the given radius (2-D).
inline std::vector<std::vector<double>> circle_centers(std::size_t k, double radius, double phase = 0.0) {
  std::vector<std::vector<double>> centers;
  for (std::size_t c = 0; c < k; ++c) {
    const double a = phase + 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(k);
    centers.push_back({radius * std::cos(a), radius * std::sin(a)});
  }
  return centers;
}

/// Balanced isotropic Gaussian mixture. Sample i is drawn around centre
/// i mod C and labelled (i mod C) mod K, so with C = jK centres every class is
/// a mixture of j blobs.
inline Dataset make_gaussian_blobs(std::size_t n, std::size_t k, const std::vector<std::vector<double>>& centers,
                                   double sigma, std::uint64_t seed) {
  if (k < 2) throw DomainError("make_gaussian_blobs: K must be >= 2");
  if (centers.empty() || centers.size() % k != 0) {
    throw ShapeError("make_gaussian_blobs: centre count must be a positive multiple of K");
  }
  if (n < 1) throw DomainError("make_gaussian_blobs: n must be >= 1");
  if (sigma < 0.0) throw DomainError("make_gaussian_blobs: sigma must be >= 0");
  const std::size_t d = centers.front().size();
  for (const auto& c : centers) {
    if (c.size() != d || d == 0) throw ShapeError("make_gaussian_blobs: ragged centres");
  }
  Rng rng = make_rng(seed, {0x626c6f62});
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset ds{Matrix(n, d), std::vector<std::size_t>(n), k, SplitTag::train, 0};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % centers.size();
    const std::size_t label = c % k;
    for (std::size_t j = 0; j < d; ++j) ds.inputs(i, j) = centers[c][j] + sigma * noise(rng);
    (*ds.labels)[i] = label;
  }
  return ds;
}

enum class OodKind { shifted_blobs, uniform_box, remote_ring };

struct OodParams {
  // shifted_blobs: every centre is translated by `shift` before sampling
  std::vector<std::vector<double>> centers;
  std::vector<double> shift;
  double sigma = 1.0;
  // uniform_box: each coordinate uniform in [low, high]
  std::size_t dim = 2;
  double low = 0.0;
  double high = 1.0;
  // remote_ring: first two coordinates on a circle, optional radial jitter
  double radius = 100.0;
  double ring_width = 0.0;
  // Optional separation check against the training inputs: the minimum
  // distance to `reference` must exceed min_separation * training radius.
  const Matrix* reference = nullptr;
  double min_separation = 0.0;
};

/// Largest distance from the centroid of `points`.
inline double training_radius(const Matrix& points) {
  std::vector<double> centroid(points.cols(), 0.0);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    for (std::size_t j = 0; j < points.cols(); ++j) centroid[j] += points(i, j);
  }
  for (double& c : centroid) c /= static_cast<double>(points.rows());
  double radius = 0.0;
  for (std::size_t i = 0; i < points.rows(); ++i) {
    double d2 = 0.0;
    for (std::size_t j = 0; j < points.cols(); ++j) d2 += (points(i, j) - centroid[j]) * (points(i, j) - centroid[j]);
    radius = std::max(radius, std::sqrt(d2));
  }
  return radius;
}

/// Smallest Euclidean distance between any row of `a` and any row of `b`.
inline double min_cross_distance(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ShapeError("min_cross_distance: dimension mismatch");
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < b.rows(); ++k) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < a.cols(); ++j) d2 += (a(i, j) - b(k, j)) * (a(i, j) - b(k, j));
      best = std::min(best, d2);
    }
  }
  return std::sqrt(best);
}

/// Unlabelled out-of-distribution sample. shifted_blobs is the natural
/// (on-support) surrogate; uniform_box and remote_ring lie off the manifold.
inline Dataset make_ood_set(OodKind kind, std::size_t n, const OodParams& params, std::uint64_t seed) {
  if (n < 1) throw DomainError("make_ood_set: n must be >= 1");
  Dataset ds;
  switch (kind) {
    case OodKind::shifted_blobs: {
      auto centers = params.centers;
      if (centers.size() < 2) throw DomainError("shifted_blobs needs at least two centres");
      if (!params.shift.empty()) {
        for (auto& c : centers) {
          if (c.size() != params.shift.size()) throw ShapeError("shift dimension mismatch");
          for (std::size_t j = 0; j < c.size(); ++j) c[j] += params.shift[j];
        }
      }
      ds = make_gaussian_blobs(n, centers.size(), centers, params.sigma, seed).without_labels();
      break;
    }
    case OodKind::uniform_box: {
      if (params.dim < 1 || !(params.high >= params.low)) throw DomainError("uniform_box: bad bounds");
      Rng rng = make_rng(seed, {0x626f78});
      std::uniform_real_distribution<double> u(params.low, params.high);
      ds.inputs = Matrix(n, params.dim);
      for (double& x : ds.inputs.values()) x = u(rng);
      break;
    }
    case OodKind::remote_ring: {
      if (params.dim < 2) throw DomainError("remote_ring needs dim >= 2");
      Rng rng = make_rng(seed, {0x72696e67});
      std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
      std::uniform_real_distribution<double> jitter(-0.5, 0.5);
      ds.inputs = Matrix(n, params.dim);
      for (std::size_t i = 0; i < n; ++i) {
        const double a = angle(rng);
        const double r = params.radius + params.ring_width * jitter(rng);
        ds.inputs(i, 0) = r * std::cos(a);
        ds.inputs(i, 1) = r * std::sin(a);
      }
      break;
    }
  }
  ds.split_tag = SplitTag::ood;
  if (params.reference != nullptr && params.min_separation > 0.0) {
    const double scale = training_radius(*params.reference);
    const double gap = min_cross_distance(ds.inputs, *params.reference);
    if (!(gap > params.min_separation * scale)) {
      throw DomainError("OOD set is not separated from the training data (gap " + std::to_string(gap) +
                        ", required > " + std::to_string(params.min_separation * scale) + ")");
    }
  }
  return ds;
}

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct SplitDataset {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Label-stratified split. Within each class the shuffled indices are cut at
/// round(cumulative_fraction * class_count); parts keep original index order.
inline SplitDataset split(const Dataset& dataset, SplitFractions fractions, std::uint64_t seed) {
  dataset.validate();
  if (!(fractions.train > 0.0 && fractions.val > 0.0 && fractions.test > 0.0)) {
    throw DomainError("split fractions must be positive");
  }
  if (fractions.train + fractions.val + fractions.test > 1.0 + 1e-12) {
    throw DomainError("split fractions must sum to at most 1");
  }
  const std::size_t groups = dataset.labels ? dataset.num_classes : 1;
  std::vector<std::vector<std::size_t>> by_class(groups);
  for (std::size_t i = 0; i < dataset.size(); ++i) by_class[dataset.labels ? (*dataset.labels)[i] : 0].push_back(i);

  Rng rng = make_rng(seed, {0x73706c6974});
  std::vector<std::size_t> parts[3];
  const double cumulative[3] = {fractions.train, fractions.train + fractions.val,
                                fractions.train + fractions.val + fractions.test};
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    std::size_t start = 0;
    for (int p = 0; p < 3; ++p) {
      const auto end = std::min(members.size(),
                                static_cast<std::size_t>(std::llround(cumulative[p] * static_cast<double>(members.size()))));
      for (std::size_t i = start; i < end; ++i) parts[p].push_back(members[i]);
      start = std::max(start, end);
    }
  }
  for (auto& part : parts) {
    if (part.empty()) throw DomainError("degenerate split: a part is empty");
    std::sort(part.begin(), part.end());
  }
  return {dataset.subset(parts[0], SplitTag::train), dataset.subset(parts[1], SplitTag::val),
          dataset.subset(parts[2], SplitTag::test)};
}

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline double parse_double(std::string_view s, const std::string& where) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw FormatError(where + ": bad number '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split_fields(std::string_view line, char delim) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(delim, start);
    fields.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

}  // namespace detail

/// Comma-delimited text: header "n,d,K,split_tag[,image_side]", then one row
/// per sample with d inputs and a trailing label (empty when unlabelled).
/// Doubles use shortest round-trip formatting, so save/load is exact.
inline void save_dataset_text(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << ds.size() << ',' << ds.dim() << ',' << ds.num_classes << ',' << to_string(ds.split_tag) << ','
      << ds.image_side << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double x : ds.inputs.row(i)) out << detail::format_double(x) << ',';
    if (ds.labels) out << (*ds.labels)[i];
    out << '\n';
  }
  if (!out) throw Error("write failed for " + path.string());
}

inline Dataset load_dataset_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("cannot open dataset " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw TruncatedError("empty dataset file");
  auto header = detail::split_fields(line, ',');
  if (header.size() != 4 && header.size() != 5) throw FormatError("dataset header must have 4 or 5 fields");
  auto to_size = [&](std::string_view s) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw FormatError("bad integer '" + std::string(s) + "'");
    return v;
  };
  const std::size_t n = to_size(header[0]);
  const std::size_t d = to_size(header[1]);
  Dataset ds{Matrix(n, d), std::nullopt, to_size(header[2]), split_tag_from_string(std::string(header[3])),
             header.size() == 5 ? to_size(header[4]) : 0};
  std::vector<std::size_t> labels;
  bool any_label = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw TruncatedError("dataset has fewer rows than its header declares");
    auto fields = detail::split_fields(line, ',');
    if (fields.size() != d + 1) throw FormatError("row " + std::to_string(i) + " has wrong field count");
    for (std::size_t j = 0; j < d; ++j) ds.inputs(i, j) = detail::parse_double(fields[j], "row " + std::to_string(i));
    if (!fields[d].empty()) {
      any_label = true;
      labels.push_back(to_size(fields[d]));
    } else if (any_label) {
      throw FormatError("row " + std::to_string(i) + " is missing its label");
    }
  }
  if (any_label) {
    if (labels.size() != n) throw FormatError("only some rows are labelled");
    ds.labels = std::move(labels);
  }
  ds.validate();
  return ds;
}

}  // namespace ensdistill
