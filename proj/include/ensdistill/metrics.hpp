#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ensdistill/categorical.hpp"
#include "ensdistill/data.hpp"
#include "ensdistill/error.hpp"
#include "ensdistill/matrix.hpp"

namespace ensdistill {

inline constexpr std::size_t kDefaultHistogramBins = 30;

namespace detail {

inline void check_prediction_labels(const Matrix& predictions, std::span<const std::size_t> labels) {
  if (predictions.rows() != labels.size()) throw ShapeError("prediction/label count mismatch");
  if (predictions.rows() == 0) throw ShapeError("no predictions");
  for (auto y : labels) {
    if (y >= predictions.cols()) throw DomainError("label out of range");
  }
}

}  // namespace detail

/// Mean of -log p[y], with p clamped to >= 1e-12.
inline double nll(const Matrix& predictions, std::span<const std::size_t> labels) {
  detail::check_prediction_labels(predictions, labels);
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    total -= std::log(std::max(predictions(i, labels[i]), kProbabilityFloor));
  }
  return total / static_cast<double>(labels.size());
}

/// Squared error to the one-hot label, averaged over samples and classes.
inline double brier(const Matrix& predictions, std::span<const std::size_t> labels) {
  detail::check_prediction_labels(predictions, labels);
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto p = predictions.row(i);
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double diff = p[k] - (k == labels[i] ? 1.0 : 0.0);
      total += diff * diff;
    }
  }
  return total / static_cast<double>(labels.size() * predictions.cols());
}

/// Fraction of rows whose argmax (lowest index on ties) differs from the label.
inline double classification_error(const Matrix& predictions, std::span<const std::size_t> labels) {
  detail::check_prediction_labels(predictions, labels);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (argmax(predictions.row(i)) != labels[i]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

inline double predictive_entropy(const Categorical& p) { return p.entropy(); }
inline double predictive_entropy(std::span<const double> p) { return entropy(p); }

struct EntropyHistogram {
  std::vector<double> bin_edges;  // bins + 1 increasing edges over [0, ln K]
  std::vector<std::size_t> counts;
  bool normalized = false;  // presentation hint; counts are always raw

  std::size_t bins() const noexcept { return counts.size(); }

  std::size_t total() const noexcept {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }

  /// counts / total, the density-style variant.
  std::vector<double> fractions() const {
    std::vector<double> out(counts.size(), 0.0);
    const auto n = total();
    if (n == 0) return out;
    for (std::size_t b = 0; b < counts.size(); ++b) out[b] = static_cast<double>(counts[b]) / static_cast<double>(n);
    return out;
  }

  bool operator==(const EntropyHistogram&) const = default;
};

inline std::vector<double> entropy_bin_edges(std::size_t num_classes, std::size_t bins) {
  const double top = std::log(static_cast<double>(num_classes));
  std::vector<double> edges(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) edges[b] = top * static_cast<double>(b) / static_cast<double>(bins);
  edges.back() = top;
  return edges;
}

/// Histogram of per-row entropies over uniform bins spanning [0, ln K].
/// A value exactly on an interior edge lands in the upper bin; ln K itself
/// lands in the last bin.
inline EntropyHistogram entropy_histogram(const Matrix& predictions, std::size_t bins = kDefaultHistogramBins) {
  if (bins < 1) throw DomainError("entropy_histogram: bins must be >= 1");
  if (predictions.cols() < 2) throw ShapeError("entropy_histogram: need at least two classes");
  EntropyHistogram hist{entropy_bin_edges(predictions.cols(), bins), std::vector<std::size_t>(bins, 0), false};
  for (std::size_t i = 0; i < predictions.rows(); ++i) {
    const double h = entropy(predictions.row(i));
    auto it = std::upper_bound(hist.bin_edges.begin(), hist.bin_edges.end(), h);
    auto bin = static_cast<std::ptrdiff_t>(it - hist.bin_edges.begin()) - 1;
    bin = std::clamp<std::ptrdiff_t>(bin, 0, static_cast<std::ptrdiff_t>(bins) - 1);
    ++hist.counts[static_cast<std::size_t>(bin)];
  }
  return hist;
}

/// Evaluation of one model on one dataset. Label-dependent metrics are absent
/// (not zero) for unlabelled data.
struct EvalReport {
  std::string dataset_id;
  std::size_t n_samples = 0;
  std::optional<double> error;
  std::optional<double> nll;
  std::optional<double> brier;
  double mean_entropy = 0.0;
  EntropyHistogram histogram;

  bool operator==(const EvalReport&) const = default;
};

inline EvalReport evaluate_predictions(const Matrix& predictions, const Dataset& dataset, std::string dataset_id,
                                       std::size_t bins = kDefaultHistogramBins) {
  if (predictions.rows() != dataset.size()) throw ShapeError("prediction count does not match dataset");
  if (predictions.rows() == 0) throw DomainError("cannot evaluate on an empty dataset");
  EvalReport report;
  report.dataset_id = std::move(dataset_id);
  report.n_samples = dataset.size();
  if (dataset.labels) {
    report.error = classification_error(predictions, *dataset.labels);
    report.nll = nll(predictions, *dataset.labels);
    report.brier = brier(predictions, *dataset.labels);
  }
  double total_entropy = 0.0;
  for (std::size_t i = 0; i < predictions.rows(); ++i) total_entropy += entropy(predictions.row(i));
  report.mean_entropy = total_entropy / static_cast<double>(predictions.rows());
  report.histogram = entropy_histogram(predictions, bins);
  return report;
}

/// Works for anything with a `predict_proba(model, inputs)` overload
/// (single networks and ensembles).
template <class Model>
EvalReport evaluate(const Model& model, const Dataset& dataset, std::string dataset_id,
                    std::size_t bins = kDefaultHistogramBins) {
  return evaluate_predictions(predict_proba(model, dataset.inputs), dataset, std::move(dataset_id), bins);
}

}  // namespace ensdistill
