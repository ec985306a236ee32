#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ensdistill/error.hpp"

namespace ensdistill {

/// Tolerance on the total mass of a probability vector.
inline constexpr double kSimplexTolerance = 1e-9;

/// Floor applied to any probability before taking its logarithm.
inline constexpr double kProbabilityFloor = 1e-12;

/// Index of the largest entry; ties resolve to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw ShapeError("argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

/// Shannon entropy in nats with 0 log 0 = 0.
inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double x : p) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return h;
}

inline bool is_on_simplex(std::span<const double> p, double tolerance = kSimplexTolerance) {
  if (p.empty()) return false;
  double total = 0.0;
  for (double x : p) {
    if (!(x >= 0.0) || !std::isfinite(x)) return false;
    total += x;
  }
  return std::abs(total - 1.0) <= tolerance;
}

/// A normalized probability vector over K >= 1 classes.
class Categorical {
 public:
  /// Validates non-negativity and unit mass (within kSimplexTolerance).
  explicit Categorical(std::vector<double> probs) : probs_(std::move(probs)) {
    if (!is_on_simplex(probs_)) {
      throw DomainError("not a probability vector (entries must be >= 0 and sum to 1)");
    }
  }

  explicit Categorical(std::span<const double> probs)
      : Categorical(std::vector<double>(probs.begin(), probs.end())) {}

  Categorical(std::initializer_list<double> probs) : Categorical(std::vector<double>(probs)) {}

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t k) const { return probs_[k]; }
  std::span<const double> probs() const noexcept { return probs_; }
  std::size_t argmax() const { return ensdistill::argmax(probs_); }
  double entropy() const { return ensdistill::entropy(probs_); }

  bool operator==(const Categorical&) const = default;

 private:
  std::vector<double> probs_;
};

}  // namespace ensdistill
