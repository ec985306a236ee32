#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ensdistill/categorical.hpp"
#include "ensdistill/ensemble.hpp"
#include "ensdistill/error.hpp"
#include "ensdistill/matrix.hpp"

namespace ensdistill {

/// Offset added to the open lower bound by ProperAlphaRule::lower_bound.
inline constexpr double kLowerBoundOffset = 1e-6;

enum class TargetKind { vanilla, sharpened, proper_posterior, sharpened_plus_proper };

enum class AugmentLabeling { original_image_label, augmented_image_label };

inline std::string to_string(TargetKind kind) {
  switch (kind) {
    case TargetKind::vanilla: return "vanilla";
    case TargetKind::sharpened: return "sharpened";
    case TargetKind::proper_posterior: return "proper_posterior";
    case TargetKind::sharpened_plus_proper: return "sharpened_plus_proper";
  }
  return "?";
}

inline TargetKind target_kind_from_string(const std::string& s) {
  for (auto k : {TargetKind::vanilla, TargetKind::sharpened, TargetKind::proper_posterior,
                 TargetKind::sharpened_plus_proper}) {
    if (to_string(k) == s) return k;
  }
  throw DomainError("unknown target kind '" + s + "'");
}

inline std::string to_string(AugmentLabeling rule) {
  return rule == AugmentLabeling::original_image_label ? "original_image_label" : "augmented_image_label";
}

inline AugmentLabeling augment_labeling_from_string(const std::string& s) {
  if (s == "original_image_label") return AugmentLabeling::original_image_label;
  if (s == "augmented_image_label") return AugmentLabeling::augmented_image_label;
  throw DomainError("unknown augment labeling '" + s + "'");
}

/// How the mixing weight for a teacher-misclassified sample is chosen from its
/// lower bound b: lower_bound -> b + 1e-6, interpolated(t) -> (1 - t) b + t,
/// one -> 1.
struct ProperAlphaRule {
  enum class Kind { lower_bound, interpolated, one };
  Kind kind = Kind::lower_bound;
  double t = 0.0;

  static ProperAlphaRule lower_bound() { return {Kind::lower_bound, 0.0}; }
  static ProperAlphaRule interpolated(double t) { return {Kind::interpolated, t}; }
  static ProperAlphaRule one() { return {Kind::one, 1.0}; }

  double resolve(double bound) const {
    switch (kind) {
      case Kind::lower_bound: return bound + kLowerBoundOffset;
      case Kind::interpolated: return (1.0 - t) * bound + t;
      case Kind::one: return 1.0;
    }
    return 1.0;
  }

  std::string name() const {
    switch (kind) {
      case Kind::lower_bound: return "lower_bound";
      case Kind::interpolated: return "interpolated";
      case Kind::one: return "one";
    }
    return "?";
  }

  bool operator==(const ProperAlphaRule&) const = default;
};

inline ProperAlphaRule proper_alpha_rule_from_string(const std::string& name, double t) {
  if (name == "lower_bound") return ProperAlphaRule::lower_bound();
  if (name == "interpolated") return ProperAlphaRule::interpolated(t);
  if (name == "one") return ProperAlphaRule::one();
  throw DomainError("unknown proper_alpha_rule '" + name + "'");
}

struct TargetPolicy {
  TargetKind kind = TargetKind::vanilla;
  double alpha = 0.0;  // sharpening weight
  ProperAlphaRule proper_alpha_rule;
  AugmentLabeling augment_labeling = AugmentLabeling::augmented_image_label;

  bool sharpens() const noexcept { return kind == TargetKind::sharpened || kind == TargetKind::sharpened_plus_proper; }
  bool corrects() const noexcept {
    return kind == TargetKind::proper_posterior || kind == TargetKind::sharpened_plus_proper;
  }

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("policy alpha must lie in [0, 1]");
    if (!(proper_alpha_rule.t >= 0.0 && proper_alpha_rule.t <= 1.0)) {
      throw DomainError("interpolation parameter t must lie in [0, 1]");
    }
  }

  static TargetPolicy vanilla() { return {}; }
  static TargetPolicy sharpened(double alpha) { return {TargetKind::sharpened, alpha, {}, AugmentLabeling::augmented_image_label}; }
  static TargetPolicy proper(ProperAlphaRule rule) { return {TargetKind::proper_posterior, 0.0, rule, AugmentLabeling::augmented_image_label}; }

  bool operator==(const TargetPolicy&) const = default;
};

inline Categorical one_hot(std::size_t y, std::size_t num_classes) {
  if (y >= num_classes) {
    throw DomainError("one_hot: class " + std::to_string(y) + " out of range for K=" + std::to_string(num_classes));
  }
  std::vector<double> probs(num_classes, 0.0);
  probs[y] = 1.0;
  return Categorical(std::move(probs));
}

/// q = (1 - alpha) p + alpha r, requiring H(r) < H(p) and argmax r = argmax p.
/// alpha = 0 and alpha = 1 are accepted as degenerate endpoints.
inline Categorical sharpen_target(const Categorical& p, double alpha, const Categorical& r) {
  if (p.size() != r.size()) throw ShapeError("sharpen_target: class count mismatch");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("sharpen_target: alpha must lie in [0, 1]");
  if (r.argmax() != p.argmax()) throw SharpeningError("sharpen_target: argmax(r) differs from argmax(p)");
  if (!(r.entropy() < p.entropy())) throw SharpeningError("sharpen_target: H(r) must be strictly below H(p)");
  std::vector<double> q(p.size());
  for (std::size_t k = 0; k < q.size(); ++k) q[k] = (1.0 - alpha) * p[k] + alpha * r[k];
  Categorical out(std::move(q));
  if (out.argmax() != p.argmax()) throw SharpeningError("sharpen_target: argmax not preserved");
  return out;
}

/// Open lower bound d / (d + 1), d = p[argmax p] - p[y_true], on the mixing
/// weight that makes y_true the argmax of the corrected target.
inline double proper_alpha_lower_bound(const Categorical& p, std::size_t y_true) {
  if (y_true >= p.size()) throw DomainError("proper_alpha_lower_bound: label out of range");
  const std::size_t top = p.argmax();
  if (top == y_true) throw NotMisclassifiedError("proper_alpha_lower_bound: sample is correctly classified");
  const double d = p[top] - p[y_true];
  return d / (d + 1.0);
}

/// q = (1 - alpha_i) p + alpha_i onehot(y_true) for a misclassified sample,
/// with bound < alpha_i <= 1. A result in which y_true does not hold the
/// unique lowest-index argmax (the tie at the bound) is rejected.
inline Categorical proper_target(const Categorical& p, std::size_t y_true, double alpha_i) {
  const double bound = proper_alpha_lower_bound(p, y_true);
  if (!(alpha_i > bound) || alpha_i > 1.0) {
    throw BoundViolationError("proper_target: alpha_i=" + std::to_string(alpha_i) + " outside (" +
                              std::to_string(bound) + ", 1]");
  }
  std::vector<double> q(p.size());
  for (std::size_t k = 0; k < q.size(); ++k) q[k] = (1.0 - alpha_i) * p[k] + (k == y_true ? alpha_i : 0.0);
  Categorical out(std::move(q));
  if (out.argmax() != y_true) throw BoundViolationError("proper_target: alpha_i ties the true class with the argmax");
  return out;
}

/// Applies `policy` to teacher distributions (one row per sample).
///
/// Correctly classified rows are sharpened toward onehot(label) when the policy
/// sharpens; misclassified rows are corrected when the policy corrects. Every
/// other row is passed through bitwise. A row that is already exactly
/// onehot(label) is its own sharpened target.
inline Matrix apply_target_policy(const Matrix& teacher_probs, std::span<const std::size_t> labels,
                                  const TargetPolicy& policy) {
  policy.validate();
  Matrix targets = teacher_probs;
  if (policy.kind == TargetKind::vanilla) return targets;
  if (labels.size() != teacher_probs.rows()) throw ShapeError("apply_target_policy: label count mismatch");
  const std::size_t k = teacher_probs.cols();
  for (std::size_t i = 0; i < teacher_probs.rows(); ++i) {
    Categorical p(teacher_probs.row(i));
    const std::size_t y = labels[i];
    if (y >= k) throw DomainError("apply_target_policy: label out of range");
    const bool correct = p.argmax() == y;
    std::optional<Categorical> q;
    if (correct && policy.sharpens() && policy.alpha > 0.0) {
      if (p.entropy() > 0.0) q = sharpen_target(p, policy.alpha, one_hot(y, k));
    } else if (!correct && policy.corrects()) {
      const double bound = proper_alpha_lower_bound(p, y);
      q = proper_target(p, y, policy.proper_alpha_rule.resolve(bound));
    }
    if (q) std::copy(q->probs().begin(), q->probs().end(), targets.row(i).begin());
  }
  return targets;
}

/// Teacher mean prediction followed by the policy's per-sample rule.
inline Matrix build_targets(const Ensemble& teacher, const Matrix& inputs, std::span<const std::size_t> labels,
                            const TargetPolicy& policy) {
  return apply_target_policy(ensemble_predict(teacher, inputs), labels, policy);
}

/// Target for an augmented input: the teacher's prediction on the clean input
/// (original_image_label) or on the augmented input itself.
inline Categorical label_augmented(const Ensemble& teacher, std::span<const double> x_original,
                                   std::span<const double> x_augmented, AugmentLabeling rule) {
  const auto x = rule == AugmentLabeling::original_image_label ? x_original : x_augmented;
  Matrix row(1, x.size());
  std::copy(x.begin(), x.end(), row.row(0).begin());
  return Categorical(ensemble_predict(teacher, row).row(0));
}

}  // namespace ensdistill
