#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ensdistill/augment.hpp"
#include "ensdistill/categorical.hpp"
#include "ensdistill/data.hpp"
#include "ensdistill/ensemble.hpp"
#include "ensdistill/error.hpp"
#include "ensdistill/metrics.hpp"
#include "ensdistill/nn.hpp"
#include "ensdistill/optim.hpp"
#include "ensdistill/targets.hpp"

namespace ensdistill {

/// sum_y t[y] (log t[y] - log q[y]) with 0 log 0 = 0 and q clamped to >= 1e-12.
inline double kl_divergence(std::span<const double> target, std::span<const double> predicted) {
  if (target.size() != predicted.size()) throw ShapeError("kl_divergence: class count mismatch");
  double total = 0.0;
  for (std::size_t k = 0; k < target.size(); ++k) {
    if (target[k] > 0.0) {
      total += target[k] * (std::log(target[k]) - std::log(std::max(predicted[k], kProbabilityFloor)));
    }
  }
  return total;
}

inline double kl_divergence(const Categorical& target, const Categorical& predicted) {
  return kl_divergence(target.probs(), predicted.probs());
}

/// Learning-rate drop applied after `epoch` epochs have completed.
struct LrDrop {
  std::size_t epoch = 0;
  double multiplier = 0.1;

  bool operator==(const LrDrop&) const = default;
};

/// Shrunk version of a 2500-epoch schedule with x0.1 drops at 2000/2100/2300.
inline std::vector<LrDrop> default_lr_schedule(std::size_t epochs = 400) {
  return {{epochs * 3 / 4, 0.1}, {epochs * 85 / 100, 0.1}, {epochs * 95 / 100, 0.1}};
}

struct DistillConfig {
  ArchSpec student_arch;
  std::size_t epochs = 400;
  std::vector<LrDrop> lr_schedule = default_lr_schedule(400);
  std::size_t batch_size = 64;
  TargetPolicy policy;
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;
  OptimizerConfig optimizer = OptimizerConfig::adam(2e-3);
  std::optional<AugmentSpec> augment;

  void validate() const {
    student_arch.validate();
    optimizer.validate();
    policy.validate();
    if (epochs < 1) throw DomainError("epochs must be >= 1");
    if (batch_size < 1) throw DomainError("batch_size must be >= 1");
    if (eval_every < 1) throw DomainError("eval_every must be >= 1");
    for (std::size_t i = 0; i < lr_schedule.size(); ++i) {
      if (lr_schedule[i].epoch >= epochs) throw DomainError("lr drop epoch must be < epochs");
      if (i > 0 && lr_schedule[i].epoch <= lr_schedule[i - 1].epoch) {
        throw DomainError("lr drop epochs must be strictly increasing");
      }
      if (!(lr_schedule[i].multiplier > 0.0)) throw DomainError("lr drop multiplier must be positive");
    }
  }

  /// Multiplier in effect during 1-based `epoch`.
  double lr_multiplier(std::size_t epoch) const {
    double m = 1.0;
    for (const auto& drop : lr_schedule) {
      if (drop.epoch < epoch) m *= drop.multiplier;
    }
    return m;
  }
};

struct HistoryEntry {
  std::size_t epoch = 0;
  double train_kl = 0.0;
  double val_nll = 0.0;
  double val_error = 0.0;
  double lr = 0.0;

  bool operator==(const HistoryEntry&) const = default;
};

struct DistillResult {
  MlpModel student;
  std::vector<HistoryEntry> history;
  std::size_t best_epoch = 0;
  double best_val_nll = std::numeric_limits<double>::infinity();
};

struct EpochStats {
  double mean_kl = 0.0;
  double flip_fraction = 0.0;  // augmented samples whose teacher argmax changed
  std::size_t samples = 0;
  std::vector<double> batch_losses;
};

/// One optimizer step on the mean KL from soft targets; returns the batch loss.
inline double distill_step(MlpModel& student, OptimizerState& opt, Matrix inputs, Matrix targets) {
  auto batch = Batch::soft(std::move(inputs), std::move(targets));
  auto [loss, grads] = backward(student, batch, LossKind::kl_divergence);
  optimizer_step(student, grads, opt);
  return loss;
}

/// Epoch over fixed precomputed targets.
inline EpochStats run_plain_epoch(const Matrix& inputs, const Matrix& targets, std::span<const std::size_t> order,
                                  std::size_t batch_size, MlpModel& student, OptimizerState& opt) {
  EpochStats stats;
  double weighted = 0.0;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    auto idx = order.subspan(start, end - start);
    const double loss = distill_step(student, opt, inputs.gather_rows(idx), targets.gather_rows(idx));
    stats.batch_losses.push_back(loss);
    weighted += loss * static_cast<double>(idx.size());
  }
  stats.samples = order.size();
  stats.mean_kl = weighted / static_cast<double>(order.size());
  return stats;
}

/// Teacher targets for a batch of augmented inputs under `rule`.
inline Matrix label_augmented_batch(const Ensemble& teacher, const Matrix& originals, const Matrix& augmented,
                                    AugmentLabeling rule) {
  return ensemble_predict(teacher, rule == AugmentLabeling::original_image_label ? originals : augmented);
}

/// Epoch in which every sample is freshly augmented and relabelled by the
/// teacher under `policy.augment_labeling`; the policy's sharpening/correction
/// then applies with the sample's original label.
inline EpochStats run_augmented_epoch(const Ensemble& teacher, const Dataset& train, const Augmenter& augmenter,
                                      const TargetPolicy& policy, std::span<const std::size_t> clean_argmax,
                                      std::uint64_t epoch, std::span<const std::size_t> order, std::size_t batch_size,
                                      MlpModel& student, OptimizerState& opt) {
  if (clean_argmax.size() != train.size()) throw ShapeError("clean argmax must cover the training set");
  EpochStats stats;
  double weighted = 0.0;
  std::size_t flips = 0;
  std::vector<std::size_t> labels;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    auto idx = order.subspan(start, end - start);
    Matrix originals = train.inputs.gather_rows(idx);
    Matrix augmented(idx.size(), train.dim());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      auto x = augmenter.apply(originals.row(r), epoch, idx[r]);
      std::copy(x.begin(), x.end(), augmented.row(r).begin());
    }
    const Matrix on_augmented = ensemble_predict(teacher, augmented);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (argmax(on_augmented.row(r)) != clean_argmax[idx[r]]) ++flips;
    }
    Matrix probs = policy.augment_labeling == AugmentLabeling::augmented_image_label
                       ? on_augmented
                       : ensemble_predict(teacher, originals);
    labels.clear();
    if (policy.kind != TargetKind::vanilla) {
      for (auto i : idx) labels.push_back(train.require_labels()[i]);
    }
    Matrix targets = apply_target_policy(probs, labels, policy);
    const double loss = distill_step(student, opt, std::move(augmented), std::move(targets));
    stats.batch_losses.push_back(loss);
    weighted += loss * static_cast<double>(idx.size());
  }
  stats.samples = order.size();
  stats.mean_kl = weighted / static_cast<double>(order.size());
  stats.flip_fraction = static_cast<double>(flips) / static_cast<double>(order.size());
  return stats;
}

inline std::uint64_t augment_stream_seed(std::uint64_t distill_seed) { return derive_seed(distill_seed, {0x617567}); }

/// Trains a student to minimize the mean KL from constructed targets to its
/// own predictions over the teacher's training inputs. Validation NLL is
/// recorded every `eval_every` epochs (and at the last epoch); the snapshot
/// with the lowest validation NLL is returned.
inline DistillResult distill(const Ensemble& teacher, const Dataset& train, const Dataset& val,
                             const DistillConfig& config) {
  config.validate();
  if (train.size() == 0) throw DomainError("distill: empty training set");
  if (val.size() == 0) throw DomainError("distill: empty validation set");
  train.validate();
  val.validate();
  if (teacher.arch().num_classes != config.student_arch.num_classes) {
    throw ShapeError("teacher and student disagree on num_classes");
  }
  if (teacher.arch().input_dim != config.student_arch.input_dim || train.dim() != config.student_arch.input_dim) {
    throw ShapeError("teacher, student and data disagree on input_dim");
  }
  const auto& val_labels = val.require_labels();
  const std::span<const std::size_t> train_labels =
      train.labels ? std::span<const std::size_t>(*train.labels) : std::span<const std::size_t>();
  if (config.policy.kind != TargetKind::vanilla && !train.labels) {
    throw DomainError("target policy needs training labels");
  }

  const Matrix clean_probs = ensemble_predict(teacher, train.inputs);
  Matrix clean_targets;
  std::vector<std::size_t> clean_argmax;
  std::optional<Augmenter> augmenter;
  if (config.augment) {
    config.augment->validate(train.dim());
    augmenter.emplace(*config.augment, augment_stream_seed(config.seed));
    for (std::size_t i = 0; i < clean_probs.rows(); ++i) clean_argmax.push_back(argmax(clean_probs.row(i)));
  } else {
    clean_targets = apply_target_policy(clean_probs, train_labels, config.policy);
  }

  DistillResult result;
  MlpModel student = init_model(config.student_arch, config.seed);
  result.student = student;
  OptimizerState opt = OptimizerState::create(config.optimizer, config.student_arch);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    opt.learning_rate = config.optimizer.learning_rate * config.lr_multiplier(epoch);
    const auto order = epoch_order(train.size(), config.seed, epoch);
    EpochStats stats;
    try {
      stats = augmenter ? run_augmented_epoch(teacher, train, *augmenter, config.policy, clean_argmax, epoch, order,
                                              config.batch_size, student, opt)
                        : run_plain_epoch(train.inputs, clean_targets, order, config.batch_size, student, opt);
    } catch (const DivergenceError& e) {
      throw DivergenceError("distillation diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    if (epoch % config.eval_every == 0 || epoch == config.epochs) {
      const Matrix val_probs = predict_proba(student, val.inputs);
      HistoryEntry entry{epoch, stats.mean_kl, nll(val_probs, val_labels), classification_error(val_probs, val_labels),
                         opt.learning_rate};
      if (!std::isfinite(entry.val_nll)) {
        throw DivergenceError("distillation diverged at epoch " + std::to_string(epoch) + ": non-finite validation NLL");
      }
      result.history.push_back(entry);
      if (entry.val_nll < result.best_val_nll) {
        result.best_val_nll = entry.val_nll;
        result.best_epoch = epoch;
        result.student = student;
      }
    }
  }
  return result;
}

}  // namespace ensdistill
