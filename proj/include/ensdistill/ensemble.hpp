#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "ensdistill/data.hpp"
#include "ensdistill/error.hpp"
#include "ensdistill/metrics.hpp"
#include "ensdistill/nn.hpp"
#include "ensdistill/optim.hpp"
#include "ensdistill/parallel.hpp"

namespace ensdistill {

/// Hard-label training with early stopping on validation NLL.
struct TrainingConfig {
  OptimizerConfig optimizer = OptimizerConfig::adam(1e-2);
  std::size_t batch_size = 64;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;

  void validate() const {
    optimizer.validate();
    if (batch_size < 1) throw DomainError("batch_size must be >= 1");
    if (max_epochs < 1) throw DomainError("max_epochs must be >= 1");
    if (patience < 1) throw DomainError("patience must be >= 1");
  }
};

struct TrainingRecord {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;  // 1-based
  double best_val_nll = std::numeric_limits<double>::infinity();
  std::vector<double> val_nll;
};

/// Epoch permutation of [0, n); depends only on (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, {0x73687566, epoch});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

/// Trains one network on hard labels. Validation NLL is checked after every
/// epoch; training stops after `patience` epochs without improvement and the
/// best snapshot is returned.
inline MlpModel train_classifier(const Dataset& train, const Dataset& val, const ArchSpec& arch,
                                 const TrainingConfig& config, std::uint64_t seed, TrainingRecord* record = nullptr) {
  config.validate();
  train.validate();
  val.validate();
  const auto& train_labels = train.require_labels();
  const auto& val_labels = val.require_labels();
  if (train.dim() != arch.input_dim || val.dim() != arch.input_dim) throw ShapeError("dataset/arch input mismatch");

  MlpModel model = init_model(arch, seed);
  OptimizerState opt = OptimizerState::create(config.optimizer, arch);
  MlpModel best = model;
  TrainingRecord rec;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto order = epoch_order(train.size(), seed, epoch);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<std::size_t> labels;
      labels.reserve(idx.size());
      for (auto i : idx) labels.push_back(train_labels[i]);
      auto batch = Batch::hard(train.inputs.gather_rows(idx), std::move(labels));
      auto [loss, grads] = backward(model, batch, LossKind::cross_entropy);
      optimizer_step(model, grads, opt);
    }
    const double val_nll = nll(predict_proba(model, val.inputs), val_labels);
    if (!std::isfinite(val_nll)) throw DivergenceError("non-finite validation NLL at epoch " + std::to_string(epoch));
    rec.val_nll.push_back(val_nll);
    rec.epochs_run = epoch;
    if (val_nll < rec.best_val_nll) {
      rec.best_val_nll = val_nll;
      rec.best_epoch = epoch;
      best = model;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  if (record) *record = std::move(rec);
  return best;
}

/// Teacher: an ordered set of same-architecture members with distinct seeds.
/// Members are kept sorted by seed so that averaging order is canonical.
class Ensemble {
 public:
  Ensemble() = default;

  explicit Ensemble(std::vector<MlpModel> members, std::vector<double> member_val_nll = {}) {
    if (members.empty()) throw DomainError("ensemble needs at least one member");
    if (!member_val_nll.empty() && member_val_nll.size() != members.size()) {
      throw ShapeError("one validation NLL per member expected");
    }
    std::vector<std::size_t> perm(members.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::sort(perm.begin(), perm.end(),
              [&](std::size_t a, std::size_t b) { return members[a].rng_seed < members[b].rng_seed; });
    for (auto i : perm) {
      members_.push_back(std::move(members[i]));
      if (!member_val_nll.empty()) member_val_nll_.push_back(member_val_nll[i]);
    }
    for (std::size_t i = 1; i < members_.size(); ++i) {
      if (members_[i].rng_seed == members_[i - 1].rng_seed) throw DomainError("ensemble member seeds must be distinct");
      if (!(members_[i].arch == members_[0].arch)) throw ShapeError("ensemble members must share one architecture");
    }
  }

  const std::vector<MlpModel>& members() const noexcept { return members_; }
  const ArchSpec& arch() const { return members_.at(0).arch; }
  std::size_t size() const noexcept { return members_.size(); }
  const std::vector<double>& member_val_nll() const noexcept { return member_val_nll_; }

  std::vector<std::uint64_t> member_seeds() const {
    std::vector<std::uint64_t> seeds;
    for (const auto& m : members_) seeds.push_back(m.rng_seed);
    return seeds;
  }

  bool operator==(const Ensemble&) const = default;

 private:
  std::vector<MlpModel> members_;
  std::vector<double> member_val_nll_;
};

/// Row i = (1/m) * sum_j softmax(member_j(x_i)), summed in member order.
inline Matrix ensemble_predict(const Ensemble& ensemble, const Matrix& inputs) {
  if (ensemble.size() == 0) throw DomainError("empty ensemble");
  Matrix total(inputs.rows(), ensemble.arch().num_classes, 0.0);
  for (const auto& member : ensemble.members()) {
    const Matrix probs = predict_proba(member, inputs);
    auto dst = total.values();
    auto src = probs.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  const double inv_m = 1.0 / static_cast<double>(ensemble.size());
  if (ensemble.size() > 1) {
    for (double& v : total.values()) v *= inv_m;
  }
  return total;
}

inline Matrix predict_proba(const Ensemble& ensemble, const Matrix& inputs) { return ensemble_predict(ensemble, inputs); }

/// Trains m members from seeds base_seed + j on identical data; diversity comes
/// from initialization and shuffling order only. Concurrent training (jobs > 1)
/// yields the same ensemble as sequential training.
inline Ensemble train_ensemble(const Dataset& train, const Dataset& val, const ArchSpec& arch, std::size_t m,
                               const TrainingConfig& config, std::uint64_t base_seed, std::size_t jobs = 1,
                               std::vector<TrainingRecord>* records = nullptr) {
  if (m < 1) throw DomainError("ensemble size must be >= 1");
  std::vector<MlpModel> members(m);
  std::vector<TrainingRecord> recs(m);
  parallel_for(m, jobs, [&](std::size_t j) {
    try {
      members[j] = train_classifier(train, val, arch, config, base_seed + j, &recs[j]);
    } catch (const DivergenceError& e) {
      throw DivergenceError("ensemble member " + std::to_string(j) + " diverged: " + e.what());
    }
  });
  std::vector<double> val_nll;
  for (const auto& r : recs) val_nll.push_back(r.best_val_nll);
  if (records) *records = recs;
  return Ensemble(std::move(members), std::move(val_nll));
}

}  // namespace ensdistill
