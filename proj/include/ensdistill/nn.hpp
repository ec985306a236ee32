#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ensdistill/categorical.hpp"
#include "ensdistill/error.hpp"
#include "ensdistill/matrix.hpp"
#include "ensdistill/rng.hpp"

namespace ensdistill {

enum class Activation : std::uint32_t { relu = 0 };

/// Architecture of a dense feed-forward classifier. An empty hidden list is
/// multinomial logistic regression.
struct ArchSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_layers;
  std::size_t num_classes = 0;
  Activation activation = Activation::relu;

  void validate() const {
    if (input_dim < 1) throw DomainError("ArchSpec: input_dim must be >= 1");
    if (num_classes < 2) throw DomainError("ArchSpec: num_classes must be >= 2");
    for (auto w : hidden_layers) {
      if (w < 1) throw DomainError("ArchSpec: hidden widths must be >= 1");
    }
  }

  std::size_t depth() const noexcept { return hidden_layers.size(); }

  /// (fan_in, fan_out) of every dense layer, input to output.
  std::vector<std::pair<std::size_t, std::size_t>> layer_shapes() const {
    std::vector<std::pair<std::size_t, std::size_t>> shapes;
    std::size_t fan_in = input_dim;
    for (auto w : hidden_layers) {
      shapes.emplace_back(fan_in, w);
      fan_in = w;
    }
    shapes.emplace_back(fan_in, num_classes);
    return shapes;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto [fan_in, fan_out] : layer_shapes()) n += fan_in * fan_out + fan_out;
    return n;
  }

  bool operator==(const ArchSpec&) const = default;
};

/// Weights are stored [fan_in x fan_out] so that logits = inputs * W + b.
struct DenseLayer {
  Matrix weights;
  std::vector<double> bias;

  bool operator==(const DenseLayer&) const = default;
};

struct MlpModel {
  ArchSpec arch;
  std::vector<DenseLayer> layers;
  std::uint64_t rng_seed = 0;

  bool operator==(const MlpModel&) const = default;
};

/// Parameter-shaped collection (one DenseLayer per model layer).
using Gradients = std::vector<DenseLayer>;

inline std::vector<DenseLayer> zero_layers(const ArchSpec& arch) {
  std::vector<DenseLayer> layers;
  for (auto [fan_in, fan_out] : arch.layer_shapes()) {
    layers.push_back({Matrix(fan_in, fan_out), std::vector<double>(fan_out, 0.0)});
  }
  return layers;
}

/// He initialization: weights ~ N(0, 2 / fan_in), zero biases.
inline MlpModel init_model(const ArchSpec& arch, std::uint64_t seed) {
  arch.validate();
  MlpModel model{arch, zero_layers(arch), seed};
  Rng rng = make_rng(seed, {0x696e6974});
  for (auto& layer : model.layers) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(layer.weights.rows()));
    std::normal_distribution<double> normal(0.0, stddev);
    for (double& w : layer.weights.values()) w = normal(rng);
  }
  return model;
}

/// Applies `fn(param_span, grad_span)` to each weight block and bias vector.
template <class Fn>
void for_each_parameter_block(std::vector<DenseLayer>& params, const std::vector<DenseLayer>& other, Fn&& fn) {
  if (params.size() != other.size()) throw ShapeError("parameter block count mismatch");
  for (std::size_t l = 0; l < params.size(); ++l) {
    if (params[l].weights.rows() != other[l].weights.rows() ||
        params[l].weights.cols() != other[l].weights.cols() ||
        params[l].bias.size() != other[l].bias.size()) {
      throw ShapeError("parameter shape mismatch at layer " + std::to_string(l));
    }
    fn(params[l].weights.values(), other[l].weights.values());
    fn(std::span<double>(params[l].bias), std::span<const double>(other[l].bias));
  }
}

inline bool all_finite(const std::vector<DenseLayer>& layers) {
  for (const auto& layer : layers) {
    for (double w : layer.weights.values()) {
      if (!std::isfinite(w)) return false;
    }
    for (double b : layer.bias) {
      if (!std::isfinite(b)) return false;
    }
  }
  return true;
}

namespace detail {

inline void check_input_dim(const MlpModel& model, const Matrix& inputs) {
  if (inputs.cols() != model.arch.input_dim) {
    throw ShapeError("input has " + std::to_string(inputs.cols()) + " columns, model expects " +
                     std::to_string(model.arch.input_dim));
  }
}

inline void relu_inplace(Matrix& m) {
  for (double& x : m.values()) x = x > 0.0 ? x : 0.0;
}

/// Numerically stable log-softmax of one row.
inline void log_softmax_row(std::span<const double> logits, std::span<double> out) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - peak);
  const double log_norm = peak + std::log(total);
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] - log_norm;
}

}  // namespace detail

inline Matrix forward(const MlpModel& model, const Matrix& inputs) {
  detail::check_input_dim(model, inputs);
  Matrix activation = inputs;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    activation = affine(activation, model.layers[l].weights, model.layers[l].bias);
    if (l + 1 < model.layers.size()) detail::relu_inplace(activation);
  }
  return activation;
}

/// Softmax via max subtraction; shift-invariant and overflow-free for finite logits.
inline Categorical softmax(std::span<const double> logits) {
  if (logits.empty()) throw ShapeError("softmax of empty vector");
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> probs(logits.size());
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    probs[k] = std::exp(logits[k] - peak);
    total += probs[k];
  }
  for (double& p : probs) p /= total;
  return Categorical(std::move(probs));
}

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix probs(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto c = softmax(logits.row(i));
    std::copy(c.probs().begin(), c.probs().end(), probs.row(i).begin());
  }
  return probs;
}

inline Matrix predict_proba(const MlpModel& model, const Matrix& inputs) {
  return softmax_rows(forward(model, inputs));
}

enum class LossKind {
  cross_entropy,       // hard labels: -log q[y]
  kl_divergence,       // soft targets: sum t (log t - log q)
  soft_cross_entropy,  // soft targets: -sum t log q
};

/// Inputs plus either hard class labels or soft target rows.
struct Batch {
  Matrix inputs;
  std::variant<std::vector<std::size_t>, Matrix> targets;

  static Batch hard(Matrix inputs, std::vector<std::size_t> labels) {
    return Batch{std::move(inputs), std::move(labels)};
  }
  static Batch soft(Matrix inputs, Matrix targets) { return Batch{std::move(inputs), std::move(targets)}; }

  std::size_t size() const noexcept { return inputs.rows(); }
  bool has_hard_labels() const noexcept { return std::holds_alternative<std::vector<std::size_t>>(targets); }

  void validate(std::size_t num_classes) const {
    if (inputs.rows() == 0) throw ShapeError("empty batch");
    if (const auto* labels = std::get_if<std::vector<std::size_t>>(&targets)) {
      if (labels->size() != inputs.rows()) throw ShapeError("label count does not match batch size");
      for (auto y : *labels) {
        if (y >= num_classes) throw DomainError("label " + std::to_string(y) + " out of range");
      }
    } else {
      const auto& soft_targets = std::get<Matrix>(targets);
      if (soft_targets.rows() != inputs.rows() || soft_targets.cols() != num_classes) {
        throw ShapeError("soft target shape " + shape_string(soft_targets) + " does not match batch");
      }
      for (std::size_t i = 0; i < soft_targets.rows(); ++i) {
        if (!is_on_simplex(soft_targets.row(i))) {
          throw DomainError("soft target row " + std::to_string(i) + " is not a probability vector");
        }
      }
    }
  }
};

struct LossAndGradients {
  double loss = 0.0;
  Gradients gradients;
};

/// Mean loss over the batch and its exact gradient with respect to every parameter.
///
/// All three losses share the logit gradient (softmax - target) / batch_size;
/// KL and soft cross-entropy differ only by the target entropy, which is
/// constant in the parameters.
inline LossAndGradients backward(const MlpModel& model, const Batch& batch, LossKind kind) {
  detail::check_input_dim(model, batch.inputs);
  batch.validate(model.arch.num_classes);
  if (batch.has_hard_labels() != (kind == LossKind::cross_entropy)) {
    throw DomainError("loss kind does not match batch target type");
  }

  const std::size_t n_layers = model.layers.size();
  std::vector<Matrix> activations;  // activations[l] is the input of layer l
  activations.reserve(n_layers);
  activations.push_back(batch.inputs);
  Matrix logits;
  for (std::size_t l = 0; l < n_layers; ++l) {
    Matrix z = affine(activations.back(), model.layers[l].weights, model.layers[l].bias);
    if (l + 1 < n_layers) {
      detail::relu_inplace(z);
      activations.push_back(std::move(z));
    } else {
      logits = std::move(z);
    }
  }

  const std::size_t batch_size = batch.size();
  const std::size_t num_classes = model.arch.num_classes;
  const double log_floor = std::log(kProbabilityFloor);
  const double inv_batch = 1.0 / static_cast<double>(batch_size);

  Matrix delta(batch_size, num_classes);
  std::vector<double> log_q(num_classes);
  double total_loss = 0.0;
  for (std::size_t i = 0; i < batch_size; ++i) {
    detail::log_softmax_row(logits.row(i), log_q);
    auto d = delta.row(i);
    double sample_loss = 0.0;
    if (kind == LossKind::cross_entropy) {
      const auto y = std::get<std::vector<std::size_t>>(batch.targets)[i];
      sample_loss = -std::max(log_q[y], log_floor);
      for (std::size_t k = 0; k < num_classes; ++k) d[k] = std::exp(log_q[k]);
      d[y] -= 1.0;
    } else {
      auto t = std::get<Matrix>(batch.targets).row(i);
      for (std::size_t k = 0; k < num_classes; ++k) {
        const double lq = std::max(log_q[k], log_floor);
        if (t[k] > 0.0) {
          sample_loss += kind == LossKind::kl_divergence ? t[k] * (std::log(t[k]) - lq) : -t[k] * lq;
        }
        d[k] = std::exp(log_q[k]) - t[k];
      }
    }
    total_loss += sample_loss;
    for (double& v : d) v *= inv_batch;
  }
  const double loss = total_loss * inv_batch;
  if (!std::isfinite(loss)) throw DivergenceError("non-finite training loss");

  Gradients grads = zero_layers(model.arch);
  for (std::size_t l = n_layers; l-- > 0;) {
    const Matrix& input = activations[l];
    add_transpose_product(input, delta, grads[l].weights);
    for (std::size_t i = 0; i < delta.rows(); ++i) {
      auto d = delta.row(i);
      for (std::size_t j = 0; j < d.size(); ++j) grads[l].bias[j] += d[j];
    }
    if (l > 0) {
      Matrix upstream = product_transpose(delta, model.layers[l].weights);
      // relu'(z) = 1 exactly where the stored activation is positive
      for (std::size_t idx = 0; idx < upstream.size(); ++idx) {
        if (!(input.values()[idx] > 0.0)) upstream.values()[idx] = 0.0;
      }
      delta = std::move(upstream);
    }
  }
  return {loss, std::move(grads)};
}

}  // namespace ensdistill
