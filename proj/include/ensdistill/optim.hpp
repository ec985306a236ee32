#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>

#include "ensdistill/error.hpp"
#include "ensdistill/nn.hpp"

namespace ensdistill {

enum class OptimizerKind { sgd_momentum, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw DomainError("learning rate must be positive and finite");
    }
    if (momentum < 0.0 || momentum >= 1.0) throw DomainError("momentum must lie in [0, 1)");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
      throw DomainError("Adam betas must lie in [0, 1)");
    }
    if (!(epsilon > 0.0)) throw DomainError("Adam epsilon must be positive");
  }

  static OptimizerConfig sgd(double lr, double momentum = 0.9) {
    return {OptimizerKind::sgd_momentum, lr, momentum};
  }
  static OptimizerConfig adam(double lr) { return {OptimizerKind::adam, lr}; }
};

/// Optimizer hyperparameters plus accumulators shaped like the model.
/// For momentum SGD only `first_moment` (the velocity) is used.
struct OptimizerState {
  OptimizerConfig config;
  double learning_rate = 0.0;
  std::uint64_t steps = 0;
  std::vector<DenseLayer> first_moment;
  std::vector<DenseLayer> second_moment;

  static OptimizerState create(const OptimizerConfig& config, const ArchSpec& arch) {
    config.validate();
    OptimizerState state{config, config.learning_rate, 0, zero_layers(arch), {}};
    if (config.kind == OptimizerKind::adam) state.second_moment = zero_layers(arch);
    return state;
  }
};

/// One in-place update. Momentum SGD: v = mu v + g, theta -= lr v.
/// Adam: bias-corrected moments, theta -= lr m_hat / (sqrt(v_hat) + eps).
inline void optimizer_step(MlpModel& model, const Gradients& grads, OptimizerState& state) {
  const auto& cfg = state.config;
  const double lr = state.learning_rate;
  if (state.first_moment.size() != model.layers.size() ||
      (cfg.kind == OptimizerKind::adam && state.second_moment.size() != model.layers.size())) {
    throw ShapeError("optimizer state does not match model");
  }
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    if (state.first_moment[l].weights.rows() != model.layers[l].weights.rows() ||
        state.first_moment[l].weights.cols() != model.layers[l].weights.cols()) {
      throw ShapeError("optimizer accumulator shape mismatch at layer " + std::to_string(l));
    }
  }
  ++state.steps;
  if (cfg.kind == OptimizerKind::sgd_momentum) {
    std::size_t block = 0;
    std::vector<std::span<double>> velocity;
    for (auto& layer : state.first_moment) {
      velocity.push_back(layer.weights.values());
      velocity.push_back(layer.bias);
    }
    for_each_parameter_block(model.layers, grads, [&](std::span<double> theta, std::span<const double> g) {
      auto v = velocity[block++];
      for (std::size_t i = 0; i < theta.size(); ++i) {
        v[i] = cfg.momentum * v[i] + g[i];
        theta[i] -= lr * v[i];
      }
    });
  } else {
    const double t = static_cast<double>(state.steps);
    const double correction1 = 1.0 - std::pow(cfg.beta1, t);
    const double correction2 = 1.0 - std::pow(cfg.beta2, t);
    std::vector<std::span<double>> m_blocks, v_blocks;
    for (std::size_t l = 0; l < state.first_moment.size(); ++l) {
      m_blocks.push_back(state.first_moment[l].weights.values());
      m_blocks.push_back(state.first_moment[l].bias);
      v_blocks.push_back(state.second_moment[l].weights.values());
      v_blocks.push_back(state.second_moment[l].bias);
    }
    std::size_t block = 0;
    for_each_parameter_block(model.layers, grads, [&](std::span<double> theta, std::span<const double> g) {
      auto m = m_blocks[block];
      auto v = v_blocks[block];
      ++block;
      for (std::size_t i = 0; i < theta.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        const double m_hat = m[i] / correction1;
        const double v_hat = v[i] / correction2;
        theta[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
      }
    });
  }
  if (!all_finite(model.layers)) throw DivergenceError("non-finite parameters after optimizer step");
}

}  // namespace ensdistill
