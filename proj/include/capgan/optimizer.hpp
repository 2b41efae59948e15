#pragma once

#include <string>

#include <json.hpp>

#include "capgan/param_store.hpp"

namespace capgan {

enum class OptimizerKind { Sgd, Adam };

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Sgd;
  double learning_rate = 1e-4;
  double momentum = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Global-norm gradient clipping; 0 disables.
  double clip_norm = 0.0;
};

/// Descent on a gradient buffer: params -= lr * update(grads).
class Optimizer {
 public:
  Optimizer(const OptimizerConfig& cfg, const ParamStore& params);

  void step(ParamStore& params, const GradBuffer& grads);
  std::size_t steps() const { return steps_; }
  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  GradBuffer first_;
  GradBuffer second_;
  std::size_t steps_ = 0;
};

}  // namespace capgan
