#include "capgan/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace capgan {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  throw std::invalid_argument("unknown optimizer '" + s + "' (expected sgd or adam)");
}

Optimizer::Optimizer(const OptimizerConfig& cfg, const ParamStore& params)
    : cfg_(cfg), first_(params.zero_grad_buffer()) {
  if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (cfg.kind == OptimizerKind::Adam) second_ = params.zero_grad_buffer();
}

void Optimizer::step(ParamStore& params, const GradBuffer& grads) {
  check_shape(grads.size() == params.size(), "optimizer: gradient slot count");
  ++steps_;
  double scale = 1.0;
  if (cfg_.clip_norm > 0.0) {
    const double norm = grad_norm(grads);
    if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
  }
  const double lr = cfg_.learning_rate;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (std::size_t s = 0; s < params.size(); ++s) {
    auto p = params.value(s).data();
    const auto g = grads[s].data();
    auto m = first_[s].data();
    check_shape(p.size() == g.size(), "optimizer: gradient shape for " + params.name(s));
    if (cfg_.kind == OptimizerKind::Sgd) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = scale * g[i];
        if (cfg_.momentum > 0.0) {
          m[i] = cfg_.momentum * m[i] + gi;
          p[i] -= lr * m[i];
        } else {
          p[i] -= lr * gi;
        }
      }
    } else {
      auto v = second_[s].data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = scale * g[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.epsilon);
      }
    }
  }
}

}  // namespace capgan
