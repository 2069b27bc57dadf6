#include "pimms/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace pimms::ad {

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("adam: learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("adam: betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw std::invalid_argument("adam: eps must be positive");
  if (weight_decay < 0.0) throw std::invalid_argument("adam: weight decay must be non-negative");
}

void adam_update(std::span<double> weights, std::span<const double> grads, std::span<double> m, std::span<double> v,
                 const AdamConfig& config, std::int64_t t) {
  config.validate();
  if (t < 1) throw std::invalid_argument("adam: step index must be >= 1");
  if (m.size() != weights.size() || v.size() != weights.size() || (!grads.empty() && grads.size() != weights.size()))
    throw std::invalid_argument("adam: moment/gradient buffers must match parameter size");
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double g = (grads.empty() ? 0.0 : grads[i]) + config.weight_decay * weights[i];
    m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
    v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    weights[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
  }
}

Adam::Adam(AdamConfig config) : config_(config) { config_.validate(); }

void Adam::step(ParamSet& params) {
  ++t_;
  for (auto& e : params) {
    if (!e.tensor.requires_grad()) continue;
    auto& mom = moments_[e.name];
    if (mom.m.size() != e.tensor.size()) {
      mom.m.assign(e.tensor.size(), 0.0);
      mom.v.assign(e.tensor.size(), 0.0);
    }
    adam_update(e.tensor.data(), e.tensor.grad(), mom.m, mom.v, config_, t_);
  }
}

void Adam::restore(std::int64_t steps, std::map<std::string, Moments> moments) {
  t_ = steps;
  moments_ = std::move(moments);
}

}  // namespace pimms::ad
