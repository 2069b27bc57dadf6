#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pimms/params.hpp"

namespace pimms::ad {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Coupled L2 term: weight_decay * w is added to the gradient before the
  /// moment updates.
  double weight_decay = 0.0;

  void validate() const;
};

/// One bias-corrected Adam update for step index `t` (t >= 1).
void adam_update(std::span<double> weights, std::span<const double> grads, std::span<double> m, std::span<double> v,
                 const AdamConfig& config, std::int64_t t);

class Adam {
 public:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };

  explicit Adam(AdamConfig config);

  /// Updates every parameter with requires_grad() using its accumulated grad
  /// (absent grads count as zero). Increments the step counter first.
  void step(ParamSet& params);

  const AdamConfig& config() const { return config_; }
  std::int64_t steps() const { return t_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

  void restore(std::int64_t steps, std::map<std::string, Moments> moments);

 private:
  AdamConfig config_;
  std::int64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace pimms::ad
