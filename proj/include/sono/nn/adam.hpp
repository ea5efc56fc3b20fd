#pragma once

// Adam with bias correction and optional global-norm gradient clipping.

#include <Eigen/Dense>
#include <map>
#include <string>

#include "sono/nn/tensor.hpp"

namespace sono::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // 0 disables clipping
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamSet& params);

  long step_count() const { return step_; }
  AdamConfig& config() { return cfg_; }

 private:
  struct Moments {
    Eigen::VectorXd m, v;
  };
  AdamConfig cfg_;
  long step_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace sono::nn
