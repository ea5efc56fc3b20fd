#include "sono/nn/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace sono::nn {

void Adam::step(ParamSet& params) {
  if (cfg_.clip_norm > 0.0) {
    double norm = params.grad_norm();
    if (norm > cfg_.clip_norm) params.scale_grads(cfg_.clip_norm / norm);
  }
  ++step_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (auto& p : params.items) {
    auto [it, inserted] = moments_.try_emplace(p.name);
    Moments& mom = it->second;
    if (inserted) {
      mom.m = Eigen::VectorXd::Zero(p.value->data.size());
      mom.v = Eigen::VectorXd::Zero(p.value->data.size());
    } else if (mom.m.size() != p.value->data.size()) {
      throw std::invalid_argument("adam: parameter size changed: " + p.name);
    }
    const Eigen::VectorXd& g = p.grad->data;
    mom.m = cfg_.beta1 * mom.m + (1.0 - cfg_.beta1) * g;
    mom.v = cfg_.beta2 * mom.v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    p.value->data -=
        cfg_.lr * (mom.m / bc1).cwiseQuotient(((mom.v / bc2).cwiseSqrt().array() + cfg_.eps).matrix());
    p.value->check_finite(p.name.c_str());
  }
}

}  // namespace sono::nn
