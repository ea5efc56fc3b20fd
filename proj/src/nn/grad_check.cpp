#include "sono/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "sono/common.hpp"

namespace sono::nn {

GradCheckReport grad_check(ParamSet& params, const std::function<double()>& loss,
                           const std::function<void()>& compute_grads,
                           const GradCheckOptions& opts) {
  compute_grads();
  std::vector<std::pair<int, int>> coords;  // (param index, flat coordinate)
  for (std::size_t p = 0; p < params.items.size(); ++p)
    for (int c = 0; c < params.items[p].value->data.size(); ++c)
      coords.emplace_back(static_cast<int>(p), c);
  if (static_cast<int>(coords.size()) > opts.max_coords) {
    Rng rng(derive_seed(opts.seed, "nn.grad_check"));
    rng.shuffle(coords);
    coords.resize(opts.max_coords);
  }
  // Analytic gradients were produced once up front; finite differences then
  // probe each coordinate with the parameter restored afterwards.
  std::vector<Eigen::VectorXd> analytic;
  analytic.reserve(params.items.size());
  for (const auto& p : params.items) analytic.push_back(p.grad->data);

  GradCheckReport report;
  report.coords_checked = static_cast<int>(coords.size());
  for (auto [p, c] : coords) {
    double& value = params.items[p].value->data[c];
    const double saved = value;
    value = saved + opts.step;
    double lp = loss();
    value = saved - opts.step;
    double lm = loss();
    value = saved;
    double numeric = (lp - lm) / (2.0 * opts.step);
    double a = analytic[p][c];
    double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-5);
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_param = params.items[p].name;
      report.worst_coord = c;
    }
  }
  return report;
}

}  // namespace sono::nn
