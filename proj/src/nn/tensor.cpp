#include "sono/nn/tensor.hpp"

#include <stdexcept>

namespace sono::nn {

Tensor::Tensor(std::vector<int> shape_, double fill) : shape(std::move(shape_)) {
  long n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive");
    n *= d;
  }
  data = Eigen::VectorXd::Constant(n, fill);
}

int Tensor::numel() const {
  long n = 1;
  for (int d : shape) n *= d;
  return static_cast<int>(n);
}

int Tensor::rows() const {
  if (rank() != 2) throw std::logic_error("tensor is not rank-2");
  return shape[0];
}

int Tensor::cols() const {
  if (rank() != 2) throw std::logic_error("tensor is not rank-2");
  return shape[1];
}

MatMap Tensor::mat() { return MatMap(data.data(), rows(), cols()); }

ConstMatMap Tensor::mat() const { return ConstMatMap(data.data(), rows(), cols()); }

void Tensor::check_finite(const char* what) const {
  if (!data.allFinite()) throw std::runtime_error(std::string("non-finite values in ") + what);
}

void ParamSet::add(const std::string& name, Tensor* value, Tensor* grad) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  if (!value || !grad) throw std::invalid_argument("null parameter registration: " + name);
  if (value->shape != grad->shape)
    throw std::invalid_argument("gradient shape mismatch for parameter: " + name);
  items.push_back({name, value, grad});
}

const ParamRef* ParamSet::find(const std::string& name) const {
  for (const auto& p : items)
    if (p.name == name) return &p;
  return nullptr;
}

long ParamSet::total_size() const {
  long n = 0;
  for (const auto& p : items) n += p.value->numel();
  return n;
}

void ParamSet::zero_grads() {
  for (auto& p : items) p.grad->data.setZero();
}

double ParamSet::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : items) sq += p.grad->data.squaredNorm();
  return std::sqrt(sq);
}

void ParamSet::scale_grads(double factor) {
  for (auto& p : items) p.grad->data *= factor;
}

void throw_if_not_finite(const Eigen::Ref<const Mat>& m, const char* what) {
  if (!m.allFinite()) throw std::runtime_error(std::string("non-finite values in ") + what);
}

}  // namespace sono::nn
