#pragma once

// Dense 64-bit tensors (row-major) and named parameter registries.

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace sono::nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

struct Tensor {
  std::vector<int> shape;
  Eigen::VectorXd data;  // row-major, length = product of shape

  Tensor() = default;
  Tensor(std::vector<int> shape_, double fill = 0.0);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  int numel() const;
  int rank() const { return static_cast<int>(shape.size()); }
  int rows() const;  // rank-2 only
  int cols() const;

  MatMap mat();             // rank-2 view
  ConstMatMap mat() const;
  void check_finite(const char* what) const;  // throws std::runtime_error on NaN/Inf
};

// Registry of named parameter/gradient pairs owned by the layers.
struct ParamRef {
  std::string name;
  Tensor* value = nullptr;
  Tensor* grad = nullptr;
};

struct ParamSet {
  std::vector<ParamRef> items;

  void add(const std::string& name, Tensor* value, Tensor* grad);
  const ParamRef* find(const std::string& name) const;
  long total_size() const;
  void zero_grads();
  double grad_norm() const;
  void scale_grads(double factor);
};

void throw_if_not_finite(const Eigen::Ref<const Mat>& m, const char* what);

}  // namespace sono::nn
