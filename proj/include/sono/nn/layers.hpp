#pragma once

// Network building blocks with explicit reverse-mode gradients: linear
// layers, ReLU, row softmax, scaled-dot-product multi-head attention, an
// LSTM, and mean-squared-error loss.  Rows are batch entries throughout;
// backward passes accumulate into the layer gradient buffers.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sono/common.hpp"
#include "sono/nn/tensor.hpp"

namespace sono::nn {

class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, Rng& rng);  // Xavier-uniform weights, zero bias

  Mat forward(const Mat& x);
  Mat backward(const Mat& dy);

  void register_params(ParamSet& ps, const std::string& prefix);
  int in_dim() const { return w.shape.empty() ? 0 : w.shape[0]; }
  int out_dim() const { return w.shape.empty() ? 0 : w.shape[1]; }

  Tensor w, b, gw, gb;  // w: in x out, b: 1 x out

 private:
  Mat x_cache_;
};

class Relu {
 public:
  Mat forward(const Mat& x);
  Mat backward(const Mat& dy) const;

 private:
  Mat x_cache_;
};

// Rows of the result are non-negative and sum to 1; max-subtraction keeps the
// exponentials in range for any shift of the input.
Mat softmax_rows(const Mat& x);
// dx given the forward output y and upstream dy.
Mat softmax_backward_rows(const Mat& y, const Mat& dy);

// Self-attention over blocks of `rows_per_block` consecutive input rows.  A
// batch stacks many blocks; attention never crosses block boundaries.  Heads
// project with bias-free matrices (in x dk) and the concatenation maps back
// through w_out ((dk * heads) x dk).
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(int in, int dk, int heads, Rng& rng);

  Mat forward(const Mat& x, int rows_per_block);
  Mat backward(const Mat& dz);

  void register_params(ParamSet& ps, const std::string& prefix);
  // Stacked attention rows of head h from the last forward; rows sum to 1.
  const Mat& attention(int head) const { return attn_[head]; }
  int head_count() const { return static_cast<int>(wq_.size()); }
  int key_dim() const { return dk_; }

 private:
  int dk_ = 0;
  int block_ = 0;
  std::vector<Tensor> wq_, wk_, wv_, gwq_, gwk_, gwv_;
  Tensor wo_, gwo_;
  Mat x_cache_, concat_cache_;
  std::vector<Mat> q_, k_, v_, attn_;
};

// Standard LSTM cell unrolled over a window; input and hidden width match.
// forward() consumes one (batch x dim) input per step from zero state and
// returns the final hidden state.
class Lstm {
 public:
  Lstm() = default;
  Lstm(int dim, Rng& rng);  // forget-gate bias starts at +1

  Mat forward(const std::vector<Mat>& xs);
  std::vector<Mat> backward(const Mat& dh_final);

  void register_params(ParamSet& ps, const std::string& prefix);
  int dim() const { return dim_; }

  Tensor wx, wh, b, gwx, gwh, gb;  // gate order: input, forget, cell, output

 private:
  struct StepCache {
    Mat x, h_prev, c_prev, i, f, g, o, c, tanh_c;
  };
  int dim_ = 0;
  std::vector<StepCache> steps_;
};

// Mean of squared componentwise differences and its gradient in pred.
std::pair<double, Mat> mse_loss(const Mat& pred, const Mat& target);

}  // namespace sono::nn
