#include "sono/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace sono::nn {
namespace {

Tensor xavier(int in, int out, Rng& rng) {
  Tensor t({in, out});
  double bound = std::sqrt(6.0 / (in + out));
  for (int i = 0; i < t.data.size(); ++i) t.data[i] = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

Linear::Linear(int in, int out, Rng& rng)
    : w(xavier(in, out, rng)), b({1, out}), gw({in, out}), gb({1, out}) {}

Mat Linear::forward(const Mat& x) {
  if (x.cols() != in_dim()) throw std::invalid_argument("linear: input width mismatch");
  x_cache_ = x;
  Mat y = x * w.mat();
  y.rowwise() += b.mat().row(0);
  throw_if_not_finite(y, "linear forward");
  return y;
}

Mat Linear::backward(const Mat& dy) {
  if (dy.rows() != x_cache_.rows() || dy.cols() != out_dim())
    throw std::invalid_argument("linear: gradient shape mismatch");
  gw.mat().noalias() += x_cache_.transpose() * dy;
  gb.mat().row(0) += dy.colwise().sum();
  Mat dx = dy * w.mat().transpose();
  throw_if_not_finite(dx, "linear backward");
  return dx;
}

void Linear::register_params(ParamSet& ps, const std::string& prefix) {
  ps.add(prefix + ".w", &w, &gw);
  ps.add(prefix + ".b", &b, &gb);
}

Mat Relu::forward(const Mat& x) {
  x_cache_ = x;
  return x.cwiseMax(0.0);
}

Mat Relu::backward(const Mat& dy) const {
  return (x_cache_.array() > 0.0).select(dy, Mat::Zero(dy.rows(), dy.cols()));
}

Mat softmax_rows(const Mat& x) {
  throw_if_not_finite(x, "softmax input");
  Mat y = x;
  for (int r = 0; r < y.rows(); ++r) {
    y.row(r).array() -= y.row(r).maxCoeff();
    y.row(r) = y.row(r).array().exp();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

Mat softmax_backward_rows(const Mat& y, const Mat& dy) {
  Mat dx = y;
  for (int r = 0; r < y.rows(); ++r) {
    double dot = y.row(r).dot(dy.row(r));
    dx.row(r) = y.row(r).array() * (dy.row(r).array() - dot);
  }
  return dx;
}

MultiHeadAttention::MultiHeadAttention(int in, int dk, int heads, Rng& rng) : dk_(dk) {
  if (heads < 1) throw std::invalid_argument("attention needs at least one head");
  for (int h = 0; h < heads; ++h) {
    wq_.push_back(xavier(in, dk, rng));
    wk_.push_back(xavier(in, dk, rng));
    wv_.push_back(xavier(in, dk, rng));
    gwq_.emplace_back(std::vector<int>{in, dk});
    gwk_.emplace_back(std::vector<int>{in, dk});
    gwv_.emplace_back(std::vector<int>{in, dk});
  }
  wo_ = xavier(dk * heads, dk, rng);
  gwo_ = Tensor({dk * heads, dk});
  q_.resize(heads);
  k_.resize(heads);
  v_.resize(heads);
  attn_.resize(heads);
}

Mat MultiHeadAttention::forward(const Mat& x, int rows_per_block) {
  const int heads = head_count();
  if (heads == 0) throw std::logic_error("attention is not initialized");
  if (rows_per_block < 1 || x.rows() % rows_per_block != 0)
    throw std::invalid_argument("attention: rows must divide into blocks");
  if (x.cols() != wq_[0].shape[0]) throw std::invalid_argument("attention: input width mismatch");
  x_cache_ = x;
  block_ = rows_per_block;
  const int blocks = static_cast<int>(x.rows()) / block_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk_));
  concat_cache_.resize(x.rows(), dk_ * heads);
  for (int h = 0; h < heads; ++h) {
    q_[h].noalias() = x * wq_[h].mat();
    k_[h].noalias() = x * wk_[h].mat();
    v_[h].noalias() = x * wv_[h].mat();
    attn_[h].resize(x.rows(), block_);
    for (int bidx = 0; bidx < blocks; ++bidx) {
      auto qb = q_[h].middleRows(bidx * block_, block_);
      auto kb = k_[h].middleRows(bidx * block_, block_);
      auto vb = v_[h].middleRows(bidx * block_, block_);
      Mat scores = qb * kb.transpose() * scale;
      Mat a = softmax_rows(scores);
      attn_[h].middleRows(bidx * block_, block_) = a;
      concat_cache_.block(bidx * block_, h * dk_, block_, dk_).noalias() = a * vb;
    }
  }
  Mat z = concat_cache_ * wo_.mat();
  throw_if_not_finite(z, "attention forward");
  return z;
}

Mat MultiHeadAttention::backward(const Mat& dz) {
  const int heads = head_count();
  const int blocks = static_cast<int>(x_cache_.rows()) / block_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk_));
  gwo_.mat().noalias() += concat_cache_.transpose() * dz;
  Mat dconcat = dz * wo_.mat().transpose();
  Mat dx = Mat::Zero(x_cache_.rows(), x_cache_.cols());
  for (int h = 0; h < heads; ++h) {
    Mat dq(x_cache_.rows(), dk_), dk(x_cache_.rows(), dk_), dv(x_cache_.rows(), dk_);
    for (int bidx = 0; bidx < blocks; ++bidx) {
      auto dhead = dconcat.block(bidx * block_, h * dk_, block_, dk_);
      auto a = attn_[h].middleRows(bidx * block_, block_);
      auto qb = q_[h].middleRows(bidx * block_, block_);
      auto kb = k_[h].middleRows(bidx * block_, block_);
      auto vb = v_[h].middleRows(bidx * block_, block_);
      dv.middleRows(bidx * block_, block_).noalias() = a.transpose() * dhead;
      Mat da = dhead * vb.transpose();
      Mat dscores = softmax_backward_rows(a, da) * scale;
      dq.middleRows(bidx * block_, block_).noalias() = dscores * kb;
      dk.middleRows(bidx * block_, block_).noalias() = dscores.transpose() * qb;
    }
    gwq_[h].mat().noalias() += x_cache_.transpose() * dq;
    gwk_[h].mat().noalias() += x_cache_.transpose() * dk;
    gwv_[h].mat().noalias() += x_cache_.transpose() * dv;
    dx.noalias() += dq * wq_[h].mat().transpose();
    dx.noalias() += dk * wk_[h].mat().transpose();
    dx.noalias() += dv * wv_[h].mat().transpose();
  }
  throw_if_not_finite(dx, "attention backward");
  return dx;
}

void MultiHeadAttention::register_params(ParamSet& ps, const std::string& prefix) {
  for (int h = 0; h < head_count(); ++h) {
    std::string hp = prefix + ".h" + std::to_string(h);
    ps.add(hp + ".wq", &wq_[h], &gwq_[h]);
    ps.add(hp + ".wk", &wk_[h], &gwk_[h]);
    ps.add(hp + ".wv", &wv_[h], &gwv_[h]);
  }
  ps.add(prefix + ".wo", &wo_, &gwo_);
}

Lstm::Lstm(int dim, Rng& rng)
    : wx(xavier(dim, 4 * dim, rng)),
      wh(xavier(dim, 4 * dim, rng)),
      b({1, 4 * dim}),
      gwx({dim, 4 * dim}),
      gwh({dim, 4 * dim}),
      gb({1, 4 * dim}),
      dim_(dim) {
  b.mat().row(0).segment(dim, dim).setConstant(1.0);  // forget gate starts open
}

Mat Lstm::forward(const std::vector<Mat>& xs) {
  if (xs.empty()) throw std::invalid_argument("lstm: empty window");
  const int batch = static_cast<int>(xs[0].rows());
  steps_.clear();
  steps_.reserve(xs.size());
  Mat h = Mat::Zero(batch, dim_);
  Mat c = Mat::Zero(batch, dim_);
  for (const Mat& x : xs) {
    if (x.rows() != batch || x.cols() != dim_) throw std::invalid_argument("lstm: input shape mismatch");
    Mat gates = x * wx.mat() + h * wh.mat();
    gates.rowwise() += b.mat().row(0);
    StepCache sc;
    sc.x = x;
    sc.h_prev = h;
    sc.c_prev = c;
    sc.i = (1.0 / (1.0 + (-gates.leftCols(dim_)).array().exp())).matrix();
    sc.f = (1.0 / (1.0 + (-gates.middleCols(dim_, dim_)).array().exp())).matrix();
    sc.g = gates.middleCols(2 * dim_, dim_).array().tanh().matrix();
    sc.o = (1.0 / (1.0 + (-gates.rightCols(dim_)).array().exp())).matrix();
    c = sc.f.cwiseProduct(c) + sc.i.cwiseProduct(sc.g);
    sc.c = c;
    sc.tanh_c = c.array().tanh().matrix();
    h = sc.o.cwiseProduct(sc.tanh_c);
    steps_.push_back(std::move(sc));
  }
  throw_if_not_finite(h, "lstm forward");
  return h;
}

std::vector<Mat> Lstm::backward(const Mat& dh_final) {
  if (steps_.empty()) throw std::logic_error("lstm: backward before forward");
  const int batch = static_cast<int>(dh_final.rows());
  std::vector<Mat> dxs(steps_.size());
  Mat dh = dh_final;
  Mat dc = Mat::Zero(batch, dim_);
  for (int t = static_cast<int>(steps_.size()) - 1; t >= 0; --t) {
    const StepCache& sc = steps_[t];
    Mat do_ = dh.cwiseProduct(sc.tanh_c);
    dc += dh.cwiseProduct(sc.o).cwiseProduct(
        (1.0 - sc.tanh_c.array().square()).matrix());
    Mat di = dc.cwiseProduct(sc.g);
    Mat df = dc.cwiseProduct(sc.c_prev);
    Mat dg = dc.cwiseProduct(sc.i);
    Mat dgates(batch, 4 * dim_);
    dgates.leftCols(dim_) = di.array() * sc.i.array() * (1.0 - sc.i.array());
    dgates.middleCols(dim_, dim_) = df.array() * sc.f.array() * (1.0 - sc.f.array());
    dgates.middleCols(2 * dim_, dim_) = dg.array() * (1.0 - sc.g.array().square());
    dgates.rightCols(dim_) = do_.array() * sc.o.array() * (1.0 - sc.o.array());
    gwx.mat().noalias() += sc.x.transpose() * dgates;
    gwh.mat().noalias() += sc.h_prev.transpose() * dgates;
    gb.mat().row(0) += dgates.colwise().sum();
    dxs[t] = dgates * wx.mat().transpose();
    dh = dgates * wh.mat().transpose();
    dc = dc.cwiseProduct(sc.f);
  }
  throw_if_not_finite(dxs[0], "lstm backward");
  return dxs;
}

void Lstm::register_params(ParamSet& ps, const std::string& prefix) {
  ps.add(prefix + ".wx", &wx, &gwx);
  ps.add(prefix + ".wh", &wh, &gwh);
  ps.add(prefix + ".b", &b, &gb);
}

std::pair<double, Mat> mse_loss(const Mat& pred, const Mat& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw std::invalid_argument("mse: shape mismatch");
  Mat diff = pred - target;
  double n = static_cast<double>(diff.size());
  double loss = diff.squaredNorm() / n;
  Mat grad = diff * (2.0 / n);
  return {loss, grad};
}

}  // namespace sono::nn
