#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "sono/common.hpp"
#include "sono/nn/adam.hpp"
#include "sono/nn/checkpoint.hpp"
#include "sono/nn/grad_check.hpp"
#include "sono/nn/layers.hpp"

using namespace sono;
using namespace sono::nn;

namespace {

void fill_gaussian(Tensor& t, Rng& rng, double sigma = 1.0) {
  for (int i = 0; i < t.data.size(); ++i) t.data[i] = rng.gaussian(sigma);
}

Mat random_mat(int r, int c, Rng& rng, double sigma = 1.0) {
  Mat m(r, c);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = rng.gaussian(sigma);
  return m;
}

}  // namespace

TEST_CASE("linear layer basics") {
  Rng rng(1);
  SUBCASE("identity weights pass the input through") {
    Linear lin(4, 4, rng);
    lin.w.mat() = Mat::Identity(4, 4);
    lin.b.data.setZero();
    Mat x = random_mat(3, 4, rng);
    CHECK((lin.forward(x) - x).norm() < 1e-15);
  }
  SUBCASE("zero input broadcasts the bias") {
    Linear lin(4, 6, rng);
    for (int i = 0; i < 6; ++i) lin.b.data[i] = 0.5 + i;
    Mat y = lin.forward(Mat::Zero(5, 4));
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 6; ++c) CHECK(y(r, c) == doctest::Approx(0.5 + c));
  }
  SUBCASE("shape mismatch is rejected") {
    Linear lin(4, 6, rng);
    CHECK_THROWS_AS(lin.forward(Mat::Zero(3, 5)), std::invalid_argument);
  }
}

TEST_CASE("linear gradients match finite differences at 1e-6") {
  Rng rng(2);
  Linear lin(7, 32, rng);
  Tensor x({7, 7}), gx({7, 7});
  fill_gaussian(x, rng);
  Mat target = random_mat(7, 32, rng);
  ParamSet ps;
  lin.register_params(ps, "lin");
  ps.add("x", &x, &gx);
  auto loss = [&] { return mse_loss(lin.forward(x.mat()), target).first; };
  auto grads = [&] {
    ps.zero_grads();
    auto [l, dy] = mse_loss(lin.forward(x.mat()), target);
    gx.mat() = lin.backward(dy);
  };
  GradCheckReport rep = grad_check(ps, loss, grads);
  CHECK(rep.pass(1e-6));
}

TEST_CASE("softmax rows") {
  SUBCASE("constant rows become uniform") {
    Mat x = Mat::Constant(2, 5, 3.7);
    Mat y = softmax_rows(x);
    for (int c = 0; c < 5; ++c) CHECK(y(0, c) == doctest::Approx(0.2).epsilon(1e-12));
  }
  SUBCASE("shift invariance") {
    Rng rng(3);
    Mat x = random_mat(4, 6, rng);
    Mat shifted = x.array() + 123.456;
    CHECK((softmax_rows(x) - softmax_rows(shifted)).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("closed form (0, ln 3) -> (0.25, 0.75)") {
    Mat x(1, 2);
    x << 0.0, std::log(3.0);
    Mat y = softmax_rows(x);
    CHECK(y(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(y(0, 1) == doctest::Approx(0.75).epsilon(1e-12));
  }
  SUBCASE("rows sum to one within 1e-12") {
    Rng rng(4);
    Mat y = softmax_rows(random_mat(20, 9, rng, 10.0));
    for (int r = 0; r < y.rows(); ++r) CHECK(std::abs(y.row(r).sum() - 1.0) < 1e-12);
  }
  SUBCASE("input gradient matches finite differences") {
    Rng rng(5);
    Tensor x({6, 7}), gx({6, 7});
    fill_gaussian(x, rng);
    Mat target = random_mat(6, 7, rng);
    ParamSet ps;
    ps.add("x", &x, &gx);
    auto loss = [&] { return mse_loss(softmax_rows(x.mat()), target).first; };
    auto grads = [&] {
      ps.zero_grads();
      Mat y = softmax_rows(x.mat());
      auto [l, dy] = mse_loss(y, target);
      gx.mat() = softmax_backward_rows(y, dy);
    };
    CHECK(grad_check(ps, loss, grads).pass(1e-6));
  }
}

TEST_CASE("multi-head attention") {
  Rng rng(6);
  SUBCASE("shapes follow the model wiring: (7, 32) -> (7, 64)") {
    MultiHeadAttention attn(32, 64, 2, rng);
    Mat x = random_mat(7, 32, rng);
    Mat z = attn.forward(x, 7);
    CHECK(z.rows() == 7);
    CHECK(z.cols() == 64);
  }
  SUBCASE("attention rows sum to one") {
    MultiHeadAttention attn(32, 64, 2, rng);
    Mat x = random_mat(21, 32, rng);  // three blocks of 7
    attn.forward(x, 7);
    for (int h = 0; h < 2; ++h) {
      const Mat& a = attn.attention(h);
      CHECK(a.cols() == 7);
      for (int r = 0; r < a.rows(); ++r) CHECK(std::abs(a.row(r).sum() - 1.0) < 1e-12);
    }
  }
  SUBCASE("permutation equivariance over rows") {
    MultiHeadAttention attn(16, 24, 2, rng);
    Mat x = random_mat(7, 16, rng);
    Mat z = attn.forward(x, 7);
    std::vector<int> perm = {3, 0, 6, 1, 5, 2, 4};
    Mat xp(7, 16), zp_expect(7, 24);
    for (int r = 0; r < 7; ++r) {
      xp.row(r) = x.row(perm[r]);
      zp_expect.row(r) = z.row(perm[r]);
    }
    Mat zp = attn.forward(xp, 7);
    CHECK((zp - zp_expect).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("weight and input gradients match finite differences at 1e-5") {
    MultiHeadAttention attn(8, 12, 2, rng);
    Tensor x({14, 8}), gx({14, 8});  // two blocks
    fill_gaussian(x, rng);
    Mat target = random_mat(14, 12, rng);
    ParamSet ps;
    attn.register_params(ps, "attn");
    ps.add("x", &x, &gx);
    auto loss = [&] { return mse_loss(attn.forward(x.mat(), 7), target).first; };
    auto grads = [&] {
      ps.zero_grads();
      auto [l, dy] = mse_loss(attn.forward(x.mat(), 7), target);
      gx.mat() = attn.backward(dy);
    };
    CHECK(grad_check(ps, loss, grads).pass(1e-5));
  }
}

TEST_CASE("lstm") {
  Rng rng(7);
  SUBCASE("zero weights and inputs give a zero summary") {
    Lstm lstm(6, rng);
    lstm.wx.data.setZero();
    lstm.wh.data.setZero();
    lstm.b.data.setZero();
    std::vector<Mat> xs(5, Mat::Zero(3, 6));
    CHECK(lstm.forward(xs).norm() == 0.0);
  }
  SUBCASE("hidden state is bounded by the gate algebra") {
    Lstm lstm(8, rng);
    std::vector<Mat> xs;
    for (int t = 0; t < 20; ++t) xs.push_back(random_mat(4, 8, rng, 5.0));
    Mat h = lstm.forward(xs);
    CHECK(h.cwiseAbs().maxCoeff() < 1.0);
  }
  SUBCASE("gradients over a T=5 window match finite differences at 1e-5") {
    Lstm lstm(8, rng);
    ParamSet ps;
    lstm.register_params(ps, "lstm");
    std::vector<Tensor> x(5, Tensor({3, 8})), gx(5, Tensor({3, 8}));
    for (int t = 0; t < 5; ++t) {
      fill_gaussian(x[t], rng);
      ps.add("x" + std::to_string(t), &x[t], &gx[t]);
    }
    Mat target = random_mat(3, 8, rng);
    auto run = [&] {
      std::vector<Mat> xs;
      for (int t = 0; t < 5; ++t) xs.push_back(x[t].mat());
      return lstm.forward(xs);
    };
    auto loss = [&] { return mse_loss(run(), target).first; };
    auto grads = [&] {
      ps.zero_grads();
      auto [l, dy] = mse_loss(run(), target);
      std::vector<Mat> dxs = lstm.backward(dy);
      for (int t = 0; t < 5; ++t) gx[t].mat() = dxs[t];
    };
    CHECK(grad_check(ps, loss, grads).pass(1e-5));
  }
}

TEST_CASE("mse loss") {
  Rng rng(8);
  SUBCASE("identical inputs give zero") {
    Mat a = random_mat(4, 5, rng);
    CHECK(mse_loss(a, a).first == 0.0);
  }
  SUBCASE("constant offset c gives c^2") {
    Mat a = random_mat(4, 5, rng);
    Mat b = a.array() + 0.3;
    CHECK(mse_loss(b, a).first == doctest::Approx(0.09).epsilon(1e-12));
  }
  SUBCASE("matches a scalar-loop oracle") {
    Mat a = random_mat(6, 3, rng), b = random_mat(6, 3, rng);
    auto [loss, grad] = mse_loss(a, b);
    double expect = 0.0;
    for (int r = 0; r < 6; ++r)
      for (int c = 0; c < 3; ++c) expect += (a(r, c) - b(r, c)) * (a(r, c) - b(r, c));
    expect /= 18.0;
    CHECK(loss == doctest::Approx(expect).epsilon(1e-12));
    for (int r = 0; r < 6; ++r)
      for (int c = 0; c < 3; ++c)
        CHECK(grad(r, c) == doctest::Approx(2.0 * (a(r, c) - b(r, c)) / 18.0).epsilon(1e-12));
  }
  SUBCASE("shape mismatch rejected") {
    CHECK_THROWS_AS(mse_loss(Mat::Zero(2, 2), Mat::Zero(2, 3)), std::invalid_argument);
  }
}

TEST_CASE("adam") {
  SUBCASE("zero gradients leave parameters untouched") {
    Tensor w({2, 2}, 1.5), gw({2, 2});
    ParamSet ps;
    ps.add("w", &w, &gw);
    Adam adam;
    adam.step(ps);
    for (int i = 0; i < 4; ++i) CHECK(w.data[i] == 1.5);
  }
  SUBCASE("one step on w^2 moves downhill") {
    Tensor w({1, 1}, 1.0), gw({1, 1});
    ParamSet ps;
    ps.add("w", &w, &gw);
    AdamConfig cfg;
    cfg.lr = 0.1;
    Adam adam(cfg);
    gw.data[0] = 2.0 * w.data[0];
    adam.step(ps);
    CHECK(w.data[0] < 1.0);
    CHECK(w.data[0] > 0.0);
  }
  SUBCASE("500 steps flatten a convex quadratic") {
    Rng rng(9);
    Tensor w({1, 8}), gw({1, 8});
    Eigen::VectorXd a(8), b(8);
    for (int i = 0; i < 8; ++i) {
      a[i] = rng.uniform(0.5, 2.0);
      b[i] = rng.uniform(-1.0, 1.0);
      w.data[i] = rng.uniform(-2.0, 2.0);
    }
    ParamSet ps;
    ps.add("w", &w, &gw);
    AdamConfig cfg;
    cfg.lr = 0.05;
    Adam adam(cfg);
    for (int it = 0; it < 500; ++it) {
      for (int i = 0; i < 8; ++i) gw.data[i] = a[i] * (w.data[i] - b[i]);
      adam.step(ps);
    }
    double grad_norm = 0.0;
    for (int i = 0; i < 8; ++i) grad_norm += std::pow(a[i] * (w.data[i] - b[i]), 2);
    CHECK(std::sqrt(grad_norm) < 1e-4);
    // closed-form minimum is b
    for (int i = 0; i < 8; ++i) CHECK(w.data[i] == doctest::Approx(b[i]).epsilon(1e-4));
  }
  SUBCASE("global-norm clipping caps the applied gradient") {
    Tensor w({1, 2}), gw({1, 2});
    ParamSet ps;
    ps.add("w", &w, &gw);
    gw.data[0] = 30.0;
    gw.data[1] = 40.0;  // norm 50
    AdamConfig cfg;
    cfg.clip_norm = 5.0;
    Adam adam(cfg);
    adam.step(ps);
    CHECK(std::abs(gw.data[0] - 3.0) < 1e-12);
    CHECK(std::abs(gw.data[1] - 4.0) < 1e-12);
  }
}

TEST_CASE("grad_check harness catches corrupted backward passes") {
  Rng rng(10);
  Linear lin(5, 4, rng);
  Tensor x({3, 5});
  fill_gaussian(x, rng);
  Mat target = random_mat(3, 4, rng);
  ParamSet ps;
  lin.register_params(ps, "lin");
  auto loss = [&] { return mse_loss(lin.forward(x.mat()), target).first; };
  auto good = [&] {
    ps.zero_grads();
    auto [l, dy] = mse_loss(lin.forward(x.mat()), target);
    lin.backward(dy);
  };
  CHECK(grad_check(ps, loss, good).pass(1e-6));
  auto corrupted = [&] {
    good();
    lin.gw.data *= 1.01;
  };
  GradCheckReport rep = grad_check(ps, loss, corrupted);
  CHECK_FALSE(rep.pass(1e-4));
}

TEST_CASE("checkpoint round trip") {
  Rng rng(11);
  Tensor a({3, 4}), b({1, 6}), a2({3, 4}), b2({1, 6});
  Tensor ga({3, 4}), gb({1, 6}), ga2({3, 4}), gb2({1, 6});
  fill_gaussian(a, rng);
  fill_gaussian(b, rng);
  ParamSet ps, ps2;
  ps.add("layer.w", &a, &ga);
  ps.add("layer.b", &b, &gb);
  ps2.add("layer.w", &a2, &ga2);
  ps2.add("layer.b", &b2, &gb2);
  const std::string path = "/tmp/sono_ckpt_test.bin";
  save_params(path, ps);
  load_params(path, ps2);
  CHECK((a.data - a2.data).norm() == 0.0);
  CHECK((b.data - b2.data).norm() == 0.0);

  SUBCASE("re-saving produces identical bytes") {
    const std::string path2 = "/tmp/sono_ckpt_test2.bin";
    save_params(path2, ps2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    CHECK(!s1.empty());
    std::remove(path2.c_str());
  }
  SUBCASE("missing parameter is an error") {
    Tensor c({2, 2}), gc({2, 2});
    ParamSet ps3;
    ps3.add("other.w", &c, &gc);
    CHECK_THROWS_AS(load_params(path, ps3), std::runtime_error);
  }
  SUBCASE("shape mismatch is an error") {
    Tensor c({4, 3}), gc({4, 3});
    ParamSet ps3;
    ps3.add("layer.w", &c, &gc);
    CHECK_THROWS_AS(load_params(path, ps3), std::runtime_error);
  }
  std::remove(path.c_str());
}

TEST_CASE("tensor finite checks") {
  Tensor t({2, 2});
  t.data[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(t.check_finite("test tensor"), std::runtime_error);
}
