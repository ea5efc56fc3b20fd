#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Geometry>
#include <set>
#include <sstream>

#include "sono/kinematics.hpp"

using namespace sono;
using namespace sono::kin;

namespace {

JointAngles random_in_limit(const HandSkeleton& sk, Rng& rng, double margin = 0.0) {
  JointAngles theta(sk.dof_count());
  for (int d = 0; d < sk.dof_count(); ++d) {
    double lo = sk.dofs[d].lo + margin;
    double hi = sk.dofs[d].hi - margin;
    theta[d] = rng.uniform(lo, hi);
  }
  return theta;
}

Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Vector3d axis(rng.gaussian(), rng.gaussian(), rng.gaussian());
  axis.normalize();
  return Eigen::AngleAxisd(rng.uniform(0.0, 3.14), axis).toRotationMatrix();
}

}  // namespace

TEST_CASE("default skeleton shape") {
  HandSkeleton sk = default_skeleton();
  CHECK(sk.landmarks.size() == 23);
  CHECK(sk.dof_count() == 22);
  CHECK(sk.landmark_index("wrist") == 0);
  std::set<std::string> names(sk.landmarks.begin(), sk.landmarks.end());
  CHECK(names.size() == 23);
  CHECK(names.count("index_root") == 1);
  CHECK(names.count("pinky_root") == 1);
  for (const auto& s : sk.segments) {
    CHECK(s.length > 0.0);
    CHECK(std::abs(s.rest_dir.norm() - 1.0) < 1e-9);
  }
}

TEST_CASE("middle finger chain rest length is the configured 0.098 m") {
  HandSkeleton sk = default_skeleton();
  // Oracle: manual addition over the three phalanx segments.
  double total = 0.0;
  for (const auto& s : sk.segments) {
    const std::string& child = sk.landmarks[s.child];
    if (child == "middle_mid1" || child == "middle_mid2" || child == "middle_tip")
      total += s.length;
  }
  CHECK(total == doctest::Approx(0.098).epsilon(1e-12));
}

TEST_CASE("rest pose: wrist at origin, points equal rest layout") {
  HandSkeleton sk = default_skeleton();
  JointPositions p = forward_kinematics(sk, JointAngles::Zero(22));
  CHECK(p.row(0).norm() == 0.0);
  // middle base sits on +Z in the rest frame
  int mb = sk.landmark_index("middle_base");
  CHECK(p(mb, 0) == doctest::Approx(0.0));
  CHECK(p(mb, 1) == doctest::Approx(0.0));
  CHECK(p(mb, 2) == doctest::Approx(0.082));
}

TEST_CASE("tip flexion leaves other chains untouched") {
  HandSkeleton sk = default_skeleton();
  SkeletonIndex idx(sk);
  JointAngles theta = JointAngles::Zero(22);
  JointPositions before = forward_frames(idx, theta).points;
  int d = sk.dof_index("index_mid2_flex");
  REQUIRE(d >= 0);
  theta[d] += 0.1;
  JointPositions after = forward_frames(idx, theta).points;
  int tip = sk.landmark_index("index_tip");
  for (int lm = 0; lm < 23; ++lm) {
    if (lm == tip) continue;
    CHECK((after.row(lm) - before.row(lm)).norm() < 1e-15);
  }
  CHECK((after.row(tip) - before.row(tip)).norm() > 1e-4);
}

TEST_CASE("segment lengths survive any in-limit pose") {
  HandSkeleton sk = default_skeleton();
  SkeletonIndex idx(sk);
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    JointPositions p = forward_frames(idx, random_in_limit(sk, rng)).points;
    for (const auto& s : sk.segments) {
      double len = (p.row(s.child) - p.row(s.parent)).norm();
      CHECK(std::abs(len - s.length) < 1e-9);
    }
  }
}

TEST_CASE("out-of-limit angles name the offending DOF") {
  HandSkeleton sk = default_skeleton();
  JointAngles theta = JointAngles::Zero(22);
  int d = sk.dof_index("ring_base_flex");
  theta[d] = sk.dofs[d].hi + 0.5;
  try {
    forward_kinematics(sk, theta);
    FAIL("expected a domain error");
  } catch (const std::domain_error& e) {
    CHECK(std::string(e.what()).find("ring_base_flex") != std::string::npos);
  }
}

TEST_CASE("fk jacobian matches finite differences") {
  HandSkeleton sk = default_skeleton();
  SkeletonIndex idx(sk);
  Rng rng(13);
  JointAngles theta = random_in_limit(sk, rng, 1e-3);
  FkDerivatives d = fk_derivatives(idx, theta);
  // random loss gradient on the points
  JointPositions gp(23, 3);
  for (int i = 0; i < gp.size(); ++i) gp.data()[i] = rng.gaussian();
  JointAngles analytic = fk_backward(idx, d, gp);
  const double h = 1e-6;
  for (int k = 0; k < sk.dof_count(); ++k) {
    JointAngles tp = theta, tm = theta;
    tp[k] += h;
    tm[k] -= h;
    double lp = (forward_frames(idx, tp).points.array() * gp.array()).sum();
    double lm = (forward_frames(idx, tm).points.array() * gp.array()).sum();
    double numeric = (lp - lm) / (2.0 * h);
    CHECK(std::abs(analytic[k] - numeric) < 1e-6 * std::max(1.0, std::abs(numeric)));
  }
}

TEST_CASE("pose basis: errors and reconstruction") {
  HandSkeleton sk = default_skeleton();
  Rng rng(3);

  SUBCASE("identical rows have zero variance") {
    Eigen::MatrixXd corpus = Eigen::MatrixXd::Ones(40, 22) * 0.1;
    CHECK_THROWS_AS(fit_pose_basis(corpus, 2), std::invalid_argument);
  }
  SUBCASE("too few rows") {
    Eigen::MatrixXd corpus = Eigen::MatrixXd::Random(5, 22);
    CHECK_THROWS_AS(fit_pose_basis(corpus, 5), std::invalid_argument);
  }
  SUBCASE("rank-2 affine family is captured by two components") {
    Eigen::VectorXd base = Eigen::VectorXd::Random(22);
    Eigen::VectorXd dir1 = Eigen::VectorXd::Random(22);
    Eigen::VectorXd dir2 = Eigen::VectorXd::Random(22);
    Eigen::MatrixXd corpus(60, 22);
    for (int i = 0; i < 60; ++i)
      corpus.row(i) = (base + rng.uniform(-1.0, 1.0) * dir1 + rng.uniform(-1.0, 1.0) * dir2)
                          .transpose();
    PoseBasis basis = fit_pose_basis(corpus, 2);
    // Oracle: project each row onto the basis and reconstruct.
    for (int i = 0; i < 60; ++i) {
      Eigen::VectorXd centered = corpus.row(i).transpose() - basis.mean;
      Eigen::VectorXd coeffs = basis.components * centered;
      Eigen::VectorXd recon = basis.mean + basis.components.transpose() * coeffs;
      CHECK((recon - corpus.row(i).transpose()).norm() < 1e-8);
    }
    CHECK((basis.components * basis.components.transpose() - Eigen::Matrix2d::Identity()).norm() <
          1e-6);
    CHECK(basis.explained_variance[0] >= basis.explained_variance[1]);
  }
  SUBCASE("complete basis reconstructs exactly") {
    Eigen::MatrixXd corpus = sample_angle_corpus(sk, 80, 5);
    PoseBasis basis = fit_pose_basis(corpus, 22);
    for (int i = 0; i < corpus.rows(); ++i) {
      Eigen::VectorXd coeffs = basis.components * (corpus.row(i).transpose() - basis.mean);
      Eigen::VectorXd recon = basis.mean + basis.components.transpose() * coeffs;
      CHECK((recon - corpus.row(i).transpose()).norm() < 1e-8);
    }
  }
  SUBCASE("synergy corpus is rank 12") {
    Eigen::MatrixXd corpus = sample_angle_corpus(sk, 400, 9);
    PoseBasis basis = fit_pose_basis(corpus, 12);
    for (int i = 0; i < 50; ++i) {
      Eigen::VectorXd coeffs = basis.components * (corpus.row(i).transpose() - basis.mean);
      Eigen::VectorXd recon = basis.mean + basis.components.transpose() * coeffs;
      CHECK((recon - corpus.row(i).transpose()).norm() < 1e-6);
    }
  }
}

TEST_CASE("decode_pose") {
  HandSkeleton sk = default_skeleton();
  Eigen::MatrixXd corpus = sample_angle_corpus(sk, 300, 17);
  PoseBasis basis = fit_pose_basis(corpus, 12);

  SUBCASE("zero coefficients give the mean pose") {
    int clamped = 0;
    JointPositions p = decode_pose(basis, Eigen::VectorXd::Zero(12), sk, &clamped);
    JointPositions expect = forward_kinematics(sk, clamp_to_limits(sk, basis.mean));
    CHECK((p - expect).norm() < 1e-12);
  }
  SUBCASE("complete basis round-trips a corpus pose") {
    PoseBasis full = fit_pose_basis(corpus, 22);
    Eigen::VectorXd theta_star = corpus.row(7).transpose();
    Eigen::VectorXd coeffs = full.components * (theta_star - full.mean);
    JointPositions p = decode_pose(full, coeffs, sk);
    CHECK((p - forward_kinematics(sk, theta_star)).norm() < 1e-8);
  }
  SUBCASE("random coefficients keep segment lengths and count clamps") {
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
      Eigen::VectorXd coeffs(12);
      for (int i = 0; i < 12; ++i) coeffs[i] = rng.gaussian(1.5);
      int clamped = 0;
      JointPositions p = decode_pose(basis, coeffs, sk, &clamped);
      CHECK(clamped >= 0);
      for (const auto& s : sk.segments)
        CHECK(std::abs((p.row(s.child) - p.row(s.parent)).norm() - s.length) < 1e-9);
    }
  }
}

TEST_CASE("pose sequences: determinism, limits, coverage") {
  HandSkeleton sk = default_skeleton();

  SUBCASE("exact frame count, all in limits") {
    auto seqs = sample_pose_sequences(sk, 1, 5, 77);
    REQUIRE(seqs.size() == 1);
    CHECK(seqs[0].size() == 5);
    for (const auto& theta : seqs[0]) CHECK_NOTHROW(check_limits(sk, theta));
  }
  SUBCASE("same seed gives identical output") {
    auto a = sample_pose_sequences(sk, 3, 40, 99);
    auto b = sample_pose_sequences(sk, 3, 40, 99);
    for (std::size_t s = 0; s < a.size(); ++s)
      for (std::size_t t = 0; t < a[s].size(); ++t) CHECK((a[s][t] - b[s][t]).norm() == 0.0);
  }
  SUBCASE("marginals sweep at least 80% of every limit interval") {
    auto seqs = sample_pose_sequences(sk, 100, 100, 4242);
    Eigen::VectorXd lo = Eigen::VectorXd::Constant(22, 1e9);
    Eigen::VectorXd hi = Eigen::VectorXd::Constant(22, -1e9);
    for (const auto& seq : seqs)
      for (const auto& theta : seq) {
        lo = lo.cwiseMin(theta);
        hi = hi.cwiseMax(theta);
      }
    for (int d = 0; d < 22; ++d) {
      double span = hi[d] - lo[d];
      double limit_span = sk.dofs[d].hi - sk.dofs[d].lo;
      CHECK(span >= 0.8 * limit_span);
    }
  }
}

TEST_CASE("normalize_pose") {
  HandSkeleton sk = default_skeleton();
  SkeletonIndex idx(sk);
  Rng rng(31);

  SUBCASE("idempotent and distance-preserving on random poses") {
    for (int trial = 0; trial < 50; ++trial) {
      JointPositions p = forward_frames(idx, random_in_limit(sk, rng)).points;
      JointPositions n1 = normalize_pose(sk, p);
      JointPositions n2 = normalize_pose(sk, n1);
      CHECK((n2 - n1).cwiseAbs().maxCoeff() < 1e-9);
      double worst = 0.0;
      for (int i = 0; i < 23; ++i)
        for (int j = 0; j < 23; ++j) {
          double a = (p.row(i) - p.row(j)).norm();
          double b = (n1.row(i) - n1.row(j)).norm();
          worst = std::max(worst, std::abs(a - b));
        }
      CHECK(worst < 1e-9);
    }
  }
  SUBCASE("invariant to rigid pre-transforms") {
    for (int trial = 0; trial < 50; ++trial) {
      JointPositions p = forward_frames(idx, random_in_limit(sk, rng)).points;
      Eigen::Matrix3d r = random_rotation(rng);
      Eigen::Vector3d t(rng.gaussian(0.2), rng.gaussian(0.2), rng.gaussian(0.2));
      JointPositions moved(23, 3);
      for (int i = 0; i < 23; ++i)
        moved.row(i) = (r * p.row(i).transpose() + t).transpose();
      JointPositions n0 = normalize_pose(sk, p);
      JointPositions n1 = normalize_pose(sk, moved);
      CHECK((n1 - n0).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
  SUBCASE("normalized frame constraints hold") {
    JointPositions p = forward_frames(idx, random_in_limit(sk, rng)).points;
    JointPositions n = normalize_pose(sk, p);
    CHECK(n.row(sk.landmark_index("wrist")).norm() < 1e-12);
    int mb = sk.landmark_index("middle_base");
    CHECK(std::abs(n(mb, 0)) < 1e-12);
    CHECK(std::abs(n(mb, 1)) < 1e-12);
    CHECK(n(mb, 2) > 0.0);
    int ib = sk.landmark_index("index_base");
    CHECK(std::abs(n(ib, 1)) < 1e-12);
    CHECK(n(ib, 0) > 0.0);
  }
  SUBCASE("collinear reference landmarks are rejected") {
    JointPositions p = JointPositions::Zero(23, 3);
    for (int i = 0; i < 23; ++i) p(i, 2) = 0.01 * i;  // everything on the Z axis
    CHECK_THROWS_AS(normalize_pose(sk, p), std::domain_error);
  }
}

TEST_CASE("config overrides scale and segments") {
  std::istringstream cfg_text(
      "hand.scale = 0.5\n"
      "limit.index_base_flex = -0.1 1.0\n");
  Config cfg = Config::parse(cfg_text);
  HandSkeleton sk = skeleton_from_config(cfg);
  HandSkeleton base = default_skeleton();
  for (std::size_t s = 0; s < sk.segments.size(); ++s)
    CHECK(sk.segments[s].length == doctest::Approx(0.5 * base.segments[s].length));
  int d = sk.dof_index("index_base_flex");
  CHECK(sk.dofs[d].lo == doctest::Approx(-0.1));
  CHECK(sk.dofs[d].hi == doctest::Approx(1.0));
}
