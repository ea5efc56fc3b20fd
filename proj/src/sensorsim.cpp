#include "sono/sensorsim.hpp"

#include <cmath>
#include <stdexcept>

namespace sono::sim {
namespace {

// Orthonormal frame for a landmark, built only from the current point set so
// that it moves exactly with rigid transforms of the pose.  e1 points along
// the incoming segment, e3 along the back-of-hand normal.
Eigen::Matrix3d landmark_frame(const kin::SkeletonIndex& idx, const kin::JointPositions& points,
                               int lm, int wrist, int middle, int iroot, int proot) {
  Eigen::Vector3d w = points.row(wrist).transpose();
  Eigen::Vector3d e1;
  if (idx.parent_of[lm] >= 0)
    e1 = points.row(lm).transpose() - points.row(idx.parent_of[lm]).transpose();
  else
    e1 = points.row(middle).transpose() - w;
  double n1 = e1.norm();
  if (n1 < 1e-12) throw std::domain_error("degenerate pose: zero-length segment");
  e1 /= n1;
  Eigen::Vector3d back =
      (points.row(proot).transpose() - w).cross(points.row(iroot).transpose() - w);
  Eigen::Vector3d e3 = back - back.dot(e1) * e1;
  if (e3.norm() < 1e-8 * std::max(1.0, back.norm())) {
    Eigen::Vector3d alt = points.row(iroot).transpose() - w;
    e3 = alt - alt.dot(e1) * e1;
  }
  double n3 = e3.norm();
  if (n3 < 1e-12) throw std::domain_error("degenerate pose: cannot build sensor frame");
  e3 /= n3;
  Eigen::Matrix3d f;
  f.col(0) = e1;
  f.col(1) = e3.cross(e1);
  f.col(2) = e3;
  return f;
}

std::vector<Eigen::Vector3d> positions_impl(const kin::SkeletonIndex& idx,
                                            const kin::JointPositions& points,
                                            const SensorLayout& layout) {
  const kin::HandSkeleton& sk = *idx.skeleton;
  int wrist = sk.landmark_index("wrist");
  int middle = sk.landmark_index("middle_base");
  int iroot = sk.landmark_index("index_root");
  int proot = sk.landmark_index("pinky_root");
  std::vector<Eigen::Vector3d> out;
  out.reserve(layout.attachments.size());
  for (const auto& a : layout.attachments) {
    int lm = sk.landmark_index(a.landmark);
    if (lm < 0) throw std::invalid_argument("layout references unknown landmark: " + a.landmark);
    if (!a.offset.allFinite() || a.offset.norm() > 0.02)
      throw std::invalid_argument("sensor offset must be finite and at most 0.02 m");
    Eigen::Matrix3d f = landmark_frame(idx, points, lm, wrist, middle, iroot, proot);
    out.push_back(points.row(lm).transpose() + f * a.offset);
  }
  return out;
}

}  // namespace

SensorLayout standard_layout(int n, double offset) {
  if (n < 5 || n > 8) throw std::invalid_argument("sensor count must be 5..8");
  Eigen::Vector3d off(0.0, 0.0, offset);
  const double wrist_wobble = 0.004;
  SensorLayout layout;
  for (const char* f : {"thumb", "index", "middle", "ring", "pinky"})
    layout.attachments.push_back({std::string(f) + "_tip", off, 0.0});
  if (n == 6) layout.attachments.push_back({"wrist", off, wrist_wobble});
  if (n >= 7) {
    layout.attachments.push_back({"index_root", off, 0.0});
    layout.attachments.push_back({"pinky_root", off, 0.0});
  }
  if (n == 8) layout.attachments.push_back({"wrist", off, wrist_wobble});
  return layout;
}

SensorLayout wobble_layout(const SensorLayout& layout, std::uint64_t seed) {
  SensorLayout out = layout;
  Rng rng(derive_seed(seed, "sim.wobble"));
  for (auto& a : out.attachments) {
    if (a.wobble <= 0.0) continue;
    for (int k = 0; k < 3; ++k) a.offset[k] += rng.gaussian(a.wobble);
    double n = a.offset.norm();
    if (n > 0.019) a.offset *= 0.019 / n;  // stay inside the layout bound
    a.wobble = 0.0;
  }
  return out;
}

std::vector<Eigen::Vector3d> sensor_positions(const kin::HandSkeleton& sk,
                                              const kin::JointPositions& points,
                                              const SensorLayout& layout) {
  kin::SkeletonIndex idx(sk);
  return positions_impl(idx, points, layout);
}

DistanceMatrix measure(const kin::SkeletonIndex& idx, const kin::JointPositions& points,
                       const SensorLayout& layout) {
  auto pos = positions_impl(idx, points, layout);
  const int n = static_cast<int>(pos.size());
  DistanceMatrix d = DistanceMatrix::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) d(i, j) = d(j, i) = (pos[i] - pos[j]).norm();
  return d;
}

DistanceMatrix measure(const kin::HandSkeleton& sk, const kin::JointPositions& points,
                       const SensorLayout& layout) {
  kin::SkeletonIndex idx(sk);
  return measure(idx, points, layout);
}

DistanceMatrix augment(const DistanceMatrix& m, const AugmentConfig& cfg) {
  if (cfg.mask_prob < 0.0 || cfg.mask_prob >= 1.0) throw std::invalid_argument("mask_prob must be in [0, 1)");
  if (cfg.noise_sigma < 0.0) throw std::invalid_argument("noise_sigma must be >= 0");
  if ((m.array() < 0.0).any()) throw std::invalid_argument("augment input must have no missing entries");
  Rng rng(derive_seed(cfg.seed, "sim.augment"));
  DistanceMatrix out = m;
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) {
      if (i == j) continue;
      if (rng.uniform() < cfg.mask_prob) {
        out(i, j) = kMissing;
      } else if (cfg.noise_sigma > 0.0) {
        out(i, j) = std::max(0.0, m(i, j) + rng.gaussian(cfg.noise_sigma));
      }
    }
  return out;
}

SensorLayout jitter_layout(const SensorLayout& layout, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) throw std::invalid_argument("jitter sigma must be >= 0");
  SensorLayout out = layout;
  Rng rng(derive_seed(seed, "sim.jitter"));
  for (auto& a : out.attachments)
    for (int k = 0; k < 3; ++k) a.offset[k] += rng.gaussian(sigma);
  return out;
}

Eigen::MatrixXd encode_input(const DistanceMatrix& m, double d_max) {
  if (!(d_max > 0.0)) throw std::invalid_argument("d_max must be positive");
  Eigen::MatrixXd out = m;
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) out(i, j) = m(i, j) < 0.0 ? kMissing : m(i, j) / d_max;
  return out;
}

void validate_distance_matrix(const DistanceMatrix& m) {
  if (m.rows() != m.cols()) throw std::invalid_argument("distance matrix must be square");
  for (int i = 0; i < m.rows(); ++i) {
    if (m(i, i) != 0.0) throw std::invalid_argument("distance matrix diagonal must be zero");
    for (int j = 0; j < m.cols(); ++j) {
      double v = m(i, j);
      if (!std::isfinite(v)) throw std::invalid_argument("distance matrix has non-finite entry");
      if (v != kMissing && (v < 0.0 || v > kMaxRange))
        throw std::invalid_argument("distance entry outside [0, 0.5] and not the missing sentinel");
    }
  }
}

}  // namespace sono::sim
