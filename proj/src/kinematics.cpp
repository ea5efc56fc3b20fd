#include "sono/kinematics.hpp"

#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <stdexcept>

namespace sono::kin {
namespace {

constexpr int kSynergies = 12;

struct FingerDef {
  const char* name;
  double palm_len;
  double angle;  // in the X-Z plane, radians from +Z (thumb side positive)
  std::array<double, 3> phalanx;
};

// Rest geometry of an 18 cm hand, flat pose, fingers along +Z, back of the
// hand facing +Y.
constexpr FingerDef kFingers[5] = {
    {"thumb", 0.045, 0.96, {0.040, 0.032, 0.026}},
    {"index", 0.080, 0.21, {0.042, 0.027, 0.021}},
    {"middle", 0.082, 0.00, {0.045, 0.030, 0.023}},
    {"ring", 0.078, -0.19, {0.042, 0.029, 0.022}},
    {"pinky", 0.073, -0.42, {0.033, 0.021, 0.018}},
};

Eigen::Vector3d finger_dir(double angle) {
  return {std::sin(angle), 0.0, std::cos(angle)};
}

Eigen::Vector3d flex_axis(double angle) {
  // y-hat x u: positive flexion curls towards the palm (-Y).
  return {std::cos(angle), 0.0, -std::sin(angle)};
}

int add_landmark(HandSkeleton& sk, const std::string& name) {
  sk.landmarks.push_back(name);
  return static_cast<int>(sk.landmarks.size()) - 1;
}

int add_segment(HandSkeleton& sk, int parent, int child, double len, const Eigen::Vector3d& dir) {
  sk.segments.push_back({parent, child, len, dir});
  return static_cast<int>(sk.segments.size()) - 1;
}

void add_dof(HandSkeleton& sk, const std::string& name, int segment,
             const Eigen::Vector3d& axis, double lo, double hi) {
  sk.dofs.push_back({name, segment, axis, lo, hi});
}

// Synergy loadings: 22 DOFs driven by 12 latent coordinates.  Row L1 norms
// are exactly 1 so that theta = mid + half * (S z) stays in-limit for any
// z in [-1, 1]^12, while still reaching both limit endpoints.
Eigen::MatrixXd synergy_matrix(const HandSkeleton& sk) {
  enum : int { kCurl0 = 0, kGlobal = 5, kSpread = 6, kOpp = 7, kDistal = 8, kScissor = 9, kCouple = 10, kWiggle = 11 };
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(sk.dof_count(), kSynergies);
  auto row = [&](const std::string& dof) {
    int i = sk.dof_index(dof);
    if (i < 0) throw std::runtime_error("synergy_matrix: missing dof " + dof);
    return s.row(i);
  };
  const char* fingers[5] = {"thumb", "index", "middle", "ring", "pinky"};
  for (int f = 0; f < 5; ++f) {
    std::string p(fingers[f]);
    auto base_flex = row(p + "_base_flex");
    base_flex[kCurl0 + f] = 0.50;
    base_flex[kGlobal] = 0.30;
    auto mid1_flex = row(p + "_mid1_flex");
    mid1_flex[kCurl0 + f] = 0.45;
    mid1_flex[kGlobal] = 0.25;
    mid1_flex[kDistal] = 0.30;
    auto mid2_flex = row(p + "_mid2_flex");
    mid2_flex[kCurl0 + f] = 0.40;
    mid2_flex[kGlobal] = 0.20;
    mid2_flex[kDistal] = 0.40;
  }
  row("thumb_base_flex")[kOpp] = 0.20;
  row("index_base_flex")[kScissor] = 0.20;
  row("middle_base_flex")[kWiggle] = 0.20;
  row("ring_base_flex")[kCouple] = 0.20;
  row("pinky_base_flex")[kCouple] = 0.20;

  auto abd = [&](const std::string& dof, double spread, double a, int ja, double b, int jb) {
    auto r = row(dof);
    r[kSpread] = spread;
    r[ja] = a;
    r[jb] = b;
  };
  abd("thumb_base_abd", 0.25, 0.55, kOpp, 0.20, kWiggle);
  abd("index_base_abd", 0.55, 0.25, kScissor, 0.20, kWiggle);
  abd("middle_base_abd", 0.30, -0.50, kScissor, 0.20, kWiggle);
  abd("ring_base_abd", -0.55, 0.25, kCouple, 0.20, kWiggle);
  abd("pinky_base_abd", -0.60, 0.20, kCouple, 0.20, kWiggle);

  auto twist = row("thumb_base_twist");
  twist[kOpp] = 0.70;
  twist[kWiggle] = 0.30;
  auto tabd = row("thumb_mid1_abd");
  tabd[kOpp] = 0.50;
  tabd[kSpread] = 0.30;
  tabd[kWiggle] = 0.20;
  return s;
}

// One keyframe pose.  Corner draws make both ends of every limit interval
// reachable in moderate-size corpora.
JointAngles synergy_keyframe(const HandSkeleton& sk, const Eigen::MatrixXd& syn, Rng& rng) {
  Eigen::VectorXd z(kSynergies);
  bool corner = rng.uniform() < 0.25;
  for (int i = 0; i < kSynergies; ++i)
    z[i] = corner ? (rng.uniform() < 0.5 ? -1.0 : 1.0) : rng.uniform(-1.0, 1.0);
  Eigen::VectorXd excursion = syn * z;
  JointAngles theta(sk.dof_count());
  for (int d = 0; d < sk.dof_count(); ++d) {
    double mid = 0.5 * (sk.dofs[d].lo + sk.dofs[d].hi);
    double half = 0.5 * (sk.dofs[d].hi - sk.dofs[d].lo);
    theta[d] = mid + half * excursion[d];
  }
  return theta;
}

}  // namespace

int HandSkeleton::landmark_index(std::string_view name) const {
  for (std::size_t i = 0; i < landmarks.size(); ++i)
    if (landmarks[i] == name) return static_cast<int>(i);
  return -1;
}

int HandSkeleton::dof_index(std::string_view name) const {
  for (std::size_t i = 0; i < dofs.size(); ++i)
    if (dofs[i].name == name) return static_cast<int>(i);
  return -1;
}

void HandSkeleton::validate() const {
  const int n = static_cast<int>(landmarks.size());
  if (n != kLandmarks) throw std::runtime_error("skeleton must have 23 landmarks");
  if (std::set<std::string>(landmarks.begin(), landmarks.end()).size() != landmarks.size())
    throw std::runtime_error("duplicate landmark names");
  std::vector<bool> has_parent(n, false);
  std::vector<bool> seen(n, false);
  seen[0] = true;
  for (const auto& s : segments) {
    if (s.parent < 0 || s.parent >= n || s.child <= 0 || s.child >= n)
      throw std::runtime_error("segment endpoints out of range");
    if (!seen[s.parent]) throw std::runtime_error("segments must list parents first");
    if (has_parent[s.child]) throw std::runtime_error("landmark has two parents");
    has_parent[s.child] = true;
    seen[s.child] = true;
    if (!(s.length > 0.0)) throw std::runtime_error("segment length must be positive");
    if (std::abs(s.rest_dir.norm() - 1.0) > 1e-9)
      throw std::runtime_error("segment rest direction must be unit length");
  }
  int roots = 0;
  for (int i = 0; i < n; ++i)
    if (!has_parent[i]) ++roots;
  if (roots != 1) throw std::runtime_error("skeleton must have exactly one root");
  if (has_parent[0]) throw std::runtime_error("landmark 0 must be the root");
  if (static_cast<int>(dofs.size()) != kDof) throw std::runtime_error("skeleton must have 22 DOFs");
  for (const auto& d : dofs) {
    if (d.segment < 0 || d.segment >= static_cast<int>(segments.size()))
      throw std::runtime_error("dof references unknown segment");
    if (std::abs(d.axis.norm() - 1.0) > 1e-9) throw std::runtime_error("dof axis must be unit length");
    if (!(d.lo < d.hi)) throw std::runtime_error("dof limits must satisfy lo < hi");
  }
}

SkeletonIndex::SkeletonIndex(const HandSkeleton& sk) : skeleton(&sk) {
  sk.validate();
  const int n = static_cast<int>(sk.landmarks.size());
  parent_of.assign(n, -1);
  segment_to.assign(n, -1);
  for (std::size_t s = 0; s < sk.segments.size(); ++s) {
    parent_of[sk.segments[s].child] = sk.segments[s].parent;
    segment_to[sk.segments[s].child] = static_cast<int>(s);
  }
  segment_dofs.assign(sk.segments.size(), {});
  for (std::size_t d = 0; d < sk.dofs.size(); ++d)
    segment_dofs[sk.dofs[d].segment].push_back(static_cast<int>(d));
  // Landmarks moved by a segment's DOFs: its child plus everything below.
  segment_subtree.assign(sk.segments.size(), {});
  for (std::size_t s = 0; s < sk.segments.size(); ++s) {
    std::vector<int> stack = {sk.segments[s].child};
    while (!stack.empty()) {
      int lm = stack.back();
      stack.pop_back();
      segment_subtree[s].push_back(lm);
      for (const auto& t : sk.segments)
        if (t.parent == lm) stack.push_back(t.child);
    }
    std::sort(segment_subtree[s].begin(), segment_subtree[s].end());
  }
}

HandSkeleton default_skeleton() {
  HandSkeleton sk;
  int wrist = add_landmark(sk, "wrist");
  for (const auto& f : kFingers) {
    std::string p(f.name);
    Eigen::Vector3d u = finger_dir(f.angle);
    Eigen::Vector3d fx = flex_axis(f.angle);
    Eigen::Vector3d abd(0.0, 1.0, 0.0);
    int base = add_landmark(sk, p + "_base");
    int mid1 = add_landmark(sk, p + "_mid1");
    int mid2 = add_landmark(sk, p + "_mid2");
    int tip = add_landmark(sk, p + "_tip");
    add_segment(sk, wrist, base, f.palm_len, u);
    int s1 = add_segment(sk, base, mid1, f.phalanx[0], u);
    int s2 = add_segment(sk, mid1, mid2, f.phalanx[1], u);
    int s3 = add_segment(sk, mid2, tip, f.phalanx[2], u);
    bool thumb = p == "thumb";
    add_dof(sk, p + "_base_flex", s1, fx, -0.26, thumb ? 1.05 : 1.57);
    double abd_lim = thumb ? 0.0 : (p == "index" ? 0.35 : p == "middle" ? 0.26 : p == "ring" ? 0.30 : 0.40);
    if (thumb)
      add_dof(sk, "thumb_base_abd", s1, abd, -0.35, 0.52);
    else
      add_dof(sk, p + "_base_abd", s1, abd, -abd_lim, abd_lim);
    if (thumb) add_dof(sk, "thumb_base_twist", s1, u, -0.52, 0.52);
    add_dof(sk, p + "_mid1_flex", s2, fx, -0.09, thumb ? 1.22 : 1.75);
    if (thumb) add_dof(sk, "thumb_mid1_abd", s2, abd, -0.26, 0.26);
    add_dof(sk, p + "_mid2_flex", s3, fx, -0.09, 1.31);
  }
  // Palm landmarks: sensor sites at the index and pinky knuckle roots,
  // rigid in the wrist frame (no DOFs on their segments).
  add_segment(sk, wrist, add_landmark(sk, "index_root"), 0.070, finger_dir(0.21));
  add_segment(sk, wrist, add_landmark(sk, "pinky_root"), 0.064, finger_dir(-0.42));
  sk.validate();
  return sk;
}

HandSkeleton skeleton_from_config(const Config& cfg) {
  HandSkeleton sk = default_skeleton();
  double scale = cfg.number_or("hand.scale", 1.0);
  if (!(scale > 0.0)) throw std::runtime_error("hand.scale must be positive");
  for (auto& s : sk.segments) s.length *= scale;
  for (const auto& [key, toks] : cfg.entries()) {
    if (key.rfind("segment.", 0) == 0) {
      auto dot = key.find('.', 8);
      if (dot == std::string::npos) throw std::runtime_error("bad segment key: " + key);
      int parent = sk.landmark_index(key.substr(8, dot - 8));
      int child = sk.landmark_index(key.substr(dot + 1));
      bool found = false;
      for (auto& s : sk.segments)
        if (s.parent == parent && s.child == child) {
          s.length = cfg.number(key);
          found = true;
        }
      if (!found) throw std::runtime_error("unknown segment in config: " + key);
    } else if (key.rfind("limit.", 0) == 0) {
      int d = sk.dof_index(key.substr(6));
      if (d < 0) throw std::runtime_error("unknown dof in config: " + key);
      auto v = cfg.numbers(key);
      if (v.size() != 2) throw std::runtime_error("limit wants 'lo hi': " + key);
      sk.dofs[d].lo = v[0];
      sk.dofs[d].hi = v[1];
    }
  }
  sk.validate();
  return sk;
}

void check_limits(const HandSkeleton& sk, const JointAngles& theta) {
  if (theta.size() != sk.dof_count()) throw std::invalid_argument("angle vector has wrong size");
  for (int d = 0; d < sk.dof_count(); ++d) {
    if (!std::isfinite(theta[d])) throw std::domain_error("non-finite angle for dof " + sk.dofs[d].name);
    if (theta[d] < sk.dofs[d].lo - 1e-12 || theta[d] > sk.dofs[d].hi + 1e-12)
      throw std::domain_error("angle out of limits for dof " + sk.dofs[d].name);
  }
}

LandmarkFrames forward_frames(const SkeletonIndex& idx, const JointAngles& theta) {
  const HandSkeleton& sk = *idx.skeleton;
  check_limits(sk, theta);
  LandmarkFrames out;
  out.points.setZero(static_cast<int>(sk.landmarks.size()), 3);
  out.rotations.assign(sk.landmarks.size(), Eigen::Matrix3d::Identity());
  for (std::size_t s = 0; s < sk.segments.size(); ++s) {
    const Segment& seg = sk.segments[s];
    Eigen::Matrix3d r = out.rotations[seg.parent];
    for (int d : idx.segment_dofs[s])
      r = r * Eigen::AngleAxisd(theta[d], sk.dofs[d].axis).toRotationMatrix();
    out.rotations[seg.child] = r;
    out.points.row(seg.child) =
        out.points.row(seg.parent) + (r * (seg.length * seg.rest_dir)).transpose();
  }
  return out;
}

JointPositions forward_kinematics(const HandSkeleton& sk, const JointAngles& theta) {
  SkeletonIndex idx(sk);
  return forward_frames(idx, theta).points;
}

FkDerivatives fk_derivatives(const SkeletonIndex& idx, const JointAngles& theta) {
  const HandSkeleton& sk = *idx.skeleton;
  check_limits(sk, theta);
  FkDerivatives out;
  out.frames.points.setZero(static_cast<int>(sk.landmarks.size()), 3);
  out.frames.rotations.assign(sk.landmarks.size(), Eigen::Matrix3d::Identity());
  out.world_axis.assign(sk.dofs.size(), Eigen::Vector3d::Zero());
  out.pivot.assign(sk.dofs.size(), Eigen::Vector3d::Zero());
  for (std::size_t s = 0; s < sk.segments.size(); ++s) {
    const Segment& seg = sk.segments[s];
    Eigen::Matrix3d r = out.frames.rotations[seg.parent];
    Eigen::Vector3d pivot = out.frames.points.row(seg.parent).transpose();
    for (int d : idx.segment_dofs[s]) {
      out.world_axis[d] = r * sk.dofs[d].axis;
      out.pivot[d] = pivot;
      r = r * Eigen::AngleAxisd(theta[d], sk.dofs[d].axis).toRotationMatrix();
    }
    out.frames.rotations[seg.child] = r;
    out.frames.points.row(seg.child) =
        out.frames.points.row(seg.parent) + (r * (seg.length * seg.rest_dir)).transpose();
  }
  return out;
}

JointAngles fk_backward(const SkeletonIndex& idx, const FkDerivatives& d,
                        const JointPositions& grad_points) {
  const HandSkeleton& sk = *idx.skeleton;
  JointAngles grad = JointAngles::Zero(sk.dof_count());
  for (int k = 0; k < sk.dof_count(); ++k) {
    const auto& subtree = idx.segment_subtree[sk.dofs[k].segment];
    double acc = 0.0;
    for (int lm : subtree) {
      Eigen::Vector3d arm = d.frames.points.row(lm).transpose() - d.pivot[k];
      acc += d.world_axis[k].cross(arm).dot(grad_points.row(lm).transpose());
    }
    grad[k] = acc;
  }
  return grad;
}

PoseBasis fit_pose_basis(const Eigen::MatrixXd& corpus, int k) {
  const int m = static_cast<int>(corpus.rows());
  const int d = static_cast<int>(corpus.cols());
  if (k <= 0 || k > d) throw std::invalid_argument("component count must be in [1, D]");
  if (m <= k) throw std::invalid_argument("need more corpus rows than components");
  if (!corpus.allFinite()) throw std::invalid_argument("corpus contains non-finite values");
  PoseBasis basis;
  basis.mean = corpus.colwise().mean();
  Eigen::MatrixXd centered = corpus.rowwise() - basis.mean.transpose();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv[0] * sv[0] / (m - 1) < 1e-18)
    throw std::invalid_argument("corpus has zero variance");
  basis.components = svd.matrixV().leftCols(k).transpose();
  // SVD leaves per-component signs arbitrary; pin them for reproducibility.
  for (int i = 0; i < k; ++i) {
    int j = 0;
    basis.components.row(i).cwiseAbs().maxCoeff(&j);
    if (basis.components(i, j) < 0.0) basis.components.row(i) *= -1.0;
  }
  basis.explained_variance = sv.head(k).array().square() / (m - 1);
  return basis;
}

JointAngles clamp_to_limits(const HandSkeleton& sk, const JointAngles& theta, int* clamp_count) {
  if (theta.size() != sk.dof_count()) throw std::invalid_argument("angle vector has wrong size");
  JointAngles out = theta;
  int clamped = 0;
  for (int d = 0; d < sk.dof_count(); ++d) {
    double c = std::clamp(out[d], sk.dofs[d].lo, sk.dofs[d].hi);
    if (c != out[d]) ++clamped;
    out[d] = c;
  }
  if (clamp_count) *clamp_count = clamped;
  return out;
}

JointPositions decode_pose(const PoseBasis& basis, const Eigen::VectorXd& coeffs,
                           const HandSkeleton& sk, int* clamp_count) {
  if (coeffs.size() != basis.components.rows())
    throw std::invalid_argument("coefficient count does not match basis");
  JointAngles theta = basis.mean + basis.components.transpose() * coeffs;
  return forward_kinematics(sk, clamp_to_limits(sk, theta, clamp_count));
}

std::vector<std::vector<JointAngles>> sample_pose_sequences(const HandSkeleton& sk, int count,
                                                            int length, std::uint64_t seed,
                                                            int keyframe_spacing) {
  if (count < 0 || length < 2) throw std::invalid_argument("need length >= 2");
  if (keyframe_spacing < 1) throw std::invalid_argument("keyframe spacing must be >= 1");
  Eigen::MatrixXd syn = synergy_matrix(sk);
  std::vector<int> key_at;
  for (int t = 0; t < length; t += keyframe_spacing) key_at.push_back(t);
  if (key_at.back() != length - 1) key_at.push_back(length - 1);

  std::vector<std::vector<JointAngles>> sequences;
  sequences.reserve(count);
  for (int si = 0; si < count; ++si) {
    Rng rng(derive_seed(seed, "kin.pose_seq", static_cast<std::uint64_t>(si)));
    std::vector<JointAngles> keys;
    keys.reserve(key_at.size());
    for (std::size_t i = 0; i < key_at.size(); ++i) keys.push_back(synergy_keyframe(sk, syn, rng));
    std::vector<JointAngles> seq(length);
    for (std::size_t i = 0; i + 1 < key_at.size(); ++i) {
      int t0 = key_at[i], t1 = key_at[i + 1];
      for (int t = t0; t <= t1; ++t) {
        double u = t1 == t0 ? 0.0 : static_cast<double>(t - t0) / (t1 - t0);
        double h = u * u * (3.0 - 2.0 * u);  // cubic Hermite, zero end slopes
        seq[t] = keys[i] + (keys[i + 1] - keys[i]) * h;
      }
    }
    sequences.push_back(std::move(seq));
  }
  return sequences;
}

Eigen::MatrixXd sample_angle_corpus(const HandSkeleton& sk, int count, std::uint64_t seed) {
  if (count <= 0) throw std::invalid_argument("corpus count must be positive");
  Eigen::MatrixXd syn = synergy_matrix(sk);
  Rng rng(derive_seed(seed, "kin.corpus"));
  Eigen::MatrixXd corpus(count, sk.dof_count());
  for (int i = 0; i < count; ++i) corpus.row(i) = synergy_keyframe(sk, syn, rng).transpose();
  return corpus;
}

JointPositions normalize_pose(const HandSkeleton& sk, const JointPositions& points) {
  if (points.rows() != static_cast<int>(sk.landmarks.size()))
    throw std::invalid_argument("point count does not match skeleton");
  int wrist = sk.landmark_index("wrist");
  int middle = sk.landmark_index("middle_base");
  int index = sk.landmark_index("index_base");
  if (wrist < 0 || middle < 0 || index < 0) throw std::invalid_argument("skeleton lacks reference landmarks");
  Eigen::Vector3d w = points.row(wrist).transpose();
  Eigen::Vector3d zv = points.row(middle).transpose() - w;
  Eigen::Vector3d iv = points.row(index).transpose() - w;
  double zn = zv.norm();
  if (zn < 1e-9) throw std::domain_error("degenerate pose: wrist and middle base coincide");
  Eigen::Vector3d z = zv / zn;
  Eigen::Vector3d x = iv - iv.dot(z) * z;
  double xn = x.norm();
  if (xn < 1e-9 * std::max(1.0, iv.norm()))
    throw std::domain_error("degenerate pose: reference landmarks are collinear");
  x /= xn;
  Eigen::Vector3d y = z.cross(x);
  Eigen::Matrix3d rot;
  rot.row(0) = x.transpose();
  rot.row(1) = y.transpose();
  rot.row(2) = z.transpose();
  JointPositions out(points.rows(), 3);
  for (int i = 0; i < points.rows(); ++i)
    out.row(i) = (rot * (points.row(i).transpose() - w)).transpose();
  return out;
}

}  // namespace sono::kin
