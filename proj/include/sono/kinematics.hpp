#pragma once

// Synthetic articulated hand: 23-landmark skeleton, forward kinematics,
// PCA pose basis, smooth pose-sequence sampling and pose normalization.

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sono/common.hpp"

namespace sono::kin {

using JointAngles = Eigen::VectorXd;                            // D = 22
using JointPositions = Eigen::Matrix<double, Eigen::Dynamic, 3>;  // 23 x 3, meters

constexpr int kLandmarks = 23;
constexpr int kDof = 22;

struct Segment {
  int parent = -1;  // landmark index
  int child = -1;   // landmark index
  double length = 0.0;
  Eigen::Vector3d rest_dir = Eigen::Vector3d::Zero();  // unit, wrist frame
};

struct Dof {
  std::string name;
  int segment = -1;                                 // segment the rotation acts on
  Eigen::Vector3d axis = Eigen::Vector3d::Zero();  // wrist-frame rest axis
  double lo = 0.0, hi = 0.0;                        // anatomical limits, radians
};

struct HandSkeleton {
  std::vector<std::string> landmarks;  // row order of JointPositions
  std::vector<Segment> segments;       // parents precede children
  std::vector<Dof> dofs;               // index = JointAngles coordinate

  int landmark_index(std::string_view name) const;  // -1 if unknown
  int dof_index(std::string_view name) const;
  int dof_count() const { return static_cast<int>(dofs.size()); }
  void validate() const;  // throws std::runtime_error on any broken invariant
};

// Per-landmark frames; rotations are cumulative from the wrist.
struct LandmarkFrames {
  JointPositions points;
  std::vector<Eigen::Matrix3d> rotations;
};

// Precomputed lookup tables so the per-sample FK in training loops stays cheap.
struct SkeletonIndex {
  explicit SkeletonIndex(const HandSkeleton& skeleton);

  const HandSkeleton* skeleton;
  std::vector<int> parent_of;                      // landmark -> parent landmark (-1 root)
  std::vector<int> segment_to;                     // landmark -> incoming segment (-1 root)
  std::vector<std::vector<int>> segment_dofs;      // segment -> dof indices, application order
  std::vector<std::vector<int>> segment_subtree;   // segment -> landmarks moved by its dofs
};

HandSkeleton default_skeleton();
// Overrides on top of the defaults; see configs/hand_default.cfg for the schema.
HandSkeleton skeleton_from_config(const Config& cfg);

void check_limits(const HandSkeleton& skeleton, const JointAngles& theta);

LandmarkFrames forward_frames(const SkeletonIndex& index, const JointAngles& theta);
JointPositions forward_kinematics(const HandSkeleton& skeleton, const JointAngles& theta);

// Geometric Jacobian data for one pose: world-frame rotation axis and pivot
// point per DOF.  d p_i / d theta_k = axis_k x (p_i - pivot_k) on the subtree.
struct FkDerivatives {
  LandmarkFrames frames;
  std::vector<Eigen::Vector3d> world_axis;  // per dof
  std::vector<Eigen::Vector3d> pivot;       // per dof
};

FkDerivatives fk_derivatives(const SkeletonIndex& index, const JointAngles& theta);

// Pulls a loss gradient on landmark positions back to the DOF angles.
JointAngles fk_backward(const SkeletonIndex& index, const FkDerivatives& d,
                        const JointPositions& grad_points);

struct PoseBasis {
  Eigen::VectorXd mean;                 // D
  Eigen::MatrixXd components;           // K x D, orthonormal rows
  Eigen::VectorXd explained_variance;   // K, non-increasing

  int coeff_count() const { return static_cast<int>(components.rows()); }
};

PoseBasis fit_pose_basis(const Eigen::MatrixXd& angle_corpus, int k);

JointAngles clamp_to_limits(const HandSkeleton& skeleton, const JointAngles& theta,
                            int* clamp_count = nullptr);

JointPositions decode_pose(const PoseBasis& basis, const Eigen::VectorXd& coeffs,
                           const HandSkeleton& skeleton, int* clamp_count = nullptr);

// Smooth in-limit angle trajectories: keyframes from a fixed rank-12 synergy
// model every `keyframe_spacing` frames, cubic Hermite between keyframes.
std::vector<std::vector<JointAngles>> sample_pose_sequences(const HandSkeleton& skeleton,
                                                            int count, int length,
                                                            std::uint64_t seed,
                                                            int keyframe_spacing = 20);

// In-limit keyframe poses only (no interpolation); used to fit pose bases.
Eigen::MatrixXd sample_angle_corpus(const HandSkeleton& skeleton, int count,
                                    std::uint64_t seed);

// Rigid transform: wrist to origin, middle-finger base on +Z, index-finger
// base in the X-Z half-plane with x > 0.
JointPositions normalize_pose(const HandSkeleton& skeleton, const JointPositions& points);

}  // namespace sono::kin
