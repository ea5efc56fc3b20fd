#pragma once

// Sensor placement on the hand, pairwise distance-matrix simulation,
// measurement augmentation and network input encoding.

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "sono/kinematics.hpp"

namespace sono::sim {

// -1 marks a measurement that was never received.
constexpr double kMissing = -1.0;
constexpr double kMaxRange = 0.5;  // meters; sanity bound on intra-hand distances

// N x N pairwise ranges in meters, diagonal 0.  Not necessarily symmetric
// once augmented: the two directions of a pair are measured in different
// transmit cycles.
using DistanceMatrix = Eigen::MatrixXd;

struct SensorLayout {
  struct Attachment {
    std::string landmark;
    Eigen::Vector3d offset;  // local segment frame, meters
    double wobble = 0.0;     // per-frame placement sigma; nonzero for strap
                             // mounts that move relative to the hand frame
  };
  std::vector<Attachment> attachments;

  int count() const { return static_cast<int>(attachments.size()); }
};

struct AugmentConfig {
  double noise_sigma = 0.001;   // meters, per directed measurement
  double mask_prob = 0.0;       // per off-diagonal entry
  double sensor_jitter = 0.0;   // meters; per-sensor placement shift, applied once per domain
  std::uint64_t seed = 0;
};

// n=5: fingertips; 6: + wrist; 7: fingertips + index/pinky knuckle roots;
// 8: the 7 layout + wrist.  Offsets sit `offset` meters off the back of the
// segment (the sensor package is on the skin).  Wrist attachments carry a
// 4 mm wobble: the strap moves with wrist articulation, which the hand
// frame does not capture.
SensorLayout standard_layout(int n, double offset = 0.004);

// Layout with per-frame placement wobble realized; attachments with
// wobble = 0 are returned unchanged.
SensorLayout wobble_layout(const SensorLayout& layout, std::uint64_t seed);

// Sensor world positions for a pose; offsets ride the local segment frame.
std::vector<Eigen::Vector3d> sensor_positions(const kin::HandSkeleton& skeleton,
                                              const kin::JointPositions& points,
                                              const SensorLayout& layout);

// Clean pairwise distances: symmetric, zero diagonal, no missing entries.
DistanceMatrix measure(const kin::HandSkeleton& skeleton, const kin::JointPositions& points,
                       const SensorLayout& layout);
DistanceMatrix measure(const kin::SkeletonIndex& index, const kin::JointPositions& points,
                       const SensorLayout& layout);

// Per off-diagonal entry: masked to -1 with mask_prob, otherwise Gaussian
// noise added and clamped at zero.  Pure function of (m, cfg).
DistanceMatrix augment(const DistanceMatrix& m, const AugmentConfig& cfg);

SensorLayout jitter_layout(const SensorLayout& layout, double sigma, std::uint64_t seed);

// Valid entries scaled by 1/d_max; the -1 sentinel passes through unchanged.
Eigen::MatrixXd encode_input(const DistanceMatrix& m, double d_max = 0.3);

void validate_distance_matrix(const DistanceMatrix& m);

}  // namespace sono::sim
