#pragma once

// End-to-end orchestration: dataset generation for the human-analog hand and
// the 5-servo rig, JSONL dataset files, sequence-level splits, pretrain and
// fine-tune runs, the ablation and sensor-count studies, and line-based
// streaming inference.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sono/kinematics.hpp"
#include "sono/posenet.hpp"
#include "sono/sensorsim.hpp"

namespace sono::pipe {

// One simulated measurement domain.  Fine-tune domains differ from pretrain
// domains in sensor placement (jitter), noise level and pose stream.
struct DomainConfig {
  int n_sensors = 7;
  double noise_sigma = 0.001;
  double mask_prob = 0.008;
  double sensor_jitter = 0.0;  // meters; applied once to the layout
  double sensor_offset = 0.004;
  int seq_len = 100;
  int keyframe_spacing = 20;
  std::uint64_t pose_seed = 1;
};

// 5-servo rig analog: one flexion command per finger in [-0.5, 0.5], mapped
// linearly onto that finger's flexion DOF ranges.
struct MechHand {
  explicit MechHand(const kin::HandSkeleton& skeleton);
  kin::JointAngles angles(const Eigen::VectorXd& servo) const;  // clamps servo first

  const kin::HandSkeleton* skeleton;
  std::vector<std::vector<int>> flex_dofs;  // per finger, thumb first
};

net::Dataset gen_human_dataset(const kin::HandSkeleton& skeleton, const DomainConfig& domain,
                               int poses, std::uint64_t seed);
net::Dataset dataset_from_angles(const kin::HandSkeleton& skeleton,
                                 const std::vector<std::vector<kin::JointAngles>>& sequences,
                                 const DomainConfig& domain, std::uint64_t seed);
net::Dataset gen_mech_dataset(const kin::HandSkeleton& skeleton, int frames, double noise_sigma,
                              double mask_prob, std::uint64_t seed, int seq_len = 100);

// JSONL, one frame per line: {"i":…,"d":[[…]],"joints":[[…]]} or …"servo":[…].
// "i" restarts at 0 on every new sequence.  Writing is byte-deterministic.
void save_dataset(const net::Dataset& ds, const std::string& path);
net::Dataset load_dataset(const std::string& path);

struct Split {
  net::Dataset train, val, test;
};

// Whole sequences only; no window ever crosses a split boundary.
Split split_by_sequence(const net::Dataset& ds, double train_frac, double val_frac,
                        std::uint64_t seed);

struct RunOptions {
  net::ModelConfig model;
  net::TrainOptions train;
  double train_frac = 0.8;
  double val_frac = 0.1;
  std::uint64_t split_seed = 42;
};

struct RunResult {
  net::LossCurve curve;
  net::EvalMetrics test;
  long param_count = 0;
};

// Trains from scratch and writes checkpoint + sidecar to ckpt_out.
RunResult pretrain(const net::Dataset& ds, const kin::HandSkeleton& skeleton,
                   const RunOptions& opts, const std::string& ckpt_out);
// Continues all parameters from ckpt_in on a shifted-domain dataset.
RunResult finetune(const std::string& ckpt_in, const net::Dataset& ds,
                   const kin::HandSkeleton& skeleton, const net::TrainOptions& train,
                   double train_frac, double val_frac, std::uint64_t split_seed,
                   const std::string& ckpt_out);

struct AblationRow {
  std::string variant;
  double mean_test_mse = 0.0;
  double mean_test_err = 0.0;  // evaluate() mean error
  long param_count = 0;
};

// Four variants x seeds on one shared split; rows ordered as
// {w/o seq., w/o atten., w/o skip, full}.
std::vector<AblationRow> run_ablations(const net::Dataset& ds, const kin::HandSkeleton& skeleton,
                                       const std::vector<std::uint64_t>& seeds,
                                       const net::ModelConfig& proto,
                                       const net::TrainOptions& train, std::uint64_t split_seed);
bool full_variant_is_minimum(const std::vector<AblationRow>& rows);

struct SensorStudyRow {
  int sensors = 0;
  int pairs = 0;
  double mean_err_cm = 0.0;
  double mse = 0.0;
};

// Identical pose sequences rendered through 5..8-sensor layouts.
std::vector<SensorStudyRow> run_sensor_study(const kin::HandSkeleton& skeleton,
                                             const DomainConfig& base, int poses,
                                             const std::vector<std::uint64_t>& seeds,
                                             const net::ModelConfig& proto,
                                             const net::TrainOptions& train,
                                             std::uint64_t split_seed);
bool sensor_ladder_holds(const std::vector<SensorStudyRow>& rows);

struct StreamStats {
  long frames = 0;
  long malformed_lines = 0;
  long total_lines = 0;
  double seconds = 0.0;
  double mean_latency_ms = 0.0;
  double max_latency_ms = 0.0;

  double fps() const { return seconds > 0.0 ? frames / seconds : 0.0; }
};

// Line protocol: "F,<frame>,<i>,<j>,<millimeters|-1>" measurements followed by
// "E,<frame>".  Unreported pairs stay missing.  Emits one
// "P,<frame>,v1,v2,…" line per completed frame over a sliding window that is
// zero-padded until warm.  Malformed lines are skipped and counted; more than
// 1% malformed aborts with std::runtime_error.
StreamStats stream_infer(std::istream& in, std::ostream& out, net::PoseModel& model);

// Study table emission: aligned text and CSV.
std::string format_table(const std::vector<std::string>& header,
                         const std::vector<std::vector<std::string>>& rows);
void write_table_csv(const std::string& path, const std::vector<std::string>& header,
                     const std::vector<std::vector<std::string>>& rows);

}  // namespace sono::pipe
