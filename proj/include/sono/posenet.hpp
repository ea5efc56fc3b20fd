#pragma once

// Encoder-decoder pose prediction model and its variants: per-sensor MLP
// encoder, multi-head self-attention with a skip connection, flattened
// decoder MLP, LSTM over a sliding window, and either a pose-basis head
// (23 joint positions through the hand model) or a 5-servo head.  Also the
// nearest-neighbour baseline and the pseudo-ground-truth agreement filter.

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sono/kinematics.hpp"
#include "sono/nn/adam.hpp"
#include "sono/nn/layers.hpp"
#include "sono/nn/tensor.hpp"
#include "sono/sensorsim.hpp"

namespace sono::net {

enum class HeadKind { pose_basis, servo };

std::string head_kind_name(HeadKind k);
HeadKind head_kind_from_name(const std::string& name);

struct ModelConfig {
  int n_sensors = 7;
  int enc_hidden = 32;
  int enc_out = 32;
  int attn_dim = 64;  // key/value width per head
  int heads = 2;
  bool attention = true;
  bool skip = true;
  bool sequence = true;
  int window = 5;  // T
  int dec_hidden = 256;
  int feature_dim = 256;  // decoder output and LSTM width
  int head_hidden = 128;
  HeadKind head = HeadKind::pose_basis;
  int basis_k = 12;
  double d_max = 0.3;
  std::uint64_t seed = 1;

  int encoded_width() const;  // per-sensor feature width leaving the encoder
  int flatten_width() const { return n_sensors * encoded_width(); }
  int head_out() const { return head == HeadKind::servo ? 5 : basis_k; }
  int frames_consumed() const { return sequence ? window : 1; }
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json_text(const std::string& text);
};

struct Frame {
  int index = 0;  // position within its sequence; 0 starts a new sequence
  sim::DistanceMatrix d;
  Eigen::Matrix<double, Eigen::Dynamic, 3> joints;  // 23 x 3 when pose-targeted
  Eigen::VectorXd servo;                            // 5 when servo-targeted
};

struct Dataset {
  HeadKind target = HeadKind::pose_basis;
  std::vector<std::vector<Frame>> sequences;

  long frame_count() const;
  int sensor_count() const;
};

struct WindowRef {
  int seq = 0;
  int end = 0;  // prediction frame; the window covers [end - T + 1, end]
};

std::vector<WindowRef> enumerate_windows(const Dataset& ds, int window);

class PoseModel {
 public:
  PoseModel(const ModelConfig& cfg, kin::HandSkeleton skeleton,
            std::optional<kin::PoseBasis> basis);
  PoseModel(const PoseModel&) = delete;
  PoseModel& operator=(const PoseModel&) = delete;

  // One sliding window of raw distance matrices, oldest first.  Returns a
  // 23 x 3 position matrix (pose head) or a 1 x 5 servo row (servo head).
  Eigen::MatrixXd predict(const std::vector<sim::DistanceMatrix>& window_frames);

  // Batched training path.  `mats` holds batch * frames_consumed() matrices,
  // window-major then time-ascending.  Backward fills gradient buffers.
  void forward_batch(const std::vector<const sim::DistanceMatrix*>& mats, int batch);
  double loss_and_backward(const std::vector<const Frame*>& targets);
  double loss_only(const std::vector<const Frame*>& targets) const;

  const nn::Mat& head_output() const { return out_; }
  const kin::JointPositions& predicted_pose(int b) const { return pose_pred_[b]; }

  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }
  long param_count() const { return params_.total_size(); }
  const ModelConfig& config() const { return cfg_; }
  const kin::HandSkeleton& skeleton() const { return skeleton_; }
  const kin::PoseBasis* basis() const { return basis_ ? &*basis_ : nullptr; }
  long clamp_events() const { return clamp_events_; }

  void save(const std::string& path) const;  // checkpoint + <path>.json config sidecar
  static std::unique_ptr<PoseModel> load(const std::string& path,
                                         const kin::HandSkeleton& skeleton);

  // Encoder output rows for one encoded input matrix (test hook).
  nn::Mat encode_one(const Eigen::MatrixXd& encoded);

 private:
  void build(Rng& rng);
  void decode_heads(int batch);

  ModelConfig cfg_;
  kin::HandSkeleton skeleton_;
  std::optional<kin::PoseBasis> basis_;
  nn::Linear enc1_, enc2_, dec1_, dec2_, head1_, head2_;
  nn::MultiHeadAttention attn_;
  nn::Lstm lstm_;
  nn::Relu enc_relu_, dec_relu_, head_relu_;
  nn::ParamSet params_;
  long clamp_events_ = 0;

  // batch caches
  int batch_ = 0;
  nn::Mat z1_, z3_, out_;
  std::vector<kin::FkDerivatives> fk_;
  std::vector<Eigen::ArrayXd> clamp_pass_;
  std::vector<kin::JointPositions> pose_pred_;
};

struct TrainOptions {
  int epochs = 10;
  double lr = 1e-3;
  int batch_size = 256;
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
  bool verbose = false;
};

struct LossCurve {
  std::vector<double> train, val;
};

LossCurve train(PoseModel& model, const Dataset& train_set, const Dataset& val_set,
                const TrainOptions& opts);

struct EvalMetrics {
  double mean_error = 0.0;  // cm (pose head) or normalized MAE (servo head)
  double max_error = 0.0;
  double mse = 0.0;         // squared loss on the raw targets
  std::map<std::string, double> per_finger;
  long windows = 0;
};

EvalMetrics evaluate(PoseModel& model, const Dataset& test_set);

// Pose of the dataset frame whose flattened distance matrix has the highest
// cosine similarity with the query; ties keep the earliest frame.
Eigen::MatrixXd nn_baseline(const sim::DistanceMatrix& query, const Dataset& dataset);

// Keep a frame only when every fingertip of the two estimates agrees within
// `threshold` meters.
bool pseudo_gt_filter(const kin::HandSkeleton& skeleton, const kin::JointPositions& pred,
                      const kin::JointPositions& vision, double threshold = 0.004);

// Pose basis fitted on a deterministic synthetic angle corpus.
kin::PoseBasis default_pose_basis(const kin::HandSkeleton& skeleton, int k, std::uint64_t seed,
                                  int corpus_size = 2000);

}  // namespace sono::net
