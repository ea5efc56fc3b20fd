#include "sono/posenet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

#include "sono/nn/checkpoint.hpp"

namespace sono::net {

std::string head_kind_name(HeadKind k) { return k == HeadKind::servo ? "servo" : "pose_basis"; }

HeadKind head_kind_from_name(const std::string& name) {
  if (name == "servo") return HeadKind::servo;
  if (name == "pose_basis") return HeadKind::pose_basis;
  throw std::invalid_argument("unknown head kind: " + name);
}

int ModelConfig::encoded_width() const {
  if (!attention) return enc_out;
  return skip ? enc_out + attn_dim : attn_dim;
}

void ModelConfig::validate() const {
  if (n_sensors < 2) throw std::invalid_argument("model needs at least 2 sensors");
  if (heads < 1 || heads > 4) throw std::invalid_argument("head count must be 1..4");
  if (window < 1) throw std::invalid_argument("window must be >= 1");
  if (enc_hidden < 1 || enc_out < 1 || attn_dim < 1 || dec_hidden < 1 || feature_dim < 1 ||
      head_hidden < 1)
    throw std::invalid_argument("layer widths must be positive");
  if (head == HeadKind::pose_basis && (basis_k < 1 || basis_k > kin::kDof))
    throw std::invalid_argument("basis coefficient count must be in [1, 22]");
  if (!(d_max > 0.0)) throw std::invalid_argument("d_max must be positive");
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["n_sensors"] = n_sensors;
  j["enc_hidden"] = enc_hidden;
  j["enc_out"] = enc_out;
  j["attn_dim"] = attn_dim;
  j["heads"] = heads;
  j["attention"] = attention;
  j["skip"] = skip;
  j["sequence"] = sequence;
  j["window"] = window;
  j["dec_hidden"] = dec_hidden;
  j["feature_dim"] = feature_dim;
  j["head_hidden"] = head_hidden;
  j["head"] = head_kind_name(head);
  j["basis_k"] = basis_k;
  j["d_max"] = d_max;
  j["seed"] = seed;
  return j.dump(2);
}

ModelConfig ModelConfig::from_json_text(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig c;
  c.n_sensors = j.at("n_sensors").get<int>();
  c.enc_hidden = j.at("enc_hidden").get<int>();
  c.enc_out = j.at("enc_out").get<int>();
  c.attn_dim = j.at("attn_dim").get<int>();
  c.heads = j.at("heads").get<int>();
  c.attention = j.at("attention").get<bool>();
  c.skip = j.at("skip").get<bool>();
  c.sequence = j.at("sequence").get<bool>();
  c.window = j.at("window").get<int>();
  c.dec_hidden = j.at("dec_hidden").get<int>();
  c.feature_dim = j.at("feature_dim").get<int>();
  c.head_hidden = j.at("head_hidden").get<int>();
  c.head = head_kind_from_name(j.at("head").get<std::string>());
  c.basis_k = j.at("basis_k").get<int>();
  c.d_max = j.at("d_max").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

long Dataset::frame_count() const {
  long n = 0;
  for (const auto& s : sequences) n += static_cast<long>(s.size());
  return n;
}

int Dataset::sensor_count() const {
  for (const auto& s : sequences)
    if (!s.empty()) return static_cast<int>(s[0].d.rows());
  return 0;
}

std::vector<WindowRef> enumerate_windows(const Dataset& ds, int window) {
  std::vector<WindowRef> out;
  for (std::size_t s = 0; s < ds.sequences.size(); ++s)
    for (int end = window - 1; end < static_cast<int>(ds.sequences[s].size()); ++end)
      out.push_back({static_cast<int>(s), end});
  return out;
}

PoseModel::PoseModel(const ModelConfig& cfg, kin::HandSkeleton skeleton,
                     std::optional<kin::PoseBasis> basis)
    : cfg_(cfg), skeleton_(std::move(skeleton)), basis_(std::move(basis)) {
  cfg_.validate();
  skeleton_.validate();
  if (cfg_.head == HeadKind::pose_basis) {
    if (!basis_) throw std::invalid_argument("pose-basis head requires a pose basis");
    if (basis_->coeff_count() != cfg_.basis_k)
      throw std::invalid_argument("pose basis component count differs from config");
    if (basis_->mean.size() != skeleton_.dof_count())
      throw std::invalid_argument("pose basis dimension differs from skeleton DOFs");
  }
  Rng rng(derive_seed(cfg_.seed, "net.init"));
  build(rng);
}

void PoseModel::build(Rng& rng) {
  enc1_ = nn::Linear(cfg_.n_sensors, cfg_.enc_hidden, rng);
  enc2_ = nn::Linear(cfg_.enc_hidden, cfg_.enc_out, rng);
  if (cfg_.attention)
    attn_ = nn::MultiHeadAttention(cfg_.enc_out, cfg_.attn_dim, cfg_.heads, rng);
  dec1_ = nn::Linear(cfg_.flatten_width(), cfg_.dec_hidden, rng);
  dec2_ = nn::Linear(cfg_.dec_hidden, cfg_.feature_dim, rng);
  if (cfg_.sequence) lstm_ = nn::Lstm(cfg_.feature_dim, rng);
  head1_ = nn::Linear(cfg_.feature_dim, cfg_.head_hidden, rng);
  head2_ = nn::Linear(cfg_.head_hidden, cfg_.head_out(), rng);

  enc1_.register_params(params_, "enc1");
  enc2_.register_params(params_, "enc2");
  if (cfg_.attention) attn_.register_params(params_, "attn");
  dec1_.register_params(params_, "dec1");
  dec2_.register_params(params_, "dec2");
  if (cfg_.sequence) lstm_.register_params(params_, "lstm");
  head1_.register_params(params_, "head1");
  head2_.register_params(params_, "head2");
}

void PoseModel::forward_batch(const std::vector<const sim::DistanceMatrix*>& mats, int batch) {
  const int fpw = cfg_.frames_consumed();
  const int n = cfg_.n_sensors;
  if (batch < 1 || static_cast<int>(mats.size()) != batch * fpw)
    throw std::invalid_argument("forward_batch: matrix count does not match batch layout");
  batch_ = batch;
  nn::Mat x(static_cast<long>(batch) * fpw * n, n);
  for (int t = 0; t < fpw; ++t)
    for (int b = 0; b < batch; ++b) {
      const sim::DistanceMatrix& m = *mats[b * fpw + t];
      if (m.rows() != n || m.cols() != n)
        throw std::invalid_argument("forward_batch: matrix size does not match model");
      x.middleRows((static_cast<long>(t) * batch + b) * n, n) = sim::encode_input(m, cfg_.d_max);
    }
  nn::Mat h = enc_relu_.forward(enc1_.forward(x));
  z1_ = enc2_.forward(h);
  if (cfg_.attention) {
    nn::Mat z2 = attn_.forward(z1_, n);
    if (cfg_.skip) {
      z3_.resize(z1_.rows(), cfg_.encoded_width());
      z3_.leftCols(cfg_.enc_out) = z1_;
      z3_.rightCols(cfg_.attn_dim) = z2;
    } else {
      z3_ = std::move(z2);
    }
  } else {
    z3_ = z1_;
  }
  nn::ConstMatMap flat(z3_.data(), static_cast<long>(batch) * fpw, cfg_.flatten_width());
  nn::Mat d1 = dec_relu_.forward(dec1_.forward(flat));
  nn::Mat z4 = dec2_.forward(d1);
  nn::Mat feat;
  if (cfg_.sequence) {
    std::vector<nn::Mat> xs(fpw);
    for (int t = 0; t < fpw; ++t) xs[t] = z4.middleRows(static_cast<long>(t) * batch, batch);
    feat = lstm_.forward(xs);
  } else {
    feat = std::move(z4);
  }
  nn::Mat hh = head_relu_.forward(head1_.forward(feat));
  out_ = head2_.forward(hh);
  decode_heads(batch);
}

void PoseModel::decode_heads(int batch) {
  if (cfg_.head != HeadKind::pose_basis) return;
  kin::SkeletonIndex idx(skeleton_);
  fk_.clear();
  clamp_pass_.clear();
  pose_pred_.clear();
  fk_.reserve(batch);
  clamp_pass_.reserve(batch);
  pose_pred_.reserve(batch);
  for (int b = 0; b < batch; ++b) {
    Eigen::VectorXd coeffs = out_.row(b).transpose();
    kin::JointAngles raw = basis_->mean + basis_->components.transpose() * coeffs;
    int clamped = 0;
    kin::JointAngles theta = kin::clamp_to_limits(skeleton_, raw, &clamped);
    clamp_events_ += clamped;
    Eigen::ArrayXd pass(theta.size());
    for (int d = 0; d < theta.size(); ++d) pass[d] = theta[d] == raw[d] ? 1.0 : 0.0;
    fk_.push_back(kin::fk_derivatives(idx, theta));
    pose_pred_.push_back(fk_.back().frames.points);
    clamp_pass_.push_back(std::move(pass));
  }
}

double PoseModel::loss_only(const std::vector<const Frame*>& targets) const {
  if (static_cast<int>(targets.size()) != batch_)
    throw std::invalid_argument("target count does not match batch");
  if (cfg_.head == HeadKind::servo) {
    double sq = 0.0;
    for (int b = 0; b < batch_; ++b) {
      if (targets[b]->servo.size() != 5) throw std::invalid_argument("servo target must have 5 values");
      sq += (out_.row(b).transpose() - targets[b]->servo).squaredNorm();
    }
    return sq / (static_cast<double>(batch_) * 5.0);
  }
  double sq = 0.0;
  for (int b = 0; b < batch_; ++b) {
    if (targets[b]->joints.rows() != pose_pred_[b].rows())
      throw std::invalid_argument("joint target has wrong landmark count");
    sq += (pose_pred_[b] - targets[b]->joints).squaredNorm();
  }
  return sq / (static_cast<double>(batch_) * kin::kLandmarks * 3.0);
}

double PoseModel::loss_and_backward(const std::vector<const Frame*>& targets) {
  if (static_cast<int>(targets.size()) != batch_)
    throw std::invalid_argument("target count does not match batch");
  const int fpw = cfg_.frames_consumed();
  double loss = 0.0;
  nn::Mat dout(batch_, cfg_.head_out());
  if (cfg_.head == HeadKind::servo) {
    nn::Mat t(batch_, 5);
    for (int b = 0; b < batch_; ++b) {
      if (targets[b]->servo.size() != 5) throw std::invalid_argument("servo target must have 5 values");
      t.row(b) = targets[b]->servo.transpose();
    }
    auto [l, g] = nn::mse_loss(out_, t);
    loss = l;
    dout = std::move(g);
  } else {
    kin::SkeletonIndex idx(skeleton_);
    const double denom = static_cast<double>(batch_) * kin::kLandmarks * 3.0;
    for (int b = 0; b < batch_; ++b) {
      if (targets[b]->joints.rows() != pose_pred_[b].rows())
        throw std::invalid_argument("joint target has wrong landmark count");
      kin::JointPositions diff = pose_pred_[b] - targets[b]->joints;
      loss += diff.squaredNorm();
      kin::JointPositions dp = diff * (2.0 / denom);
      kin::JointAngles dtheta = kin::fk_backward(idx, fk_[b], dp);
      dtheta.array() *= clamp_pass_[b];
      dout.row(b) = (basis_->components * dtheta).transpose();
    }
    loss /= denom;
  }
  nn::Mat dhh = head2_.backward(dout);
  nn::Mat dfeat = head1_.backward(head_relu_.backward(dhh));
  nn::Mat dz4;
  if (cfg_.sequence) {
    std::vector<nn::Mat> dxs = lstm_.backward(dfeat);
    dz4.resize(static_cast<long>(batch_) * fpw, cfg_.feature_dim);
    for (int t = 0; t < fpw; ++t) dz4.middleRows(static_cast<long>(t) * batch_, batch_) = dxs[t];
  } else {
    dz4 = std::move(dfeat);
  }
  nn::Mat dd1 = dec2_.backward(dz4);
  nn::Mat dflat = dec1_.backward(dec_relu_.backward(dd1));
  nn::ConstMatMap dz3(dflat.data(), static_cast<long>(batch_) * fpw * cfg_.n_sensors,
                      cfg_.encoded_width());
  nn::Mat dz1;
  if (cfg_.attention && cfg_.skip) {
    dz1 = dz3.leftCols(cfg_.enc_out);
    nn::Mat dz2 = dz3.rightCols(cfg_.attn_dim);
    dz1 += attn_.backward(dz2);
  } else if (cfg_.attention) {
    nn::Mat dz2 = dz3;
    dz1 = attn_.backward(dz2);
  } else {
    dz1 = dz3;
  }
  nn::Mat dh = enc2_.backward(dz1);
  enc1_.backward(enc_relu_.backward(dh));
  return loss;
}

Eigen::MatrixXd PoseModel::predict(const std::vector<sim::DistanceMatrix>& window_frames) {
  if (static_cast<int>(window_frames.size()) != cfg_.window)
    throw std::invalid_argument("prediction window must have exactly T frames");
  const int fpw = cfg_.frames_consumed();
  std::vector<const sim::DistanceMatrix*> mats;
  mats.reserve(fpw);
  for (int t = cfg_.window - fpw; t < cfg_.window; ++t) mats.push_back(&window_frames[t]);
  forward_batch(mats, 1);
  if (cfg_.head == HeadKind::servo) return out_;
  return pose_pred_[0];
}

nn::Mat PoseModel::encode_one(const Eigen::MatrixXd& encoded) {
  const int n = cfg_.n_sensors;
  if (encoded.rows() != n || encoded.cols() != n)
    throw std::invalid_argument("encode_one: matrix size does not match model");
  nn::Mat x = encoded;
  nn::Mat h = enc_relu_.forward(enc1_.forward(x));
  nn::Mat z1 = enc2_.forward(h);
  if (!cfg_.attention) return z1;
  nn::Mat z2 = attn_.forward(z1, n);
  if (!cfg_.skip) return z2;
  nn::Mat z3(n, cfg_.encoded_width());
  z3.leftCols(cfg_.enc_out) = z1;
  z3.rightCols(cfg_.attn_dim) = z2;
  return z3;
}

void PoseModel::save(const std::string& path) const {
  std::vector<std::pair<std::string, const nn::Tensor*>> extras;
  nn::Tensor mean, comps;
  if (basis_) {
    mean.shape = {static_cast<int>(basis_->mean.size())};
    mean.data = basis_->mean;
    comps.shape = {static_cast<int>(basis_->components.rows()),
                   static_cast<int>(basis_->components.cols())};
    comps.data.resize(basis_->components.size());
    nn::MatMap(comps.data.data(), comps.shape[0], comps.shape[1]) = basis_->components;
    extras.emplace_back("basis.mean", &mean);
    extras.emplace_back("basis.components", &comps);
  }
  nn::save_params(path, params_, extras);
  std::ofstream side(path + ".json");
  if (!side) throw std::runtime_error("cannot write sidecar config: " + path + ".json");
  side << cfg_.to_json() << "\n";
}

std::unique_ptr<PoseModel> PoseModel::load(const std::string& path,
                                           const kin::HandSkeleton& skeleton) {
  std::ifstream side(path + ".json");
  if (!side) throw std::runtime_error("missing sidecar config: " + path + ".json");
  std::string text((std::istreambuf_iterator<char>(side)), std::istreambuf_iterator<char>());
  ModelConfig cfg = ModelConfig::from_json_text(text);
  std::optional<kin::PoseBasis> basis;
  if (cfg.head == HeadKind::pose_basis) {
    auto stored = nn::read_checkpoint(path);
    auto mi = stored.find("basis.mean");
    auto ci = stored.find("basis.components");
    if (mi == stored.end() || ci == stored.end())
      throw std::runtime_error("checkpoint lacks the pose basis: " + path);
    kin::PoseBasis b;
    b.mean = mi->second.data;
    b.components = nn::ConstMatMap(ci->second.data.data(), ci->second.shape[0], ci->second.shape[1]);
    b.explained_variance = Eigen::VectorXd::Zero(b.components.rows());
    basis = std::move(b);
  }
  auto model = std::make_unique<PoseModel>(cfg, skeleton, std::move(basis));
  nn::load_params(path, model->params_);
  return model;
}

namespace {

void gather_batch(const Dataset& ds, const std::vector<WindowRef>& refs, std::size_t begin,
                  std::size_t end, int window, int fpw,
                  std::vector<const sim::DistanceMatrix*>& mats,
                  std::vector<const Frame*>& targets) {
  mats.clear();
  targets.clear();
  for (std::size_t i = begin; i < end; ++i) {
    const auto& seq = ds.sequences[refs[i].seq];
    int start = refs[i].end - window + 1;
    for (int t = window - fpw; t < window; ++t) mats.push_back(&seq[start + t].d);
    targets.push_back(&seq[refs[i].end]);
  }
}

double dataset_loss(PoseModel& model, const Dataset& ds, const std::vector<WindowRef>& refs,
                    int batch_size) {
  if (refs.empty()) return 0.0;
  const int window = model.config().window;
  const int fpw = model.config().frames_consumed();
  std::vector<const sim::DistanceMatrix*> mats;
  std::vector<const Frame*> targets;
  double sum = 0.0;
  for (std::size_t at = 0; at < refs.size(); at += batch_size) {
    std::size_t hi = std::min(refs.size(), at + batch_size);
    gather_batch(ds, refs, at, hi, window, fpw, mats, targets);
    model.forward_batch(mats, static_cast<int>(hi - at));
    sum += model.loss_only(targets) * static_cast<double>(hi - at);
  }
  return sum / static_cast<double>(refs.size());
}

}  // namespace

LossCurve train(PoseModel& model, const Dataset& train_set, const Dataset& val_set,
                const TrainOptions& opts) {
  const ModelConfig& cfg = model.config();
  if (train_set.target != cfg.head)
    throw std::invalid_argument("dataset target kind does not match the model head");
  std::vector<WindowRef> windows = enumerate_windows(train_set, cfg.window);
  if (windows.empty()) throw std::invalid_argument("empty training dataset");
  std::vector<WindowRef> val_windows = enumerate_windows(val_set, cfg.window);
  nn::AdamConfig acfg;
  acfg.lr = opts.lr;
  acfg.clip_norm = opts.clip_norm;
  nn::Adam adam(acfg);
  const int fpw = cfg.frames_consumed();
  std::vector<const sim::DistanceMatrix*> mats;
  std::vector<const Frame*> targets;
  LossCurve curve;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    Rng rng(derive_seed(opts.seed, "net.epoch", static_cast<std::uint64_t>(epoch)));
    rng.shuffle(windows);
    double sum = 0.0;
    for (std::size_t at = 0; at < windows.size(); at += opts.batch_size) {
      std::size_t hi = std::min(windows.size(), at + opts.batch_size);
      gather_batch(train_set, windows, at, hi, cfg.window, fpw, mats, targets);
      model.params().zero_grads();
      model.forward_batch(mats, static_cast<int>(hi - at));
      sum += model.loss_and_backward(targets) * static_cast<double>(hi - at);
      adam.step(model.params());
    }
    curve.train.push_back(sum / static_cast<double>(windows.size()));
    curve.val.push_back(dataset_loss(model, val_set, val_windows, opts.batch_size));
    if (opts.verbose)
      std::fprintf(stderr, "epoch %3d  train %.6g  val %.6g\n", epoch + 1, curve.train.back(),
                   curve.val.back());
  }
  return curve;
}

EvalMetrics evaluate(PoseModel& model, const Dataset& test_set) {
  const ModelConfig& cfg = model.config();
  if (test_set.target != cfg.head)
    throw std::invalid_argument("dataset target kind does not match the model head");
  std::vector<WindowRef> refs = enumerate_windows(test_set, cfg.window);
  EvalMetrics m;
  m.windows = static_cast<long>(refs.size());
  if (refs.empty()) return m;
  const kin::HandSkeleton& sk = model.skeleton();
  std::map<std::string, std::pair<double, long>> groups;
  std::vector<const sim::DistanceMatrix*> mats;
  std::vector<const Frame*> targets;
  double err_sum = 0.0, sq_sum = 0.0;
  long err_count = 0, sq_count = 0;
  const int batch_size = 256;
  for (std::size_t at = 0; at < refs.size(); at += batch_size) {
    std::size_t hi = std::min(refs.size(), at + batch_size);
    gather_batch(test_set, refs, at, hi, cfg.window, cfg.frames_consumed(), mats, targets);
    int b = static_cast<int>(hi - at);
    model.forward_batch(mats, b);
    for (int i = 0; i < b; ++i) {
      if (cfg.head == HeadKind::servo) {
        Eigen::VectorXd diff = model.head_output().row(i).transpose() - targets[i]->servo;
        for (int s = 0; s < 5; ++s) {
          double e = std::abs(diff[s]);
          err_sum += e;
          ++err_count;
          m.max_error = std::max(m.max_error, e);
          static const char* fingers[5] = {"thumb", "index", "middle", "ring", "pinky"};
          auto& g = groups[fingers[s]];
          g.first += e;
          ++g.second;
        }
        sq_sum += diff.squaredNorm();
        sq_count += 5;
      } else {
        const kin::JointPositions& pred = model.predicted_pose(i);
        const auto& gt = targets[i]->joints;
        for (int lm = 0; lm < pred.rows(); ++lm) {
          double e = (pred.row(lm) - gt.row(lm)).norm() * 100.0;  // cm
          err_sum += e;
          ++err_count;
          m.max_error = std::max(m.max_error, e);
          std::string name = sk.landmarks[lm];
          auto us = name.find('_');
          std::string group = us == std::string::npos ? std::string("palm") : name.substr(0, us);
          if (name == "wrist" || name == "index_root" || name == "pinky_root") group = "palm";
          auto& g = groups[group];
          g.first += e;
          ++g.second;
        }
        sq_sum += (pred - gt).squaredNorm();
        sq_count += static_cast<long>(pred.rows()) * 3;
      }
    }
  }
  m.mean_error = err_sum / static_cast<double>(err_count);
  m.mse = sq_sum / static_cast<double>(sq_count);
  for (const auto& [name, acc] : groups) m.per_finger[name] = acc.first / acc.second;
  return m;
}

Eigen::MatrixXd nn_baseline(const sim::DistanceMatrix& query, const Dataset& dataset) {
  double qn = query.norm();
  if (qn <= 0.0) throw std::domain_error("baseline query has zero norm");
  const Frame* best = nullptr;
  double best_sim = -2.0;
  for (const auto& seq : dataset.sequences)
    for (const auto& f : seq) {
      if (f.d.rows() != query.rows() || f.d.cols() != query.cols())
        throw std::invalid_argument("baseline: matrix size mismatch");
      double fn = f.d.norm();
      if (fn <= 0.0) throw std::domain_error("baseline dataset entry has zero norm");
      double sim = (query.array() * f.d.array()).sum() / (qn * fn);
      if (sim > best_sim) {
        best_sim = sim;
        best = &f;
      }
    }
  if (!best) throw std::invalid_argument("baseline dataset is empty");
  if (dataset.target == HeadKind::servo) return best->servo.transpose();
  return best->joints;
}

bool pseudo_gt_filter(const kin::HandSkeleton& sk, const kin::JointPositions& pred,
                      const kin::JointPositions& vision, double threshold) {
  if (pred.rows() != static_cast<int>(sk.landmarks.size()) || vision.rows() != pred.rows())
    throw std::invalid_argument("pose landmark sets do not match the skeleton");
  for (std::size_t lm = 0; lm < sk.landmarks.size(); ++lm) {
    const std::string& name = sk.landmarks[lm];
    if (name.size() >= 4 && name.compare(name.size() - 4, 4, "_tip") == 0) {
      double d = (pred.row(static_cast<int>(lm)) - vision.row(static_cast<int>(lm))).norm();
      if (d > threshold) return false;
    }
  }
  return true;
}

kin::PoseBasis default_pose_basis(const kin::HandSkeleton& sk, int k, std::uint64_t seed,
                                  int corpus_size) {
  Eigen::MatrixXd corpus = kin::sample_angle_corpus(sk, corpus_size, derive_seed(seed, "net.basis"));
  return kin::fit_pose_basis(corpus, k);
}

}  // namespace sono::net
