#include "sono/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace sono::pipe {
namespace {

// Frame budget -> per-sequence lengths.  A trailing remainder of one frame is
// folded into the previous sequence so every sequence can be interpolated.
std::vector<int> sequence_lengths(int frames, int seq_len) {
  if (frames < 2) throw std::invalid_argument("dataset needs at least 2 frames");
  if (seq_len < 2) throw std::invalid_argument("sequence length must be >= 2");
  std::vector<int> lengths(frames / seq_len, seq_len);
  int rem = frames % seq_len;
  if (rem >= 2) {
    lengths.push_back(rem);
  } else if (rem == 1) {
    if (lengths.empty())
      throw std::invalid_argument("dataset needs at least 2 frames");
    lengths.back() += 1;
  }
  return lengths;
}

double smoothstep(double u) { return u * u * (3.0 - 2.0 * u); }

void append_number(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  out += buf;
}

}  // namespace

MechHand::MechHand(const kin::HandSkeleton& sk) : skeleton(&sk) {
  for (const char* f : {"thumb", "index", "middle", "ring", "pinky"}) {
    std::vector<int> dofs;
    for (const char* part : {"_base_flex", "_mid1_flex", "_mid2_flex"}) {
      int d = sk.dof_index(std::string(f) + part);
      if (d < 0) throw std::invalid_argument("skeleton lacks flexion dof for finger " + std::string(f));
      dofs.push_back(d);
    }
    flex_dofs.push_back(std::move(dofs));
  }
}

kin::JointAngles MechHand::angles(const Eigen::VectorXd& servo) const {
  if (servo.size() != 5) throw std::invalid_argument("servo command must have 5 values");
  kin::JointAngles theta = kin::JointAngles::Zero(skeleton->dof_count());
  for (int f = 0; f < 5; ++f) {
    double u = std::clamp(servo[f], -0.5, 0.5) + 0.5;
    for (int d : flex_dofs[f])
      theta[d] = skeleton->dofs[d].lo + u * (skeleton->dofs[d].hi - skeleton->dofs[d].lo);
  }
  return theta;
}

net::Dataset dataset_from_angles(const kin::HandSkeleton& sk,
                                 const std::vector<std::vector<kin::JointAngles>>& sequences,
                                 const DomainConfig& domain, std::uint64_t seed) {
  sim::SensorLayout layout = sim::standard_layout(domain.n_sensors, domain.sensor_offset);
  if (domain.sensor_jitter > 0.0)
    layout = sim::jitter_layout(layout, domain.sensor_jitter, derive_seed(seed, "pipe.jitter"));
  bool wobbles = false;
  for (const auto& a : layout.attachments) wobbles = wobbles || a.wobble > 0.0;
  kin::SkeletonIndex idx(sk);
  net::Dataset ds;
  ds.target = net::HeadKind::pose_basis;
  std::uint64_t frame_counter = 0;
  for (const auto& seq : sequences) {
    std::vector<net::Frame> frames;
    frames.reserve(seq.size());
    for (std::size_t t = 0; t < seq.size(); ++t) {
      kin::JointPositions pose =
          kin::normalize_pose(sk, kin::forward_frames(idx, seq[t]).points);
      std::uint64_t frame_seed = derive_seed(seed, "pipe.frame", frame_counter++);
      sim::DistanceMatrix clean =
          wobbles ? sim::measure(idx, pose, sim::wobble_layout(layout, frame_seed))
                  : sim::measure(idx, pose, layout);
      sim::AugmentConfig aug;
      aug.noise_sigma = domain.noise_sigma;
      aug.mask_prob = domain.mask_prob;
      aug.seed = frame_seed;
      net::Frame f;
      f.index = static_cast<int>(t);
      f.d = sim::augment(clean, aug);
      f.joints = pose;
      frames.push_back(std::move(f));
    }
    ds.sequences.push_back(std::move(frames));
  }
  return ds;
}

net::Dataset gen_human_dataset(const kin::HandSkeleton& sk, const DomainConfig& domain,
                               int poses, std::uint64_t seed) {
  std::vector<int> lengths = sequence_lengths(poses, domain.seq_len);
  std::vector<std::vector<kin::JointAngles>> sequences;
  sequences.reserve(lengths.size());
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    auto one = kin::sample_pose_sequences(sk, 1, lengths[i],
                                          derive_seed(domain.pose_seed, "pipe.human_seq", i),
                                          domain.keyframe_spacing);
    sequences.push_back(std::move(one[0]));
  }
  return dataset_from_angles(sk, sequences, domain, seed);
}

net::Dataset gen_mech_dataset(const kin::HandSkeleton& sk, int frames, double noise_sigma,
                              double mask_prob, std::uint64_t seed, int seq_len) {
  std::vector<int> lengths = sequence_lengths(frames, seq_len);
  MechHand rig(sk);
  sim::SensorLayout layout = sim::standard_layout(7);
  kin::SkeletonIndex idx(sk);
  net::Dataset ds;
  ds.target = net::HeadKind::servo;
  std::uint64_t frame_counter = 0;
  const int spacing = 20;
  for (std::size_t si = 0; si < lengths.size(); ++si) {
    Rng rng(derive_seed(seed, "pipe.mech_seq", si));
    const int len = lengths[si];
    std::vector<int> key_at;
    for (int t = 0; t < len; t += spacing) key_at.push_back(t);
    if (key_at.back() != len - 1) key_at.push_back(len - 1);
    Eigen::MatrixXd keys(static_cast<int>(key_at.size()), 5);
    for (int k = 0; k < keys.rows(); ++k)
      for (int s = 0; s < 5; ++s) keys(k, s) = rng.uniform(-0.5, 0.5);
    std::vector<net::Frame> seq;
    seq.reserve(len);
    for (std::size_t ki = 0; ki + 1 < key_at.size(); ++ki) {
      int t0 = key_at[ki], t1 = key_at[ki + 1];
      for (int t = t0 + (ki == 0 ? 0 : 1); t <= t1; ++t) {
        double u = t1 == t0 ? 0.0 : static_cast<double>(t - t0) / (t1 - t0);
        Eigen::VectorXd servo =
            keys.row(ki).transpose() +
            smoothstep(u) * (keys.row(ki + 1) - keys.row(ki)).transpose();
        kin::JointPositions pose = kin::forward_frames(idx, rig.angles(servo)).points;
        sim::AugmentConfig aug;
        aug.noise_sigma = noise_sigma;
        aug.mask_prob = mask_prob;
        aug.seed = derive_seed(seed, "pipe.frame", frame_counter++);
        net::Frame f;
        f.index = static_cast<int>(seq.size());
        f.d = sim::augment(sim::measure(idx, pose, layout), aug);
        f.servo = servo;
        seq.push_back(std::move(f));
      }
    }
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

void save_dataset(const net::Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset: " + path);
  std::string line;
  for (const auto& seq : ds.sequences)
    for (const auto& f : seq) {
      line.clear();
      line += "{\"i\":";
      line += std::to_string(f.index);
      line += ",\"d\":[";
      for (int r = 0; r < f.d.rows(); ++r) {
        line += r ? ",[" : "[";
        for (int c = 0; c < f.d.cols(); ++c) {
          if (c) line += ',';
          append_number(line, f.d(r, c));
        }
        line += ']';
      }
      line += ']';
      if (ds.target == net::HeadKind::servo) {
        line += ",\"servo\":[";
        for (int s = 0; s < f.servo.size(); ++s) {
          if (s) line += ',';
          append_number(line, f.servo[s]);
        }
        line += "]}";
      } else {
        line += ",\"joints\":[";
        for (int r = 0; r < f.joints.rows(); ++r) {
          line += r ? ",[" : "[";
          for (int c = 0; c < 3; ++c) {
            if (c) line += ',';
            append_number(line, f.joints(r, c));
          }
          line += ']';
        }
        line += "]}";
      }
      line += '\n';
      out << line;
    }
  if (!out) throw std::runtime_error("write failed: " + path);
}

net::Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset: " + path);
  net::Dataset ds;
  std::string text;
  long lineno = 0;
  bool kind_known = false;
  std::vector<net::Frame>* current = nullptr;
  while (std::getline(in, text)) {
    ++lineno;
    if (text.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
    }
    net::Frame f;
    f.index = j.at("i").get<int>();
    const auto& dm = j.at("d");
    const int n = static_cast<int>(dm.size());
    f.d.resize(n, n);
    for (int r = 0; r < n; ++r) {
      if (static_cast<int>(dm[r].size()) != n)
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": distance matrix is not square");
      for (int c = 0; c < n; ++c) {
        double v = dm[r][c].get<double>();
        f.d(r, c) = v < 0.0 ? sim::kMissing : v;
      }
    }
    sim::validate_distance_matrix(f.d);
    bool has_joints = j.contains("joints");
    bool has_servo = j.contains("servo");
    if (has_joints == has_servo)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": frame needs exactly one of joints/servo");
    net::HeadKind kind = has_servo ? net::HeadKind::servo : net::HeadKind::pose_basis;
    if (!kind_known) {
      ds.target = kind;
      kind_known = true;
    } else if (kind != ds.target) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": mixed target kinds in one dataset");
    }
    if (has_servo) {
      const auto& sv = j.at("servo");
      if (sv.size() != 5)
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": servo target must have 5 values");
      f.servo.resize(5);
      for (int s = 0; s < 5; ++s) f.servo[s] = sv[s].get<double>();
    } else {
      const auto& js = j.at("joints");
      if (static_cast<int>(js.size()) != kin::kLandmarks)
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": joints target must have 23 rows");
      f.joints.resize(kin::kLandmarks, 3);
      for (int r = 0; r < kin::kLandmarks; ++r)
        for (int c = 0; c < 3; ++c) f.joints(r, c) = js[r][c].get<double>();
    }
    if (f.index == 0 || !current) {
      ds.sequences.emplace_back();
      current = &ds.sequences.back();
    } else if (f.index != static_cast<int>(current->size())) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": frame index out of order");
    }
    current->push_back(std::move(f));
  }
  if (ds.sequences.empty()) throw std::runtime_error("dataset is empty: " + path);
  return ds;
}

Split split_by_sequence(const net::Dataset& ds, double train_frac, double val_frac,
                        std::uint64_t seed) {
  if (train_frac <= 0.0 || train_frac + val_frac > 1.0)
    throw std::invalid_argument("bad split fractions");
  const int n = static_cast<int>(ds.sequences.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "pipe.split"));
  rng.shuffle(order);
  int n_train = std::max(1, static_cast<int>(std::llround(train_frac * n)));
  int n_val = static_cast<int>(std::llround(val_frac * n));
  n_train = std::min(n_train, n);
  n_val = std::min(n_val, n - n_train);
  std::vector<int> buckets(n, 2);
  for (int i = 0; i < n_train; ++i) buckets[order[i]] = 0;
  for (int i = n_train; i < n_train + n_val; ++i) buckets[order[i]] = 1;
  Split split;
  split.train.target = split.val.target = split.test.target = ds.target;
  for (int i = 0; i < n; ++i) {
    net::Dataset* dst = buckets[i] == 0 ? &split.train : buckets[i] == 1 ? &split.val : &split.test;
    dst->sequences.push_back(ds.sequences[i]);
  }
  return split;
}

RunResult pretrain(const net::Dataset& ds, const kin::HandSkeleton& sk, const RunOptions& opts,
                   const std::string& ckpt_out) {
  Split split = split_by_sequence(ds, opts.train_frac, opts.val_frac, opts.split_seed);
  net::ModelConfig cfg = opts.model;
  if (ds.sensor_count() != cfg.n_sensors)
    throw std::invalid_argument("dataset sensor count does not match model config");
  std::optional<kin::PoseBasis> basis;
  if (cfg.head == net::HeadKind::pose_basis)
    basis = net::default_pose_basis(sk, cfg.basis_k, cfg.seed);
  net::PoseModel model(cfg, sk, std::move(basis));
  RunResult result;
  result.curve = net::train(model, split.train, split.val, opts.train);
  const net::Dataset& eval_on =
      !split.test.sequences.empty() ? split.test
                                    : (!split.val.sequences.empty() ? split.val : split.train);
  result.test = net::evaluate(model, eval_on);
  result.param_count = model.param_count();
  if (!ckpt_out.empty()) model.save(ckpt_out);
  return result;
}

RunResult finetune(const std::string& ckpt_in, const net::Dataset& ds,
                   const kin::HandSkeleton& sk, const net::TrainOptions& train_opts,
                   double train_frac, double val_frac, std::uint64_t split_seed,
                   const std::string& ckpt_out) {
  auto model = net::PoseModel::load(ckpt_in, sk);
  if (ds.sensor_count() != model->config().n_sensors)
    throw std::invalid_argument("dataset sensor count does not match checkpoint");
  if (ds.target != model->config().head)
    throw std::invalid_argument("dataset target kind does not match checkpoint");
  Split split = split_by_sequence(ds, train_frac, val_frac, split_seed);
  RunResult result;
  if (train_opts.epochs > 0)
    result.curve = net::train(*model, split.train, split.val, train_opts);
  const net::Dataset& eval_on =
      !split.test.sequences.empty() ? split.test
                                    : (!split.val.sequences.empty() ? split.val : split.train);
  result.test = net::evaluate(*model, eval_on);
  result.param_count = model->param_count();
  if (!ckpt_out.empty()) model->save(ckpt_out);
  return result;
}

std::vector<AblationRow> run_ablations(const net::Dataset& ds, const kin::HandSkeleton& sk,
                                       const std::vector<std::uint64_t>& seeds,
                                       const net::ModelConfig& proto,
                                       const net::TrainOptions& train_opts,
                                       std::uint64_t split_seed) {
  if (seeds.size() < 3) throw std::invalid_argument("ablation study needs at least 3 seeds");
  Split split = split_by_sequence(ds, 0.8, 0.1, split_seed);
  std::optional<kin::PoseBasis> basis;
  if (proto.head == net::HeadKind::pose_basis)
    basis = net::default_pose_basis(sk, proto.basis_k, proto.seed);
  struct Variant {
    const char* name;
    bool sequence, attention, skip;
  };
  const Variant variants[4] = {{"w/o seq.", false, true, true},
                               {"w/o atten.", true, false, true},
                               {"w/o skip", true, true, false},
                               {"full", true, true, true}};
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    AblationRow row;
    row.variant = v.name;
    for (std::uint64_t seed : seeds) {
      net::ModelConfig cfg = proto;
      cfg.sequence = v.sequence;
      cfg.attention = v.attention;
      cfg.skip = v.skip;
      cfg.seed = seed;
      net::PoseModel model(cfg, sk, basis);
      net::TrainOptions to = train_opts;
      to.seed = seed;
      net::train(model, split.train, split.val, to);
      net::EvalMetrics m = net::evaluate(model, split.test);
      row.mean_test_mse += m.mse;
      row.mean_test_err += m.mean_error;
      row.param_count = model.param_count();
    }
    row.mean_test_mse /= static_cast<double>(seeds.size());
    row.mean_test_err /= static_cast<double>(seeds.size());
    rows.push_back(row);
  }
  return rows;
}

bool full_variant_is_minimum(const std::vector<AblationRow>& rows) {
  const AblationRow* full = nullptr;
  for (const auto& r : rows)
    if (r.variant == "full") full = &r;
  if (!full) return false;
  for (const auto& r : rows)
    if (r.variant != "full" && r.mean_test_mse <= full->mean_test_mse) return false;
  return true;
}

std::vector<SensorStudyRow> run_sensor_study(const kin::HandSkeleton& sk,
                                             const DomainConfig& base, int poses,
                                             const std::vector<std::uint64_t>& seeds,
                                             const net::ModelConfig& proto,
                                             const net::TrainOptions& train_opts,
                                             std::uint64_t split_seed) {
  if (seeds.empty()) throw std::invalid_argument("sensor study needs at least one seed");
  std::vector<int> lengths = sequence_lengths(poses, base.seq_len);
  std::vector<std::vector<kin::JointAngles>> sequences;
  sequences.reserve(lengths.size());
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    auto one = kin::sample_pose_sequences(sk, 1, lengths[i],
                                          derive_seed(base.pose_seed, "pipe.human_seq", i),
                                          base.keyframe_spacing);
    sequences.push_back(std::move(one[0]));
  }
  std::optional<kin::PoseBasis> basis;
  if (proto.head == net::HeadKind::pose_basis)
    basis = net::default_pose_basis(sk, proto.basis_k, proto.seed);
  std::vector<SensorStudyRow> rows;
  for (int n = 5; n <= 8; ++n) {
    DomainConfig domain = base;
    domain.n_sensors = n;
    net::Dataset ds =
        dataset_from_angles(sk, sequences, domain, derive_seed(base.pose_seed, "pipe.study", n));
    Split split = split_by_sequence(ds, 0.8, 0.1, split_seed);
    SensorStudyRow row;
    row.sensors = n;
    row.pairs = n * (n - 1) / 2;
    for (std::uint64_t seed : seeds) {
      net::ModelConfig cfg = proto;
      cfg.n_sensors = n;
      cfg.seed = seed;
      net::PoseModel model(cfg, sk, basis);
      net::TrainOptions to = train_opts;
      to.seed = seed;
      net::train(model, split.train, split.val, to);
      net::EvalMetrics m = net::evaluate(model, split.test);
      row.mean_err_cm += m.mean_error;
      row.mse += m.mse;
    }
    row.mean_err_cm /= static_cast<double>(seeds.size());
    row.mse /= static_cast<double>(seeds.size());
    rows.push_back(row);
  }
  return rows;
}

bool sensor_ladder_holds(const std::vector<SensorStudyRow>& rows) {
  if (rows.size() != 4) return false;
  double e5 = rows[0].mean_err_cm, e6 = rows[1].mean_err_cm, e7 = rows[2].mean_err_cm,
         e8 = rows[3].mean_err_cm;
  return e5 > e6 && e6 > e7 && (e7 - e8) < (e6 - e7);
}

StreamStats stream_infer(std::istream& in, std::ostream& out, net::PoseModel& model) {
  const int n = model.config().n_sensors;
  const int window = model.config().window;
  auto blank = [&] {
    sim::DistanceMatrix m = sim::DistanceMatrix::Constant(n, n, sim::kMissing);
    m.diagonal().setZero();
    return m;
  };
  std::vector<sim::DistanceMatrix> sliding(window, sim::DistanceMatrix::Zero(n, n));
  sim::DistanceMatrix assembly = blank();
  StreamStats stats;
  double latency_sum = 0.0;
  std::string line;
  char buf[32];
  auto t_start = std::chrono::steady_clock::now();
  auto check_abort = [&] {
    if (stats.malformed_lines >= 5 &&
        stats.malformed_lines > 0.01 * static_cast<double>(stats.total_lines))
      throw std::runtime_error("stream aborted: more than 1% malformed lines");
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++stats.total_lines;
    long frame = 0;
    bool ok = false;
    if (line[0] == 'F' && line.size() > 2 && line[1] == ',') {
      int i = -1, j = -1;
      double mm = 0.0;
      char tail = 0;
      int got = std::sscanf(line.c_str(), "F,%ld,%d,%d,%lf%c", &frame, &i, &j, &mm, &tail);
      if (got == 4 && i >= 0 && i < n && j >= 0 && j < n && i != j &&
          (mm == -1.0 || (mm >= 0.0 && mm <= sim::kMaxRange * 1000.0))) {
        assembly(i, j) = mm < 0.0 ? sim::kMissing : mm / 1000.0;
        ok = true;
      }
    } else if (line[0] == 'E' && line.size() > 2 && line[1] == ',') {
      char tail = 0;
      int got = std::sscanf(line.c_str(), "E,%ld%c", &frame, &tail);
      if (got == 1) {
        ok = true;
        sliding.erase(sliding.begin());
        sliding.push_back(assembly);
        assembly = blank();
        auto t0 = std::chrono::steady_clock::now();
        Eigen::MatrixXd pred = model.predict(sliding);
        auto t1 = std::chrono::steady_clock::now();
        double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        latency_sum += ms;
        stats.max_latency_ms = std::max(stats.max_latency_ms, ms);
        ++stats.frames;
        std::string pline = "P," + std::to_string(frame);
        for (int r = 0; r < pred.rows(); ++r)
          for (int c = 0; c < pred.cols(); ++c) {
            std::snprintf(buf, sizeof(buf), ",%.6f", pred(r, c));
            pline += buf;
          }
        pline += '\n';
        out << pline;
      }
    }
    if (!ok) {
      ++stats.malformed_lines;
      check_abort();
    }
  }
  check_abort();
  auto t_end = std::chrono::steady_clock::now();
  stats.seconds = std::chrono::duration<double>(t_end - t_start).count();
  stats.mean_latency_ms = stats.frames ? latency_sum / stats.frames : 0.0;
  return stats;
}

std::string format_table(const std::vector<std::string>& header,
                         const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size() && c < width.size(); ++c)
      width[c] = std::max(width[c], r[c].size());
  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& r) {
    for (std::size_t c = 0; c < width.size(); ++c) {
      std::string cell = c < r.size() ? r[c] : "";
      out << cell << std::string(width[c] - cell.size() + 2, ' ');
    }
    out << '\n';
  };
  emit(header);
  for (const auto& r : rows) emit(r);
  return out.str();
}

void write_table_csv(const std::string& path, const std::vector<std::string>& header,
                     const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write table: " + path);
  auto emit = [&](const std::vector<std::string>& r) {
    for (std::size_t c = 0; c < r.size(); ++c) out << (c ? "," : "") << r[c];
    out << '\n';
  };
  emit(header);
  for (const auto& r : rows) emit(r);
}

}  // namespace sono::pipe
