// Command-line front end: dataset generation, training, evaluation, the
// ablation and sensor-count studies, the localization demo and streaming
// inference.  Exit codes: 0 success, 1 error, 2 failed study assertion.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "sono/geometry.hpp"
#include "sono/kinematics.hpp"
#include "sono/pipeline.hpp"
#include "sono/posenet.hpp"

using namespace sono;

namespace {

kin::HandSkeleton load_skeleton(const std::string& config_path) {
  if (config_path.empty()) return kin::default_skeleton();
  return kin::skeleton_from_config(Config::load(config_path));
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) seeds.push_back(std::stoull(tok));
  return seeds;
}

std::string fmt(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

void print_metrics(const net::EvalMetrics& m, net::HeadKind head) {
  const char* unit = head == net::HeadKind::servo ? "(normalized MAE)" : "cm";
  std::printf("windows:    %ld\n", m.windows);
  std::printf("mean error: %s %s\n", fmt(m.mean_error).c_str(), unit);
  std::printf("max error:  %s %s\n", fmt(m.max_error).c_str(), unit);
  std::printf("test MSE:   %s\n", fmt(m.mse).c_str());
  for (const auto& [name, err] : m.per_finger)
    std::printf("  %-8s %s\n", name.c_str(), fmt(err).c_str());
}

void write_loss_curve(const std::string& path, const net::LossCurve& curve) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write loss curve: " + path);
  out << "epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < curve.train.size(); ++e)
    out << (e + 1) << "," << fmt(curve.train[e]) << "," << fmt(curve.val[e]) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ultrasonic-glove hand tracking: simulation, training and experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 1;
  app.add_option("--config", config_path, "hand config file (key = value schema)");
  app.add_option("--seed", seed, "master seed");

  // ---- gen-human ----------------------------------------------------------
  auto* gen_human = app.add_subcommand("gen-human", "generate a human-analog pose dataset");
  int gh_poses = 46000, gh_seq_len = 100, gh_sensors = 7;
  double gh_noise = 0.001, gh_mask = 0.008, gh_jitter = 0.0;
  std::uint64_t gh_pose_seed = 0;
  std::string gh_out;
  gen_human->add_option("--poses", gh_poses, "total frame count");
  gen_human->add_option("--seq-len", gh_seq_len, "frames per sequence");
  gen_human->add_option("--sensors", gh_sensors, "sensor count (5..8)");
  gen_human->add_option("--noise", gh_noise, "range noise sigma (m)");
  gen_human->add_option("--mask", gh_mask, "missing-measurement probability");
  gen_human->add_option("--jitter", gh_jitter, "per-domain sensor placement jitter (m)");
  gen_human->add_option("--pose-seed", gh_pose_seed, "pose stream seed (defaults to --seed)");
  gen_human->add_option("--out", gh_out, "output JSONL path")->required();

  // ---- gen-mech -----------------------------------------------------------
  auto* gen_mech = app.add_subcommand("gen-mech", "generate a 5-servo rig dataset");
  int gm_frames = 30000, gm_seq_len = 100;
  double gm_noise = 0.0005, gm_mask = 0.002;
  std::string gm_out;
  gen_mech->add_option("--frames", gm_frames, "total frame count");
  gen_mech->add_option("--seq-len", gm_seq_len, "frames per sequence");
  gen_mech->add_option("--noise", gm_noise, "range noise sigma (m)");
  gen_mech->add_option("--mask", gm_mask, "missing-measurement probability");
  gen_mech->add_option("--out", gm_out, "output JSONL path")->required();

  // ---- pretrain / finetune ------------------------------------------------
  auto* pretrain = app.add_subcommand("pretrain", "train a model from scratch");
  std::string pt_data, pt_out, pt_head = "pose";
  int pt_epochs = 10, pt_batch = 256, pt_heads = 2, pt_window = 5;
  double pt_lr = 1e-3;
  bool pt_no_attn = false, pt_no_skip = false, pt_no_seq = false, pt_verbose = false;
  pretrain->add_option("--data", pt_data, "training dataset (JSONL)")->required();
  pretrain->add_option("--out", pt_out, "checkpoint output path")->required();
  pretrain->add_option("--head", pt_head, "pose | servo");
  pretrain->add_option("--epochs", pt_epochs, "training epochs");
  pretrain->add_option("--lr", pt_lr, "learning rate");
  pretrain->add_option("--batch", pt_batch, "minibatch size (windows)");
  pretrain->add_option("--heads", pt_heads, "attention heads (1..4)");
  pretrain->add_option("--window", pt_window, "sliding window length T");
  pretrain->add_flag("--no-attention", pt_no_attn, "ablate the attention block");
  pretrain->add_flag("--no-skip", pt_no_skip, "ablate the encoder skip connection");
  pretrain->add_flag("--no-sequence", pt_no_seq, "ablate the sequence module");
  pretrain->add_flag("-v,--verbose", pt_verbose, "per-epoch loss to stderr");

  auto* finetune = app.add_subcommand("finetune", "continue training from a checkpoint");
  std::string ft_ckpt, ft_data, ft_out;
  int ft_epochs = 5, ft_batch = 256;
  double ft_lr = 1e-4;
  bool ft_verbose = false;
  finetune->add_option("--ckpt", ft_ckpt, "input checkpoint")->required();
  finetune->add_option("--data", ft_data, "fine-tune dataset (JSONL)")->required();
  finetune->add_option("--out", ft_out, "checkpoint output path")->required();
  finetune->add_option("--epochs", ft_epochs, "training epochs");
  finetune->add_option("--lr", ft_lr, "learning rate");
  finetune->add_option("--batch", ft_batch, "minibatch size (windows)");
  finetune->add_flag("-v,--verbose", ft_verbose, "per-epoch loss to stderr");

  // ---- eval ---------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string ev_ckpt, ev_data, ev_baseline_data;
  eval->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  eval->add_option("--data", ev_data, "evaluation dataset (JSONL)")->required();
  eval->add_option("--baseline-data", ev_baseline_data,
                   "reference dataset for the nearest-neighbour baseline");

  // ---- ablate -------------------------------------------------------------
  auto* ablate = app.add_subcommand("ablate", "train the four model variants and compare");
  std::string ab_data, ab_seeds = "1,2,3", ab_out;
  int ab_epochs = 5, ab_batch = 256;
  double ab_lr = 1e-3;
  ablate->add_option("--data", ab_data, "dataset (JSONL)")->required();
  ablate->add_option("--seeds", ab_seeds, "comma-separated training seeds (>= 3)");
  ablate->add_option("--epochs", ab_epochs, "epochs per run");
  ablate->add_option("--lr", ab_lr, "learning rate");
  ablate->add_option("--batch", ab_batch, "minibatch size");
  ablate->add_option("--out", ab_out, "CSV output path");

  // ---- sensor-study -------------------------------------------------------
  auto* study = app.add_subcommand("sensor-study", "compare 5..8 sensor layouts");
  std::string st_seeds = "1", st_out;
  int st_poses = 8000, st_seq_len = 100, st_epochs = 12, st_batch = 256;
  double st_noise = 0.001, st_mask = 0.01, st_lr = 1e-3;
  std::uint64_t st_pose_seed = 0;
  study->add_option("--poses", st_poses, "frames per layout dataset");
  study->add_option("--seq-len", st_seq_len, "frames per sequence");
  study->add_option("--noise", st_noise, "range noise sigma (m)");
  study->add_option("--mask", st_mask, "missing-measurement probability");
  study->add_option("--pose-seed", st_pose_seed, "pose stream seed (defaults to --seed)");
  study->add_option("--seeds", st_seeds, "comma-separated training seeds");
  study->add_option("--epochs", st_epochs, "epochs per run");
  study->add_option("--lr", st_lr, "learning rate");
  study->add_option("--batch", st_batch, "minibatch size");
  study->add_option("--out", st_out, "CSV output path");

  // ---- trilat-demo --------------------------------------------------------
  auto* trilat = app.add_subcommand("trilat-demo", "rotating-platform localization experiment");
  double tr_side = 0.06, tr_noise = 0.0005, tr_radius = 0.12, tr_height = 0.08;
  int tr_steps = 1000;
  std::string tr_out = "platform";
  trilat->add_option("--side", tr_side, "anchor triangle side (m)");
  trilat->add_option("--steps", tr_steps, "platform steps per revolution");
  trilat->add_option("--noise", tr_noise, "range noise sigma (m)");
  trilat->add_option("--radius", tr_radius, "traced circle radius (m)");
  trilat->add_option("--height", tr_height, "point height above the platform (m)");
  trilat->add_option("--out", tr_out, "CSV prefix (<out>_points.csv, <out>_hist.csv)");

  // ---- stream -------------------------------------------------------------
  auto* stream = app.add_subcommand("stream", "sliding-window inference over a line stream");
  std::string sm_ckpt, sm_input = "-", sm_out = "-";
  stream->add_option("--ckpt", sm_ckpt, "checkpoint path")->required();
  stream->add_option("--input", sm_input, "input stream file, '-' for stdin");
  stream->add_option("--out", sm_out, "output file, '-' for stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    kin::HandSkeleton skeleton = load_skeleton(config_path);

    if (*gen_human) {
      pipe::DomainConfig domain;
      domain.n_sensors = gh_sensors;
      domain.noise_sigma = gh_noise;
      domain.mask_prob = gh_mask;
      domain.sensor_jitter = gh_jitter;
      domain.seq_len = gh_seq_len;
      domain.pose_seed = gh_pose_seed ? gh_pose_seed : seed;
      net::Dataset ds = pipe::gen_human_dataset(skeleton, domain, gh_poses, seed);
      pipe::save_dataset(ds, gh_out);
      std::printf("wrote %ld frames in %zu sequences to %s\n", ds.frame_count(),
                  ds.sequences.size(), gh_out.c_str());
    } else if (*gen_mech) {
      net::Dataset ds = pipe::gen_mech_dataset(skeleton, gm_frames, gm_noise, gm_mask, seed,
                                               gm_seq_len);
      pipe::save_dataset(ds, gm_out);
      std::printf("wrote %ld frames in %zu sequences to %s\n", ds.frame_count(),
                  ds.sequences.size(), gm_out.c_str());
    } else if (*pretrain) {
      net::Dataset ds = pipe::load_dataset(pt_data);
      pipe::RunOptions opts;
      opts.model.n_sensors = ds.sensor_count();
      opts.model.head = pt_head == "servo" ? net::HeadKind::servo : net::HeadKind::pose_basis;
      opts.model.heads = pt_heads;
      opts.model.window = pt_window;
      opts.model.attention = !pt_no_attn;
      opts.model.skip = !pt_no_skip;
      opts.model.sequence = !pt_no_seq;
      opts.model.seed = seed;
      opts.train.epochs = pt_epochs;
      opts.train.lr = pt_lr;
      opts.train.batch_size = pt_batch;
      opts.train.seed = seed;
      opts.train.verbose = pt_verbose;
      pipe::RunResult r = pipe::pretrain(ds, skeleton, opts, pt_out);
      write_loss_curve(pt_out + ".loss.csv", r.curve);
      std::printf("parameters: %ld\n", r.param_count);
      print_metrics(r.test, opts.model.head);
    } else if (*finetune) {
      net::Dataset ds = pipe::load_dataset(ft_data);
      net::TrainOptions topts;
      topts.epochs = ft_epochs;
      topts.lr = ft_lr;
      topts.batch_size = ft_batch;
      topts.seed = seed;
      topts.verbose = ft_verbose;
      pipe::RunResult r = pipe::finetune(ft_ckpt, ds, skeleton, topts, 0.8, 0.1, 42, ft_out);
      write_loss_curve(ft_out + ".loss.csv", r.curve);
      print_metrics(r.test, ds.target);
    } else if (*eval) {
      net::Dataset ds = pipe::load_dataset(ev_data);
      auto model = net::PoseModel::load(ev_ckpt, skeleton);
      net::EvalMetrics m = net::evaluate(*model, ds);
      print_metrics(m, model->config().head);
      if (!ev_baseline_data.empty()) {
        net::Dataset ref = pipe::load_dataset(ev_baseline_data);
        double err_sum = 0.0;
        long count = 0;
        for (const auto& s : ds.sequences)
          for (const auto& f : s) {
            Eigen::MatrixXd pose = net::nn_baseline(f.d, ref);
            if (ds.target == net::HeadKind::servo)
              err_sum += (pose.transpose() - f.servo).cwiseAbs().mean();
            else
              err_sum += (pose - f.joints).rowwise().norm().mean() * 100.0;
            ++count;
          }
        std::printf("baseline mean error: %s (over %ld frames)\n", fmt(err_sum / count).c_str(),
                    count);
      }
    } else if (*ablate) {
      net::Dataset ds = pipe::load_dataset(ab_data);
      net::ModelConfig proto;
      proto.n_sensors = ds.sensor_count();
      proto.head = ds.target;
      proto.seed = seed;
      net::TrainOptions topts;
      topts.epochs = ab_epochs;
      topts.lr = ab_lr;
      topts.batch_size = ab_batch;
      auto rows = pipe::run_ablations(ds, skeleton, parse_seeds(ab_seeds), proto, topts, 42);
      std::vector<std::string> header = {"variant", "test_mse", "test_err", "params"};
      std::vector<std::vector<std::string>> cells;
      for (const auto& r : rows)
        cells.push_back({r.variant, fmt(r.mean_test_mse), fmt(r.mean_test_err),
                         std::to_string(r.param_count)});
      std::fputs(pipe::format_table(header, cells).c_str(), stdout);
      if (!ab_out.empty()) pipe::write_table_csv(ab_out, header, cells);
      if (!pipe::full_variant_is_minimum(rows)) {
        std::fprintf(stderr, "assertion failed: full model is not the minimum-loss variant\n");
        return 2;
      }
    } else if (*study) {
      pipe::DomainConfig domain;
      domain.noise_sigma = st_noise;
      domain.mask_prob = st_mask;
      domain.seq_len = st_seq_len;
      domain.pose_seed = st_pose_seed ? st_pose_seed : seed;
      net::ModelConfig proto;
      proto.head = net::HeadKind::pose_basis;
      proto.seed = seed;
      net::TrainOptions topts;
      topts.epochs = st_epochs;
      topts.lr = st_lr;
      topts.batch_size = st_batch;
      auto rows = pipe::run_sensor_study(skeleton, domain, st_poses, parse_seeds(st_seeds), proto,
                                         topts, 42);
      std::vector<std::string> header = {"sensors", "pairs", "mean_err_cm", "test_mse"};
      std::vector<std::vector<std::string>> cells;
      for (const auto& r : rows)
        cells.push_back({std::to_string(r.sensors), std::to_string(r.pairs), fmt(r.mean_err_cm),
                         fmt(r.mse)});
      std::fputs(pipe::format_table(header, cells).c_str(), stdout);
      if (!st_out.empty()) pipe::write_table_csv(st_out, header, cells);
      if (!pipe::sensor_ladder_holds(rows)) {
        std::fprintf(stderr, "assertion failed: sensor-count error ladder does not hold\n");
        return 2;
      }
    } else if (*trilat) {
      geo::TriangleFrame frame{tr_side};
      Eigen::Vector3d centroid(0.0, tr_side / std::sqrt(3.0), 0.0);
      Eigen::Vector3d d_true = centroid + Eigen::Vector3d(tr_radius, 0.0, tr_height);
      geo::PlatformResult res = geo::platform_experiment(frame, d_true, tr_steps, tr_noise, seed);
      geo::write_platform_csv(res, tr_out + "_points.csv", tr_out + "_hist.csv");
      std::printf("steps: %d\nfitted radius: %s m\nmean residual: %s m\n", tr_steps,
                  fmt(res.fit.radius).c_str(), fmt(res.mean_error).c_str());
    } else if (*stream) {
      auto model = net::PoseModel::load(sm_ckpt, skeleton);
      std::ifstream fin;
      std::ofstream fout;
      std::istream* in = &std::cin;
      std::ostream* out = &std::cout;
      if (sm_input != "-") {
        fin.open(sm_input);
        if (!fin) throw std::runtime_error("cannot open stream input: " + sm_input);
        in = &fin;
      }
      if (sm_out != "-") {
        fout.open(sm_out);
        if (!fout) throw std::runtime_error("cannot open stream output: " + sm_out);
        out = &fout;
      }
      pipe::StreamStats stats = pipe::stream_infer(*in, *out, *model);
      std::fprintf(stderr,
                   "frames: %ld  malformed: %ld  fps: %.1f  latency mean/max: %.3f/%.3f ms\n",
                   stats.frames, stats.malformed_lines, stats.fps(), stats.mean_latency_ms,
                   stats.max_latency_ms);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
