#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "sono/pipeline.hpp"

using namespace sono;
using namespace sono::pipe;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

net::ModelConfig tiny_servo_config() {
  net::ModelConfig cfg;
  cfg.enc_hidden = 16;
  cfg.enc_out = 16;
  cfg.attn_dim = 16;
  cfg.dec_hidden = 64;
  cfg.feature_dim = 64;
  cfg.head_hidden = 32;
  cfg.head = net::HeadKind::servo;
  return cfg;
}

std::string stream_text(const std::vector<sim::DistanceMatrix>& frames) {
  std::string out;
  char buf[64];
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const auto& m = frames[k];
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j) {
        if (i == j) continue;
        double mm = m(i, j) < 0.0 ? -1.0 : m(i, j) * 1000.0;
        std::snprintf(buf, sizeof(buf), "F,%zu,%d,%d,%.4f\n", k, i, j, mm);
        out += buf;
      }
    std::snprintf(buf, sizeof(buf), "E,%zu\n", k);
    out += buf;
  }
  return out;
}

}  // namespace

TEST_CASE("mech hand servo mapping") {
  kin::HandSkeleton sk = kin::default_skeleton();
  MechHand rig(sk);

  SUBCASE("servo -0.5 rests every flexion at its lower limit") {
    kin::JointAngles theta = rig.angles(Eigen::VectorXd::Constant(5, -0.5));
    for (const auto& dofs : rig.flex_dofs)
      for (int d : dofs) CHECK(theta[d] == doctest::Approx(sk.dofs[d].lo));
  }
  SUBCASE("servo +0.5 reaches the upper limits, out-of-range input clamps") {
    kin::JointAngles a = rig.angles(Eigen::VectorXd::Constant(5, 0.5));
    kin::JointAngles b = rig.angles(Eigen::VectorXd::Constant(5, 3.0));
    CHECK((a - b).norm() == 0.0);
    for (const auto& dofs : rig.flex_dofs)
      for (int d : dofs) CHECK(a[d] == doctest::Approx(sk.dofs[d].hi));
  }
}

TEST_CASE("dataset generation and files") {
  kin::HandSkeleton sk = kin::default_skeleton();

  SUBCASE("human dataset: shape, normalization, mask fraction below 1%") {
    DomainConfig domain;
    domain.seq_len = 50;
    net::Dataset ds = gen_human_dataset(sk, domain, 1000, 7);
    CHECK(ds.frame_count() == 1000);
    CHECK(ds.sensor_count() == 7);
    long masked = 0, total = 0;
    for (const auto& seq : ds.sequences)
      for (const auto& f : seq) {
        REQUIRE(f.joints.rows() == 23);
        // stored poses are normalized: wrist at the origin
        CHECK(f.joints.row(0).norm() < 1e-12);
        for (int i = 0; i < 7; ++i)
          for (int j = 0; j < 7; ++j) {
            if (i == j) continue;
            ++total;
            if (f.d(i, j) == sim::kMissing) ++masked;
          }
      }
    double frac = static_cast<double>(masked) / total;
    CHECK(frac < 0.01);
    CHECK(frac > 0.001);
  }
  SUBCASE("mech dataset: servo targets stay in [-0.5, 0.5]") {
    net::Dataset ds = gen_mech_dataset(sk, 500, 0.0005, 0.002, 3, 100);
    CHECK(ds.frame_count() == 500);
    CHECK(ds.target == net::HeadKind::servo);
    for (const auto& seq : ds.sequences)
      for (const auto& f : seq) {
        CHECK(f.servo.minCoeff() >= -0.5);
        CHECK(f.servo.maxCoeff() <= 0.5);
      }
  }
  SUBCASE("same seed gives identical file bytes; round trip is byte-stable") {
    net::Dataset a = gen_mech_dataset(sk, 120, 0.0005, 0.01, 5, 40);
    net::Dataset b = gen_mech_dataset(sk, 120, 0.0005, 0.01, 5, 40);
    save_dataset(a, "/tmp/sono_ds_a.jsonl");
    save_dataset(b, "/tmp/sono_ds_b.jsonl");
    CHECK(slurp("/tmp/sono_ds_a.jsonl") == slurp("/tmp/sono_ds_b.jsonl"));

    net::Dataset loaded = load_dataset("/tmp/sono_ds_a.jsonl");
    CHECK(loaded.frame_count() == 120);
    CHECK(loaded.sequences.size() == a.sequences.size());
    save_dataset(loaded, "/tmp/sono_ds_c.jsonl");
    CHECK(slurp("/tmp/sono_ds_a.jsonl") == slurp("/tmp/sono_ds_c.jsonl"));
    for (const char* p : {"/tmp/sono_ds_a.jsonl", "/tmp/sono_ds_b.jsonl", "/tmp/sono_ds_c.jsonl"})
      std::remove(p);
  }
  SUBCASE("human dataset file round trip preserves the missing sentinel") {
    DomainConfig domain;
    domain.seq_len = 20;
    domain.mask_prob = 0.2;
    net::Dataset ds = gen_human_dataset(sk, domain, 40, 11);
    save_dataset(ds, "/tmp/sono_ds_h.jsonl");
    net::Dataset loaded = load_dataset("/tmp/sono_ds_h.jsonl");
    long missing = 0;
    for (std::size_t s = 0; s < ds.sequences.size(); ++s)
      for (std::size_t t = 0; t < ds.sequences[s].size(); ++t) {
        const auto& orig = ds.sequences[s][t].d;
        const auto& got = loaded.sequences[s][t].d;
        for (int i = 0; i < 7; ++i)
          for (int j = 0; j < 7; ++j) {
            if (orig(i, j) == sim::kMissing) {
              CHECK(got(i, j) == sim::kMissing);
              ++missing;
            } else {
              CHECK(std::abs(got(i, j) - orig(i, j)) < 5e-7);
            }
          }
      }
    CHECK(missing > 0);
    std::remove("/tmp/sono_ds_h.jsonl");
  }
  SUBCASE("malformed files are rejected") {
    {
      std::ofstream out("/tmp/sono_bad.jsonl");
      out << "{\"i\":0,\"d\":[[0.0,0.1],[0.1,0.0]],\"servo\":[0,0,0,0,0]}\n";
      out << "{\"i\":1,\"d\":[[0.0,0.1],[0.1,0.0]],\"joints\":[[0,0,0]]}\n";
    }
    CHECK_THROWS_AS(load_dataset("/tmp/sono_bad.jsonl"), std::runtime_error);
    std::remove("/tmp/sono_bad.jsonl");
  }
}

TEST_CASE("split by sequence is a disjoint partition") {
  kin::HandSkeleton sk = kin::default_skeleton();
  net::Dataset ds = gen_mech_dataset(sk, 200, 0.0, 0.0, 13, 20);
  REQUIRE(ds.sequences.size() == 10);
  Split split = split_by_sequence(ds, 0.8, 0.1, 5);
  CHECK(split.train.sequences.size() == 8);
  CHECK(split.val.sequences.size() == 1);
  CHECK(split.test.sequences.size() == 1);
  std::multiset<double> all, parts;
  for (const auto& s : ds.sequences) all.insert(s[0].servo[0]);
  for (const auto* d : {&split.train, &split.val, &split.test})
    for (const auto& s : d->sequences) parts.insert(s[0].servo[0]);
  CHECK(all == parts);
}

TEST_CASE("pretrain and finetune orchestration") {
  kin::HandSkeleton sk = kin::default_skeleton();
  net::Dataset ds = gen_mech_dataset(sk, 400, 0.0005, 0.002, 21, 40);
  RunOptions opts;
  opts.model = tiny_servo_config();
  opts.train.epochs = 3;
  opts.train.batch_size = 128;
  const std::string ckpt = "/tmp/sono_pretrain.bin";
  RunResult pre = pretrain(ds, sk, opts, ckpt);
  CHECK(pre.curve.train.size() == 3);
  CHECK(pre.test.windows > 0);

  SUBCASE("zero-epoch finetune reproduces pretrain metrics") {
    net::TrainOptions ft;
    ft.epochs = 0;
    RunResult r = finetune(ckpt, ds, sk, ft, 0.8, 0.1, 42, "/tmp/sono_ft.bin");
    CHECK(r.test.mean_error == doctest::Approx(pre.test.mean_error).epsilon(1e-12));
    CHECK(r.test.mse == doctest::Approx(pre.test.mse).epsilon(1e-12));
    std::remove("/tmp/sono_ft.bin");
    std::remove("/tmp/sono_ft.bin.json");
  }
  SUBCASE("pretraining twice with one seed gives identical checkpoints") {
    const std::string ckpt2 = "/tmp/sono_pretrain2.bin";
    pretrain(ds, sk, opts, ckpt2);
    CHECK(slurp(ckpt) == slurp(ckpt2));
    std::remove(ckpt2.c_str());
    std::remove((ckpt2 + ".json").c_str());
  }
  SUBCASE("sensor-count mismatch is rejected") {
    DomainConfig domain;
    domain.n_sensors = 5;
    domain.seq_len = 20;
    net::Dataset five = gen_human_dataset(sk, domain, 40, 3);
    net::TrainOptions ft;
    CHECK_THROWS_AS(finetune(ckpt, five, sk, ft, 0.8, 0.1, 42, ""), std::invalid_argument);
  }
  std::remove(ckpt.c_str());
  std::remove((ckpt + ".json").c_str());
}

TEST_CASE("streaming inference") {
  kin::HandSkeleton sk = kin::default_skeleton();
  net::ModelConfig cfg = tiny_servo_config();
  net::PoseModel model(cfg, sk, std::nullopt);
  kin::SkeletonIndex idx(sk);
  sim::SensorLayout layout = sim::standard_layout(7);
  sim::DistanceMatrix m =
      sim::measure(idx, kin::forward_kinematics(sk, kin::JointAngles::Zero(22)), layout);

  SUBCASE("five identical frames match a batch window prediction") {
    std::vector<sim::DistanceMatrix> window(5, m);
    Eigen::MatrixXd direct = model.predict(window);
    std::istringstream in(stream_text(window));
    std::ostringstream out;
    StreamStats stats = stream_infer(in, out, model);
    CHECK(stats.frames == 5);
    CHECK(stats.malformed_lines == 0);
    std::string all = out.str();
    auto last = all.rfind("P,4,");
    REQUIRE(last != std::string::npos);
    std::istringstream line(all.substr(last + 4));
    std::string tok;
    for (int s = 0; s < 5; ++s) {
      REQUIRE(std::getline(line, tok, ','));
      CHECK(std::abs(std::stod(tok) - direct(0, s)) < 2e-6);
    }
  }
  SUBCASE("corrupt lines are skipped and counted") {
    std::vector<sim::DistanceMatrix> window(5, m);
    std::string text = stream_text(window);
    auto pos = text.find('\n', text.size() / 2);
    text.insert(pos + 1, "this is not a measurement\n");
    std::istringstream in(text);
    std::ostringstream out;
    StreamStats stats = stream_infer(in, out, model);
    CHECK(stats.frames == 5);
    CHECK(stats.malformed_lines == 1);
  }
  SUBCASE("more than 1% malformed aborts") {
    std::string text;
    for (int k = 0; k < 20; ++k) text += k % 2 ? "garbage\n" : "F,0,0,1,100.0\n";
    std::istringstream in(text);
    std::ostringstream out;
    CHECK_THROWS_AS(stream_infer(in, out, model), std::runtime_error);
  }
  SUBCASE("two replays produce identical output") {
    std::vector<sim::DistanceMatrix> frames;
    Rng rng(61);
    for (int k = 0; k < 12; ++k) {
      sim::DistanceMatrix f = m;
      for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 7; ++j)
          if (i != j) f(i, j) = std::max(0.0, f(i, j) + rng.gaussian(0.002));
      frames.push_back(f);
    }
    std::string text = stream_text(frames);
    std::istringstream in1(text), in2(text);
    std::ostringstream out1, out2;
    stream_infer(in1, out1, model);
    stream_infer(in2, out2, model);
    CHECK(out1.str() == out2.str());
  }
  SUBCASE("missing measurements stay missing through the wire format") {
    sim::DistanceMatrix holes = m;
    holes(0, 1) = sim::kMissing;
    holes(3, 2) = sim::kMissing;
    std::vector<sim::DistanceMatrix> window(5, holes);
    Eigen::MatrixXd direct = model.predict(window);
    std::istringstream in(stream_text(window));
    std::ostringstream out;
    stream_infer(in, out, model);
    std::string all = out.str();
    auto last = all.rfind("P,4,");
    std::istringstream line(all.substr(last + 4));
    std::string tok;
    REQUIRE(std::getline(line, tok, ','));
    CHECK(std::abs(std::stod(tok) - direct(0, 0)) < 2e-6);
  }
}

TEST_CASE("study assertions helpers") {
  std::vector<AblationRow> rows = {{"w/o seq.", 0.02, 0.1, 10},
                                   {"w/o atten.", 0.021, 0.1, 11},
                                   {"w/o skip", 0.022, 0.1, 12},
                                   {"full", 0.016, 0.1, 13}};
  CHECK(full_variant_is_minimum(rows));
  rows[0].mean_test_mse = 0.01;
  CHECK_FALSE(full_variant_is_minimum(rows));

  std::vector<SensorStudyRow> ladder = {{5, 10, 1.24, 0}, {6, 15, 1.07, 0}, {7, 21, 0.85, 0},
                                        {8, 28, 0.82, 0}};
  CHECK(sensor_ladder_holds(ladder));
  ladder[1].mean_err_cm = 1.30;
  CHECK_FALSE(sensor_ladder_holds(ladder));
}

TEST_CASE("table formatting") {
  std::vector<std::string> header = {"a", "bb"};
  std::vector<std::vector<std::string>> rows = {{"1", "2"}, {"333", "4"}};
  std::string text = format_table(header, rows);
  CHECK(text.find("a    bb") != std::string::npos);
  write_table_csv("/tmp/sono_table.csv", header, rows);
  CHECK(slurp("/tmp/sono_table.csv") == "a,bb\n1,2\n333,4\n");
  std::remove("/tmp/sono_table.csv");
}

#ifdef SONOGLOVE_BIN
TEST_CASE("cli smoke: trilat-demo and gen-mech run end to end") {
  std::string cmd = std::string(SONOGLOVE_BIN) +
                    " trilat-demo --steps 64 --noise 0.0005 --out /tmp/sono_cli > /dev/null";
  CHECK(std::system(cmd.c_str()) == 0);
  CHECK(slurp("/tmp/sono_cli_points.csv").rfind("x,y,residual", 0) == 0);
  std::remove("/tmp/sono_cli_points.csv");
  std::remove("/tmp/sono_cli_hist.csv");

  cmd = std::string(SONOGLOVE_BIN) +
        " --seed 3 gen-mech --frames 60 --seq-len 30 --out /tmp/sono_cli_mech.jsonl > /dev/null";
  CHECK(std::system(cmd.c_str()) == 0);
  net::Dataset ds = load_dataset("/tmp/sono_cli_mech.jsonl");
  CHECK(ds.frame_count() == 60);
  std::remove("/tmp/sono_cli_mech.jsonl");
}
#endif
