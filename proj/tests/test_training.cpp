#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "calib/training.hpp"

using namespace calib;

TEST_CASE("sgd momentum update rule") {
  SgdMomentum opt;
  Vec p = Vec::Zero(1);
  Vec g = Vec::Ones(1);
  opt.step(p, g, 0.1, 0.0);
  CHECK(p(0) == doctest::Approx(-0.1).epsilon(1e-12));

  SgdMomentum opt2;
  Vec p2 = Vec::Zero(1);
  opt2.step(p2, g, 1.0, 0.9);
  opt2.step(p2, g, 1.0, 0.9);
  CHECK(p2(0) == doctest::Approx(-2.9).epsilon(1e-12));

  Vec p3 = Vec::Constant(2, 1.5);
  SgdMomentum opt3;
  opt3.step(p3, Vec::Zero(2), 0.5, 0.9);
  CHECK(p3 == Vec::Constant(2, 1.5));

  CHECK_THROWS_AS(opt3.step(p3, Vec::Zero(3), 0.1, 0.9),
                  std::invalid_argument);
}

TEST_CASE("adam first step has magnitude near the learning rate") {
  Adam opt;
  Vec p = Vec::Zero(1);
  Vec g = Vec::Constant(1, 0.37);
  opt.step(p, g, 0.001, 0.0);
  CHECK(std::abs(p(0) + 0.001) < 1e-5);

  Adam opt2;
  Vec p2 = Vec::Constant(1, 2.0);
  opt2.step(p2, Vec::Zero(1), 0.001, 0.0);
  CHECK(p2(0) == 2.0);

  CHECK_THROWS_AS(opt2.step(p2, Vec::Zero(2), 0.001, 0.0),
                  std::invalid_argument);
}

TEST_CASE("adam applies decoupled weight decay") {
  Adam opt;
  Vec p = Vec::Constant(1, 1.0);
  opt.step(p, Vec::Zero(1), 0.1, 0.01);
  // Gradient path contributes nothing; only decay acts.
  CHECK(p(0) == doctest::Approx(1.0 - 0.1 * 0.01).epsilon(1e-12));
}

namespace {

TrainConfig small_config(const std::string& method, int epochs) {
  TrainConfig cfg;
  cfg.method = method;
  cfg.epochs = epochs;
  cfg.batch_size = 32;
  cfg.eval_ensemble = 5;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST_CASE("zero epochs returns an untouched initialization") {
  Dataset d = make_synthetic("gaussian_blobs", 60, 0.2, 1);
  SplitResult s = split(d, {0.7, 0.3, 0.0}, 1);
  MlpArch arch{2, {8}, 2};
  TrainConfig cfg = small_config("fnn", 0);
  TrainedModel m = train(cfg, arch, s.train, s.val, nullptr, nullptr);
  Rng rng(cfg.seed);
  MlpParams expected = init_mlp(arch, rng);
  CHECK(m.frequentist.has_value());
  CHECK(m.frequentist->theta == expected.theta);
}

TEST_CASE("cbnn separates gaussian blobs") {
  Dataset d = make_synthetic("gaussian_blobs", 300, 0.3, 2);
  SplitResult s = split(d, {0.8, 0.2, 0.0}, 2);
  TrainConfig cfg = small_config("cbnn", 30);
  cfg.weights.lambda = 1.0;
  MlpArch arch{2, {16}, 2};
  TrainReport report;
  TrainedModel m = train(cfg, arch, s.train, s.val, nullptr, &report);
  CHECK(m.variational.has_value());
  CHECK(report.final_val_accuracy > 0.95);
  CHECK(static_cast<int>(report.epochs.size()) == 30);
}

TEST_CASE("training is deterministic") {
  Dataset d = make_synthetic("two_moons", 120, 0.15, 4);
  SplitResult s = split(d, {0.7, 0.3, 0.0}, 4);
  MlpArch arch{2, {8}, 2};
  TrainConfig cfg = small_config("cfnn", 5);
  cfg.weights.lambda = 0.5;
  TrainedModel a = train(cfg, arch, s.train, s.val, nullptr, nullptr);
  TrainedModel b = train(cfg, arch, s.train, s.val, nullptr, nullptr);
  CHECK(a.checkpoint_json() == b.checkpoint_json());
}

TEST_CASE("total loss falls over training") {
  Dataset d = make_synthetic("two_moons", 200, 0.15, 5);
  SplitResult s = split(d, {0.7, 0.3, 0.0}, 5);
  MlpArch arch{2, {8}, 2};
  for (const char* method : {"fnn", "cbnn"}) {
    TrainConfig cfg = small_config(method, 15);
    cfg.weights.lambda = 0.5;
    TrainReport report;
    train(cfg, arch, s.train, s.val, nullptr, &report);
    CHECK(report.epochs.back().loss.total < report.epochs.front().loss.total);
  }
}

TEST_CASE("ocm training requires an uncertainty set") {
  Dataset d = make_synthetic("two_moons", 60, 0.15, 6);
  SplitResult s = split(d, {0.7, 0.3, 0.0}, 6);
  MlpArch arch{2, {4}, 2};
  TrainConfig cfg = small_config("fnn_ocm", 1);
  CHECK_THROWS_AS(train(cfg, arch, s.train, s.val, nullptr, nullptr),
                  std::invalid_argument);
}

TEST_CASE("ocm fine-tuning reduces confidence on uncertainty inputs") {
  Dataset d = make_synthetic("two_moons", 240, 0.15, 7);
  SplitResult s = split(d, {0.7, 0.3, 0.0}, 7);
  Dataset u = make_ood("two_moons", "shift", 120, 3.0, 7);
  MlpArch arch{2, {8}, 2};
  TrainConfig base_cfg = small_config("fnn", 15);
  TrainedModel base = train(base_cfg, arch, s.train, s.val, nullptr, nullptr);

  TrainConfig ft_cfg = small_config("fnn_ocm", 0);
  ft_cfg.weights.gamma = 0.5;
  ft_cfg.ocm_finetune.epochs = 8;
  TrainedModel tuned =
      train(ft_cfg, arch, s.train, s.val, &u, nullptr, &base);

  auto mean_conf = [&](const TrainedModel& m) {
    Rng rng(99);
    double acc = 0.0;
    for (int i = 0; i < u.size(); ++i) {
      acc += hard_decision(m.predict_prob(u.x.row(i).transpose(), 5, rng))
                 .confidence;
    }
    return acc / u.size();
  };
  CHECK(mean_conf(tuned) < mean_conf(base));
}

TEST_CASE("pretrained checkpoint mismatches are rejected") {
  Dataset d = make_synthetic("two_moons", 60, 0.15, 8);
  SplitResult s = split(d, {0.7, 0.3, 0.0}, 8);
  Dataset u = make_ood("two_moons", "shift", 30, 3.0, 8);
  MlpArch arch{2, {4}, 2};
  TrainConfig cfg = small_config("bnn_ocm", 0);
  TrainedModel wrong;
  wrong.method = parse_method("fnn");
  wrong.arch = arch;
  Rng rng(1);
  wrong.frequentist = init_mlp(arch, rng);
  CHECK_THROWS_AS(train(cfg, arch, s.train, s.val, &u, nullptr, &wrong),
                  std::invalid_argument);
}

TEST_CASE("diverging training aborts with a located diagnostic") {
  Dataset d = make_synthetic("two_moons", 120, 0.15, 9);
  SplitResult s = split(d, {0.7, 0.3, 0.0}, 9);
  MlpArch arch{2, {8}, 2};
  TrainConfig cfg = small_config("fnn", 3);
  cfg.lr = 1e300;
  cfg.clip_norm = 0.0;
  try {
    train(cfg, arch, s.train, s.val, nullptr, nullptr);
    FAIL("expected divergence");
  } catch (const std::runtime_error& e) {
    std::string msg = e.what();
    CHECK(msg.find("non-finite") != std::string::npos);
    CHECK(msg.find("epoch") != std::string::npos);
    CHECK(msg.find("step") != std::string::npos);
  }
}

TEST_CASE("evaluate scores a perfect hand-built classifier") {
  // Linear net: logit margin along x0 separates the blobs.
  MlpArch arch{2, {}, 2};
  Vec theta = Vec::Zero(6);
  theta(0) = -20.0;  // W(0,0): class 0 favored at negative x0
  theta(1) = 20.0;   // W(0,1)
  TrainedModel m;
  m.method = parse_method("fnn");
  m.arch = arch;
  m.frequentist = MlpParams{arch, theta};
  Dataset d = make_synthetic("gaussian_blobs", 100, 0.1, 10);
  EvalResult ev = evaluate(m, d, 1, 15, 1);
  CHECK(ev.accuracy == 1.0);
  CHECK(ev.ece < 0.05);
  CHECK(static_cast<int>(ev.records.size()) == 100);
}
