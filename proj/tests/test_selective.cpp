#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "calib/selective.hpp"

using namespace calib;

namespace {

// Selector with zero weights and identity standardization: g = 0.5 always.
SelectorParams neutral_selector() {
  SelectorParams p;
  p.weights = Vec::Zero(p.arch.param_count());
  p.feat_mean = Vec::Zero(5);
  p.feat_std = Vec::Ones(5);
  p.tau = 0.0;
  return p;
}

std::vector<SelectorRecord> random_records(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.55, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<SelectorRecord> out;
  for (int i = 0; i < n; ++i) {
    SelectorRecord rec;
    rec.r = unif(rng);
    rec.s = Eigen::Vector4d(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
    rec.c = std::bernoulli_distribution(rec.r)(rng) ? 1 : 0;
    rec.p_true = rec.c ? rec.r : 1.0 - rec.r;
    out.push_back(rec);
  }
  return out;
}

}  // namespace

TEST_CASE("zero-weight selector outputs one half") {
  SelectorParams p = neutral_selector();
  CHECK(soft_select(p, 0.9, Eigen::Vector4d(1, 2, 3, 4)) ==
        doctest::Approx(0.5).epsilon(1e-12));
  SelectorParams unfitted;
  unfitted.weights = p.weights;
  CHECK_THROWS_AS(soft_select(unfitted, 0.5, Eigen::Vector4d::Zero()),
                  std::invalid_argument);
}

TEST_CASE("soft scores stay strictly inside the unit interval") {
  SelectorConfig cfg;
  cfg.epochs = 1;
  auto records = random_records(40, 1);
  SelectorParams p = train_selector(cfg, records);
  for (const auto& rec : records) {
    double g = soft_select(p, rec.r, rec.s);
    CHECK(g > 0.0);
    CHECK(g < 1.0);
  }
}

TEST_CASE("soft selective mmce hand case") {
  SelectorParams p = neutral_selector();
  std::vector<SelectorRecord> two(2);
  two[0].r = two[1].r = 0.9;
  two[0].c = two[1].c = 0;
  two[0].s = two[1].s = Eigen::Vector4d::Zero();
  KernelSpec k{0.2};
  // g = 0.5 each: sqrt(0.81 * 0.25 * 4) = 0.9.
  CHECK(soft_selective_mmce(p, two, k) ==
        doctest::Approx(0.9).epsilon(1e-12));
  CHECK_THROWS_AS(soft_selective_mmce(p, {}, k), std::invalid_argument);
}

TEST_CASE("soft selective mmce matches a brute-force double loop") {
  auto records = random_records(120, 3);
  SelectorConfig cfg;
  cfg.epochs = 2;
  SelectorParams p = train_selector(cfg, records);
  KernelSpec k{0.2};
  double s = 0.0;
  for (const auto& a : records) {
    double ga = soft_select(p, a.r, a.s);
    for (const auto& b : records) {
      double gb = soft_select(p, b.r, b.s);
      s += (a.c - a.r) * (b.c - b.r) * ga * gb *
           std::exp(-std::abs(a.r - b.r) / k.bandwidth);
    }
  }
  double oracle = std::sqrt(std::max(s, 0.0));
  CHECK(std::abs(soft_selective_mmce(p, records, k) - oracle) < 1e-12);
}

TEST_CASE("saturated soft scores recover the unnormalized mmce numerator") {
  auto records = random_records(60, 5);
  KernelSpec k{0.2};
  // Selector with a huge positive output bias: g within 1e-12 of 1.
  SelectorParams p = neutral_selector();
  p.weights(p.arch.param_count() - 1) = 50.0;
  double s = 0.0;
  for (const auto& a : records) {
    for (const auto& b : records) {
      s += (a.c - a.r) * (b.c - b.r) *
           std::exp(-std::abs(a.r - b.r) / k.bandwidth);
    }
  }
  double numerator = std::sqrt(std::max(s, 0.0));
  CHECK(std::abs(soft_selective_mmce(p, records, k) - numerator) < 1e-9);
}

TEST_CASE("selector loss adds the log barrier") {
  SelectorParams p = neutral_selector();
  auto records = random_records(30, 7);
  for (auto& rec : records) rec.s = Eigen::Vector4d::Zero();
  KernelSpec k{0.2};
  double base = soft_selective_mmce(p, records, k);
  CHECK(selector_loss(p, records, 0.0, k) ==
        doctest::Approx(base).epsilon(1e-12));
  // g = 0.5 for every record under the neutral selector.
  double eta = 0.01;
  CHECK(selector_loss(p, records, eta, k) ==
        doctest::Approx(base + eta * 30 * std::log(2.0)).epsilon(1e-10));
  CHECK_THROWS_AS(selector_loss(p, records, -0.1, k), std::invalid_argument);
}

TEST_CASE("zero training epochs returns the seeded initialization") {
  SelectorConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 17;
  auto records = random_records(25, 9);
  SelectorParams p = train_selector(cfg, records);
  Rng rng(17);
  MlpParams expected = init_mlp(MlpArch{5, {64, 64}, 1}, rng);
  CHECK(p.weights == expected.theta);
  CHECK_THROWS_AS(train_selector(cfg, {}), std::invalid_argument);
}

TEST_CASE("training is deterministic and rejects a poisoned subpopulation") {
  // Clean half: calibrated records with inlier score vectors. Poisoned
  // half: overconfident coin flips with distinct score vectors.
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unif(0.6, 0.99);
  std::vector<SelectorRecord> records;
  for (int i = 0; i < 150; ++i) {
    SelectorRecord rec;
    rec.r = unif(rng);
    rec.c = std::bernoulli_distribution(rec.r)(rng) ? 1 : 0;
    rec.s = Eigen::Vector4d(0.8, 0.2, 0.5, 0.3);
    records.push_back(rec);
  }
  for (int i = 0; i < 150; ++i) {
    SelectorRecord rec;
    rec.r = 0.95;
    rec.c = std::bernoulli_distribution(0.5)(rng) ? 1 : 0;
    rec.s = Eigen::Vector4d(0.1, 0.9, -0.5, 2.5);
    records.push_back(rec);
  }
  SelectorConfig cfg;
  cfg.epochs = 30;
  cfg.seed = 4;
  SelectorParams p = train_selector(cfg, records);
  SelectorParams p2 = train_selector(cfg, records);
  CHECK(to_json(p) == to_json(p2));

  double clean = 0.0, poisoned = 0.0;
  for (int i = 0; i < 150; ++i) {
    clean += soft_select(p, records[i].r, records[i].s);
    poisoned += soft_select(p, records[i + 150].r, records[i + 150].s);
  }
  CHECK(poisoned / 150.0 < clean / 150.0);
}

TEST_CASE("threshold calibration hits the target coverage") {
  std::vector<double> g;
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) g.push_back(unif(rng));
  SelectorParams p = neutral_selector();

  double tau_all = calibrate_threshold(p, g, 1.0);
  CHECK(tau_all <= *std::min_element(g.begin(), g.end()));

  double tau_tight = calibrate_threshold(p, g, 1e-9);
  int accepted = 0;
  for (double v : g) accepted += v >= tau_tight ? 1 : 0;
  CHECK(accepted <= 1);

  double tau_40 = calibrate_threshold(p, g, 0.4);
  accepted = 0;
  for (double v : g) accepted += v >= tau_40 ? 1 : 0;
  CHECK(accepted >= 380);
  CHECK(accepted <= 420);

  CHECK_THROWS_AS(calibrate_threshold(p, g, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(calibrate_threshold(p, g, 1.1), std::invalid_argument);
  CHECK_THROWS_AS(calibrate_threshold(p, {}, 0.5), std::invalid_argument);
}

TEST_CASE("acceptance is monotone in tau") {
  auto records = random_records(200, 15);
  SelectorConfig cfg;
  cfg.epochs = 2;
  SelectorParams p = train_selector(cfg, records);
  int prev = 201;
  for (double tau : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
    p.tau = tau;
    int accepted = 0;
    for (const auto& rec : records) accepted += select(p, rec.r, rec.s);
    CHECK(accepted <= prev);
    prev = accepted;
  }
  p.tau = 0.0;
  CHECK(select(p, records[0].r, records[0].s) == 1);
  p.tau = 1.0;
  CHECK(select(p, records[0].r, records[0].s) == 0);
}

TEST_CASE("all-accepting selector recovers the plain metrics") {
  auto records = random_records(150, 17);
  SelectorParams p = neutral_selector();
  KernelSpec k{0.2};
  SelectiveMetrics sm = selective_eval(p, records, 15, k);
  std::vector<ConfidenceRecord> plain;
  for (const auto& rec : records) plain.push_back({rec.r, rec.c});
  CHECK(sm.coverage == 1.0);
  CHECK(sm.defined);
  CHECK(std::abs(sm.ece - ece(plain, 15)) < 1e-12);
  CHECK(std::abs(sm.selective_mmce - mmce(plain, k)) < 1e-12);
}

TEST_CASE("selective metrics on constructed subsets") {
  KernelSpec k{0.2};
  // Accept only perfect records.
  std::vector<SelectorRecord> recs;
  for (int i = 0; i < 10; ++i) {
    SelectorRecord rec;
    rec.r = 1.0;
    rec.c = 1;
    rec.s = Eigen::Vector4d::Zero();
    recs.push_back(rec);
  }
  SelectorParams p = neutral_selector();
  SelectiveMetrics sm = selective_eval(p, recs, 15, k);
  CHECK(sm.ece == 0.0);
  CHECK(sm.accuracy == 1.0);

  p.tau = 1.0;  // reject everything
  sm = selective_eval(p, recs, 15, k);
  CHECK(sm.coverage == 0.0);
  CHECK_FALSE(sm.defined);
}

TEST_CASE("rejecting the poisoned half leaves the clean-subset ece") {
  KernelSpec k{0.2};
  std::mt19937_64 rng(19);
  std::vector<SelectorRecord> recs;
  std::vector<ConfidenceRecord> clean_plain;
  for (int i = 0; i < 100; ++i) {
    SelectorRecord rec;
    rec.r = 0.7 + 0.002 * (i % 100);
    rec.c = std::bernoulli_distribution(rec.r)(rng) ? 1 : 0;
    rec.s = Eigen::Vector4d::Constant(-1.0);
    recs.push_back(rec);
    clean_plain.push_back({rec.r, rec.c});
  }
  for (int i = 0; i < 100; ++i) {
    SelectorRecord rec;
    rec.r = 0.95;
    rec.c = std::bernoulli_distribution(0.5)(rng) ? 1 : 0;
    rec.s = Eigen::Vector4d::Constant(4.0);
    recs.push_back(rec);
  }
  // Hand-built selector keying on the score vector sign: weights read the
  // standardized s features with a negative sign.
  SelectorParams p = neutral_selector();
  // Standardization maps clean s-entries to negative values; weight the
  // first-layer input so the clean half lands above the threshold.
  p.tau = 0.6;
  // Input order is [r, s0, s1, s2, s3]. W1(1,0) = -5 activates hidden
  // unit 0 on the clean half (negative s0) and stays dead on the poisoned
  // half, which then scores sigmoid(0) = 0.5 < tau.
  MlpArch arch = p.arch;
  p.weights(1) = -5.0;                        // W1(row 1, col 0)
  p.weights(arch.layer_offset(1) + 0) = 5.0;  // W2(0,0)
  p.weights(arch.layer_offset(2) + 0) = 5.0;  // W3(0,0)
  SelectiveMetrics sm = selective_eval(p, recs, 15, k);
  CHECK(sm.coverage == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(std::abs(sm.ece - ece(clean_plain, 15)) < 1e-12);
}

TEST_CASE("selective classification loss") {
  SelectorParams p = neutral_selector();
  std::vector<SelectorRecord> recs(2);
  recs[0].r = recs[1].r = 0.9;
  recs[0].s = recs[1].s = Eigen::Vector4d::Zero();
  recs[0].p_true = 1.0;
  recs[1].p_true = std::exp(-1.0);
  CHECK(selective_classification_loss(p, recs) ==
        doctest::Approx(0.5).epsilon(1e-12));

  std::vector<SelectorRecord> one(recs.begin(), recs.begin() + 1);
  CHECK(selective_classification_loss(p, one) ==
        doctest::Approx(0.0).epsilon(1e-12));

  p.tau = 1.0;
  CHECK_THROWS_AS(selective_classification_loss(p, recs),
                  std::invalid_argument);
  p.tau = 0.0;
  recs[0].p_true = 0.0;
  CHECK_THROWS_AS(selective_classification_loss(p, recs), std::domain_error);
}

TEST_CASE("selector parameters round-trip through JSON") {
  SelectorConfig cfg;
  cfg.epochs = 1;
  auto records = random_records(30, 21);
  SelectorParams p = train_selector(cfg, records);
  p.tau = 0.37;
  SelectorParams p2 = selector_from_json(to_json(p));
  CHECK(p2.weights == p.weights);
  CHECK(p2.feat_mean == p.feat_mean);
  CHECK(p2.feat_std == p.feat_std);
  CHECK(p2.tau == 0.37);
  CHECK(soft_select(p2, records[0].r, records[0].s) ==
        soft_select(p, records[0].r, records[0].s));
}

TEST_CASE("a dominant barrier term pushes soft scores up") {
  auto records = random_records(60, 23);
  SelectorConfig cfg;
  cfg.eta = 5.0;
  cfg.epochs = 50;
  cfg.lr = 0.01;
  cfg.seed = 27;
  auto mean_g = [&](const SelectorParams& p) {
    double acc = 0.0;
    for (const auto& rec : records) acc += soft_select(p, rec.r, rec.s);
    return acc / records.size();
  };
  SelectorConfig init_cfg = cfg;
  init_cfg.epochs = 0;
  double before = mean_g(train_selector(init_cfg, records));
  double after = mean_g(train_selector(cfg, records));
  CHECK(after > before);
  CHECK(after > 0.6);
}
