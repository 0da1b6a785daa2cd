#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "calib/metrics.hpp"

using namespace calib;

namespace {

std::vector<ConfidenceRecord> random_records(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.05, 1.0);
  std::bernoulli_distribution coin(0.7);
  std::vector<ConfidenceRecord> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back({unif(rng), coin(rng) ? 1 : 0});
  return out;
}

// Independent double-loop oracle with reversed iteration order.
double mmce_oracle(const std::vector<ConfidenceRecord>& recs, double bw) {
  double s = 0.0;
  const int n = static_cast<int>(recs.size());
  for (int i = n - 1; i >= 0; --i) {
    for (int j = n - 1; j >= 0; --j) {
      s += (recs[i].c - recs[i].r) * (recs[j].c - recs[j].r) *
           std::exp(-std::abs(recs[i].r - recs[j].r) / bw);
    }
  }
  return std::sqrt(std::max(s / (double(n) * n), 0.0));
}

}  // namespace

TEST_CASE("score_records maps probabilities to confidence and correctness") {
  Vec p(2);
  p << 0.9, 0.1;
  auto recs = score_records({{p, 0}, {p, 1}});
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].r == 0.9);
  CHECK(recs[0].c == 1);
  CHECK(recs[1].r == 0.9);
  CHECK(recs[1].c == 0);
  CHECK_THROWS_AS(score_records({{p, 2}}), std::invalid_argument);
  CHECK_THROWS_AS(score_records({{p, -1}}), std::invalid_argument);
}

TEST_CASE("bin boundaries are right-closed") {
  // 0.55 * 15 = 8.25 -> ninth bin (index 8).
  CHECK(bin_index(0.55, 15) == 8);
  // Exactly on a boundary goes to the lower-indexed bin m.
  CHECK(bin_index(0.2, 10) == 1);
  CHECK(bin_index(1.0, 10) == 9);
  CHECK(bin_index(0.001, 10) == 0);
}

TEST_CASE("ece hand cases") {
  std::vector<ConfidenceRecord> mixed(9, {0.9, 1});
  mixed.push_back({0.9, 0});
  CHECK(ece(mixed, 10) == doctest::Approx(0.0).epsilon(1e-12));

  std::vector<ConfidenceRecord> wrong(2, {0.9, 0});
  CHECK(ece(wrong, 1) == doctest::Approx(0.9).epsilon(1e-12));

  std::vector<ConfidenceRecord> perfect(5, {1.0, 1});
  CHECK(ece(perfect, 15) == 0.0);

  CHECK_THROWS_AS(ece({}, 10), std::invalid_argument);
  CHECK_THROWS_AS(ece(perfect, 0), std::invalid_argument);
}

TEST_CASE("constant-confidence ECE equals the accuracy gap") {
  std::mt19937_64 rng(5);
  std::bernoulli_distribution coin(0.62);
  std::vector<ConfidenceRecord> recs;
  int correct = 0;
  for (int i = 0; i < 500; ++i) {
    int c = coin(rng) ? 1 : 0;
    correct += c;
    recs.push_back({0.8, c});
  }
  double acc = correct / 500.0;
  CHECK(ece(recs, 15) == doctest::Approx(std::abs(acc - 0.8)).epsilon(1e-12));
}

TEST_CASE("ece oracle on random records") {
  std::mt19937_64 rng(7);
  auto recs = random_records(200, rng);
  const int bins = 15;
  // Independent oracle: explicit per-bin accumulation.
  std::vector<double> conf(bins, 0.0), acc(bins, 0.0);
  std::vector<int> cnt(bins, 0);
  for (const auto& rec : recs) {
    int m = static_cast<int>(std::ceil(rec.r * bins)) - 1;
    m = std::clamp(m, 0, bins - 1);
    cnt[m]++;
    conf[m] += rec.r;
    acc[m] += rec.c;
  }
  double expected = 0.0;
  for (int m = 0; m < bins; ++m) {
    if (cnt[m]) {
      expected += (cnt[m] / 200.0) * std::abs(acc[m] / cnt[m] - conf[m] / cnt[m]);
    }
  }
  CHECK(std::abs(ece(recs, bins) - expected) < 1e-12);
}

TEST_CASE("reliability diagram bins, counts and display flag") {
  std::vector<ConfidenceRecord> recs(99, {0.55, 1});
  ReliabilityDiagram d = reliability_diagram(recs, 15, 100);
  REQUIRE(static_cast<int>(d.rows.size()) == 15);
  int total = 0;
  for (const auto& b : d.rows) total += b.count;
  CHECK(total == 99);
  CHECK(d.rows[8].count == 99);
  CHECK_FALSE(d.rows[8].displayed);

  recs.push_back({0.55, 1});
  d = reliability_diagram(recs, 15, 100);
  CHECK(d.rows[8].displayed);
  CHECK(d.rows[8].conf == doctest::Approx(0.55).epsilon(1e-12));
  CHECK(d.rows[8].acc == doctest::Approx(1.0).epsilon(1e-12));

  std::string csv = to_csv(d);
  CHECK(csv.rfind("bin_lo,bin_hi,count,conf,acc,displayed\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 16);
}

TEST_CASE("mmce hand cases") {
  KernelSpec k{0.4};
  std::vector<ConfidenceRecord> perfect(4, {1.0, 1});
  CHECK(mmce(perfect, k) == 0.0);

  std::vector<ConfidenceRecord> wrong(2, {0.9, 0});
  CHECK(mmce(wrong, k) == doctest::Approx(0.9).epsilon(1e-12));

  std::vector<ConfidenceRecord> cancel = {{0.5, 1}, {0.5, 0}};
  CHECK(mmce(cancel, k) == doctest::Approx(0.0).epsilon(1e-12));

  CHECK_THROWS_AS(mmce({}, k), std::invalid_argument);
}

TEST_CASE("mmce is permutation invariant and matches the oracle") {
  std::mt19937_64 rng(11);
  auto recs = random_records(200, rng);
  KernelSpec k{0.4};
  double base = mmce(recs, k);
  CHECK(std::abs(base - mmce_oracle(recs, 0.4)) < 1e-12);
  auto shuffled = recs;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  CHECK(std::abs(mmce(shuffled, k) - base) < 1e-12);
}

TEST_CASE("weighted mmce hand case and fallbacks") {
  KernelSpec k{0.4};
  std::vector<ConfidenceRecord> allc(3, {1.0, 1});
  CHECK(weighted_mmce(allc, k) == 0.0);

  std::vector<ConfidenceRecord> lone = {{0.9, 0}};
  CHECK(weighted_mmce(lone, k) == doctest::Approx(0.9).epsilon(1e-12));

  std::vector<ConfidenceRecord> pair = {{0.9, 1}, {0.1, 0}};
  double kappa = std::exp(-0.8 / 0.4);
  double expected = std::sqrt(0.01 + 0.01 - 2.0 * 0.01 * kappa);
  CHECK(weighted_mmce(pair, k) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("weighted mmce matches an independent oracle") {
  std::mt19937_64 rng(13);
  auto recs = random_records(150, rng);
  KernelSpec k{0.4};
  std::size_t nc = 0;
  for (const auto& r : recs) nc += r.c;
  REQUIRE(nc > 0);
  REQUIRE(nc < recs.size());
  double t1 = 0, t2 = 0, t3 = 0;
  for (const auto& a : recs) {
    for (const auto& b : recs) {
      double kv = std::exp(-std::abs(a.r - b.r) / 0.4);
      if (a.c == 0 && b.c == 0) t1 += a.r * b.r * kv;
      if (a.c == 1 && b.c == 1) t2 += (1 - a.r) * (1 - b.r) * kv;
      if (a.c == 1 && b.c == 0) t3 += (1 - a.r) * b.r * kv;
    }
  }
  double ni = double(recs.size() - nc);
  double s = t1 / (ni * ni) + t2 / (double(nc) * nc) - 2 * t3 / (ni * nc);
  CHECK(std::abs(weighted_mmce(recs, k) - std::sqrt(std::max(s, 0.0))) < 1e-12);
}

TEST_CASE("tape-side mmce matches the record form") {
  std::mt19937_64 rng(17);
  auto recs = random_records(40, rng);
  Vec r(40), c(40);
  for (int i = 0; i < 40; ++i) {
    r(i) = recs[i].r;
    c(i) = recs[i].c;
  }
  KernelSpec k{0.4};
  Tape tape;
  Var rv = tape.leaf(r);
  CHECK(std::abs(tape.value(mmce_node(tape, rv, c, k))(0, 0) -
                 mmce(recs, k)) < 1e-12);
  CHECK(std::abs(tape.value(weighted_mmce_node(tape, rv, c, k))(0, 0) -
                 weighted_mmce(recs, k)) < 1e-12);
}

TEST_CASE("tape-side mmce gradients match finite differences") {
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> unif(0.1, 0.95);
  const int n = 12;
  Vec r(n), c(n);
  for (int i = 0; i < n; ++i) {
    r(i) = unif(rng);
    c(i) = (i % 3 == 0) ? 1.0 : 0.0;
  }
  KernelSpec k{0.4};
  for (bool weighted : {false, true}) {
    Tape tape;
    Var rv = tape.leaf(r);
    Var loss = weighted ? weighted_mmce_node(tape, rv, c, k)
                        : mmce_node(tape, rv, c, k);
    tape.backward(loss);
    Vec g = tape.grad(rv);
    const double h = 1e-6;
    for (int i = 0; i < n; ++i) {
      auto eval = [&](double ri) {
        Vec rp = r;
        rp(i) = ri;
        Tape t2;
        Var v = t2.leaf(rp);
        Var l = weighted ? weighted_mmce_node(t2, v, c, k)
                         : mmce_node(t2, v, c, k);
        return t2.value(l)(0, 0);
      };
      double num = (eval(r(i) + h) - eval(r(i) - h)) / (2 * h);
      CHECK(std::abs(g(i) - num) <
            1e-5 * std::max(1.0, std::abs(num)));
    }
  }
}
