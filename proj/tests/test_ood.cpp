#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "calib/ood.hpp"

using namespace calib;

TEST_CASE("histogram places all-one confidences in the last bin") {
  ConfidenceHistogram h = confidence_histogram({1.0, 1.0, 1.0}, 10);
  CHECK(h.mass[9] == doctest::Approx(1.0).epsilon(1e-12));
  for (int m = 0; m < 9; ++m) CHECK(h.mass[m] == 0.0);
  CHECK(h.sample_count == 3);
}

TEST_CASE("histogram splits evenly across bins") {
  ConfidenceHistogram h = confidence_histogram({0.25, 0.75}, 2);
  CHECK(h.mass[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(h.mass[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("histogram mass is normalized") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> conf;
  for (int i = 0; i < 777; ++i) conf.push_back(unif(rng));
  ConfidenceHistogram h = confidence_histogram(conf, 20);
  double total = 0.0;
  for (double m : h.mass) total += m;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  CHECK_THROWS_AS(confidence_histogram({}, 10), std::invalid_argument);
  CHECK_THROWS_AS(confidence_histogram({0.5}, 0), std::invalid_argument);
}

TEST_CASE("tv distance hand cases") {
  ConfidenceHistogram a = confidence_histogram({0.2, 0.8}, 2);
  CHECK(tv_distance(a, a) == 0.0);

  ConfidenceHistogram lo = confidence_histogram({0.1, 0.2}, 2);
  ConfidenceHistogram hi = confidence_histogram({0.8, 0.9}, 2);
  CHECK(tv_distance(lo, hi) == doctest::Approx(1.0).epsilon(1e-12));

  ConfidenceHistogram even = confidence_histogram({0.25, 0.75}, 2);
  ConfidenceHistogram skew = confidence_histogram({0.25, 0.75, 0.75, 0.75}, 2);
  CHECK(tv_distance(even, skew) == doctest::Approx(0.25).epsilon(1e-12));

  ConfidenceHistogram other_bins = confidence_histogram({0.5}, 3);
  CHECK_THROWS_AS(tv_distance(a, other_bins), std::invalid_argument);
}

TEST_CASE("detection probability formula") {
  CHECK(ood_detection_probability(0.0) == 0.5);
  CHECK(ood_detection_probability(0.6) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(ood_detection_probability(1.0) == 1.0);
  CHECK_THROWS_AS(ood_detection_probability(-0.1), std::invalid_argument);
  CHECK_THROWS_AS(ood_detection_probability(1.1), std::invalid_argument);
}

TEST_CASE("tv is a metric on shared-edge histograms") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unif(0.001, 1.0);
  auto random_hist = [&](int n) {
    std::vector<double> conf;
    for (int i = 0; i < n; ++i) conf.push_back(unif(rng));
    return confidence_histogram(conf, 10);
  };
  for (int trial = 0; trial < 50; ++trial) {
    ConfidenceHistogram a = random_hist(30), b = random_hist(40),
                        c = random_hist(25);
    double ab = tv_distance(a, b);
    double ba = tv_distance(b, a);
    double ac = tv_distance(a, c);
    double cb = tv_distance(c, b);
    CHECK(ab == ba);
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
    CHECK(ab <= ac + cb + 1e-12);
    CHECK(tv_distance(a, a) == 0.0);
  }
}

TEST_CASE("histogram TV converges to the analytic Beta TV") {
  // Oracle: TV between Beta(2,5) and Beta(5,2) by trapezoid integration.
  auto beta_pdf = [](double x, double a, double b) {
    double log_b = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
    return std::exp((a - 1) * std::log(x) + (b - 1) * std::log(1 - x) - log_b);
  };
  const int grid = 200000;
  double tv_oracle = 0.0;
  for (int i = 0; i < grid; ++i) {
    double x0 = (i + 0.5) / grid;
    tv_oracle += std::abs(beta_pdf(x0, 2, 5) - beta_pdf(x0, 5, 2)) / grid;
  }
  tv_oracle *= 0.5;

  std::mt19937_64 rng(7);
  std::gamma_distribution<double> g2(2.0, 1.0), g5(5.0, 1.0);
  std::vector<double> s1, s2;
  for (int i = 0; i < 100000; ++i) {
    double a = g2(rng), b = g5(rng);
    s1.push_back(a / (a + b));
    double c = g5(rng), d = g2(rng);
    s2.push_back(c / (c + d));
  }
  double tv_hist = tv_distance(confidence_histogram(s1, 50),
                               confidence_histogram(s2, 50));
  CHECK(std::abs(tv_hist - tv_oracle) < 0.02);
}

TEST_CASE("histogram csv export") {
  ConfidenceHistogram id = confidence_histogram({0.2, 0.9}, 4);
  ConfidenceHistogram ood = confidence_histogram({0.4, 0.4}, 4);
  std::string csv = histogram_pair_csv(id, ood);
  CHECK(csv.rfind("bin_lo,bin_hi,mass_id,mass_ood\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  ConfidenceHistogram other = confidence_histogram({0.5}, 3);
  CHECK_THROWS_AS(histogram_pair_csv(id, other), std::invalid_argument);
}
