#include "calib/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace calib {

int Dataset::num_classes() const {
  int k = 0;
  for (int label : y) k = std::max(k, label + 1);
  return k;
}

Dataset make_synthetic(const std::string& task, int n, double noise,
                       std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("make_synthetic: n must be >= 1");
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset d;
  d.x = Mat(n, 2);
  d.y.resize(n);
  if (task == "two_moons") {
    // Upper/lower interleaved half-circles; even indices class 0.
    for (int i = 0; i < n; ++i) {
      int cls = i % 2;
      double t = std::numbers::pi * ((i / 2) + 0.5) /
                 std::max(1, (n + 1 - cls) / 2);
      double px, py;
      if (cls == 0) {
        px = std::cos(t);
        py = std::sin(t);
      } else {
        px = 1.0 - std::cos(t);
        py = 0.5 - std::sin(t);
      }
      d.x(i, 0) = px + noise * gauss(rng);
      d.x(i, 1) = py + noise * gauss(rng);
      d.y[i] = cls;
    }
  } else if (task == "gaussian_blobs") {
    const std::array<std::array<double, 2>, 2> centers = {{{-1.5, 0.0},
                                                           {1.5, 0.0}}};
    for (int i = 0; i < n; ++i) {
      int cls = i % 2;
      d.x(i, 0) = centers[cls][0] + noise * gauss(rng);
      d.x(i, 1) = centers[cls][1] + noise * gauss(rng);
      d.y[i] = cls;
    }
  } else {
    throw std::invalid_argument("make_synthetic: unknown task '" + task + "'");
  }
  return d;
}

Dataset make_ood(const std::string& base_task, const std::string& mode, int n,
                 double magnitude, std::uint64_t seed) {
  if (magnitude <= 0.0) {
    throw std::invalid_argument("make_ood: magnitude must be > 0");
  }
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 2.0 * std::numbers::pi);
  Dataset base = make_synthetic(base_task, std::max(n, 2), 0.1, seed + 1);
  Eigen::RowVector2d centroid = base.x.colwise().mean();
  Dataset d;
  d.x = Mat(n, 2);
  d.tag = Split::kOodTest;
  if (mode == "ring") {
    for (int i = 0; i < n; ++i) {
      double a = unif(rng);
      double rad = magnitude * (1.0 + 0.05 * gauss(rng));
      d.x(i, 0) = centroid(0) + rad * std::cos(a);
      d.x(i, 1) = centroid(1) + rad * std::sin(a);
    }
  } else if (mode == "shift") {
    Dataset fresh = make_synthetic(base_task, n, 0.1, seed + 2);
    d.x = fresh.x;
    d.x.col(0).array() += magnitude;
    d.x.col(1).array() += magnitude;
  } else if (mode == "rotate") {
    Dataset fresh = make_synthetic(base_task, n, 0.1, seed + 2);
    double c = std::cos(magnitude), s = std::sin(magnitude);
    for (int i = 0; i < n; ++i) {
      double px = fresh.x(i, 0) - centroid(0);
      double py = fresh.x(i, 1) - centroid(1);
      d.x(i, 0) = centroid(0) + c * px - s * py;
      d.x(i, 1) = centroid(1) + s * px + c * py;
    }
  } else {
    throw std::invalid_argument("make_ood: unknown mode '" + mode + "'");
  }
  return d;
}

SplitResult split(const Dataset& dataset, const std::array<double, 3>& fractions,
                  std::uint64_t seed) {
  double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("split: fractions must sum to 1");
  }
  const int n = dataset.size();
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  int n_train = static_cast<int>(std::round(fractions[0] * n));
  int n_val = static_cast<int>(std::round(fractions[1] * n));
  n_train = std::min(n_train, n);
  n_val = std::min(n_val, n - n_train);
  auto take = [&](int begin, int count, Split tag) {
    Dataset out;
    out.x = Mat(count, dataset.dim());
    if (!dataset.y.empty()) out.y.resize(count);
    out.tag = tag;
    for (int i = 0; i < count; ++i) {
      out.x.row(i) = dataset.x.row(perm[begin + i]);
      if (!dataset.y.empty()) out.y[i] = dataset.y[perm[begin + i]];
    }
    return out;
  };
  SplitResult r;
  r.train = take(0, n_train, Split::kTrain);
  r.val = take(n_train, n_val, Split::kVal);
  r.test = take(n_train + n_val, n - n_train - n_val, Split::kTest);
  return r;
}

Dataset load_csv(const std::string& path, bool labeled) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("load_csv: empty file " + path);
  }
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  bool has_label = !header.empty() && header.back() == "label";
  if (labeled && !has_label) {
    throw std::runtime_error("load_csv: missing required 'label' column");
  }
  int d = static_cast<int>(header.size()) - (has_label ? 1 : 0);
  if (d < 1) throw std::runtime_error("load_csv: no feature columns");
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    int col = 0;
    while (std::getline(ss, cell, ',')) {
      ++col;
      std::size_t pos = 0;
      double v;
      try {
        v = std::stod(cell, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos != cell.size() || cell.empty()) {
        throw std::runtime_error("load_csv: non-numeric cell at line " +
                                 std::to_string(lineno) + ", column " +
                                 std::to_string(col));
      }
      vals.push_back(v);
    }
    if (static_cast<int>(vals.size()) != static_cast<int>(header.size())) {
      throw std::runtime_error("load_csv: wrong column count at line " +
                               std::to_string(lineno));
    }
    if (has_label) {
      double lv = vals.back();
      vals.pop_back();
      if (lv != std::floor(lv) || lv < 0) {
        throw std::runtime_error("load_csv: invalid label at line " +
                                 std::to_string(lineno));
      }
      labels.push_back(static_cast<int>(lv));
    }
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw std::runtime_error("load_csv: no data rows");
  Dataset out;
  out.x = Mat(static_cast<int>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int j = 0; j < d; ++j) out.x(static_cast<int>(i), j) = rows[i][j];
  }
  if (labeled) out.y = std::move(labels);
  return out;
}

}  // namespace calib
