#include "calib/outlier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace calib {

double iforest_path_constant(int n) {
  if (n <= 1) return 0.0;
  if (n == 2) return 1.0;
  double h = 0.0;  // harmonic number H(n-1), exact sum
  for (int i = 1; i < n; ++i) h += 1.0 / i;
  return 2.0 * h - 2.0 * (n - 1) / static_cast<double>(n);
}

double scott_bandwidth(const Mat& features) {
  const double n = static_cast<double>(features.rows());
  const double d = static_cast<double>(features.cols());
  double sigma = 0.0;
  for (Eigen::Index j = 0; j < features.cols(); ++j) {
    double mean = features.col(j).mean();
    double var = (features.col(j).array() - mean).square().sum() /
                 std::max(1.0, n - 1.0);
    sigma += std::sqrt(var);
  }
  sigma /= d;
  double bw = sigma * std::pow(n, -1.0 / (d + 4.0));
  return std::max(2.0 * bw * bw, 1e-12);
}

namespace {

int build_tree(IsoTree& tree, const Mat& features, std::vector<int>& idx,
               int begin, int end, int depth, int depth_limit, Rng& rng) {
  const int size = end - begin;
  int self = static_cast<int>(tree.nodes.size());
  tree.nodes.push_back({});
  if (size <= 1 || depth >= depth_limit) {
    tree.nodes[self].size = size;
    return self;
  }
  // Pick a split dimension with spread; leaf out if every column is constant.
  const int d = static_cast<int>(features.cols());
  std::uniform_int_distribution<int> pick_dim(0, d - 1);
  int dim = -1;
  double lo = 0.0, hi = 0.0;
  int start = pick_dim(rng);
  for (int off = 0; off < d; ++off) {
    int cand = (start + off) % d;
    lo = hi = features(idx[begin], cand);
    for (int i = begin + 1; i < end; ++i) {
      lo = std::min(lo, features(idx[i], cand));
      hi = std::max(hi, features(idx[i], cand));
    }
    if (hi > lo) {
      dim = cand;
      break;
    }
  }
  if (dim < 0) {
    tree.nodes[self].size = size;
    return self;
  }
  std::uniform_real_distribution<double> pick_split(lo, hi);
  double split = pick_split(rng);
  auto mid_it = std::partition(idx.begin() + begin, idx.begin() + end,
                               [&](int i) { return features(i, dim) < split; });
  int mid = static_cast<int>(mid_it - idx.begin());
  if (mid == begin || mid == end) {
    tree.nodes[self].size = size;
    return self;
  }
  tree.nodes[self].dim = dim;
  tree.nodes[self].split = split;
  int left = build_tree(tree, features, idx, begin, mid, depth + 1, depth_limit,
                        rng);
  int right = build_tree(tree, features, idx, mid, end, depth + 1, depth_limit,
                         rng);
  tree.nodes[self].left = left;
  tree.nodes[self].right = right;
  return self;
}

double path_length(const IsoTree& tree, const Vec& z) {
  int node = 0;
  double depth = 0.0;
  while (tree.nodes[node].dim >= 0) {
    node = z(tree.nodes[node].dim) < tree.nodes[node].split
               ? tree.nodes[node].left
               : tree.nodes[node].right;
    depth += 1.0;
  }
  return depth + iforest_path_constant(tree.nodes[node].size);
}

// Projection onto { 0 <= a_i <= cap, sum a_i = 1 } by bisecting the shift.
Vec project_capped_simplex(const Vec& x, double cap) {
  auto mass = [&](double shift) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      s += std::clamp(x(i) - shift, 0.0, cap);
    }
    return s;
  };
  double lo = x.minCoeff() - cap - 1.0, hi = x.maxCoeff();
  for (int it = 0; it < 100; ++it) {
    double mid = 0.5 * (lo + hi);
    if (mass(mid) > 1.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  double shift = 0.5 * (lo + hi);
  Vec out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    out(i) = std::clamp(x(i) - shift, 0.0, cap);
  }
  return out;
}

double sq_dist(const Mat& a, int i, const Vec& z) {
  return (a.row(i).transpose() - z).squaredNorm();
}

}  // namespace

OutlierModels fit_outlier_models(const Mat& features, const OutlierConfig& config,
                                 std::uint64_t seed) {
  const int n = static_cast<int>(features.rows());
  if (n < 1 || n < config.k) {
    throw std::invalid_argument("fit_outlier_models: too few training features");
  }
  Rng rng(seed);
  OutlierModels m;
  m.features = features;
  m.k = config.k;
  m.kde_h = scott_bandwidth(features);

  // Isolation forest over per-tree subsamples.
  m.iforest_subsample = std::min(config.subsample, n);
  m.iforest_c = iforest_path_constant(m.iforest_subsample);
  int depth_limit = std::max(
      1, static_cast<int>(std::ceil(std::log2(std::max(2, m.iforest_subsample)))));
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  for (int t = 0; t < config.trees; ++t) {
    std::shuffle(all.begin(), all.end(), rng);
    std::vector<int> idx(all.begin(), all.begin() + m.iforest_subsample);
    IsoTree tree;
    build_tree(tree, features, idx, 0, m.iforest_subsample, 0, depth_limit,
               rng);
    m.forest.push_back(std::move(tree));
  }

  // OCSVM dual: minimize 0.5 a'Ka over the capped simplex by projected
  // gradient steps.
  Mat kernel(n, n);
  {
    std::vector<double> sq;
    sq.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        sq.push_back((features.row(i) - features.row(j)).squaredNorm());
      }
    }
    double h = 1.0;
    if (!sq.empty()) {
      std::nth_element(sq.begin(), sq.begin() + sq.size() / 2, sq.end());
      h = std::max(sq[sq.size() / 2], 1e-12);
    }
    m.svm_h = h;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        kernel(i, j) = std::exp(-(features.row(i) - features.row(j))
                                     .squaredNorm() /
                                h);
      }
    }
  }
  double cap = std::min(1.0, 1.0 / (config.nu * n));
  Vec alpha = project_capped_simplex(Vec::Constant(n, 1.0 / n), cap);
  double step = 1.0 / kernel.rowwise().sum().maxCoeff();
  m.svm_converged = false;
  // Accelerated projected gradient with restart on non-monotone steps.
  Vec momentum_pt = alpha;
  double t_prev = 1.0;
  for (int sweep = 0; sweep < config.svm_max_sweeps; ++sweep) {
    Vec next = project_capped_simplex(momentum_pt - step * (kernel * momentum_pt),
                                      cap);
    double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t_prev * t_prev));
    Vec candidate = next + ((t_prev - 1.0) / t_next) * (next - alpha);
    if ((next - alpha).dot(momentum_pt - next) > 0.0) {
      candidate = next;  // restart the momentum
      t_next = 1.0;
    }
    double delta = (next - alpha).cwiseAbs().maxCoeff();
    alpha = next;
    momentum_pt = candidate;
    t_prev = t_next;
    if (delta < config.svm_tol) {
      m.svm_converged = true;
      break;
    }
  }
  m.svm_alpha = alpha;
  // Offset: zero decision value at the ceil(nu*n)-th most-outlying point.
  Vec decision = kernel * alpha;
  std::vector<double> sorted(decision.data(), decision.data() + n);
  std::sort(sorted.begin(), sorted.end());
  int rank = std::clamp(static_cast<int>(std::ceil(config.nu * n)), 1, n);
  m.svm_rho = sorted[static_cast<std::size_t>(rank - 1)];
  return m;
}

double kde_score(const OutlierModels& models, const Vec& z) {
  const int n = static_cast<int>(models.features.rows());
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    s += std::exp(-sq_dist(models.features, i, z) / models.kde_h);
  }
  return s / n;
}

double iforest_score(const OutlierModels& models, const Vec& z) {
  double total = 0.0;
  for (const auto& tree : models.forest) total += path_length(tree, z);
  double avg = total / static_cast<double>(models.forest.size());
  return std::pow(2.0, -avg / std::max(models.iforest_c, 1e-12));
}

double ocsvm_score(const OutlierModels& models, const Vec& z) {
  const int n = static_cast<int>(models.features.rows());
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    s += models.svm_alpha(i) *
         std::exp(-sq_dist(models.features, i, z) / models.svm_h);
  }
  return s - models.svm_rho;
}

double knn_score(const OutlierModels& models, const Vec& z) {
  const int n = static_cast<int>(models.features.rows());
  std::vector<double> dist(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    dist[static_cast<std::size_t>(i)] = std::sqrt(sq_dist(models.features, i, z));
  }
  std::nth_element(dist.begin(), dist.begin() + (models.k - 1), dist.end());
  return dist[static_cast<std::size_t>(models.k - 1)];
}

OutlierScores score_vector(const OutlierModels& models, const Vec& z) {
  return {kde_score(models, z), iforest_score(models, z),
          ocsvm_score(models, z), knn_score(models, z)};
}

OutlierScores avg_score_vector(const OutlierModels& models,
                               const VariationalParams& phi, const Vec& x,
                               int ensemble_size, Rng& rng) {
  if (ensemble_size < 1) {
    throw std::invalid_argument("avg_score_vector: ensemble_size must be >= 1");
  }
  Eigen::Vector4d acc = Eigen::Vector4d::Zero();
  for (int s = 0; s < ensemble_size; ++s) {
    Vec z = feature(sample_theta(phi, rng), x);
    acc += score_vector(models, z).as_vec();
  }
  acc /= static_cast<double>(ensemble_size);
  return {acc(0), acc(1), acc(2), acc(3)};
}

namespace {

std::vector<double> to_std(const Vec& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

}  // namespace

std::string to_json(const OutlierModels& m) {
  nlohmann::json j;
  j["features"] = std::vector<std::vector<double>>();
  for (Eigen::Index i = 0; i < m.features.rows(); ++i) {
    j["features"].push_back(std::vector<double>(
        m.features.row(i).begin(), m.features.row(i).end()));
  }
  j["kde_h"] = m.kde_h;
  j["iforest_c"] = m.iforest_c;
  j["iforest_subsample"] = m.iforest_subsample;
  nlohmann::json forest = nlohmann::json::array();
  for (const auto& tree : m.forest) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& nd : tree.nodes) {
      nodes.push_back({{"dim", nd.dim},
                       {"split", nd.split},
                       {"left", nd.left},
                       {"right", nd.right},
                       {"size", nd.size}});
    }
    forest.push_back(std::move(nodes));
  }
  j["forest"] = std::move(forest);
  j["svm_alpha"] = to_std(m.svm_alpha);
  j["svm_rho"] = m.svm_rho;
  j["svm_h"] = m.svm_h;
  j["svm_converged"] = m.svm_converged;
  j["k"] = m.k;
  return j.dump();
}

OutlierModels outlier_models_from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  OutlierModels m;
  auto feats = j.at("features").get<std::vector<std::vector<double>>>();
  m.features = Mat(static_cast<Eigen::Index>(feats.size()),
                   feats.empty() ? 0 : static_cast<Eigen::Index>(feats[0].size()));
  for (std::size_t i = 0; i < feats.size(); ++i) {
    for (std::size_t c = 0; c < feats[i].size(); ++c) {
      m.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) =
          feats[i][c];
    }
  }
  m.kde_h = j.at("kde_h").get<double>();
  m.iforest_c = j.at("iforest_c").get<double>();
  m.iforest_subsample = j.at("iforest_subsample").get<int>();
  for (const auto& tj : j.at("forest")) {
    IsoTree tree;
    for (const auto& nj : tj) {
      IsoNode nd;
      nd.dim = nj.at("dim").get<int>();
      nd.split = nj.at("split").get<double>();
      nd.left = nj.at("left").get<int>();
      nd.right = nj.at("right").get<int>();
      nd.size = nj.at("size").get<int>();
      tree.nodes.push_back(nd);
    }
    m.forest.push_back(std::move(tree));
  }
  auto av = j.at("svm_alpha").get<std::vector<double>>();
  m.svm_alpha = Eigen::Map<const Vec>(av.data(),
                                      static_cast<Eigen::Index>(av.size()));
  m.svm_rho = j.at("svm_rho").get<double>();
  m.svm_h = j.at("svm_h").get<double>();
  m.svm_converged = j.at("svm_converged").get<bool>();
  m.k = j.at("k").get<int>();
  return m;
}

}  // namespace calib
