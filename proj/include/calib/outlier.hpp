#pragma once

#include <string>
#include <vector>

#include "calib/mlp.hpp"

namespace calib {

/// The 4-dimensional non-parametric outlier score vector over
/// last-hidden-layer features: KDE, isolation forest, one-class SVM and
/// kNN distance.
struct OutlierScores {
  double kde;      // in (0, 1]
  double iforest;  // in (0, 1]
  double ocsvm;    // signed decision value, higher = more inlier
  double knn;      // >= 0

  Eigen::Vector4d as_vec() const { return {kde, iforest, ocsvm, knn}; }
};

struct OutlierConfig {
  int trees = 100;
  int subsample = 256;
  int k = 10;
  double nu = 0.1;          // OCSVM outlier fraction for the offset
  double svm_tol = 1e-6;
  int svm_max_sweeps = 2000;
};

struct IsoNode {
  int dim = -1;        // -1 marks a leaf
  double split = 0.0;
  int left = -1, right = -1;
  int size = 0;        // leaf sample count
};

struct IsoTree {
  std::vector<IsoNode> nodes;
};

struct OutlierModels {
  Mat features;          // n x d training features
  double kde_h;          // Gaussian KDE bandwidth (squared-distance scale)
  std::vector<IsoTree> forest;
  double iforest_c;      // expected path length at the subsample size
  int iforest_subsample;
  Vec svm_alpha;         // on the simplex
  double svm_rho;
  double svm_h;          // Gaussian kernel squared-distance scale
  bool svm_converged;
  int k;
};

/// Average-path-length normalization 2H(n-1) - 2(n-1)/n.
double iforest_path_constant(int n);

/// Scott's-rule squared-distance bandwidth for exp(-||z - z_i||^2 / h).
double scott_bandwidth(const Mat& features);

/// Fits all four scorers on training features. Deterministic given seed.
OutlierModels fit_outlier_models(const Mat& features, const OutlierConfig& config,
                                 std::uint64_t seed);

double kde_score(const OutlierModels& models, const Vec& z);
double iforest_score(const OutlierModels& models, const Vec& z);
double ocsvm_score(const OutlierModels& models, const Vec& z);
double knn_score(const OutlierModels& models, const Vec& z);

OutlierScores score_vector(const OutlierModels& models, const Vec& z);

/// Bayesian averaging: features re-extracted per posterior draw, fitted
/// models reused.
OutlierScores avg_score_vector(const OutlierModels& models,
                               const VariationalParams& phi, const Vec& x,
                               int ensemble_size, Rng& rng);

std::string to_json(const OutlierModels& models);
OutlierModels outlier_models_from_json(const std::string& text);

}  // namespace calib
