#pragma once

#include <optional>
#include <string>
#include <vector>

#include "calib/metrics.hpp"
#include "calib/mlp.hpp"
#include "calib/outlier.hpp"

namespace calib {

/// One validation/test example as the selector sees it: ensemble
/// confidence, outlier score vector, correctness bit, and the confidence
/// assigned to the true label (for the selective-classification baseline).
struct SelectorRecord {
  double r = 0.0;
  Eigen::Vector4d s = Eigen::Vector4d::Zero();
  int c = 0;
  double p_true = 0.0;
};

/// Soft selector network (5 -> 64 -> 64 -> 1, ReLU, sigmoid output) with
/// the input standardization and acceptance threshold baked in.
struct SelectorParams {
  MlpArch arch{5, {64, 64}, 1};
  Vec weights;
  Vec feat_mean;  // length 5
  Vec feat_std;   // length 5
  double tau = 0.0;
};

struct SelectorConfig {
  double eta = 0.01;
  double kernel_bandwidth = 0.2;
  double coverage = 1.0;  // target coverage xi in (0, 1]
  int epochs = 30;
  int batch_size = 32;
  int iterations_per_epoch = 0;  // 0: plain passes over the data
  double lr = 0.001;
  double weight_decay = 1e-5;
  std::uint64_t seed = 0;
};

/// Soft acceptance score in (0, 1).
double soft_select(const SelectorParams& params, double r,
                   const Eigen::Vector4d& s);

/// Unnormalized soft selective MMCE:
/// sqrt( sum_ij (c_i - r_i)(c_j - r_j) g_i g_j k(r_i, r_j) ), clamped at 0.
double soft_selective_mmce(const SelectorParams& params,
                           const std::vector<SelectorRecord>& records,
                           const KernelSpec& kernel);

/// soft_selective_mmce - eta * sum_i log g_i.
double selector_loss(const SelectorParams& params,
                     const std::vector<SelectorRecord>& records, double eta,
                     const KernelSpec& kernel);

/// Adam-trained selector over precomputed validation records; the
/// predictor stays frozen. Deterministic given the config seed.
SelectorParams train_selector(const SelectorConfig& config,
                              const std::vector<SelectorRecord>& records);

/// tau = empirical (1 - coverage)-quantile of the validation soft scores.
double calibrate_threshold(const SelectorParams& params,
                           const std::vector<double>& validation_g,
                           double coverage);

/// Hard acceptance: soft score >= tau.
int select(const SelectorParams& params, double r, const Eigen::Vector4d& s);

struct SelectiveMetrics {
  double coverage;
  double accuracy;       // over accepted examples
  double ece;            // over accepted examples
  double selective_mmce; // normalized hard form
  bool defined;          // false when nothing is accepted
};

SelectiveMetrics selective_eval(const SelectorParams& params,
                                const std::vector<SelectorRecord>& records,
                                int ece_bins, const KernelSpec& kernel);

/// Accepted-set-normalized negative log-likelihood baseline.
double selective_classification_loss(const SelectorParams& params,
                                     const std::vector<SelectorRecord>& records);

std::string to_json(const SelectorParams& params);
SelectorParams selector_from_json(const std::string& text);

}  // namespace calib
