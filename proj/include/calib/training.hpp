#pragma once

#include <optional>
#include <string>
#include <vector>

#include "calib/data.hpp"
#include "calib/metrics.hpp"
#include "calib/objectives.hpp"

namespace calib {

/// SGD with momentum: v <- momentum*v + g; p <- p - lr*v.
struct SgdMomentum {
  Vec velocity;
  void step(Vec& params, const Vec& grads, double lr, double momentum);
};

/// Adam with decoupled weight decay and bias correction.
struct Adam {
  Vec m, v;
  long t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  void step(Vec& params, const Vec& grads, double lr, double weight_decay);
};

struct OcmFinetuneConfig {
  int epochs = 10;
  double lr = 0.001;
  int id_batch = 32;
  int ood_batch = 64;
  int id_sample_per_epoch = 0;  // 0: use the full training set each epoch
};

struct TrainConfig {
  std::string method = "fnn";
  int epochs = 50;
  int batch_size = 64;
  double lr = 0.05;
  double lr_decay_factor = 5.0;
  int lr_decay_every = 20;
  double momentum = 0.9;
  LossWeights weights;          // beta, lambda, gamma
  int mc_train_samples = 1;
  std::uint64_t seed = 0;
  double clip_norm = 10.0;
  double kernel_bandwidth = 0.4;
  double prior_variance = 0.001;
  bool weighted_calib = false;
  bool keep_calib_in_finetune = true;
  int eval_ensemble = 20;
  OcmFinetuneConfig ocm_finetune;
};

struct EpochRecord {
  LossBreakdown loss;  // mean per-example over the epoch's steps
  double val_accuracy;
  double val_ece;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  double final_val_accuracy = 0.0;
  double final_val_ece = 0.0;
};

/// Trained predictor in either parameterization.
struct TrainedModel {
  Method method;
  MlpArch arch;
  std::optional<MlpParams> frequentist;
  std::optional<VariationalParams> variational;

  /// Predictive distribution: ensemble for Bayesian models, plain forward
  /// otherwise.
  Vec predict_prob(const Vec& x, int ensemble, Rng& rng) const;
  Vec feature_mean(const Vec& x) const;  // features under theta (or mu)
  std::string checkpoint_json() const;
};

/// Trains one method variant end to end. For *_ocm methods the base model
/// is either `pretrained` (when given) or trained from scratch first, then
/// fine-tuned on the OCM objective with per-iteration cosine lr decay.
/// Throws std::runtime_error naming epoch/step on non-finite loss.
TrainedModel train(const TrainConfig& config, const MlpArch& arch,
                   const Dataset& train_set, const Dataset& val_set,
                   const Dataset* uncertainty_set, TrainReport* report,
                   const TrainedModel* pretrained = nullptr);

/// Validation accuracy and ECE at the given ensemble size and bin count.
struct EvalResult {
  double accuracy;
  double ece;
  std::vector<ConfidenceRecord> records;
};
EvalResult evaluate(const TrainedModel& model, const Dataset& data,
                    int ensemble, int ece_bins, std::uint64_t seed);

}  // namespace calib
