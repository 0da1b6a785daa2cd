#pragma once

#include <array>
#include <string>
#include <vector>

#include "calib/data.hpp"
#include "calib/ood.hpp"
#include "calib/outlier.hpp"
#include "calib/selective.hpp"
#include "calib/training.hpp"

namespace calib {

inline constexpr const char* kVersion = "calibrate-lab 0.1.0";

struct DataConfig {
  std::string task = "two_moons";
  int n = 2000;
  double noise = 0.15;
  std::uint64_t seed = 1;
  std::array<double, 3> split_fractions{0.7, 0.15, 0.15};
  std::string ood_mode = "ring";
  int ood_n = 1000;
  double ood_magnitude = 3.0;
  std::string uncertainty_mode = "shift";
  int uncertainty_n = 1000;
  double uncertainty_magnitude = 3.0;
  std::string csv_path;  // when set, replaces the synthetic ID data
};

struct MetricConfig {
  int bins = 15;
  int hist_bins = 20;
  int min_count = 100;
  int ensemble = 20;
};

struct ExperimentConfig {
  DataConfig data;
  MlpArch arch{2, {64, 64}, 2};
  TrainConfig train;
  SelectorConfig selector;
  OutlierConfig outlier;
  MetricConfig metrics;
  std::string out_dir = "runs/out";
  std::string checkpoint;           // predictor checkpoint to load (eval paths)
  std::string selector_checkpoint;  // trained selector to load
  std::vector<std::uint64_t> seeds{0};
  std::vector<double> lambda_grid{0.2, 0.4, 0.6, 0.8, 1.0, 2.0, 3.0, 4.0,
                                  5.0, 6.0, 7.0, 8.0, 9.0, 10.0};
  std::vector<double> gamma_grid{0.0, 0.1, 0.5, 1.0};
  std::vector<std::string> sweep_methods{"fnn", "cfnn", "bnn", "cbnn"};
  std::vector<double> coverage_grid{0.1, 0.2, 0.3, 0.4, 0.5,
                                    0.6, 0.7, 0.8, 0.9, 1.0};
};

/// Parses and validates the JSON config; throws std::invalid_argument with
/// a field-level message on bad input.
ExperimentConfig config_from_json(const std::string& text);

/// The fully resolved configuration, embedded verbatim in every report.
std::string resolved_config_json(const ExperimentConfig& config);

struct DataBundle {
  Dataset train, val, test, uncertainty, ood_test;
};
DataBundle build_data(const DataConfig& config);

/// Trains config.train.method on the bundle (uncertainty set passed iff the
/// method uses OCM).
TrainedModel run_training(const ExperimentConfig& config,
                          const DataBundle& data, TrainReport* report,
                          const TrainedModel* pretrained = nullptr);

/// Ensemble confidences r-bar on every row of `inputs`.
std::vector<double> model_confidences(const TrainedModel& model,
                                      const Mat& inputs, int ensemble,
                                      std::uint64_t seed);

/// Outlier models fitted on validation-split features under the deployed
/// model (mu-features for Bayesian predictors).
OutlierModels fit_outliers_on_val(const TrainedModel& model, const Dataset& val,
                                  const OutlierConfig& config,
                                  std::uint64_t seed);

/// Selector records (r-bar, s-bar, c, p_true) for a labeled set; unlabeled
/// sets yield c = 0 and p_true = 0 for every row.
std::vector<SelectorRecord> build_selector_records(
    const TrainedModel& model, const OutlierModels& outliers,
    const Dataset& data, int ensemble, std::uint64_t seed);

struct CoverageRow {
  double target_coverage;
  double tau;
  double id_coverage;
  double ood_coverage;
  double accuracy;
  double ece;
  double p_d;  // NaN when undefined on the accepted sets
};

/// Coverage sweep over the target grid; tau is recalibrated per target on
/// the validation soft scores.
std::vector<CoverageRow> coverage_sweep(
    const SelectorParams& selector, const std::vector<double>& validation_g,
    const std::vector<SelectorRecord>& id_test,
    const std::vector<SelectorRecord>& ood_test,
    const std::vector<double>& coverage_grid, const MetricConfig& metrics,
    const KernelSpec& kernel);

std::string coverage_sweep_csv(const std::vector<CoverageRow>& rows);

/// Grid-based lambda selection: lowest validation ECE subject to an
/// accuracy drop of at most `max_accuracy_drop` versus lambda = 0.
struct LambdaSelection {
  double lambda;
  double val_ece;
  double val_accuracy;
  double baseline_ece;
  double baseline_accuracy;
};
LambdaSelection select_lambda(const ExperimentConfig& config,
                              const DataBundle& data,
                              const std::vector<double>& grid,
                              double max_accuracy_drop);

}  // namespace calib
