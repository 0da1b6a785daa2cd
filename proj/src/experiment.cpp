#include "calib/experiment.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace calib {

namespace {

using nlohmann::json;

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("config field '") + key +
                                "': " + e.what());
  }
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") +
                                e.what());
  }
  ExperimentConfig c;
  if (j.contains("data")) {
    const json& d = j["data"];
    read_field(d, "task", c.data.task);
    read_field(d, "n", c.data.n);
    read_field(d, "noise", c.data.noise);
    read_field(d, "seed", c.data.seed);
    read_field(d, "split", c.data.split_fractions);
    read_field(d, "csv", c.data.csv_path);
    if (d.contains("ood")) {
      read_field(d["ood"], "mode", c.data.ood_mode);
      read_field(d["ood"], "n", c.data.ood_n);
      read_field(d["ood"], "magnitude", c.data.ood_magnitude);
    }
    if (d.contains("uncertainty")) {
      read_field(d["uncertainty"], "mode", c.data.uncertainty_mode);
      read_field(d["uncertainty"], "n", c.data.uncertainty_n);
      read_field(d["uncertainty"], "magnitude", c.data.uncertainty_magnitude);
    }
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    read_field(m, "hidden", c.arch.hidden);
    read_field(m, "num_classes", c.arch.num_classes);
    read_field(m, "input_dim", c.arch.input_dim);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    read_field(t, "method", c.train.method);
    read_field(t, "epochs", c.train.epochs);
    read_field(t, "batch_size", c.train.batch_size);
    read_field(t, "lr", c.train.lr);
    read_field(t, "lr_decay_factor", c.train.lr_decay_factor);
    read_field(t, "lr_decay_every", c.train.lr_decay_every);
    read_field(t, "momentum", c.train.momentum);
    read_field(t, "beta", c.train.weights.beta);
    read_field(t, "lambda", c.train.weights.lambda);
    read_field(t, "gamma", c.train.weights.gamma);
    read_field(t, "mc_train_samples", c.train.mc_train_samples);
    read_field(t, "seed", c.train.seed);
    read_field(t, "clip_norm", c.train.clip_norm);
    read_field(t, "kernel_bandwidth", c.train.kernel_bandwidth);
    read_field(t, "prior_variance", c.train.prior_variance);
    read_field(t, "weighted_calib", c.train.weighted_calib);
    read_field(t, "keep_calib_in_finetune", c.train.keep_calib_in_finetune);
    read_field(t, "eval_ensemble", c.train.eval_ensemble);
    if (t.contains("ocm_finetune")) {
      const json& f = t["ocm_finetune"];
      read_field(f, "epochs", c.train.ocm_finetune.epochs);
      read_field(f, "lr", c.train.ocm_finetune.lr);
      read_field(f, "id_batch", c.train.ocm_finetune.id_batch);
      read_field(f, "ood_batch", c.train.ocm_finetune.ood_batch);
      read_field(f, "id_sample_per_epoch",
                 c.train.ocm_finetune.id_sample_per_epoch);
    }
  }
  if (j.contains("selector")) {
    const json& s = j["selector"];
    read_field(s, "eta", c.selector.eta);
    read_field(s, "bandwidth", c.selector.kernel_bandwidth);
    read_field(s, "coverage", c.selector.coverage);
    read_field(s, "epochs", c.selector.epochs);
    read_field(s, "batch_size", c.selector.batch_size);
    read_field(s, "iterations_per_epoch", c.selector.iterations_per_epoch);
    read_field(s, "lr", c.selector.lr);
    read_field(s, "weight_decay", c.selector.weight_decay);
    read_field(s, "seed", c.selector.seed);
  }
  if (j.contains("outlier")) {
    const json& o = j["outlier"];
    read_field(o, "trees", c.outlier.trees);
    read_field(o, "subsample", c.outlier.subsample);
    read_field(o, "k", c.outlier.k);
    read_field(o, "nu", c.outlier.nu);
  }
  if (j.contains("metrics")) {
    const json& m = j["metrics"];
    read_field(m, "bins", c.metrics.bins);
    read_field(m, "hist_bins", c.metrics.hist_bins);
    read_field(m, "min_count", c.metrics.min_count);
    read_field(m, "ensemble", c.metrics.ensemble);
  }
  read_field(j, "out", c.out_dir);
  read_field(j, "checkpoint", c.checkpoint);
  read_field(j, "selector_checkpoint", c.selector_checkpoint);
  read_field(j, "seeds", c.seeds);
  read_field(j, "lambda_grid", c.lambda_grid);
  read_field(j, "gamma_grid", c.gamma_grid);
  read_field(j, "sweep_methods", c.sweep_methods);
  read_field(j, "coverage_grid", c.coverage_grid);

  // Validation beyond type checks.
  Method method = parse_method(c.train.method);  // throws on unknown ids
  if (method.ocm && c.data.uncertainty_n < 1) {
    throw std::invalid_argument(
        "train.method uses OCM but data.uncertainty.n < 1");
  }
  if (c.train.epochs < 0) throw std::invalid_argument("train.epochs < 0");
  if (c.train.batch_size < 1) throw std::invalid_argument("train.batch_size < 1");
  if (c.train.lr <= 0.0) throw std::invalid_argument("train.lr <= 0");
  if (c.train.weights.beta < 0.0 || c.train.weights.lambda < 0.0 ||
      c.train.weights.gamma < 0.0) {
    throw std::invalid_argument("train weights must be >= 0");
  }
  if (c.selector.coverage <= 0.0 || c.selector.coverage > 1.0) {
    throw std::invalid_argument("selector.coverage must be in (0,1]");
  }
  if (c.metrics.bins < 1) throw std::invalid_argument("metrics.bins < 1");
  if (c.data.n < 1) throw std::invalid_argument("data.n < 1");
  return c;
}

std::string resolved_config_json(const ExperimentConfig& c) {
  json j;
  j["data"] = {{"task", c.data.task},
               {"n", c.data.n},
               {"noise", c.data.noise},
               {"seed", c.data.seed},
               {"split", c.data.split_fractions},
               {"csv", c.data.csv_path},
               {"ood",
                {{"mode", c.data.ood_mode},
                 {"n", c.data.ood_n},
                 {"magnitude", c.data.ood_magnitude}}},
               {"uncertainty",
                {{"mode", c.data.uncertainty_mode},
                 {"n", c.data.uncertainty_n},
                 {"magnitude", c.data.uncertainty_magnitude}}}};
  j["model"] = {{"input_dim", c.arch.input_dim},
                {"hidden", c.arch.hidden},
                {"num_classes", c.arch.num_classes}};
  j["train"] = {{"method", c.train.method},
                {"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"lr", c.train.lr},
                {"lr_decay_factor", c.train.lr_decay_factor},
                {"lr_decay_every", c.train.lr_decay_every},
                {"momentum", c.train.momentum},
                {"beta", c.train.weights.beta},
                {"lambda", c.train.weights.lambda},
                {"gamma", c.train.weights.gamma},
                {"mc_train_samples", c.train.mc_train_samples},
                {"seed", c.train.seed},
                {"clip_norm", c.train.clip_norm},
                {"kernel_bandwidth", c.train.kernel_bandwidth},
                {"prior_variance", c.train.prior_variance},
                {"weighted_calib", c.train.weighted_calib},
                {"keep_calib_in_finetune", c.train.keep_calib_in_finetune},
                {"eval_ensemble", c.train.eval_ensemble},
                {"ocm_finetune",
                 {{"epochs", c.train.ocm_finetune.epochs},
                  {"lr", c.train.ocm_finetune.lr},
                  {"id_batch", c.train.ocm_finetune.id_batch},
                  {"ood_batch", c.train.ocm_finetune.ood_batch},
                  {"id_sample_per_epoch",
                   c.train.ocm_finetune.id_sample_per_epoch}}}};
  j["selector"] = {{"eta", c.selector.eta},
                   {"bandwidth", c.selector.kernel_bandwidth},
                   {"coverage", c.selector.coverage},
                   {"epochs", c.selector.epochs},
                   {"batch_size", c.selector.batch_size},
                   {"iterations_per_epoch", c.selector.iterations_per_epoch},
                   {"lr", c.selector.lr},
                   {"weight_decay", c.selector.weight_decay},
                   {"seed", c.selector.seed}};
  j["outlier"] = {{"trees", c.outlier.trees},
                  {"subsample", c.outlier.subsample},
                  {"k", c.outlier.k},
                  {"nu", c.outlier.nu}};
  j["metrics"] = {{"bins", c.metrics.bins},
                  {"hist_bins", c.metrics.hist_bins},
                  {"min_count", c.metrics.min_count},
                  {"ensemble", c.metrics.ensemble}};
  j["out"] = c.out_dir;
  j["checkpoint"] = c.checkpoint;
  j["selector_checkpoint"] = c.selector_checkpoint;
  j["seeds"] = c.seeds;
  j["lambda_grid"] = c.lambda_grid;
  j["gamma_grid"] = c.gamma_grid;
  j["sweep_methods"] = c.sweep_methods;
  j["coverage_grid"] = c.coverage_grid;
  j["version"] = kVersion;
  return j.dump(2);
}

DataBundle build_data(const DataConfig& c) {
  DataBundle b;
  Dataset base = c.csv_path.empty()
                     ? make_synthetic(c.task, c.n, c.noise, c.seed)
                     : load_csv(c.csv_path, /*labeled=*/true);
  SplitResult s = split(base, c.split_fractions, c.seed + 17);
  b.train = std::move(s.train);
  b.val = std::move(s.val);
  b.test = std::move(s.test);
  b.uncertainty = make_ood(c.task, c.uncertainty_mode, c.uncertainty_n,
                           c.uncertainty_magnitude, c.seed + 101);
  b.uncertainty.tag = Split::kUncertainty;
  b.ood_test =
      make_ood(c.task, c.ood_mode, c.ood_n, c.ood_magnitude, c.seed + 211);
  return b;
}

TrainedModel run_training(const ExperimentConfig& config,
                          const DataBundle& data, TrainReport* report,
                          const TrainedModel* pretrained) {
  Method m = parse_method(config.train.method);
  const Dataset* uncertainty = m.ocm ? &data.uncertainty : nullptr;
  return train(config.train, config.arch, data.train, data.val, uncertainty,
               report, pretrained);
}

std::vector<double> model_confidences(const TrainedModel& model,
                                      const Mat& inputs, int ensemble,
                                      std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(inputs.rows()));
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    Vec p = model.predict_prob(inputs.row(i).transpose(), ensemble, rng);
    out.push_back(hard_decision(p).confidence);
  }
  return out;
}

OutlierModels fit_outliers_on_val(const TrainedModel& model, const Dataset& val,
                                  const OutlierConfig& config,
                                  std::uint64_t seed) {
  Mat features(val.size(), 0);
  for (int i = 0; i < val.size(); ++i) {
    Vec z = model.feature_mean(val.x.row(i).transpose());
    if (features.cols() == 0) features.resize(val.size(), z.size());
    features.row(i) = z.transpose();
  }
  OutlierConfig c = config;
  c.k = std::min(c.k, std::max(1, val.size() - 1));
  return fit_outlier_models(features, c, seed);
}

std::vector<SelectorRecord> build_selector_records(
    const TrainedModel& model, const OutlierModels& outliers,
    const Dataset& data, int ensemble, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SelectorRecord> records;
  records.reserve(static_cast<std::size_t>(data.size()));
  for (int i = 0; i < data.size(); ++i) {
    Vec x = data.x.row(i).transpose();
    Vec p = model.predict_prob(x, ensemble, rng);
    HardDecision hd = hard_decision(p);
    SelectorRecord rec;
    rec.r = hd.confidence;
    if (model.variational) {
      rec.s = avg_score_vector(outliers, *model.variational, x, ensemble, rng)
                  .as_vec();
    } else {
      rec.s = score_vector(outliers, model.feature_mean(x)).as_vec();
    }
    if (!data.y.empty()) {
      int label = data.y[static_cast<std::size_t>(i)];
      rec.c = hd.label == label ? 1 : 0;
      rec.p_true = p(label);
    }
    records.push_back(rec);
  }
  return records;
}

std::vector<CoverageRow> coverage_sweep(
    const SelectorParams& selector, const std::vector<double>& validation_g,
    const std::vector<SelectorRecord>& id_test,
    const std::vector<SelectorRecord>& ood_test,
    const std::vector<double>& coverage_grid, const MetricConfig& metrics,
    const KernelSpec& kernel) {
  std::vector<CoverageRow> rows;
  for (double xi : coverage_grid) {
    SelectorParams p = selector;
    p.tau = calibrate_threshold(selector, validation_g, xi);
    SelectiveMetrics sm = selective_eval(p, id_test, metrics.bins, kernel);
    CoverageRow row;
    row.target_coverage = xi;
    row.tau = p.tau;
    row.id_coverage = sm.coverage;
    row.accuracy = sm.defined ? sm.accuracy : std::nan("");
    row.ece = sm.defined ? sm.ece : std::nan("");

    std::vector<double> id_conf, ood_conf;
    for (const auto& rec : id_test) {
      if (select(p, rec.r, rec.s)) id_conf.push_back(rec.r);
    }
    int ood_accepted = 0;
    for (const auto& rec : ood_test) {
      if (select(p, rec.r, rec.s)) {
        ood_conf.push_back(rec.r);
        ++ood_accepted;
      }
    }
    row.ood_coverage = ood_test.empty()
                           ? std::nan("")
                           : static_cast<double>(ood_accepted) /
                                 static_cast<double>(ood_test.size());
    if (!id_conf.empty() && !ood_conf.empty()) {
      auto h_id = confidence_histogram(id_conf, metrics.hist_bins);
      auto h_ood = confidence_histogram(ood_conf, metrics.hist_bins);
      row.p_d = ood_detection_probability(tv_distance(h_id, h_ood));
    } else if (!id_conf.empty() && ood_conf.empty() && !ood_test.empty()) {
      // Every OOD input rejected: rejection itself is a perfect detector.
      row.p_d = 1.0;
    } else {
      row.p_d = std::nan("");
    }
    rows.push_back(row);
  }
  return rows;
}

std::string coverage_sweep_csv(const std::vector<CoverageRow>& rows) {
  std::ostringstream out;
  out.precision(17);
  out << "target_coverage,tau,id_coverage,ood_coverage,accuracy,ece,p_d\n";
  for (const auto& r : rows) {
    out << r.target_coverage << ',' << r.tau << ',' << r.id_coverage << ','
        << r.ood_coverage << ',' << r.accuracy << ',' << r.ece << ',' << r.p_d
        << '\n';
  }
  return out.str();
}

LambdaSelection select_lambda(const ExperimentConfig& config,
                              const DataBundle& data,
                              const std::vector<double>& grid,
                              double max_accuracy_drop) {
  ExperimentConfig base = config;
  base.train.weights.lambda = 0.0;
  TrainedModel baseline = run_training(base, data, nullptr);
  EvalResult base_ev = evaluate(baseline, data.val, config.train.eval_ensemble,
                                config.metrics.bins, config.train.seed + 31);

  LambdaSelection best;
  best.lambda = 0.0;
  best.val_ece = base_ev.ece;
  best.val_accuracy = base_ev.accuracy;
  best.baseline_ece = base_ev.ece;
  best.baseline_accuracy = base_ev.accuracy;
  for (double lambda : grid) {
    ExperimentConfig cell = config;
    cell.train.weights.lambda = lambda;
    TrainedModel model = run_training(cell, data, nullptr);
    EvalResult ev = evaluate(model, data.val, config.train.eval_ensemble,
                             config.metrics.bins, config.train.seed + 31);
    if (base_ev.accuracy - ev.accuracy > max_accuracy_drop) continue;
    if (ev.ece < best.val_ece) {
      best.lambda = lambda;
      best.val_ece = ev.ece;
      best.val_accuracy = ev.accuracy;
    }
  }
  return best;
}

}  // namespace calib
