#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "calib/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::invalid_argument("cannot open file: " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write file: " + path.string());
  }
  out << content;
}

struct Cli {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool dry_run = false;
};

calib::ExperimentConfig load_config(const Cli& cli) {
  calib::ExperimentConfig cfg =
      calib::config_from_json(read_file(cli.config_path));
  if (cli.seed) {
    cfg.data.seed = *cli.seed;
    cfg.train.seed = *cli.seed;
    cfg.selector.seed = *cli.seed;
    cfg.seeds = {*cli.seed};
  }
  if (cli.out) cfg.out_dir = *cli.out;
  return cfg;
}

json report_header(const calib::ExperimentConfig& cfg) {
  json j;
  j["version"] = calib::kVersion;
  j["seed"] = cfg.train.seed;
  j["config"] = json::parse(calib::resolved_config_json(cfg));
  return j;
}

calib::TrainedModel load_or_train(const calib::ExperimentConfig& cfg,
                                  const calib::DataBundle& data) {
  if (!cfg.checkpoint.empty()) {
    std::string text = read_file(cfg.checkpoint);
    calib::TrainedModel m;
    m.method = calib::parse_method(cfg.train.method);
    if (calib::is_variational_checkpoint(text)) {
      m.variational = calib::variational_from_json(text);
      m.arch = m.variational->arch;
      m.method.bayesian = true;
    } else {
      m.frequentist = calib::mlp_from_json(text);
      m.arch = m.frequentist->arch;
      m.method.bayesian = false;
    }
    if (!(m.arch == cfg.arch)) {
      throw std::invalid_argument(
          "checkpoint architecture does not match the configured model");
    }
    return m;
  }
  return calib::run_training(cfg, data, nullptr);
}

json breakdown_json(const calib::LossBreakdown& b) {
  return {{"ce", b.ce},     {"kl", b.kl},       {"calib", b.calib},
          {"ocm", b.ocm},   {"total", b.total}, {"beta", b.weights.beta},
          {"lambda", b.weights.lambda},         {"gamma", b.weights.gamma}};
}

int cmd_train(const Cli& cli) {
  calib::ExperimentConfig cfg = load_config(cli);
  if (cli.dry_run) {
    std::cout << "config ok\n";
    return 0;
  }
  calib::DataBundle data = calib::build_data(cfg.data);
  calib::TrainReport report;
  calib::TrainedModel model = calib::run_training(cfg, data, &report);

  json j = report_header(cfg);
  j["method"] = calib::method_id(model.method);
  j["param_count"] = model.arch.param_count();
  j["final_val_accuracy"] = report.final_val_accuracy;
  j["final_val_ece"] = report.final_val_ece;
  json epochs = json::array();
  for (const auto& e : report.epochs) {
    epochs.push_back({{"loss", breakdown_json(e.loss)},
                      {"val_accuracy", e.val_accuracy},
                      {"val_ece", e.val_ece}});
  }
  j["epochs"] = epochs;

  fs::path out(cfg.out_dir);
  write_file(out / "checkpoint.json", model.checkpoint_json());
  write_file(out / "train_report.json", j.dump(2));
  std::cout << "trained " << calib::method_id(model.method)
            << ": val accuracy " << report.final_val_accuracy << ", val ECE "
            << report.final_val_ece << "\n";
  return 0;
}

int cmd_eval(const Cli& cli) {
  calib::ExperimentConfig cfg = load_config(cli);
  if (cli.dry_run) {
    std::cout << "config ok\n";
    return 0;
  }
  calib::DataBundle data = calib::build_data(cfg.data);
  calib::TrainedModel model = load_or_train(cfg, data);
  calib::EvalResult ev =
      calib::evaluate(model, data.test, cfg.metrics.ensemble, cfg.metrics.bins,
                      cfg.train.seed + 977);
  calib::ReliabilityDiagram diagram = calib::reliability_diagram(
      ev.records, cfg.metrics.bins, cfg.metrics.min_count);
  calib::KernelSpec kernel{cfg.train.kernel_bandwidth};

  json j = report_header(cfg);
  j["accuracy"] = ev.accuracy;
  j["ece"] = ev.ece;
  j["mmce"] = calib::mmce(ev.records, kernel);
  j["weighted_mmce"] = calib::weighted_mmce(ev.records, kernel);
  j["bins"] = cfg.metrics.bins;
  j["ensemble"] = cfg.metrics.ensemble;

  fs::path out(cfg.out_dir);
  write_file(out / "eval_report.json", j.dump(2));
  write_file(out / "reliability.csv", calib::to_csv(diagram));
  std::cout << "test accuracy " << ev.accuracy << ", ECE " << ev.ece << "\n";
  return 0;
}

int cmd_ood_eval(const Cli& cli) {
  calib::ExperimentConfig cfg = load_config(cli);
  if (cli.dry_run) {
    std::cout << "config ok\n";
    return 0;
  }
  calib::DataBundle data = calib::build_data(cfg.data);
  if (data.ood_test.size() == 0) {
    throw std::invalid_argument("ood-eval: empty OOD test set");
  }
  calib::TrainedModel model = load_or_train(cfg, data);
  std::vector<double> id_conf = calib::model_confidences(
      model, data.test.x, cfg.metrics.ensemble, cfg.train.seed + 977);
  std::vector<double> ood_conf = calib::model_confidences(
      model, data.ood_test.x, cfg.metrics.ensemble, cfg.train.seed + 977);
  auto h_id = calib::confidence_histogram(id_conf, cfg.metrics.hist_bins);
  auto h_ood = calib::confidence_histogram(ood_conf, cfg.metrics.hist_bins);
  double tv = calib::tv_distance(h_id, h_ood);

  json j = report_header(cfg);
  j["tv"] = tv;
  j["p_d"] = calib::ood_detection_probability(tv);
  j["hist_bins"] = cfg.metrics.hist_bins;
  j["ood_mode"] = cfg.data.ood_mode;

  fs::path out(cfg.out_dir);
  write_file(out / "ood_report.json", j.dump(2));
  write_file(out / "ood_histogram.csv", calib::histogram_pair_csv(h_id, h_ood));
  std::cout << "TV " << tv << ", p_d " << calib::ood_detection_probability(tv)
            << "\n";
  return 0;
}

int cmd_selector(const Cli& cli) {
  calib::ExperimentConfig cfg = load_config(cli);
  if (cli.dry_run) {
    std::cout << "config ok\n";
    return 0;
  }
  calib::DataBundle data = calib::build_data(cfg.data);
  calib::TrainedModel model = load_or_train(cfg, data);
  calib::OutlierModels outliers = calib::fit_outliers_on_val(
      model, data.val, cfg.outlier, cfg.train.seed + 53);
  std::vector<calib::SelectorRecord> val_records =
      calib::build_selector_records(model, outliers, data.val,
                                    cfg.metrics.ensemble,
                                    cfg.train.seed + 977);
  calib::SelectorParams selector =
      calib::train_selector(cfg.selector, val_records);
  std::vector<double> val_g;
  for (const auto& rec : val_records) {
    val_g.push_back(calib::soft_select(selector, rec.r, rec.s));
  }
  selector.tau =
      calib::calibrate_threshold(selector, val_g, cfg.selector.coverage);
  calib::KernelSpec kernel{cfg.selector.kernel_bandwidth};
  calib::SelectiveMetrics val_metrics =
      calib::selective_eval(selector, val_records, cfg.metrics.bins, kernel);

  json j = report_header(cfg);
  j["tau"] = selector.tau;
  j["target_coverage"] = cfg.selector.coverage;
  j["val_coverage"] = val_metrics.coverage;
  j["val_selective_accuracy"] = val_metrics.accuracy;
  j["val_selective_ece"] = val_metrics.ece;
  // The training objective is the unnormalized soft form; evaluation uses
  // the normalized hard form. Both are reported.
  j["val_soft_selective_mmce"] =
      calib::soft_selective_mmce(selector, val_records, kernel);
  j["val_selective_mmce"] = val_metrics.selective_mmce;

  fs::path out(cfg.out_dir);
  write_file(out / "selector.json", calib::to_json(selector));
  write_file(out / "outlier_models.json", calib::to_json(outliers));
  write_file(out / "selector_report.json", j.dump(2));
  std::cout << "selector trained: tau " << selector.tau << ", val coverage "
            << val_metrics.coverage << "\n";
  return 0;
}

int cmd_coverage_sweep(const Cli& cli) {
  calib::ExperimentConfig cfg = load_config(cli);
  if (cli.dry_run) {
    std::cout << "config ok\n";
    return 0;
  }
  calib::DataBundle data = calib::build_data(cfg.data);
  calib::TrainedModel model = load_or_train(cfg, data);
  calib::OutlierModels outliers = calib::fit_outliers_on_val(
      model, data.val, cfg.outlier, cfg.train.seed + 53);
  std::vector<calib::SelectorRecord> val_records =
      calib::build_selector_records(model, outliers, data.val,
                                    cfg.metrics.ensemble,
                                    cfg.train.seed + 977);
  calib::SelectorParams selector;
  if (!cfg.selector_checkpoint.empty()) {
    selector = calib::selector_from_json(read_file(cfg.selector_checkpoint));
  } else {
    selector = calib::train_selector(cfg.selector, val_records);
  }
  std::vector<double> val_g;
  for (const auto& rec : val_records) {
    val_g.push_back(calib::soft_select(selector, rec.r, rec.s));
  }
  std::vector<calib::SelectorRecord> id_records =
      calib::build_selector_records(model, outliers, data.test,
                                    cfg.metrics.ensemble,
                                    cfg.train.seed + 977);
  std::vector<calib::SelectorRecord> ood_records =
      calib::build_selector_records(model, outliers, data.ood_test,
                                    cfg.metrics.ensemble,
                                    cfg.train.seed + 977);
  calib::KernelSpec kernel{cfg.selector.kernel_bandwidth};
  std::vector<calib::CoverageRow> rows =
      calib::coverage_sweep(selector, val_g, id_records, ood_records,
                            cfg.coverage_grid, cfg.metrics, kernel);

  json j = report_header(cfg);
  j["rows"] = rows.size();

  fs::path out(cfg.out_dir);
  write_file(out / "coverage_sweep.csv", calib::coverage_sweep_csv(rows));
  write_file(out / "coverage_report.json", j.dump(2));
  std::cout << "coverage sweep: " << rows.size() << " rows\n";
  return 0;
}

int cmd_sweep(const Cli& cli) {
  calib::ExperimentConfig cfg = load_config(cli);
  if (cli.dry_run) {
    std::cout << "config ok\n";
    return 0;
  }

  struct Cell {
    std::string method;
    double lambda;
    double gamma;
  };
  std::vector<Cell> cells;
  for (const std::string& id : cfg.sweep_methods) {
    calib::Method m = calib::parse_method(id);
    std::vector<double> lambdas =
        m.calibrated ? cfg.lambda_grid : std::vector<double>{0.0};
    std::vector<double> gammas =
        m.ocm ? cfg.gamma_grid : std::vector<double>{0.0};
    for (double l : lambdas) {
      for (double g : gammas) cells.push_back({id, l, g});
    }
  }

  std::ostringstream csv;
  csv.precision(17);
  csv << "method,lambda,gamma,seeds,accuracy_mean,accuracy_std,ece_mean,"
         "ece_std,p_d_mean,p_d_std\n";
  json failures = json::array();
  for (const Cell& cell : cells) {
    std::vector<double> acc, ece_v, pd;
    for (std::uint64_t seed : cfg.seeds) {
      try {
        calib::ExperimentConfig run = cfg;
        run.train.method = cell.method;
        run.train.weights.lambda = cell.lambda;
        run.train.weights.gamma = cell.gamma;
        run.data.seed = seed;
        run.train.seed = seed;
        calib::DataBundle data = calib::build_data(run.data);
        calib::TrainedModel model = calib::run_training(run, data, nullptr);
        calib::EvalResult ev =
            calib::evaluate(model, data.test, cfg.metrics.ensemble,
                            cfg.metrics.bins, seed + 977);
        std::vector<double> id_conf = calib::model_confidences(
            model, data.test.x, cfg.metrics.ensemble, seed + 977);
        std::vector<double> ood_conf = calib::model_confidences(
            model, data.ood_test.x, cfg.metrics.ensemble, seed + 977);
        double tv = calib::tv_distance(
            calib::confidence_histogram(id_conf, cfg.metrics.hist_bins),
            calib::confidence_histogram(ood_conf, cfg.metrics.hist_bins));
        acc.push_back(ev.accuracy);
        ece_v.push_back(ev.ece);
        pd.push_back(calib::ood_detection_probability(tv));
      } catch (const std::exception& e) {
        failures.push_back({{"method", cell.method},
                            {"lambda", cell.lambda},
                            {"gamma", cell.gamma},
                            {"seed", seed},
                            {"error", e.what()}});
      }
    }
    auto mean_std = [](const std::vector<double>& v) {
      if (v.empty()) return std::pair<double, double>{std::nan(""), std::nan("")};
      double m = 0.0;
      for (double x : v) m += x;
      m /= static_cast<double>(v.size());
      double s2 = 0.0;
      for (double x : v) s2 += (x - m) * (x - m);
      return std::pair<double, double>{
          m, std::sqrt(s2 / static_cast<double>(v.size()))};
    };
    auto [am, as] = mean_std(acc);
    auto [em, es] = mean_std(ece_v);
    auto [pm, ps] = mean_std(pd);
    csv << cell.method << ',' << cell.lambda << ',' << cell.gamma << ','
        << acc.size() << ',' << am << ',' << as << ',' << em << ',' << es
        << ',' << pm << ',' << ps << '\n';
  }

  json j = report_header(cfg);
  j["cells"] = cells.size();
  j["failures"] = failures;

  fs::path out(cfg.out_dir);
  write_file(out / "sweep.csv", csv.str());
  write_file(out / "sweep_report.json", j.dump(2));
  std::cout << "sweep: " << cells.size() << " cells, " << failures.size()
            << " failed runs\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"calibrate-lab: calibration-regularized Bayesian learning on "
               "synthetic tasks"};
  app.require_subcommand(1);

  Cli cli;
  std::string command;
  for (const char* name :
       {"train", "eval", "ood-eval", "selector", "coverage-sweep", "sweep"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", cli.config_path, "JSON config file")
        ->required();
    sub->add_option("--seed", cli.seed, "Override every configured seed");
    sub->add_option("--out", cli.out, "Override the output directory");
    sub->add_flag("--dry-run", cli.dry_run, "Validate the config and exit");
    sub->callback([&command, name] { command = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (command == "train") return cmd_train(cli);
    if (command == "eval") return cmd_eval(cli);
    if (command == "ood-eval") return cmd_ood_eval(cli);
    if (command == "selector") return cmd_selector(cli);
    if (command == "coverage-sweep") return cmd_coverage_sweep(cli);
    if (command == "sweep") return cmd_sweep(cli);
    std::cerr << "unknown command\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return 2;
  }
}
