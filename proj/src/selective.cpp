#include "calib/selective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "calib/training.hpp"

namespace calib {

namespace {

constexpr double kStdFloor = 1e-8;

Vec standardized_input(const SelectorParams& params, double r,
                       const Eigen::Vector4d& s) {
  if (params.feat_mean.size() != 5 || params.feat_std.size() != 5) {
    throw std::invalid_argument("selector: standardization not fitted");
  }
  Vec in(5);
  in << r, s(0), s(1), s(2), s(3);
  return (in - params.feat_mean).cwiseQuotient(params.feat_std);
}

double laplacian(double ri, double rj, double bw) {
  return std::exp(-std::abs(ri - rj) / bw);
}

// Constant quadratic-form matrix A_ij = (c_i - r_i)(c_j - r_j) k(r_i, r_j)
// for a record batch.
Mat pair_matrix(const std::vector<SelectorRecord>& records, double bw) {
  const int n = static_cast<int>(records.size());
  Mat a(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      a(i, j) = (records[static_cast<std::size_t>(i)].c -
                 records[static_cast<std::size_t>(i)].r) *
                (records[static_cast<std::size_t>(j)].c -
                 records[static_cast<std::size_t>(j)].r) *
                laplacian(records[static_cast<std::size_t>(i)].r,
                          records[static_cast<std::size_t>(j)].r, bw);
    }
  }
  return a;
}

Mat standardized_batch(const SelectorParams& params,
                       const std::vector<SelectorRecord>& records) {
  Mat x(static_cast<Eigen::Index>(records.size()), 5);
  for (std::size_t i = 0; i < records.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) =
        standardized_input(params, records[i].r, records[i].s).transpose();
  }
  return x;
}

}  // namespace

double soft_select(const SelectorParams& params, double r,
                   const Eigen::Vector4d& s) {
  Vec in = standardized_input(params, r, s);
  double z = logits(MlpParams{params.arch, params.weights}, in)(0);
  return 1.0 / (1.0 + std::exp(-z));
}

double soft_selective_mmce(const SelectorParams& params,
                           const std::vector<SelectorRecord>& records,
                           const KernelSpec& kernel) {
  if (records.empty()) {
    throw std::invalid_argument("soft_selective_mmce: no records");
  }
  Mat a = pair_matrix(records, kernel.bandwidth);
  Vec g(static_cast<Eigen::Index>(records.size()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    g(static_cast<Eigen::Index>(i)) =
        soft_select(params, records[i].r, records[i].s);
  }
  return std::sqrt(std::max(g.dot(a * g), 0.0));
}

double selector_loss(const SelectorParams& params,
                     const std::vector<SelectorRecord>& records, double eta,
                     const KernelSpec& kernel) {
  if (eta < 0.0) throw std::invalid_argument("selector_loss: eta must be >= 0");
  double barrier = 0.0;
  for (const auto& rec : records) {
    barrier += std::log(soft_select(params, rec.r, rec.s));
  }
  return soft_selective_mmce(params, records, kernel) - eta * barrier;
}

SelectorParams train_selector(const SelectorConfig& config,
                              const std::vector<SelectorRecord>& records) {
  if (records.empty()) {
    throw std::invalid_argument("train_selector: no validation records");
  }
  SelectorParams params;
  Rng rng(config.seed);
  params.weights = init_mlp(params.arch, rng).theta;

  // Standardization statistics from the validation records.
  Mat raw(static_cast<Eigen::Index>(records.size()), 5);
  for (std::size_t i = 0; i < records.size(); ++i) {
    raw.row(static_cast<Eigen::Index>(i)) << records[i].r, records[i].s(0),
        records[i].s(1), records[i].s(2), records[i].s(3);
  }
  params.feat_mean = raw.colwise().mean();
  params.feat_std = Vec(5);
  for (int j = 0; j < 5; ++j) {
    double var = (raw.col(j).array() - params.feat_mean(j)).square().mean();
    params.feat_std(j) = std::max(std::sqrt(var), kStdFloor);
  }

  const int n = static_cast<int>(records.size());
  const KernelSpec kernel{config.kernel_bandwidth};
  Adam opt;
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  auto batch_step = [&](const std::vector<int>& idx, int epoch, int step) {
    std::vector<SelectorRecord> batch;
    batch.reserve(idx.size());
    for (int i : idx) batch.push_back(records[static_cast<std::size_t>(i)]);
    Mat x = standardized_batch(params, batch);
    Mat a = pair_matrix(batch, kernel.bandwidth);

    Tape tape;
    Var w = tape.leaf(params.weights);
    MlpForward fwd = mlp_forward(tape, params.arch, w, x);
    Var g = sigmoid(fwd.logits);
    Var quad = matmul(transpose(g), matmul(tape.constant(a), g));
    Var loss = sqrt(clamp_min(quad, 0.0)) + (-config.eta) * sum(log(g));
    double lv = tape.value(loss)(0, 0);
    if (!std::isfinite(lv)) {
      throw std::runtime_error("train_selector: non-finite loss at epoch " +
                               std::to_string(epoch) + ", step " +
                               std::to_string(step));
    }
    tape.backward(loss);
    Vec grad = tape.grad(w);
    opt.step(params.weights, grad, config.lr, config.weight_decay);
  };

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.iterations_per_epoch > 0) {
      std::uniform_int_distribution<int> pick(0, n - 1);
      for (int it = 0; it < config.iterations_per_epoch; ++it) {
        std::vector<int> idx(static_cast<std::size_t>(
            std::min(config.batch_size, n)));
        for (auto& i : idx) i = pick(rng);
        batch_step(idx, epoch, it);
      }
    } else {
      std::shuffle(order.begin(), order.end(), rng);
      int step = 0;
      for (int begin = 0; begin < n; begin += config.batch_size) {
        int count = std::min(config.batch_size, n - begin);
        std::vector<int> idx(order.begin() + begin,
                             order.begin() + begin + count);
        batch_step(idx, epoch, step++);
      }
    }
  }
  return params;
}

double calibrate_threshold(const SelectorParams& params,
                           const std::vector<double>& validation_g,
                           double coverage) {
  (void)params;
  if (coverage <= 0.0 || coverage > 1.0) {
    throw std::invalid_argument("calibrate_threshold: coverage must be in (0,1]");
  }
  if (validation_g.empty()) {
    throw std::invalid_argument("calibrate_threshold: no validation scores");
  }
  std::vector<double> sorted = validation_g;
  std::sort(sorted.begin(), sorted.end());
  auto n = sorted.size();
  auto idx = static_cast<std::size_t>(
      std::floor((1.0 - coverage) * static_cast<double>(n)));
  if (idx >= n) idx = n - 1;
  return sorted[idx];
}

int select(const SelectorParams& params, double r, const Eigen::Vector4d& s) {
  return soft_select(params, r, s) >= params.tau ? 1 : 0;
}

SelectiveMetrics selective_eval(const SelectorParams& params,
                                const std::vector<SelectorRecord>& records,
                                int ece_bins, const KernelSpec& kernel) {
  std::vector<ConfidenceRecord> accepted;
  for (const auto& rec : records) {
    if (select(params, rec.r, rec.s)) accepted.push_back({rec.r, rec.c});
  }
  SelectiveMetrics out;
  out.coverage = records.empty()
                     ? 0.0
                     : static_cast<double>(accepted.size()) / records.size();
  if (accepted.empty()) {
    out.accuracy = out.ece = out.selective_mmce = 0.0;
    out.defined = false;
    return out;
  }
  out.defined = true;
  double acc = 0.0;
  for (const auto& rec : accepted) acc += rec.c;
  out.accuracy = acc / static_cast<double>(accepted.size());
  out.ece = ece(accepted, ece_bins);
  out.selective_mmce = mmce(accepted, kernel);  // normalized hard form
  return out;
}

double selective_classification_loss(const SelectorParams& params,
                                     const std::vector<SelectorRecord>& records) {
  double nll = 0.0;
  int count = 0;
  for (const auto& rec : records) {
    if (!select(params, rec.r, rec.s)) continue;
    if (rec.p_true <= 0.0) {
      throw std::domain_error("selective_classification_loss: p(y|x) <= 0");
    }
    nll -= std::log(rec.p_true);
    ++count;
  }
  if (count == 0) {
    throw std::invalid_argument("selective_classification_loss: zero acceptance");
  }
  return nll / count;
}

std::string to_json(const SelectorParams& p) {
  nlohmann::json j;
  j["arch"] = {{"input_dim", p.arch.input_dim},
               {"hidden", p.arch.hidden},
               {"num_classes", p.arch.num_classes}};
  j["weights"] = std::vector<double>(p.weights.data(),
                                     p.weights.data() + p.weights.size());
  j["feat_mean"] = std::vector<double>(p.feat_mean.data(),
                                       p.feat_mean.data() + p.feat_mean.size());
  j["feat_std"] = std::vector<double>(p.feat_std.data(),
                                      p.feat_std.data() + p.feat_std.size());
  j["tau"] = p.tau;
  return j.dump(2);
}

SelectorParams selector_from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  SelectorParams p;
  p.arch.input_dim = j.at("arch").at("input_dim").get<int>();
  p.arch.hidden = j.at("arch").at("hidden").get<std::vector<int>>();
  p.arch.num_classes = j.at("arch").at("num_classes").get<int>();
  auto w = j.at("weights").get<std::vector<double>>();
  p.weights = Eigen::Map<const Vec>(w.data(), static_cast<Eigen::Index>(w.size()));
  auto fm = j.at("feat_mean").get<std::vector<double>>();
  p.feat_mean = Eigen::Map<const Vec>(fm.data(),
                                      static_cast<Eigen::Index>(fm.size()));
  auto fs = j.at("feat_std").get<std::vector<double>>();
  p.feat_std = Eigen::Map<const Vec>(fs.data(),
                                     static_cast<Eigen::Index>(fs.size()));
  p.tau = j.at("tau").get<double>();
  return p;
}

}  // namespace calib
