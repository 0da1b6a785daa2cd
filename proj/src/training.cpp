#include "calib/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace calib {

void SgdMomentum::step(Vec& params, const Vec& grads, double lr,
                       double momentum) {
  if (grads.size() != params.size()) {
    throw std::invalid_argument("sgd: gradient/parameter size mismatch");
  }
  if (velocity.size() != params.size()) velocity = Vec::Zero(params.size());
  velocity = momentum * velocity + grads;
  params -= lr * velocity;
}

void Adam::step(Vec& params, const Vec& grads, double lr, double weight_decay) {
  if (grads.size() != params.size()) {
    throw std::invalid_argument("adam: gradient/parameter size mismatch");
  }
  if (m.size() != params.size()) {
    m = Vec::Zero(params.size());
    v = Vec::Zero(params.size());
  }
  ++t;
  m = beta1 * m + (1.0 - beta1) * grads;
  v = beta2 * v + (1.0 - beta2) * grads.cwiseProduct(grads);
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  Vec m_hat = m / bc1;
  Vec v_hat = v / bc2;
  params -= lr * (m_hat.array() / (v_hat.array().sqrt() + eps)).matrix();
  if (weight_decay > 0.0) params -= lr * weight_decay * params;
}

Vec TrainedModel::predict_prob(const Vec& x, int ensemble, Rng& rng) const {
  if (variational) return ensemble_predict(*variational, x, ensemble, rng);
  return predict(*frequentist, x);
}

Vec TrainedModel::feature_mean(const Vec& x) const {
  if (variational) {
    return feature({variational->arch, variational->mu}, x);
  }
  return feature(*frequentist, x);
}

std::string TrainedModel::checkpoint_json() const {
  if (variational) return to_json(*variational);
  return to_json(*frequentist);
}

EvalResult evaluate(const TrainedModel& model, const Dataset& data,
                    int ensemble, int ece_bins, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::pair<Vec, int>> preds;
  preds.reserve(data.size());
  for (int i = 0; i < data.size(); ++i) {
    preds.emplace_back(model.predict_prob(data.x.row(i).transpose(), ensemble,
                                          rng),
                       data.y[static_cast<std::size_t>(i)]);
  }
  auto records = score_records(preds);
  double acc = 0.0;
  for (const auto& rec : records) acc += rec.c;
  acc /= static_cast<double>(records.size());
  return {acc, ece(records, ece_bins), std::move(records)};
}

namespace {

// Flat trainable vector: theta for frequentist models, [mu; rho] for
// variational ones.
Vec init_flat(const Method& m, const MlpArch& arch, Rng& rng) {
  if (m.bayesian) {
    VariationalParams phi = init_variational(arch, rng);
    Vec flat(2 * arch.param_count());
    flat << phi.mu, phi.rho;
    return flat;
  }
  return init_mlp(arch, rng).theta;
}

Vec flat_from_model(const TrainedModel& model) {
  if (model.variational) {
    Vec flat(2 * model.arch.param_count());
    flat << model.variational->mu, model.variational->rho;
    return flat;
  }
  return model.frequentist->theta;
}

TrainedModel model_from_flat(const Method& m, const MlpArch& arch,
                             const Vec& flat) {
  TrainedModel out;
  out.method = m;
  out.arch = arch;
  int np = arch.param_count();
  if (m.bayesian) {
    out.variational = VariationalParams{arch, flat.head(np), flat.tail(np)};
  } else {
    out.frequentist = MlpParams{arch, flat};
  }
  return out;
}

struct StepResult {
  LossBreakdown breakdown;
  double step_loss;
};

// One SGD step on the assembled objective. Effective term weights are
// rescaled so that dividing the total by the ID batch size yields
// mean-CE + beta*KL/N_train + lambda*calib + gamma*mean-OCM gradients.
StepResult sgd_step(Vec& flat, SgdMomentum& opt, const Method& method,
                    const MlpArch& arch, const TrainConfig& config,
                    const Mat& xb, const std::vector<int>& yb, const Mat* xu,
                    int n_train, double lr, Rng& rng) {
  const int np = arch.param_count();
  const double batch = static_cast<double>(xb.rows());

  Tape tape;
  std::vector<Var> leaves;
  if (method.bayesian) {
    leaves.push_back(tape.leaf(flat.head(np)));
    leaves.push_back(tape.leaf(flat.tail(np)));
  } else {
    leaves.push_back(tape.leaf(flat));
  }

  AssembleConfig ac;
  ac.method = method;
  ac.kernel = KernelSpec{config.kernel_bandwidth};
  ac.prior = PriorSpec{config.prior_variance};
  ac.mc_samples = config.mc_train_samples;
  ac.weighted_calib = config.weighted_calib;
  ac.weights.beta = config.weights.beta * batch / n_train;
  ac.weights.lambda = config.weights.lambda * batch;
  ac.weights.gamma =
      xu ? config.weights.gamma * batch / static_cast<double>(xu->rows()) : 0.0;

  AssembledLoss loss = assemble(tape, arch, leaves, ac, xb, yb, xu, rng);
  Var step_loss = (1.0 / batch) * loss.total;
  tape.backward(step_loss);

  Vec grad(flat.size());
  if (method.bayesian) {
    grad.head(np) = tape.grad(leaves[0]);
    grad.tail(np) = tape.grad(leaves[1]);
  } else {
    grad = tape.grad(leaves[0]);
  }
  double norm = grad.norm();
  if (config.clip_norm > 0.0 && norm > config.clip_norm) {
    grad *= config.clip_norm / norm;
  }
  opt.step(flat, grad, lr, config.momentum);

  StepResult r;
  r.breakdown = loss.breakdown;
  r.step_loss = tape.value(step_loss)(0, 0);
  return r;
}

Mat gather_rows(const Mat& src, const std::vector<int>& idx) {
  Mat out(static_cast<Eigen::Index>(idx.size()), src.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = src.row(idx[i]);
  }
  return out;
}

void check_finite(double loss, const std::string& phase, int epoch, int step) {
  if (!std::isfinite(loss)) {
    throw std::runtime_error("non-finite loss in " + phase + " at epoch " +
                             std::to_string(epoch) + ", step " +
                             std::to_string(step));
  }
}

}  // namespace

TrainedModel train(const TrainConfig& config, const MlpArch& arch,
                   const Dataset& train_set, const Dataset& val_set,
                   const Dataset* uncertainty_set, TrainReport* report,
                   const TrainedModel* pretrained) {
  Method method = parse_method(config.method);
  if (method.ocm && (uncertainty_set == nullptr ||
                     uncertainty_set->size() == 0)) {
    throw std::invalid_argument("train: OCM requires an uncertainty set");
  }

  Rng rng(config.seed);
  Method base_method = method;
  base_method.ocm = false;

  Vec flat;
  if (pretrained) {
    if (pretrained->arch != arch ||
        pretrained->method.bayesian != method.bayesian) {
      throw std::invalid_argument("train: pretrained checkpoint mismatch");
    }
    flat = flat_from_model(*pretrained);
  } else {
    flat = init_flat(method, arch, rng);
  }

  auto record_epoch = [&](const LossBreakdown& mean_loss) {
    if (!report) return;
    EvalResult ev = evaluate(model_from_flat(method, arch, flat), val_set,
                             config.eval_ensemble, 15, config.seed + 9001);
    report->epochs.push_back({mean_loss, ev.accuracy, ev.ece});
    report->final_val_accuracy = ev.accuracy;
    report->final_val_ece = ev.ece;
  };

  // Base training phase (skipped when fine-tuning from a checkpoint).
  if (!pretrained) {
    SgdMomentum opt;
    const int n = train_set.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    double lr = config.lr;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      if (epoch > 0 && config.lr_decay_every > 0 &&
          epoch % config.lr_decay_every == 0) {
        lr /= config.lr_decay_factor;
      }
      std::shuffle(order.begin(), order.end(), rng);
      LossBreakdown acc;
      acc.weights = config.weights;
      int steps = 0;
      for (int begin = 0; begin < n; begin += config.batch_size) {
        int count = std::min(config.batch_size, n - begin);
        std::vector<int> idx(order.begin() + begin,
                             order.begin() + begin + count);
        Mat xb = gather_rows(train_set.x, idx);
        std::vector<int> yb(static_cast<std::size_t>(count));
        for (int i = 0; i < count; ++i) {
          yb[static_cast<std::size_t>(i)] =
              train_set.y[static_cast<std::size_t>(idx[static_cast<std::size_t>(
                  i)])];
        }
        StepResult sr = sgd_step(flat, opt, base_method, arch, config, xb, yb,
                                 nullptr, n, lr, rng);
        check_finite(sr.step_loss, "training", epoch, steps);
        acc.ce += sr.breakdown.ce / count;
        acc.kl += sr.breakdown.kl;
        acc.calib += sr.breakdown.calib;
        acc.total += sr.step_loss;
        ++steps;
      }
      acc.ce /= steps;
      acc.kl /= steps;
      acc.calib /= steps;
      acc.total /= steps;
      record_epoch(acc);
    }
  }

  // OCM fine-tuning phase.
  if (method.ocm) {
    Method ft_method = method;
    ft_method.calibrated = method.calibrated && config.keep_calib_in_finetune;
    SgdMomentum opt;
    const OcmFinetuneConfig& ft = config.ocm_finetune;
    const int n = train_set.size();
    const int per_epoch =
        ft.id_sample_per_epoch > 0 ? std::min(ft.id_sample_per_epoch, n) : n;
    const int steps_per_epoch =
        std::max(1, (per_epoch + ft.id_batch - 1) / ft.id_batch);
    const int total_iters = std::max(1, ft.epochs * steps_per_epoch);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::uniform_int_distribution<int> pick_u(0, uncertainty_set->size() - 1);
    int iter = 0;
    for (int epoch = 0; epoch < ft.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      LossBreakdown acc;
      acc.weights = config.weights;
      int steps = 0;
      for (int begin = 0; begin < per_epoch; begin += ft.id_batch) {
        int count = std::min(ft.id_batch, per_epoch - begin);
        std::vector<int> idx(order.begin() + begin,
                             order.begin() + begin + count);
        Mat xb = gather_rows(train_set.x, idx);
        std::vector<int> yb(static_cast<std::size_t>(count));
        for (int i = 0; i < count; ++i) {
          yb[static_cast<std::size_t>(i)] =
              train_set.y[static_cast<std::size_t>(idx[static_cast<std::size_t>(
                  i)])];
        }
        // OOD minibatch drawn with replacement.
        std::vector<int> uidx(static_cast<std::size_t>(ft.ood_batch));
        for (auto& u : uidx) u = pick_u(rng);
        Mat xu = gather_rows(uncertainty_set->x, uidx);

        // Cosine decay over the fine-tuning iterations.
        double lr = ft.lr * 0.5 *
                    (1.0 + std::cos(std::numbers::pi * iter / total_iters));
        StepResult sr = sgd_step(flat, opt, ft_method, arch, config, xb, yb,
                                 &xu, n, lr, rng);
        check_finite(sr.step_loss, "ocm-finetune", epoch, steps);
        acc.ce += sr.breakdown.ce / count;
        acc.kl += sr.breakdown.kl;
        acc.calib += sr.breakdown.calib;
        acc.ocm += sr.breakdown.ocm / ft.ood_batch;
        acc.total += sr.step_loss;
        ++steps;
        ++iter;
      }
      acc.ce /= steps;
      acc.kl /= steps;
      acc.calib /= steps;
      acc.ocm /= steps;
      acc.total /= steps;
      record_epoch(acc);
    }
  }

  return model_from_flat(method, arch, flat);
}

}  // namespace calib
