#include "calib/objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace calib {

Method parse_method(const std::string& id) {
  Method m;
  std::string base = id;
  if (base.size() > 4 && base.substr(base.size() - 4) == "_ocm") {
    m.ocm = true;
    base = base.substr(0, base.size() - 4);
  }
  if (base == "fnn") {
    m.bayesian = false;
    m.calibrated = false;
  } else if (base == "cfnn") {
    m.bayesian = false;
    m.calibrated = true;
  } else if (base == "bnn") {
    m.bayesian = true;
    m.calibrated = false;
  } else if (base == "cbnn") {
    m.bayesian = true;
    m.calibrated = true;
  } else {
    throw std::invalid_argument("unknown method id '" + id + "'");
  }
  return m;
}

std::string method_id(const Method& m) {
  std::string id = std::string(m.calibrated ? "c" : "") +
                   (m.bayesian ? "bnn" : "fnn");
  if (m.ocm) id += "_ocm";
  return id;
}

Var cross_entropy(Var logits, const std::vector<int>& labels) {
  if (labels.empty()) throw std::invalid_argument("cross_entropy: empty batch");
  Var logp = log_softmax_rows(logits);
  std::vector<std::pair<int, int>> idx;
  idx.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    idx.emplace_back(static_cast<int>(i), labels[i]);
  }
  return -sum(gather(logp, idx));
}

Var kl_diag_gaussian(Var mu, Var rho, const PriorSpec& prior) {
  if (prior.variance <= 0.0) {
    throw std::invalid_argument("kl_diag_gaussian: prior variance must be > 0");
  }
  // sum_i [ log(sigma_p) - rho_i/2 + (exp(rho_i) + mu_i^2) / (2 sigma_p^2)
  //         - 1/2 ]
  const double log_sp = 0.5 * std::log(prior.variance);
  const double inv_2var = 1.0 / (2.0 * prior.variance);
  Var var_q = exp(rho);
  Var quad = inv_2var * (var_q + mu * mu);
  Var per_dim = (quad - 0.5 * rho) + (log_sp - 0.5);
  return sum(per_dim);
}

Var ocm_term(Var logits_u) {
  if (logits_u.tape->value(logits_u).rows() == 0) {
    throw std::invalid_argument("ocm_term: empty uncertainty batch");
  }
  return -sum(log_softmax_rows(logits_u));
}

ConfidenceVars confidence_from_logits(Var logits,
                                      const std::vector<int>& labels) {
  const Mat& z = logits.tape->value(logits);
  const int n = static_cast<int>(z.rows());
  std::vector<std::pair<int, int>> idx;
  idx.reserve(n);
  Vec c(n);
  for (int i = 0; i < n; ++i) {
    int best = 0;
    for (int j = 1; j < z.cols(); ++j) {
      if (z(i, j) > z(i, best)) best = j;
    }
    idx.emplace_back(i, best);
    c(i) = (best == labels[static_cast<std::size_t>(i)]) ? 1.0 : 0.0;
  }
  Var r = exp(gather(log_softmax_rows(logits), idx));
  return {r, std::move(c)};
}

namespace {

Var average(const std::vector<Var>& terms) {
  Var acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = acc + terms[i];
  return (1.0 / static_cast<double>(terms.size())) * acc;
}

}  // namespace

AssembledLoss assemble(Tape& tape, const MlpArch& arch,
                       const std::vector<Var>& leaves,
                       const AssembleConfig& config, const Mat& x,
                       const std::vector<int>& y, const Mat* x_uncertainty,
                       Rng& rng) {
  if (config.method.ocm && (x_uncertainty == nullptr ||
                            x_uncertainty->rows() == 0)) {
    throw std::invalid_argument("assemble: OCM requires an uncertainty batch");
  }
  const int mc = config.method.bayesian ? std::max(1, config.mc_samples) : 1;

  std::vector<Var> ce_terms, calib_terms, ocm_terms;
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int s = 0; s < mc; ++s) {
    Var theta = leaves[0];
    if (config.method.bayesian) {
      Vec eps(arch.param_count());
      for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = gauss(rng);
      theta = reparameterize(tape, leaves[0], leaves[1], eps);
    }
    MlpForward fwd = mlp_forward(tape, arch, theta, x);
    ce_terms.push_back(cross_entropy(fwd.logits, y));
    if (config.method.calibrated) {
      ConfidenceVars conf = confidence_from_logits(fwd.logits, y);
      calib_terms.push_back(
          config.weighted_calib
              ? weighted_mmce_node(tape, conf.r, conf.c, config.kernel)
              : mmce_node(tape, conf.r, conf.c, config.kernel));
    }
    if (config.method.ocm) {
      MlpForward fwd_u = mlp_forward(tape, arch, theta, *x_uncertainty);
      ocm_terms.push_back(ocm_term(fwd_u.logits));
    }
  }

  AssembledLoss out;
  out.breakdown.weights = config.weights;
  Var total = average(ce_terms);
  out.breakdown.ce = tape.value(total)(0, 0);
  if (config.method.bayesian) {
    Var kl = kl_diag_gaussian(leaves[0], leaves[1], config.prior);
    out.breakdown.kl = tape.value(kl)(0, 0);
    total = total + config.weights.beta * kl;
  }
  if (config.method.calibrated) {
    Var calib = average(calib_terms);
    out.breakdown.calib = tape.value(calib)(0, 0);
    total = total + config.weights.lambda * calib;
  }
  if (config.method.ocm) {
    Var ocm = average(ocm_terms);
    out.breakdown.ocm = tape.value(ocm)(0, 0);
    total = total + config.weights.gamma * ocm;
  }
  out.total = total;
  out.breakdown.total = tape.value(total)(0, 0);
  return out;
}

}  // namespace calib
