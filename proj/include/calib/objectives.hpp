#pragma once

#include <optional>
#include <string>

#include "calib/data.hpp"
#include "calib/metrics.hpp"
#include "calib/mlp.hpp"

namespace calib {

/// Training method family: deterministic or variational predictor, with or
/// without the calibration regularizer and the OCM term.
struct Method {
  bool bayesian = false;
  bool calibrated = false;
  bool ocm = false;
};

/// Parses ids like "fnn", "cfnn_ocm", "cbnn". Throws on unknown ids.
Method parse_method(const std::string& id);
std::string method_id(const Method& m);

struct LossWeights {
  double beta = 0.00035;
  double lambda = 0.0;
  double gamma = 0.0;
};

struct LossBreakdown {
  double ce = 0.0;
  double kl = 0.0;
  double calib = 0.0;
  double ocm = 0.0;
  double total = 0.0;
  LossWeights weights;
};

/// -sum log p(y|x) over the batch; logits come from an existing tape-side
/// forward pass.
Var cross_entropy(Var logits, const std::vector<int>& labels);

/// Closed-form KL between the diagonal Gaussian q(theta|mu,rho) and the
/// zero-mean isotropic prior.
Var kl_diag_gaussian(Var mu, Var rho, const PriorSpec& prior);

/// -sum_i sum_y log p(y | x_u[i]); the uniform output minimizes it.
Var ocm_term(Var logits_u);

/// Differentiable confidence column r (N x 1) and fixed correctness bits c
/// extracted from logits + labels: r_i is the softmax probability of the
/// argmax class.
struct ConfidenceVars {
  Var r;
  Vec c;
};
ConfidenceVars confidence_from_logits(Var logits,
                                      const std::vector<int>& labels);

struct AssembleConfig {
  Method method;
  LossWeights weights;
  KernelSpec kernel{0.4};
  PriorSpec prior;
  int mc_samples = 1;
  bool weighted_calib = false;  // use the three-term weighted MMCE form
};

/// Assembled single-step objective on a fresh tape. For Bayesian methods
/// `leaves` are {mu, rho}; for frequentist ones {theta}. The uncertainty
/// batch is required iff method.ocm is set.
struct AssembledLoss {
  Var total;
  LossBreakdown breakdown;
};
AssembledLoss assemble(Tape& tape, const MlpArch& arch,
                       const std::vector<Var>& leaves,
                       const AssembleConfig& config, const Mat& x,
                       const std::vector<int>& y,
                       const Mat* x_uncertainty, Rng& rng);

}  // namespace calib
