#pragma once

#include <random>
#include <string>
#include <vector>

#include "calib/tape.hpp"

namespace calib {

using Rng = std::mt19937_64;

/// Fully-connected ReLU architecture: input -> hidden... -> K logits.
struct MlpArch {
  int input_dim = 2;
  std::vector<int> hidden = {64, 64};
  int num_classes = 2;

  /// Total scalar parameter count: sum over layers of (fan_in+1)*fan_out.
  int param_count() const;
  /// Flat offset of layer l's weight block (column-major fan_in x fan_out,
  /// followed by fan_out biases).
  int layer_offset(int l) const;
  int num_layers() const { return static_cast<int>(hidden.size()) + 1; }
  int fan_in(int l) const;
  int fan_out(int l) const;

  bool operator==(const MlpArch&) const = default;
};

/// Deterministic predictor weights, stored flat (layer by layer).
struct MlpParams {
  MlpArch arch;
  Vec theta;
};

/// Diagonal-Gaussian variational posterior over predictor weights,
/// per-weight variance exp(rho_i).
struct VariationalParams {
  MlpArch arch;
  Vec mu;
  Vec rho;
};

struct PriorSpec {
  double variance = 0.001;  // zero mean, shared per-weight variance
};

/// Forward pass to class probabilities (softmax over logits).
Vec predict(const MlpParams& params, const Vec& x);

/// Raw output-layer logits (no softmax).
Vec logits(const MlpParams& params, const Vec& x);

/// Post-activation output of the last hidden layer; equals the input when
/// there are no hidden layers.
Vec feature(const MlpParams& params, const Vec& x);

/// Argmax class (lowest index on ties) and its confidence.
struct HardDecision {
  int label;
  double confidence;
};
HardDecision hard_decision(const Vec& prob);

/// Reparameterized draw: theta_i = mu_i + exp(rho_i/2) * eps_i.
MlpParams sample_theta(const VariationalParams& phi, Rng& rng);

/// Ensemble mean of predict() over ensemble_size posterior draws.
Vec ensemble_predict(const VariationalParams& phi, const Vec& x,
                     int ensemble_size, Rng& rng);

/// He-initialized deterministic weights (biases zero).
MlpParams init_mlp(const MlpArch& arch, Rng& rng);
/// He-initialized mu, rho set for an initial per-weight std of 0.05.
VariationalParams init_variational(const MlpArch& arch, Rng& rng);

// Tape-side forward pass. `theta` is the flat n_p x 1 parameter node,
// `x` an N x d input batch; produces N x K logits plus the last hidden
// activations for feature extraction.
struct MlpForward {
  Var logits;
  Var last_hidden;
};
MlpForward mlp_forward(Tape& tape, const MlpArch& arch, Var theta,
                       const Mat& x);

/// theta = mu + exp(rho/2) .* eps on the tape.
Var reparameterize(Tape& tape, Var mu, Var rho, const Vec& eps);

// Checkpoint JSON: {"arch": {...}, "weights": [...]} or
// {"arch": {...}, "mu": [...], "rho": [...]}.
std::string to_json(const MlpParams& params);
std::string to_json(const VariationalParams& phi);
MlpParams mlp_from_json(const std::string& text);
VariationalParams variational_from_json(const std::string& text);
bool is_variational_checkpoint(const std::string& text);

}  // namespace calib
