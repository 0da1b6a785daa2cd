#include "calib/mlp.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace calib {

int MlpArch::fan_in(int l) const {
  return l == 0 ? input_dim : hidden[l - 1];
}

int MlpArch::fan_out(int l) const {
  return l == static_cast<int>(hidden.size()) ? num_classes : hidden[l];
}

int MlpArch::param_count() const {
  int n = 0;
  for (int l = 0; l < num_layers(); ++l) n += (fan_in(l) + 1) * fan_out(l);
  return n;
}

int MlpArch::layer_offset(int l) const {
  int off = 0;
  for (int k = 0; k < l; ++k) off += (fan_in(k) + 1) * fan_out(k);
  return off;
}

namespace {

// Plain forward returning logits; optionally captures the last hidden
// activation.
Vec forward_logits(const MlpParams& params, const Vec& x, Vec* last_hidden) {
  const MlpArch& a = params.arch;
  if (x.size() != a.input_dim) {
    throw std::invalid_argument("predict: input dim " +
                                std::to_string(x.size()) + " != " +
                                std::to_string(a.input_dim));
  }
  Vec h = x;
  for (int l = 0; l < a.num_layers(); ++l) {
    int fi = a.fan_in(l), fo = a.fan_out(l);
    int off = a.layer_offset(l);
    Eigen::Map<const Mat> w(params.theta.data() + off, fi, fo);
    Eigen::Map<const Vec> b(params.theta.data() + off + fi * fo, fo);
    Vec z = w.transpose() * h + b;
    if (l + 1 < a.num_layers()) {
      h = z.cwiseMax(0.0);
    } else {
      if (last_hidden) *last_hidden = h;
      return z;
    }
  }
  return h;  // unreachable
}

Vec softmax(const Vec& z) {
  Vec p = (z.array() - z.maxCoeff()).exp();
  return p / p.sum();
}

}  // namespace

Vec predict(const MlpParams& params, const Vec& x) {
  return softmax(forward_logits(params, x, nullptr));
}

Vec logits(const MlpParams& params, const Vec& x) {
  return forward_logits(params, x, nullptr);
}

Vec feature(const MlpParams& params, const Vec& x) {
  Vec h;
  forward_logits(params, x, &h);
  return h;
}

HardDecision hard_decision(const Vec& prob) {
  if (prob.size() == 0) {
    throw std::invalid_argument("hard_decision: empty probability vector");
  }
  int best = 0;
  for (int i = 1; i < prob.size(); ++i) {
    if (prob(i) > prob(best)) best = i;
  }
  return {best, prob(best)};
}

MlpParams sample_theta(const VariationalParams& phi, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vec theta(phi.mu.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    theta(i) = phi.mu(i) + std::exp(phi.rho(i) / 2.0) * gauss(rng);
  }
  return {phi.arch, std::move(theta)};
}

Vec ensemble_predict(const VariationalParams& phi, const Vec& x,
                     int ensemble_size, Rng& rng) {
  if (ensemble_size < 1) {
    throw std::invalid_argument("ensemble_predict: ensemble_size must be >= 1");
  }
  Vec acc = Vec::Zero(phi.arch.num_classes);
  for (int s = 0; s < ensemble_size; ++s) {
    acc += predict(sample_theta(phi, rng), x);
  }
  return acc / static_cast<double>(ensemble_size);
}

MlpParams init_mlp(const MlpArch& arch, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vec theta = Vec::Zero(arch.param_count());
  for (int l = 0; l < arch.num_layers(); ++l) {
    int fi = arch.fan_in(l), fo = arch.fan_out(l);
    int off = arch.layer_offset(l);
    double sd = std::sqrt(2.0 / fi);
    for (int j = 0; j < fi * fo; ++j) theta(off + j) = sd * gauss(rng);
    // biases stay zero
  }
  return {arch, std::move(theta)};
}

VariationalParams init_variational(const MlpArch& arch, Rng& rng) {
  MlpParams m = init_mlp(arch, rng);
  const double init_std = 0.05;
  Vec rho = Vec::Constant(arch.param_count(), 2.0 * std::log(init_std));
  return {arch, std::move(m.theta), std::move(rho)};
}

MlpForward mlp_forward(Tape& tape, const MlpArch& arch, Var theta,
                       const Mat& x) {
  if (x.cols() != arch.input_dim) {
    throw std::invalid_argument("mlp_forward: input dim mismatch");
  }
  Var h = tape.constant(x);
  Var last_hidden = h;
  for (int l = 0; l < arch.num_layers(); ++l) {
    int fi = arch.fan_in(l), fo = arch.fan_out(l);
    int off = arch.layer_offset(l);
    Var w = reshape(slice_rows(theta, off, fi * fo), fi, fo);
    Var b = reshape(slice_rows(theta, off + fi * fo, fo), 1, fo);
    Var z = add_rowvec(matmul(h, w), b);
    if (l + 1 < arch.num_layers()) {
      h = relu(z);
    } else {
      return {z, last_hidden};
    }
    last_hidden = h;
  }
  return {h, last_hidden};  // unreachable
}

Var reparameterize(Tape& tape, Var mu, Var rho, const Vec& eps) {
  Var std_dev = exp(0.5 * rho);
  Var noise = tape.constant(eps);
  return mu + std_dev * noise;
}

namespace {

nlohmann::json arch_to_json(const MlpArch& a) {
  return {{"input_dim", a.input_dim},
          {"hidden", a.hidden},
          {"num_classes", a.num_classes}};
}

MlpArch arch_from_json(const nlohmann::json& j) {
  MlpArch a;
  a.input_dim = j.at("input_dim").get<int>();
  a.hidden = j.at("hidden").get<std::vector<int>>();
  a.num_classes = j.at("num_classes").get<int>();
  return a;
}

std::vector<double> to_std(const Vec& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Vec from_std(const std::vector<double>& v) {
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

std::string to_json(const MlpParams& params) {
  nlohmann::json j;
  j["arch"] = arch_to_json(params.arch);
  j["weights"] = to_std(params.theta);
  return j.dump(2);
}

std::string to_json(const VariationalParams& phi) {
  nlohmann::json j;
  j["arch"] = arch_to_json(phi.arch);
  j["mu"] = to_std(phi.mu);
  j["rho"] = to_std(phi.rho);
  return j.dump(2);
}

MlpParams mlp_from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  MlpParams p;
  p.arch = arch_from_json(j.at("arch"));
  p.theta = from_std(j.at("weights").get<std::vector<double>>());
  if (p.theta.size() != p.arch.param_count()) {
    throw std::invalid_argument("checkpoint: weight count does not match arch");
  }
  return p;
}

VariationalParams variational_from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  VariationalParams p;
  p.arch = arch_from_json(j.at("arch"));
  p.mu = from_std(j.at("mu").get<std::vector<double>>());
  p.rho = from_std(j.at("rho").get<std::vector<double>>());
  if (p.mu.size() != p.arch.param_count() || p.rho.size() != p.mu.size()) {
    throw std::invalid_argument("checkpoint: phi size does not match arch");
  }
  return p;
}

bool is_variational_checkpoint(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  return j.contains("mu");
}

}  // namespace calib
