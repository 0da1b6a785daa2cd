#include "calib/metrics.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "calib/mlp.hpp"

namespace calib {

std::vector<ConfidenceRecord> score_records(
    const std::vector<std::pair<Vec, int>>& predictions) {
  std::vector<ConfidenceRecord> records;
  records.reserve(predictions.size());
  for (const auto& [prob, label] : predictions) {
    if (label < 0 || label >= prob.size()) {
      throw std::invalid_argument("score_records: label " +
                                  std::to_string(label) + " out of range");
    }
    HardDecision d = hard_decision(prob);
    records.push_back({d.confidence, d.label == label ? 1 : 0});
  }
  return records;
}

int bin_index(double r, int bins) {
  // Right-closed intervals ((m-1)/M, m/M]: confidence exactly at a
  // boundary m/M lands in bin m.
  int m = static_cast<int>(std::ceil(r * bins)) - 1;
  if (m < 0) m = 0;
  if (m >= bins) m = bins - 1;
  return m;
}

double ece(const std::vector<ConfidenceRecord>& records, int bins) {
  if (records.empty()) throw std::invalid_argument("ece: no records");
  if (bins < 1) throw std::invalid_argument("ece: bins must be >= 1");
  std::vector<int> count(bins, 0);
  std::vector<double> conf(bins, 0.0), acc(bins, 0.0);
  for (const auto& rec : records) {
    int m = bin_index(rec.r, bins);
    count[m] += 1;
    conf[m] += rec.r;
    acc[m] += rec.c;
  }
  double total = 0.0;
  double n = static_cast<double>(records.size());
  for (int m = 0; m < bins; ++m) {
    if (count[m] == 0) continue;
    total += (count[m] / n) * std::abs(acc[m] / count[m] - conf[m] / count[m]);
  }
  return total;
}

ReliabilityDiagram reliability_diagram(
    const std::vector<ConfidenceRecord>& records, int bins,
    int min_count_for_display) {
  if (bins < 1) throw std::invalid_argument("reliability_diagram: bins < 1");
  ReliabilityDiagram d;
  d.bins = bins;
  std::vector<int> count(bins, 0);
  std::vector<double> conf(bins, 0.0), acc(bins, 0.0);
  for (const auto& rec : records) {
    int m = bin_index(rec.r, bins);
    count[m] += 1;
    conf[m] += rec.r;
    acc[m] += rec.c;
  }
  for (int m = 0; m < bins; ++m) {
    ReliabilityBin b;
    b.lo = static_cast<double>(m) / bins;
    b.hi = static_cast<double>(m + 1) / bins;
    b.count = count[m];
    b.conf = count[m] ? conf[m] / count[m] : 0.0;
    b.acc = count[m] ? acc[m] / count[m] : 0.0;
    b.displayed = count[m] >= min_count_for_display;
    d.rows.push_back(b);
  }
  return d;
}

std::string to_csv(const ReliabilityDiagram& diagram) {
  std::ostringstream out;
  out.precision(17);
  out << "bin_lo,bin_hi,count,conf,acc,displayed\n";
  for (const auto& b : diagram.rows) {
    out << b.lo << ',' << b.hi << ',' << b.count << ',' << b.conf << ','
        << b.acc << ',' << (b.displayed ? 1 : 0) << '\n';
  }
  return out.str();
}

namespace {

double laplacian(double ri, double rj, double bw) {
  return std::exp(-std::abs(ri - rj) / bw);
}

}  // namespace

double mmce(const std::vector<ConfidenceRecord>& records,
            const KernelSpec& kernel) {
  if (records.empty()) throw std::invalid_argument("mmce: no records");
  const std::size_t n = records.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      s += (records[i].c - records[i].r) * (records[j].c - records[j].r) *
           laplacian(records[i].r, records[j].r, kernel.bandwidth);
    }
  }
  s /= static_cast<double>(n) * static_cast<double>(n);
  return std::sqrt(std::max(s, 0.0));
}

double weighted_mmce(const std::vector<ConfidenceRecord>& records,
                     const KernelSpec& kernel) {
  if (records.empty()) throw std::invalid_argument("weighted_mmce: no records");
  const std::size_t n = records.size();
  std::size_t nc = 0;
  for (const auto& rec : records) nc += rec.c;
  if (nc == 0 || nc == n) return mmce(records, kernel);
  double t1 = 0.0, t2 = 0.0, t3 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double k = laplacian(records[i].r, records[j].r, kernel.bandwidth);
      if (records[i].c == 0 && records[j].c == 0) {
        t1 += records[i].r * records[j].r * k;
      } else if (records[i].c == 1 && records[j].c == 1) {
        t2 += (1.0 - records[i].r) * (1.0 - records[j].r) * k;
      } else if (records[i].c == 1 && records[j].c == 0) {
        t3 += (1.0 - records[i].r) * records[j].r * k;
      }
    }
  }
  double ni = static_cast<double>(n - nc);
  double s = t1 / (ni * ni) + t2 / (static_cast<double>(nc) * nc) -
             2.0 * t3 / (ni * nc);
  return std::sqrt(std::max(s, 0.0));
}

namespace {

// Pairwise kernel matrix K(i,j) = exp(-|r_i - r_j| / bw), differentiable
// through r.
Var kernel_matrix(Tape& tape, Var r, double bw) {
  const Eigen::Index n = tape.value(r).rows();
  Var ones = tape.constant(Mat::Ones(n, 1));
  Var ri = matmul(r, transpose(ones));
  Var rj = matmul(ones, transpose(r));
  return exp((-1.0 / bw) * abs(ri - rj));
}

}  // namespace

Var mmce_node(Tape& tape, Var r, const Vec& c, const KernelSpec& kernel) {
  const Eigen::Index n = tape.value(r).rows();
  if (n == 0) throw std::invalid_argument("mmce_node: no records");
  Var d = tape.constant(c) - r;
  Var k = kernel_matrix(tape, r, kernel.bandwidth);
  Var s = (1.0 / static_cast<double>(n * n)) *
          sum(matmul(d, transpose(d)) * k);
  return sqrt(clamp_min(s, 0.0));
}

Var weighted_mmce_node(Tape& tape, Var r, const Vec& c,
                       const KernelSpec& kernel) {
  const Eigen::Index n = tape.value(r).rows();
  if (n == 0) throw std::invalid_argument("weighted_mmce_node: no records");
  double nc = c.sum();
  if (nc == 0.0 || nc == static_cast<double>(n)) {
    return mmce_node(tape, r, c, kernel);
  }
  double ni = static_cast<double>(n) - nc;
  Var cvar = tape.constant(c);
  Var u = r * (1.0 - cvar);          // incorrect examples carry r
  Var v = (1.0 - r) * cvar;          // correct examples carry 1 - r
  Var k = kernel_matrix(tape, r, kernel.bandwidth);
  Var t1 = matmul(transpose(u), matmul(k, u));
  Var t2 = matmul(transpose(v), matmul(k, v));
  Var t3 = matmul(transpose(v), matmul(k, u));
  Var s = (1.0 / (ni * ni)) * t1 + (1.0 / (nc * nc)) * t2 +
          (-2.0 / (ni * nc)) * t3;
  return sqrt(clamp_min(s, 0.0));
}

}  // namespace calib
