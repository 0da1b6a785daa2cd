#pragma once

#include <string>
#include <vector>

#include "calib/tape.hpp"

namespace calib {

/// Confidence of the hard decision plus its correctness bit.
struct ConfidenceRecord {
  double r;  // in (0, 1]
  int c;     // {0, 1}
};

/// Laplacian kernel exp(-|r_i - r_j| / bandwidth).
struct KernelSpec {
  double bandwidth = 0.4;
};

struct ReliabilityBin {
  double lo, hi;
  int count;
  double conf;
  double acc;
  bool displayed;
};

struct ReliabilityDiagram {
  int bins;
  std::vector<ReliabilityBin> rows;
};

/// Builds (r, c) records from per-example probabilities and true labels.
std::vector<ConfidenceRecord> score_records(
    const std::vector<std::pair<Vec, int>>& predictions);

/// Bin index in [0, M) for a confidence in (0, 1]; right-closed bins
/// ((m-1)/M, m/M].
int bin_index(double r, int bins);

double ece(const std::vector<ConfidenceRecord>& records, int bins);

ReliabilityDiagram reliability_diagram(
    const std::vector<ConfidenceRecord>& records, int bins,
    int min_count_for_display);

/// CSV with columns bin_lo, bin_hi, count, conf, acc, displayed.
std::string to_csv(const ReliabilityDiagram& diagram);

/// sqrt of (1/N^2) sum_ij (c_i - r_i)(c_j - r_j) k(r_i, r_j), inner sum
/// clamped at 0 before the root.
double mmce(const std::vector<ConfidenceRecord>& records,
            const KernelSpec& kernel);

/// Three-term weighted form; falls back to mmce() when all records share
/// the same correctness bit.
double weighted_mmce(const std::vector<ConfidenceRecord>& records,
                     const KernelSpec& kernel);

// Tape-side forms for training. `r` is the differentiable N x 1 confidence
// column; `c` holds the fixed correctness bits.
Var mmce_node(Tape& tape, Var r, const Vec& c, const KernelSpec& kernel);
Var weighted_mmce_node(Tape& tape, Var r, const Vec& c,
                       const KernelSpec& kernel);

}  // namespace calib
