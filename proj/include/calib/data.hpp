#pragma once

#include <string>
#include <vector>

#include "calib/mlp.hpp"

namespace calib {

enum class Split { kTrain, kVal, kTest, kUncertainty, kOodTest };

struct Dataset {
  Mat x;                  // N x d inputs
  std::vector<int> y;     // empty for unlabeled sets
  Split tag = Split::kTrain;

  int size() const { return static_cast<int>(x.rows()); }
  int dim() const { return static_cast<int>(x.cols()); }
  int num_classes() const;
};

/// Synthetic 2-D tasks. Labels balanced within +-1; deterministic per seed.
Dataset make_synthetic(const std::string& task, int n, double noise,
                       std::uint64_t seed);

/// Unlabeled OOD inputs drawn away from the base task's input marginal.
/// Modes: ring (points on a circle of radius `magnitude` around the data
/// centroid), shift (base samples translated by `magnitude`), rotate
/// (base samples rotated by `magnitude` radians about the centroid).
Dataset make_ood(const std::string& base_task, const std::string& mode, int n,
                 double magnitude, std::uint64_t seed);

struct SplitResult {
  Dataset train, val, test;
};

/// Deterministic disjoint split; fractions must sum to 1.
SplitResult split(const Dataset& dataset, const std::array<double, 3>& fractions,
                  std::uint64_t seed);

/// Strict CSV ingestion. Header `x0,...,x{d-1}[,label]` required; every
/// cell must parse as a number. Errors carry the offending row/column.
Dataset load_csv(const std::string& path, bool labeled);

}  // namespace calib
