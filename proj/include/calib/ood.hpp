#pragma once

#include <string>
#include <vector>

#include "calib/tape.hpp"

namespace calib {

/// Normalized equal-width confidence histogram on [0,1], right-closed bins.
struct ConfidenceHistogram {
  int bins;
  std::vector<double> mass;  // sums to 1
  int sample_count;
};

ConfidenceHistogram confidence_histogram(const std::vector<double>& confidences,
                                         int bins);

/// 1/2 sum |h1_m - h2_m| over shared bins.
double tv_distance(const ConfidenceHistogram& h1,
                   const ConfidenceHistogram& h2);

/// Optimal equal-prior OOD detection probability, (1 + TV) / 2.
double ood_detection_probability(double tv);

/// CSV with columns bin_lo, bin_hi, mass_id, mass_ood.
std::string histogram_pair_csv(const ConfidenceHistogram& id,
                               const ConfidenceHistogram& ood);

}  // namespace calib
