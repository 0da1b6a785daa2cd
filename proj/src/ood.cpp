#include "calib/ood.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "calib/metrics.hpp"

namespace calib {

ConfidenceHistogram confidence_histogram(const std::vector<double>& confidences,
                                         int bins) {
  if (confidences.empty()) {
    throw std::invalid_argument("confidence_histogram: empty list");
  }
  if (bins < 1) {
    throw std::invalid_argument("confidence_histogram: bins must be >= 1");
  }
  ConfidenceHistogram h;
  h.bins = bins;
  h.mass.assign(bins, 0.0);
  h.sample_count = static_cast<int>(confidences.size());
  for (double r : confidences) h.mass[bin_index(r, bins)] += 1.0;
  for (double& m : h.mass) m /= h.sample_count;
  return h;
}

double tv_distance(const ConfidenceHistogram& h1,
                   const ConfidenceHistogram& h2) {
  if (h1.bins != h2.bins) {
    throw std::invalid_argument("tv_distance: bin edges differ");
  }
  double s = 0.0;
  for (int m = 0; m < h1.bins; ++m) s += std::abs(h1.mass[m] - h2.mass[m]);
  return 0.5 * s;
}

double ood_detection_probability(double tv) {
  if (tv < 0.0 || tv > 1.0) {
    throw std::invalid_argument("ood_detection_probability: tv out of [0,1]");
  }
  return 0.5 * (1.0 + tv);
}

std::string histogram_pair_csv(const ConfidenceHistogram& id,
                               const ConfidenceHistogram& ood) {
  if (id.bins != ood.bins) {
    throw std::invalid_argument("histogram_pair_csv: bin edges differ");
  }
  std::ostringstream out;
  out.precision(17);
  out << "bin_lo,bin_hi,mass_id,mass_ood\n";
  for (int m = 0; m < id.bins; ++m) {
    out << static_cast<double>(m) / id.bins << ','
        << static_cast<double>(m + 1) / id.bins << ',' << id.mass[m] << ','
        << ood.mass[m] << '\n';
  }
  return out.str();
}

}  // namespace calib
