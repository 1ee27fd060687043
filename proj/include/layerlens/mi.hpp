#pragma once

#include <cstdint>
#include <vector>

#include "layerlens/common.hpp"
#include "layerlens/core.hpp"

namespace layerlens {

struct MiEstimatorConfig {
  int ensemble_size = 15;
  // Empty -> geometric grid of ensemble_size bandwidths from 0.25 to 4.0.
  std::vector<double> bandwidth_set;
  int projection_dim = 20;
  double hash_bucket_factor = 1.0;
  double gamma = 1.0;
  std::uint64_t seed = 0;
};

struct MiEstimate {
  double mutual_information_bits = 0.0;
  double entropy_bits = 0.0;
  double uncertainty_coefficient = 0.0;
};

// Plug-in Shannon entropy of the empirical label distribution, bits.
double entropy(const Eigen::VectorXi& labels, int k);

// Exact plug-in MI over the empirical joint of (row tuple, label), bits.
// Rows must come from a small product space (<= 10^4 distinct tuples).
double plugin_mi(const Eigen::MatrixXi& x_discrete,
                 const Eigen::VectorXi& labels);

std::vector<double> geometric_bandwidths(double lo, double hi, int t);

MiEstimate estimate_mi(const Matrix& x, const Eigen::VectorXi& labels, int k,
                       const MiEstimatorConfig& cfg);
MiEstimate estimate_mi(const LayerSlab& slab, const Eigen::VectorXi& labels,
                       int k, const MiEstimatorConfig& cfg);

}  // namespace layerlens
