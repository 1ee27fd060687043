#pragma once

#include <array>
#include <cstdint>

#include "layerlens/common.hpp"
#include "layerlens/core.hpp"
#include "layerlens/logistic.hpp"

namespace layerlens {

struct RegularityScore {
  double r_accuracy = 0.0;  // mean over folds
  std::array<double, 5> fold_accuracies{};
  double description_length_bits = 0.0;  // -sum log2 p(held-out)
};

// Mean 5-fold stratified CV accuracy of logistic regression.
RegularityScore regularity(const Matrix& x, const Eigen::VectorXi& labels,
                           int k, std::uint64_t seed);
RegularityScore regularity(const LayerSlab& slab, const Eigen::VectorXi& labels,
                           int k, std::uint64_t seed);

}  // namespace layerlens
