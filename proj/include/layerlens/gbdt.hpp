#pragma once

#include <cstdint>
#include <vector>

#include "layerlens/common.hpp"

namespace layerlens {

struct GbdtConfig {
  double learning_rate = 0.1;
  int max_rounds = 100;
  int max_leaves = 31;
  int histogram_bins = 64;
  int early_stopping_patience = 10;  // rounds without val-loss improvement
};

// min(20, floor(N/10))
int gbdt_min_samples_leaf(Eigen::Index n_train);

struct GbdtNode {
  int feature = -1;       // -1 marks a leaf
  double threshold = 0.0; // go left if x <= threshold
  int left = -1;
  int right = -1;
  double value = 0.0;     // leaf output (learning rate applied)
};

struct GbdtTree {
  std::vector<GbdtNode> nodes;  // nodes[0] is the root
  double predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
};

struct GbdtModel {
  int classes = 2;
  int heads = 1;  // 1 for binary (single logit), k otherwise
  Vector base_score;               // per head
  std::vector<std::vector<GbdtTree>> rounds;  // rounds[r][head]
  int best_round = 0;              // trees kept after early stopping
  Vector feat_mean;
  Vector feat_sd;

  Matrix decision(const Matrix& x) const;  // n x heads raw scores
  Matrix predict_proba(const Matrix& x) const;
  Eigen::VectorXi predict(const Matrix& x) const;
};

GbdtModel fit_gbdt(const Matrix& xtr, const Eigen::VectorXi& ytr,
                   const Matrix& xval, const Eigen::VectorXi& yval, int k,
                   const GbdtConfig& cfg = {});

}  // namespace layerlens
