#pragma once

#include <vector>

#include "layerlens/common.hpp"

namespace layerlens {

// Solves (X^T X + alpha I) w = X^T y.
Vector ridge_solve(const Matrix& x, const Vector& y, double alpha);

inline const std::vector<double>& ridge_alpha_grid() {
  static const std::vector<double> grid = {0.01, 0.05, 0.1, 0.5,
                                           1.0,  5.0,  10.0, 50.0, 100.0};
  return grid;
}

struct RidgeClassifier {
  double alpha = 1.0;
  Matrix weights;  // k x (D+1), last column is the intercept term
  int classes = 2;
  Vector feat_mean;
  Vector feat_sd;

  Matrix decision(const Matrix& x) const;  // n x k class scores
  Eigen::VectorXi predict(const Matrix& x) const;
};

// One-vs-rest +-1 targets at a fixed alpha (k=2 fits one row, argmax of
// {-s, s} recovers the sign rule).
RidgeClassifier fit_ridge_classifier(const Matrix& x, const Eigen::VectorXi& y,
                                     int k, double alpha);

}  // namespace layerlens
