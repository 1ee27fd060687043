#pragma once

#include "layerlens/common.hpp"

namespace layerlens {

struct LogisticModel {
  Matrix weights;    // k x D, in standardized feature space
  Vector bias;       // k
  int classes = 2;
  int iterations = 0;
  double final_loss = 0.0;
  Vector feat_mean;  // D
  Vector feat_sd;    // D, zero-variance columns get 1

  // Rows sum to 1; applies the stored standardization.
  Matrix predict_proba(const Matrix& x) const;
  Eigen::VectorXi predict(const Matrix& x) const;
};

struct LogisticFitOptions {
  int max_iterations = 500;
  double gradient_tolerance = 1e-6;
  // Tiny ridge for numerical conditioning only; not a modeling term.
  double conditioning = 1e-8;
};

// Mean softmax cross-entropy plus 0.5*conditioning*||w||^2; grads match.
double logistic_loss_grad(const Matrix& w, const Vector& b, const Matrix& z,
                          const Eigen::VectorXi& y, int k, double conditioning,
                          Matrix* grad_w, Vector* grad_b);

// Binary single-logit objective used by the k = 2 fit path; p = sigmoid(zv+c).
double binary_logistic_loss_grad(const Vector& v, double c, const Matrix& z,
                                 const Eigen::VectorXi& y, double conditioning,
                                 Vector* grad_v, double* grad_c);

// Full-batch gradient descent with backtracking line search. k = 2 is fit
// in the single-logit parameterization and stored as equivalent softmax rows.
LogisticModel fit_logistic(const Matrix& x, const Eigen::VectorXi& y, int k,
                           const LogisticFitOptions& opt = {});

}  // namespace layerlens
