#include "layerlens/ridge.hpp"

#include <cmath>

#include <Eigen/Cholesky>

namespace layerlens {

Vector ridge_solve(const Matrix& x, const Vector& y, double alpha) {
  if (alpha <= 0.0) throw DataError("ridge alpha must be > 0");
  if (y.size() != x.rows()) throw DataError("target length disagrees with rows");
  const Matrix gram =
      x.transpose() * x + alpha * Matrix::Identity(x.cols(), x.cols());
  return gram.ldlt().solve(x.transpose() * y);
}

Matrix RidgeClassifier::decision(const Matrix& x) const {
  Matrix z(x.rows(), x.cols() + 1);
  for (Eigen::Index d = 0; d < x.cols(); ++d)
    z.col(d) = (x.col(d).array() - feat_mean(d)) / feat_sd(d);
  z.col(x.cols()).setOnes();
  Matrix scores = z * weights.transpose();  // n x rows(weights)
  if (weights.rows() == 1) {
    Matrix both(x.rows(), 2);
    both.col(0) = -scores.col(0);
    both.col(1) = scores.col(0);
    return both;
  }
  return scores;
}

Eigen::VectorXi RidgeClassifier::predict(const Matrix& x) const {
  const Matrix s = decision(x);
  Eigen::VectorXi out(s.rows());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    Eigen::Index arg = 0;
    s.row(i).maxCoeff(&arg);
    out(i) = static_cast<int>(arg);
  }
  return out;
}

RidgeClassifier fit_ridge_classifier(const Matrix& x, const Eigen::VectorXi& y,
                                     int k, double alpha) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  if (n < 2) throw DataError("ridge needs at least 2 samples");
  if (y.size() != n) throw DataError("label length disagrees with rows");

  RidgeClassifier clf;
  clf.alpha = alpha;
  clf.classes = k;
  clf.feat_mean.resize(d);
  clf.feat_sd.resize(d);
  Matrix z(n, d + 1);
  for (Eigen::Index c = 0; c < d; ++c) {
    const double mu = x.col(c).mean();
    double sd = std::sqrt((x.col(c).array() - mu).square().mean());
    if (sd <= 0.0) sd = 1.0;
    clf.feat_mean(c) = mu;
    clf.feat_sd(c) = sd;
    z.col(c) = (x.col(c).array() - mu) / sd;
  }
  z.col(d).setOnes();

  const int heads = (k == 2) ? 1 : k;
  clf.weights.resize(heads, d + 1);
  for (int h = 0; h < heads; ++h) {
    const int positive = (k == 2) ? 1 : h;
    Vector target(n);
    for (Eigen::Index i = 0; i < n; ++i)
      target(i) = (y(i) == positive) ? 1.0 : -1.0;
    clf.weights.row(h) = ridge_solve(z, target, alpha).transpose();
  }
  return clf;
}

}  // namespace layerlens
