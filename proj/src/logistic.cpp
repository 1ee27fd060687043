#include "layerlens/logistic.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <vector>

namespace layerlens {

namespace {

// Row-wise softmax of logits, numerically stabilized.
Matrix softmax(const Matrix& logits) {
  Vector m = logits.rowwise().maxCoeff();
  Matrix p = (logits.colwise() - m).array().exp();
  Vector s = p.rowwise().sum();
  p.array().colwise() /= s.array();
  return p;
}

double mean_cross_entropy(const Matrix& p, const Eigen::VectorXi& y) {
  double loss = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    loss -= std::log(std::max(p(i, y(i)), 1e-300));
  return loss / static_cast<double>(p.rows());
}

// Whitening basis for the standardized features. Descent runs in whitened
// coordinates, where the correlated columns of wide layers no longer stall
// it; directions with no data variance are floored and never move from a
// zero start. The objective and its minimizer are unchanged.
struct Whitener {
  Matrix basis;    // orthogonal eigenbasis of the feature covariance
  Vector scale;    // inverse square roots of the floored eigenvalues
  Vector scale_sq;
};

Whitener make_whitener(const Matrix& z) {
  Whitener w;
  Matrix c = (z.transpose() * z) / static_cast<double>(z.rows());
  Eigen::SelfAdjointEigenSolver<Matrix> es(c);
  const Vector& lambda = es.eigenvalues();
  const double floor = std::max(lambda.maxCoeff() * 1e-6, 1e-300);
  w.basis = es.eigenvectors();
  w.scale = lambda.cwiseMax(floor).cwiseSqrt().cwiseInverse();
  w.scale_sq = w.scale.cwiseProduct(w.scale);
  return w;
}

struct DescentResult {
  int iterations = 0;
  bool converged = false;  // stop rule met, as opposed to budget or stall
  double step = 1.0;       // last accepted step length
  double final_norm = 0.0;
};

// Gradient descent along -g with Barzilai-Borwein trial steps and a
// nonmonotone backtracking (Armijo) line search. eval_loss(x) must stash
// whatever grad_from_last(x, g) needs to produce the gradient at the same
// x. stop_norm(x, g) reports the model-space gradient infinity norm the
// tolerance applies to. A positive stall_factor ends the run early once the
// stop norm no longer drops below stall_factor times its value kWindow
// iterations back; callers that can repair their descent metric refresh it
// and continue instead of grinding under a stale one.
template <class EvalLoss, class GradFromLast, class StopNorm>
DescentResult bb_descent(Vector& x, double& loss, EvalLoss eval_loss,
                         GradFromLast grad_from_last, StopNorm stop_norm,
                         const LogisticFitOptions& opt,
                         double stall_factor = 0.0, double step0 = 1.0) {
  loss = eval_loss(x);
  Vector g(x.size());
  grad_from_last(x, g);

  Vector g_prev(x.size()), dx(x.size()), x_try(x.size());
  double step = step0;
  bool have_prev = false;
  constexpr int kWindow = 10;
  std::vector<double> recent(kWindow, loss);
  std::vector<double> norm_hist(kWindow, 0.0);
  DescentResult result;
  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    const double ns = stop_norm(x, g);
    result.final_norm = ns;
    if (ns <= opt.gradient_tolerance) {
      result.converged = true;
      break;
    }
    // The floor keeps stall exits, and whatever work follows them, from
    // outpacing the descent work itself.
    constexpr int kStallFloor = 15;
    if (stall_factor > 0.0 && it >= kStallFloor &&
        ns > stall_factor * norm_hist[static_cast<std::size_t>(it % kWindow)])
      break;
    norm_hist[static_cast<std::size_t>(it % kWindow)] = ns;

    double t = std::min(step * 2.0, 1e12);
    if (have_prev) {
      // Alternate the two Barzilai-Borwein step lengths.
      Vector dg = g - g_prev;
      const double sy = dx.dot(dg);
      if (sy > 0.0 && std::isfinite(sy)) {
        const double bb =
            (it % 2 == 0) ? dx.squaredNorm() / sy : sy / dg.squaredNorm();
        if (std::isfinite(bb) && bb > 0.0) t = std::min(bb, 1e12);
      }
    }

    const double g2 = g.squaredNorm();
    const double ref = *std::max_element(recent.begin(), recent.end());
    bool accepted = false;
    for (int back = 0; back < 60; ++back) {
      x_try = x - t * g;
      const double loss_try = eval_loss(x_try);
      if (loss_try <= ref - 1e-4 * t * g2) {
        loss = loss_try;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
    step = t;
    dx = x_try - x;
    x.swap(x_try);
    g_prev.swap(g);
    grad_from_last(x, g);
    have_prev = true;
    recent[static_cast<std::size_t>(it % kWindow)] = loss;
  }
  if (it == opt.max_iterations && stop_norm(x, g) <= opt.gradient_tolerance)
    result.converged = true;
  result.iterations = it;
  result.step = step;
  return result;
}

// Cholesky factor of the sigmoid-weighted Hessian at the given binary
// model, in the same standardized coordinates; the conditioning ridge
// keeps it positive definite. Descending in the coordinates this factor
// induces makes the local Hessian near identity.
Eigen::LLT<Matrix> hessian_factor(const Matrix& z, const Vector& v,
                                  double bias, double cond) {
  const Eigen::Index n = z.rows();
  Vector s = z * v;
  s.array() += bias;
  const Vector p = (((s.array() * 0.5).tanh() + 1.0) * 0.5).matrix();
  const Vector w =
      (p.array() * (1.0 - p.array())).matrix() / static_cast<double>(n);
  Matrix h = z.transpose() * w.asDiagonal() * z;
  h.diagonal().array() += cond;
  return Eigen::LLT<Matrix>(std::move(h));
}

}  // namespace

Matrix LogisticModel::predict_proba(const Matrix& x) const {
  Matrix z(x.rows(), x.cols());
  for (Eigen::Index d = 0; d < x.cols(); ++d)
    z.col(d) = (x.col(d).array() - feat_mean(d)) / feat_sd(d);
  Matrix logits = z * weights.transpose();
  logits.rowwise() += bias.transpose();
  return softmax(logits);
}

Eigen::VectorXi LogisticModel::predict(const Matrix& x) const {
  const Matrix p = predict_proba(x);
  Eigen::VectorXi out(p.rows());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index arg = 0;
    p.row(i).maxCoeff(&arg);
    out(i) = static_cast<int>(arg);
  }
  return out;
}

double logistic_loss_grad(const Matrix& w, const Vector& b, const Matrix& z,
                          const Eigen::VectorXi& y, int k, double conditioning,
                          Matrix* grad_w, Vector* grad_b) {
  const Eigen::Index n = z.rows();
  Matrix logits = z * w.transpose();
  logits.rowwise() += b.transpose();
  Matrix p = softmax(logits);
  const double loss =
      mean_cross_entropy(p, y) + 0.5 * conditioning * w.squaredNorm();

  if (grad_w != nullptr || grad_b != nullptr) {
    Matrix r = p;  // residual p - onehot(y)
    for (Eigen::Index i = 0; i < n; ++i) r(i, y(i)) -= 1.0;
    r /= static_cast<double>(n);
    if (grad_w != nullptr) *grad_w = r.transpose() * z + conditioning * w;
    if (grad_b != nullptr) *grad_b = r.colwise().sum().transpose();
  }
  (void)k;
  return loss;
}

double binary_logistic_loss_grad(const Vector& v, double c, const Matrix& z,
                                 const Eigen::VectorXi& y, double conditioning,
                                 Vector* grad_v, double* grad_c) {
  const Eigen::Index n = z.rows();
  Vector s = z * v;
  s.array() += c;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    // max(s,0) - s*y + log1p(exp(-|s|)), the stable BCE form.
    const double si = s(i);
    loss += std::max(si, 0.0) - si * static_cast<double>(y(i)) +
            std::log1p(std::exp(-std::abs(si)));
  }
  loss = loss / static_cast<double>(n) + 0.5 * conditioning * v.squaredNorm();

  if (grad_v != nullptr || grad_c != nullptr) {
    Vector r(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double si = s(i);
      const double p = si >= 0.0 ? 1.0 / (1.0 + std::exp(-si))
                                 : std::exp(si) / (1.0 + std::exp(si));
      r(i) = (p - static_cast<double>(y(i))) / static_cast<double>(n);
    }
    if (grad_v != nullptr) *grad_v = z.transpose() * r + conditioning * v;
    if (grad_c != nullptr) *grad_c = r.sum();
  }
  return loss;
}

LogisticModel fit_logistic(const Matrix& x, const Eigen::VectorXi& y, int k,
                           const LogisticFitOptions& opt) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  if (n < k) throw DataError("fit_logistic needs at least k samples");
  if (y.size() != n) throw DataError("label length disagrees with rows");
  if (!x.allFinite()) throw DataError("non-finite feature values");
  {
    std::vector<bool> seen(static_cast<std::size_t>(k), false);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (y(i) < 0 || y(i) >= k) throw DataError("label out of range");
      seen[static_cast<std::size_t>(y(i))] = true;
    }
    int present = 0;
    for (bool s : seen) present += s ? 1 : 0;
    if (present < 2) throw DataError("training labels contain a single class");
  }

  LogisticModel model;
  model.classes = k;
  model.feat_mean.resize(d);
  model.feat_sd.resize(d);
  Matrix z(n, d);
  for (Eigen::Index c = 0; c < d; ++c) {
    const double mu = x.col(c).mean();
    double sd = std::sqrt((x.col(c).array() - mu).square().mean());
    if (sd <= 0.0) sd = 1.0;
    model.feat_mean(c) = mu;
    model.feat_sd(c) = sd;
    z.col(c) = (x.col(c).array() - mu) / sd;
  }

  const double cond = opt.conditioning;

  if (k == 2) {
    // Single-logit parameterization; stored as the equivalent softmax pair.
    const Vector yf = y.cast<double>();
    // Norm stall threshold: under a tenth-iteration improvement factor this
    // weak, a metric refresh beats further descent.
    constexpr double kStallFactor = 0.3;

    Vector v = Vector::Zero(d);  // weights in standardized coordinates
    double bias = 0.0;
    double loss = 0.0;
    int iterations = 0;
    bool converged = false;
    double carry_step = 1.0;

    // One descent phase in the coordinates a Hessian factor H = U^T U
    // defines: u = U v, so the design becomes z U^-1 and the local Hessian
    // near identity. The model state (v, bias) carries across phases.
    auto run_phase = [&](const Eigen::LLT<Matrix>& hf, int budget) {
      const auto upper = hf.matrixU();
      const auto lower = hf.matrixL();
      Matrix zu = z;
      upper.solveInPlace<Eigen::OnTheRight>(zu);
      Vector params(d + 1);
      params.head(d) = upper * v;
      params(d) = bias;

      Vector s_stash, e_stash, v_stash, rg_stash;
      auto eval_loss = [&](const Vector& q) {
        s_stash = zu * q.head(d);
        s_stash.array() += q(d);
        // max(s,0) - s*y + log1p(exp(-|s|)), the stable BCE form.
        const auto sa = s_stash.array();
        e_stash = (-sa.abs()).exp().matrix();
        const double data =
            (sa.max(0.0) - sa * yf.array() + e_stash.array().log1p()).sum();
        v_stash = upper.solve(q.head(d));
        return data / static_cast<double>(n) +
               0.5 * cond * v_stash.squaredNorm();
      };
      auto grad_from_last = [&](const Vector&, Vector& g) {
        // sigmoid from the stashed exp(-|s|): 1/(1+e) on s >= 0, e/(1+e)
        // below; both branches stay in [0,1] with no overflow.
        const auto ea = e_stash.array();
        const auto den = (1.0 + ea).inverse();
        const Vector r =
            ((s_stash.array() >= 0.0).select(den, ea * den) - yf.array())
                .matrix() /
            static_cast<double>(n);
        rg_stash = lower.solve(v_stash);
        g.head(d) = zu.transpose() * r + cond * rg_stash;
        g(d) = r.sum();
      };
      auto stop_norm = [&](const Vector&, const Vector& g) {
        const Vector gv =
            lower * (g.head(d) - cond * rg_stash) + cond * v_stash;
        return std::max(gv.cwiseAbs().maxCoeff(), std::abs(g(d)));
      };

      LogisticFitOptions phase_opt = opt;
      phase_opt.max_iterations = budget;
      // The accepted step length carries across phases; adjacent metrics
      // are close enough that it beats rediscovering the scale from 1.
      const DescentResult r =
          bb_descent(params, loss, eval_loss, grad_from_last, stop_norm,
                     phase_opt, kStallFactor, carry_step);
      carry_step = r.step;
      v = upper.solve(params.head(d));
      bias = params(d);
      iterations += r.iterations;
      converged = r.converged;
      if (std::getenv("LL_TRACE"))
        std::fprintf(stderr, "  phase its=%d tot=%d norm=%.3e conv=%d\n",
                     r.iterations, iterations, r.final_norm, (int)converged);
    };

    // A metric fixed at one iterate models the Hessian poorly once the
    // sigmoid weights concentrate, and the gradient-norm tail then crawls.
    // Each phase therefore runs until the stop rule, the budget, or a
    // stall in the stop norm; on a stall, refactor against the weighted
    // Hessian at the current iterate and continue descending. A phase that
    // cannot move at all ends the fit.
    run_phase(hessian_factor(z, v, bias, cond), opt.max_iterations);
    while (!converged && iterations < opt.max_iterations) {
      const int before = iterations;
      run_phase(hessian_factor(z, v, bias, cond),
                opt.max_iterations - iterations);
      if (iterations == before) break;
    }

    model.weights.resize(2, d);
    model.weights.row(0) = -0.5 * v.transpose();
    model.weights.row(1) = 0.5 * v.transpose();
    model.bias.resize(2);
    model.bias << -0.5 * bias, 0.5 * bias;
    model.iterations = iterations;
    model.final_loss = loss;
    return model;
  }

  const Whitener wh = make_whitener(z);
  Matrix zu = z * wh.basis;
  zu.array().rowwise() *= wh.scale.transpose().array();

  Matrix p_stash;
  auto eval_loss = [&](const Vector& params) {
    const Eigen::Map<const Matrix> u(params.data(), k, d);
    Matrix logits = zu * u.transpose();
    logits.rowwise() += params.tail(k).transpose();
    p_stash = softmax(logits);
    const double w2 =
        (u.array().rowwise() * wh.scale.transpose().array()).matrix().squaredNorm();
    return mean_cross_entropy(p_stash, y) + 0.5 * cond * w2;
  };
  auto grad_from_last = [&](const Vector& params, Vector& g) {
    const Eigen::Map<const Matrix> u(params.data(), k, d);
    Matrix r = p_stash;
    for (Eigen::Index i = 0; i < n; ++i) r(i, y(i)) -= 1.0;
    r /= static_cast<double>(n);
    Eigen::Map<Matrix> gu(g.data(), k, d);
    gu = r.transpose() * zu;
    gu.array() += cond * (u.array().rowwise() * wh.scale_sq.transpose().array());
    g.tail(k) = r.colwise().sum().transpose();
  };
  auto stop_norm = [&](const Vector& params, const Vector& g) {
    const Eigen::Map<const Matrix> u(params.data(), k, d);
    const Eigen::Map<const Matrix> gu(g.data(), k, d);
    Matrix gu_data =
        gu.array() - cond * (u.array().rowwise() * wh.scale_sq.transpose().array());
    Matrix w_cur =
        (u.array().rowwise() * wh.scale.transpose().array()).matrix() *
        wh.basis.transpose();
    Matrix gw = (gu_data.array().rowwise() / wh.scale.transpose().array())
                        .matrix() *
                    wh.basis.transpose() +
                cond * w_cur;
    return std::max(gw.cwiseAbs().maxCoeff(), g.tail(k).cwiseAbs().maxCoeff());
  };

  Vector params = Vector::Zero(k * d + k);
  double loss = 0.0;
  const DescentResult r =
      bb_descent(params, loss, eval_loss, grad_from_last, stop_norm, opt);

  const Eigen::Map<const Matrix> u(params.data(), k, d);
  model.weights =
      (u.array().rowwise() * wh.scale.transpose().array()).matrix() *
      wh.basis.transpose();
  model.bias = params.tail(k);
  model.iterations = r.iterations;
  model.final_loss = loss;
  return model;
}

}  // namespace layerlens
