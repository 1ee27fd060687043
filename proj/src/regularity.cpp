#include "layerlens/regularity.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <random>
#include <vector>

namespace layerlens {

namespace {

constexpr int kFolds = 5;

// Stratified assignment: seeded shuffle per class, then round-robin.
std::vector<int> fold_assignment(const Eigen::VectorXi& labels, int k,
                                 std::uint64_t seed) {
  const Eigen::Index n = labels.size();
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = labels(i);
    if (c < 0 || c >= k) throw DataError("label out of range");
    by_class[static_cast<std::size_t>(c)].push_back(static_cast<int>(i));
  }
  for (int c = 0; c < k; ++c)
    if (by_class[static_cast<std::size_t>(c)].size() <
        static_cast<std::size_t>(kFolds))
      throw DataError("class " + std::to_string(c) +
                      " has fewer than 5 samples; cannot form 5 folds");
  std::mt19937_64 rng(mix(seed, 0xF01D5ULL));
  std::vector<int> fold_of(static_cast<std::size_t>(n));
  for (auto& cls : by_class) {
    std::shuffle(cls.begin(), cls.end(), rng);
    for (std::size_t i = 0; i < cls.size(); ++i)
      fold_of[static_cast<std::size_t>(cls[i])] = static_cast<int>(i % kFolds);
  }
  return fold_of;
}

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// s(:, j) = x * a(:, j) for each of m trial columns in one pass over x.
// Row tiles keep the m partial-sum segments in L1 while each x column
// streams by once, so the lockstep folds share the feature-matrix traffic
// that five solo descents would each pay. Accumulation order is fixed;
// no reductions, so the loops vectorize as written.
void fused_forward(const Matrix& x, const Matrix& a, int m, Matrix& s) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  constexpr Eigen::Index kTile = 256;
  for (Eigen::Index i0 = 0; i0 < n; i0 += kTile) {
    const Eigen::Index len = std::min(kTile, n - i0);
    for (int j = 0; j < m; ++j)
      std::fill_n(s.col(j).data() + i0, len, 0.0);
    for (Eigen::Index c = 0; c < d; ++c) {
      const double* xc = x.col(c).data() + i0;
      for (int j = 0; j < m; ++j) {
        const double aj = a(c, j);
        double* sj = s.col(j).data() + i0;
        for (Eigen::Index t = 0; t < len; ++t) sj[t] += aj * xc[t];
      }
    }
  }
}

// g(:, j) += r(i, j) * x.row(i) over one pass of the row-major copy; the
// d x m accumulator stays in L1. Held-out rows carry zero residuals and
// are skipped.
void fused_gradient(const RowMatrix& x, const Matrix& residual,
                    const int* cols, int m, Matrix& g) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  g.setZero(d, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double* row = x.data() + i * d;
    for (int j = 0; j < m; ++j) {
      const double r = residual(i, cols[j]);
      if (r == 0.0) continue;
      double* gj = g.col(j).data();
      for (Eigen::Index c = 0; c < d; ++c) gj[c] += r * row[c];
    }
  }
}

// The five binary fold fits advanced in lockstep so that per-iteration
// matrix products batch across folds. Each fold runs the same descent
// fit_logistic uses: standardized on its four training folds, BB trial
// steps with nonmonotone backtracking, gradient tolerance tested in its
// own standardized coordinates. Only the whitening basis is shared,
// computed once from the pooled rows; a preconditioner choice, so the
// per-fold objective and stopping rule are unchanged.
RegularityScore batched_binary_cv(const Matrix& x,
                                  const Eigen::VectorXi& labels,
                                  const std::vector<int>& fold_of) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  const LogisticFitOptions opt;
  const double cond = opt.conditioning;
  constexpr int kWindow = 10;

  std::array<std::vector<int>, kFolds> train_rows, held_rows;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int f = fold_of[static_cast<std::size_t>(i)];
    for (int g = 0; g < kFolds; ++g)
      (g == f ? held_rows[g] : train_rows[g]).push_back(static_cast<int>(i));
  }

  // Pool-standardized whitening basis, shared by every fold.
  Vector pool_mean(d), pool_sd(d);
  for (Eigen::Index c = 0; c < d; ++c) {
    const double mu = x.col(c).mean();
    double sd = std::sqrt((x.col(c).array() - mu).square().mean());
    if (sd <= 0.0) sd = 1.0;
    pool_mean(c) = mu;
    pool_sd(c) = sd;
  }
  Matrix zp(n, d);
  for (Eigen::Index c = 0; c < d; ++c)
    zp.col(c) = (x.col(c).array() - pool_mean(c)) / pool_sd(c);
  Matrix cov = (zp.transpose() * zp) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  const double floor = std::max(es.eigenvalues().maxCoeff() * 1e-6, 1e-300);
  const Matrix basis = es.eigenvectors();
  const Vector scale =
      es.eigenvalues().cwiseMax(floor).cwiseSqrt().cwiseInverse();
  const Vector scale_sq = scale.cwiseProduct(scale);

  struct Fold {
    std::vector<int>* rows = nullptr;
    double inv_n = 0.0;
    Vector mask;               // 1.0 on train rows of the pool, 0.0 held out
    Vector mean, inv_sd;       // fold-train standardization
    Vector u, a, gu, gu_prev;  // whitened params, pool-space weights, grads
    Vector g_std;              // data gradient in fold-standardized coords
    double c = 0.0, gc = 0.0, gc_prev = 0.0;
    Vector dxu;
    double dxc = 0.0;
    double loss = 0.0, step = 1.0, t = 0.0, ref = 0.0, g2 = 0.0;
    std::array<double, kWindow> recent{};
    int it = 0, backs = 0;
    bool fresh = true, have_prev = false, done = false;
    Vector u_try, a_try;
    double c_try = 0.0, b_try = 0.0;
  };
  std::array<Fold, kFolds> folds;

  const Vector yf_pool = labels.cast<double>();
  for (int f = 0; f < kFolds; ++f) {
    Fold& fd = folds[static_cast<std::size_t>(f)];
    fd.rows = &train_rows[static_cast<std::size_t>(f)];
    const auto& rows = *fd.rows;
    fd.inv_n = 1.0 / static_cast<double>(rows.size());
    fd.mask = Vector::Zero(n);
    for (int i : rows) fd.mask(i) = 1.0;
    fd.mean = Vector::Zero(d);
    for (int i : rows) fd.mean += x.row(i).transpose();
    fd.mean *= fd.inv_n;
    Vector var = Vector::Zero(d);
    for (int i : rows)
      var += (x.row(i).transpose() - fd.mean).cwiseAbs2();
    var *= fd.inv_n;
    fd.inv_sd.resize(d);
    for (Eigen::Index c = 0; c < d; ++c)
      fd.inv_sd(c) = var(c) > 0.0 ? 1.0 / std::sqrt(var(c)) : 1.0;
    fd.u = Vector::Zero(d);
    fd.a = Vector::Zero(d);
    fd.u_try.resize(d);
    fd.a_try.resize(d);
    fd.dxu = Vector::Zero(d);
    fd.loss = std::log(2.0);  // zero weights on balanced-or-not: logits 0
    fd.recent.fill(fd.loss);
  }

  const RowMatrix xr = x;
  Matrix a_cols(d, kFolds), logits(n, kFolds), g_pool(d, kFolds);
  std::array<int, kFolds> trial_ids{}, accept_ids{};

  // Initial gradients at zero weights, batched.
  Matrix residual(n, kFolds);
  for (int f = 0; f < kFolds; ++f) {
    Fold& fd = folds[static_cast<std::size_t>(f)];
    residual.col(f) =
        ((0.5 - yf_pool.array()) * fd.mask.array()).matrix() * fd.inv_n;
    accept_ids[static_cast<std::size_t>(f)] = f;
  }
  fused_gradient(xr, residual, accept_ids.data(), kFolds, g_pool);
  for (int f = 0; f < kFolds; ++f) {
    Fold& fd = folds[static_cast<std::size_t>(f)];
    const double sum_r = residual.col(f).sum();
    fd.g_std = (g_pool.col(f) - fd.mean * sum_r).cwiseProduct(fd.inv_sd);
    fd.gu = scale.cwiseProduct(basis.transpose() * fd.g_std) +
            cond * scale_sq.cwiseProduct(fd.u);
    fd.gc = sum_r;
  }

  while (true) {
    int n_trial = 0;
    for (int f = 0; f < kFolds; ++f) {
      Fold& fd = folds[static_cast<std::size_t>(f)];
      if (fd.done) continue;
      if (fd.fresh) {
        // Start of an iteration; the stop rule tests the gradient in the
        // fold's own standardized coordinates, same as a solo fit.
        const Vector stop_vec =
            fd.g_std + cond * fd.a.cwiseQuotient(fd.inv_sd);
        const double stop =
            std::max(stop_vec.cwiseAbs().maxCoeff(), std::abs(fd.gc));
        if (stop <= opt.gradient_tolerance || fd.it >= opt.max_iterations) {
          fd.done = true;
          continue;
        }
        fd.t = std::min(fd.step * 2.0, 1e12);
        if (fd.have_prev) {
          Vector dg = fd.gu - fd.gu_prev;
          const double dgc = fd.gc - fd.gc_prev;
          const double sy = fd.dxu.dot(dg) + fd.dxc * dgc;
          if (sy > 0.0 && std::isfinite(sy)) {
            const double ss = fd.dxu.squaredNorm() + fd.dxc * fd.dxc;
            const double yy = dg.squaredNorm() + dgc * dgc;
            const double bb = (fd.it % 2 == 0) ? ss / sy : sy / yy;
            if (std::isfinite(bb) && bb > 0.0) fd.t = std::min(bb, 1e12);
          }
        }
        fd.g2 = fd.gu.squaredNorm() + fd.gc * fd.gc;
        fd.ref = *std::max_element(fd.recent.begin(), fd.recent.end());
        fd.backs = 0;
      }
      fd.u_try = fd.u - fd.t * fd.gu;
      fd.c_try = fd.c - fd.t * fd.gc;
      fd.a_try =
          (basis * scale.cwiseProduct(fd.u_try)).cwiseProduct(fd.inv_sd);
      fd.b_try = fd.c_try - fd.mean.dot(fd.a_try);
      a_cols.col(n_trial) = fd.a_try;
      trial_ids[static_cast<std::size_t>(n_trial)] = f;
      ++n_trial;
    }
    if (n_trial == 0) break;

    fused_forward(x, a_cols, n_trial, logits);

    int n_accept = 0;
    for (int j = 0; j < n_trial; ++j) {
      Fold& fd = folds[static_cast<std::size_t>(
          trial_ids[static_cast<std::size_t>(j)])];
      // max(s,0) - s*y + log1p(exp(-|s|)), masked to the training rows.
      const auto sa = logits.col(j).array() + fd.b_try;
      double loss_try = ((sa.max(0.0) - sa * yf_pool.array() +
                          (-sa.abs()).exp().log1p()) *
                         fd.mask.array())
                            .sum() *
                        fd.inv_n;
      loss_try +=
          0.5 * cond * fd.a_try.cwiseQuotient(fd.inv_sd).squaredNorm();
      if (loss_try <= fd.ref - 1e-4 * fd.t * fd.g2) {
        fd.dxu = fd.u_try - fd.u;
        fd.dxc = fd.c_try - fd.c;
        fd.u.swap(fd.u_try);
        fd.c = fd.c_try;
        fd.a.swap(fd.a_try);
        fd.loss = loss_try;
        fd.step = fd.t;
        fd.recent[static_cast<std::size_t>(fd.it % kWindow)] = fd.loss;
        ++fd.it;
        fd.fresh = true;
        const int col = trial_ids[static_cast<std::size_t>(j)];
        // sigmoid(s) = (1 + tanh(s/2)) / 2, stable at both tails.
        const auto sacc = logits.col(j).array() + fd.b_try;
        residual.col(col) =
            ((((sacc * 0.5).tanh() + 1.0) * 0.5 - yf_pool.array()) *
             fd.mask.array())
                .matrix() *
            fd.inv_n;
        accept_ids[static_cast<std::size_t>(n_accept)] = col;
        ++n_accept;
      } else {
        fd.t *= 0.5;
        ++fd.backs;
        fd.fresh = false;
        if (fd.backs >= 60) fd.done = true;
      }
    }

    if (n_accept > 0) {
      fused_gradient(xr, residual, accept_ids.data(), n_accept, g_pool);
      for (int j = 0; j < n_accept; ++j) {
        Fold& fd = folds[static_cast<std::size_t>(
            accept_ids[static_cast<std::size_t>(j)])];
        const double sum_r =
            residual.col(accept_ids[static_cast<std::size_t>(j)]).sum();
        fd.g_std = (g_pool.col(j) - fd.mean * sum_r).cwiseProduct(fd.inv_sd);
        fd.gu_prev.swap(fd.gu);
        fd.gc_prev = fd.gc;
        fd.gu = scale.cwiseProduct(basis.transpose() * fd.g_std) +
                cond * scale_sq.cwiseProduct(fd.u);
        fd.gc = sum_r;
        fd.have_prev = true;
      }
    }
  }

  // Held-out scoring and description length from the final fold models.
  for (int f = 0; f < kFolds; ++f)
    a_cols.col(f) = folds[static_cast<std::size_t>(f)].a;
  logits.noalias() = x * a_cols;

  RegularityScore score;
  double dl = 0.0;
  for (int f = 0; f < kFolds; ++f) {
    const Fold& fd = folds[static_cast<std::size_t>(f)];
    const double b = fd.c - fd.mean.dot(fd.a);
    const auto& rows = held_rows[static_cast<std::size_t>(f)];
    Eigen::Index correct = 0;
    for (int i : rows) {
      const double s = logits(i, f) + b;
      const int pred = s > 0.0 ? 1 : 0;
      if (pred == labels(i)) ++correct;
      const double sy = labels(i) == 1 ? s : -s;
      const double p =
          std::max(sy >= 0.0 ? 1.0 / (1.0 + std::exp(-sy))
                             : std::exp(sy) / (1.0 + std::exp(sy)),
                   1e-15);
      dl -= std::log2(p);
    }
    score.fold_accuracies[static_cast<std::size_t>(f)] =
        static_cast<double>(correct) / static_cast<double>(rows.size());
  }
  double sum = 0.0;
  for (double a : score.fold_accuracies) sum += a;
  score.r_accuracy = sum / kFolds;
  score.description_length_bits = dl;
  return score;
}

}  // namespace

RegularityScore regularity(const Matrix& x, const Eigen::VectorXi& labels,
                           int k, std::uint64_t seed) {
  const Eigen::Index n = x.rows();
  if (labels.size() != n) throw DataError("label length disagrees with rows");
  if (k < 2) throw DataError("cardinality must be >= 2");
  if (!x.allFinite()) throw DataError("non-finite feature values");
  const std::vector<int> fold_of = fold_assignment(labels, k, seed);

  if (k == 2 && std::getenv("LL_SEQ_CV") == nullptr)
    return batched_binary_cv(x, labels, fold_of);

  RegularityScore score;
  double dl = 0.0;
  for (int f = 0; f < kFolds; ++f) {
    std::vector<int> tr, te;
    for (Eigen::Index i = 0; i < n; ++i)
      (fold_of[static_cast<std::size_t>(i)] == f ? te : tr)
          .push_back(static_cast<int>(i));

    Matrix xtr(static_cast<Eigen::Index>(tr.size()), x.cols());
    Eigen::VectorXi ytr(static_cast<Eigen::Index>(tr.size()));
    for (std::size_t i = 0; i < tr.size(); ++i) {
      xtr.row(static_cast<Eigen::Index>(i)) = x.row(tr[i]);
      ytr(static_cast<Eigen::Index>(i)) = labels(tr[i]);
    }
    Matrix xte(static_cast<Eigen::Index>(te.size()), x.cols());
    Eigen::VectorXi yte(static_cast<Eigen::Index>(te.size()));
    for (std::size_t i = 0; i < te.size(); ++i) {
      xte.row(static_cast<Eigen::Index>(i)) = x.row(te[i]);
      yte(static_cast<Eigen::Index>(i)) = labels(te[i]);
    }

    const LogisticModel model = fit_logistic(xtr, ytr, k);
    const Matrix proba = model.predict_proba(xte);
    Eigen::Index correct = 0;
    for (Eigen::Index i = 0; i < xte.rows(); ++i) {
      Eigen::Index arg = 0;
      proba.row(i).maxCoeff(&arg);
      if (static_cast<int>(arg) == yte(i)) ++correct;
      const double p = std::max(proba(i, yte(i)), 1e-15);
      dl -= std::log2(p);
    }
    score.fold_accuracies[static_cast<std::size_t>(f)] =
        static_cast<double>(correct) / static_cast<double>(xte.rows());
  }
  double sum = 0.0;
  for (double a : score.fold_accuracies) sum += a;
  score.r_accuracy = sum / kFolds;
  score.description_length_bits = dl;
  return score;
}

RegularityScore regularity(const LayerSlab& slab, const Eigen::VectorXi& labels,
                           int k, std::uint64_t seed) {
  return regularity(slab.as_double(), labels, k, seed);
}

}  // namespace layerlens
