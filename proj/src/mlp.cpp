#include "layerlens/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace layerlens {

namespace {

Matrix row_softmax(const Matrix& logits) {
  Matrix p = logits;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double m = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

}  // namespace

MlpNet::MlpNet(std::vector<int> widths, MlpOutput output, std::uint64_t seed)
    : widths_(std::move(widths)), output_(output) {
  if (widths_.size() < 2) throw DataError("net needs input and output widths");
  for (int wd : widths_)
    if (wd < 1) throw DataError("layer widths must be >= 1");
  if (output_ == MlpOutput::sigmoid && widths_.back() != 1)
    throw DataError("sigmoid output requires exactly 1 output unit");
  if (output_ == MlpOutput::softmax && widths_.back() < 2)
    throw DataError("softmax output requires >= 2 output units");

  std::mt19937_64 rng(mix(seed, 0x1417ULL));
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t n_layers = widths_.size() - 1;
  w_.resize(n_layers);
  b_.resize(n_layers);
  for (std::size_t i = 0; i < n_layers; ++i) {
    const int fan_in = widths_[i];
    const int fan_out = widths_[i + 1];
    const double scale = std::sqrt(2.0 / fan_in);
    w_[i].resize(fan_out, fan_in);
    for (Eigen::Index r = 0; r < w_[i].rows(); ++r)
      for (Eigen::Index c = 0; c < w_[i].cols(); ++c)
        w_[i](r, c) = gauss(rng) * scale;
    b_[i] = Vector::Zero(fan_out);
  }
}

Eigen::Index MlpNet::n_params() const {
  Eigen::Index n = 0;
  for (std::size_t i = 0; i < w_.size(); ++i) n += w_[i].size() + b_[i].size();
  return n;
}

Vector MlpNet::flat_params() const {
  Vector p(n_params());
  Eigen::Index at = 0;
  for (std::size_t i = 0; i < w_.size(); ++i) {
    for (Eigen::Index c = 0; c < w_[i].cols(); ++c)
      for (Eigen::Index r = 0; r < w_[i].rows(); ++r) p(at++) = w_[i](r, c);
    for (Eigen::Index r = 0; r < b_[i].size(); ++r) p(at++) = b_[i](r);
  }
  return p;
}

void MlpNet::set_flat_params(const Vector& p) {
  if (p.size() != n_params()) throw DataError("parameter vector size mismatch");
  Eigen::Index at = 0;
  for (std::size_t i = 0; i < w_.size(); ++i) {
    for (Eigen::Index c = 0; c < w_[i].cols(); ++c)
      for (Eigen::Index r = 0; r < w_[i].rows(); ++r) w_[i](r, c) = p(at++);
    for (Eigen::Index r = 0; r < b_[i].size(); ++r) b_[i](r) = p(at++);
  }
}

void MlpNet::set_weights(std::vector<Matrix> w, std::vector<Vector> b) {
  w_ = std::move(w);
  b_ = std::move(b);
}

std::vector<Matrix> MlpNet::forward_capture(const Matrix& x) const {
  std::vector<Matrix> acts;
  Matrix h = x;
  for (std::size_t i = 0; i < w_.size(); ++i) {
    Matrix z = h * w_[i].transpose();
    z.rowwise() += b_[i].transpose();
    if (i + 1 < w_.size()) {
      h = z.cwiseMax(0.0);
      acts.push_back(h);
    } else {
      acts.push_back(z);  // pre-squash logits
      h = std::move(z);
    }
  }
  return acts;
}

double MlpNet::loss_grad_flat(const Matrix& x, const Eigen::VectorXi& y,
                              double l1, Vector* grad) const {
  const Eigen::Index n = x.rows();
  if (n == 0) throw DataError("empty batch");
  if (y.size() != n) throw DataError("label length disagrees with rows");

  // Forward, keeping post-activation values for backprop.
  std::vector<Matrix> acts;  // acts[i]: input to layer i
  acts.push_back(x);
  for (std::size_t i = 0; i < w_.size(); ++i) {
    Matrix z = acts.back() * w_[i].transpose();
    z.rowwise() += b_[i].transpose();
    if (i + 1 < w_.size()) z = z.cwiseMax(0.0);
    acts.push_back(std::move(z));
  }
  const Matrix& out = acts.back();

  double loss = 0.0;
  Matrix delta;  // dLoss/dlogits
  const double dn = static_cast<double>(n);
  if (output_ == MlpOutput::softmax) {
    const int k = widths_.back();
    for (Eigen::Index i = 0; i < n; ++i)
      if (y(i) < 0 || y(i) >= k) throw DataError("label out of range");
    Matrix p = row_softmax(out);
    for (Eigen::Index i = 0; i < n; ++i)
      loss -= std::log(std::max(p(i, y(i)), 1e-300));
    loss /= dn;
    delta = p;
    for (Eigen::Index i = 0; i < n; ++i) delta(i, y(i)) -= 1.0;
    delta /= dn;
  } else {
    for (Eigen::Index i = 0; i < n; ++i)
      if (y(i) < 0 || y(i) > 1) throw DataError("binary label out of range");
    delta.resize(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double o = out(i, 0);
      const double p = 1.0 / (1.0 + std::exp(-o));
      // stable log-loss via softplus
      loss += (y(i) == 1) ? (o > 0 ? std::log1p(std::exp(-o)) : -o + std::log1p(std::exp(o)))
                          : (o > 0 ? o + std::log1p(std::exp(-o)) : std::log1p(std::exp(o)));
      delta(i, 0) = (p - static_cast<double>(y(i))) / dn;
    }
    loss /= dn;
  }

  if (l1 > 0.0)
    for (const auto& wm : w_) loss += l1 * wm.cwiseAbs().sum();

  if (grad == nullptr) return loss;

  std::vector<Matrix> gw(w_.size());
  std::vector<Vector> gb(w_.size());
  Matrix d = std::move(delta);
  for (std::size_t i = w_.size(); i-- > 0;) {
    gw[i] = d.transpose() * acts[i];
    gb[i] = d.colwise().sum().transpose();
    if (l1 > 0.0)
      gw[i] += l1 * w_[i].unaryExpr([](double v) {
        return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
      });
    if (i > 0) {
      d = d * w_[i];
      // ReLU mask from the stored post-activation values
      d = (acts[i].array() > 0.0).cast<double>().matrix().cwiseProduct(d);
    }
  }

  grad->resize(n_params());
  Eigen::Index at = 0;
  for (std::size_t i = 0; i < w_.size(); ++i) {
    for (Eigen::Index c = 0; c < gw[i].cols(); ++c)
      for (Eigen::Index r = 0; r < gw[i].rows(); ++r) (*grad)(at++) = gw[i](r, c);
    for (Eigen::Index r = 0; r < gb[i].size(); ++r) (*grad)(at++) = gb[i](r);
  }
  return loss;
}

Matrix MlpNet::predict_proba(const Matrix& x) const {
  const Matrix out = forward_capture(x).back();
  if (output_ == MlpOutput::softmax) return row_softmax(out);
  Matrix p(x.rows(), 2);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double v = 1.0 / (1.0 + std::exp(-out(i, 0)));
    p(i, 0) = 1.0 - v;
    p(i, 1) = v;
  }
  return p;
}

Eigen::VectorXi MlpNet::predict(const Matrix& x) const {
  const Matrix p = predict_proba(x);
  Eigen::VectorXi out(p.rows());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index arg = 0;
    p.row(i).maxCoeff(&arg);
    out(i) = static_cast<int>(arg);
  }
  return out;
}

double MlpNet::accuracy(const Matrix& x, const Eigen::VectorXi& y) const {
  const Eigen::VectorXi pred = predict(x);
  Eigen::Index correct = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (pred(i) == y(i)) ++correct;
  return static_cast<double>(correct) / static_cast<double>(y.size());
}

Vector MlpNet::input_saliency() const {
  return w_.front().cwiseAbs().colwise().maxCoeff().transpose();
}

MlpTrainLog MlpNet::train(const Matrix& xtr, const Eigen::VectorXi& ytr,
                          const Matrix& xval, const Eigen::VectorXi& yval,
                          const MlpTrainConfig& cfg) {
  const Eigen::Index n = xtr.rows();
  if (n == 0) throw DataError("empty training set");
  if (xval.rows() == 0) throw DataError("empty validation set");
  if (cfg.batch_size < 1) throw DataError("batch_size must be >= 1");

  const Eigen::Index np = n_params();
  Vector m = Vector::Zero(np);
  Vector v = Vector::Zero(np);
  Vector params = flat_params();
  Vector grad(np);
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  std::int64_t t = 0;

  MlpTrainLog log;
  std::vector<Matrix> best_w = w_;
  std::vector<Vector> best_b = b_;
  int since_best = 0;

  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::mt19937_64 rng(mix(cfg.seed, 0xE90CULL + static_cast<std::uint64_t>(epoch)));
    std::shuffle(idx.begin(), idx.end(), rng);

    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index len = std::min<Eigen::Index>(cfg.batch_size, n - start);
      Matrix xb(len, xtr.cols());
      Eigen::VectorXi yb(len);
      for (Eigen::Index i = 0; i < len; ++i) {
        xb.row(i) = xtr.row(idx[static_cast<std::size_t>(start + i)]);
        yb(i) = ytr(idx[static_cast<std::size_t>(start + i)]);
      }
      const double batch_loss = loss_grad_flat(xb, yb, cfg.l1, &grad);
      if (!std::isfinite(batch_loss))
        throw DataError("non-finite loss at epoch " + std::to_string(epoch));
      ++t;
      m = kBeta1 * m + (1.0 - kBeta1) * grad;
      v = kBeta2 * v + (1.0 - kBeta2) * grad.cwiseProduct(grad);
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
      params -= (cfg.learning_rate / bc1) *
                m.cwiseQuotient(((v / bc2).cwiseSqrt().array() + kEps).matrix());
      set_flat_params(params);
    }

    const double epoch_loss = loss_grad_flat(xtr, ytr, cfg.l1, nullptr);
    if (!std::isfinite(epoch_loss))
      throw DataError("non-finite loss at epoch " + std::to_string(epoch));
    const double val_acc = accuracy(xval, yval);
    log.train_loss.push_back(epoch_loss);
    log.val_accuracy.push_back(val_acc);
    log.epochs_run = epoch + 1;

    if (val_acc > log.best_val_accuracy || log.best_epoch < 0) {
      log.best_val_accuracy = val_acc;
      log.best_epoch = epoch;
      best_w = w_;
      best_b = b_;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (val_acc >= cfg.stop_val_accuracy) break;
    if (since_best >= cfg.patience) break;
  }

  w_ = std::move(best_w);
  b_ = std::move(best_b);
  return log;
}

}  // namespace layerlens
