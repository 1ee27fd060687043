#include "layerlens/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace layerlens {

namespace {

constexpr double kHessFloor = 1e-10;
constexpr double kMinGain = 1e-12;

using BinnedMatrix =
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

struct SplitChoice {
  double gain = 0.0;
  int feature = -1;
  int boundary = -1;  // left = bins [0, boundary]
};

struct BuildLeaf {
  std::vector<int> samples;
  double sum_g = 0.0;
  double sum_h = 0.0;
  int node_id = -1;
  SplitChoice split;
};

Matrix row_softmax(const Matrix& logits) {
  Matrix p = logits;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double m = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

double leaf_objective(double g, double h) { return g * g / (h + kHessFloor); }

SplitChoice best_split(const BuildLeaf& leaf, const BinnedMatrix& binned,
                       const std::vector<std::vector<double>>& edges,
                       const Vector& g, const Vector& h, int min_leaf,
                       std::vector<double>& hist_g, std::vector<double>& hist_h,
                       std::vector<int>& hist_n) {
  SplitChoice best;
  const double parent = leaf_objective(leaf.sum_g, leaf.sum_h);
  const int n_features = static_cast<int>(binned.cols());
  for (int f = 0; f < n_features; ++f) {
    const int n_edges = static_cast<int>(edges[static_cast<std::size_t>(f)].size());
    if (n_edges == 0) continue;
    const int n_bins = n_edges + 1;
    std::fill(hist_g.begin(), hist_g.begin() + n_bins, 0.0);
    std::fill(hist_h.begin(), hist_h.begin() + n_bins, 0.0);
    std::fill(hist_n.begin(), hist_n.begin() + n_bins, 0);
    for (int i : leaf.samples) {
      const int b = binned(i, f);
      hist_g[static_cast<std::size_t>(b)] += g(i);
      hist_h[static_cast<std::size_t>(b)] += h(i);
      ++hist_n[static_cast<std::size_t>(b)];
    }
    double gl = 0.0, hl = 0.0;
    int nl = 0;
    const int total = static_cast<int>(leaf.samples.size());
    for (int b = 0; b < n_edges; ++b) {
      gl += hist_g[static_cast<std::size_t>(b)];
      hl += hist_h[static_cast<std::size_t>(b)];
      nl += hist_n[static_cast<std::size_t>(b)];
      const int nr = total - nl;
      if (nl < min_leaf || nr < min_leaf) continue;
      const double gr = leaf.sum_g - gl;
      const double hr = leaf.sum_h - hl;
      const double gain =
          leaf_objective(gl, hl) + leaf_objective(gr, hr) - parent;
      if (gain > best.gain) {
        best.gain = gain;
        best.feature = f;
        best.boundary = b;
      }
    }
  }
  return best;
}

GbdtTree build_tree(const BinnedMatrix& binned,
                    const std::vector<std::vector<double>>& edges,
                    const Vector& g, const Vector& h,
                    const std::vector<int>& root_samples, int min_leaf,
                    const GbdtConfig& cfg) {
  GbdtTree tree;
  const int max_bins = cfg.histogram_bins + 1;
  std::vector<double> hist_g(static_cast<std::size_t>(max_bins));
  std::vector<double> hist_h(static_cast<std::size_t>(max_bins));
  std::vector<int> hist_n(static_cast<std::size_t>(max_bins));

  BuildLeaf root;
  root.samples = root_samples;
  for (int i : root.samples) {
    root.sum_g += g(i);
    root.sum_h += h(i);
  }
  root.node_id = 0;
  tree.nodes.push_back(GbdtNode{});
  root.split = best_split(root, binned, edges, g, h, min_leaf, hist_g, hist_h,
                          hist_n);

  std::vector<BuildLeaf> leaves;
  leaves.push_back(std::move(root));
  int n_leaves = 1;

  while (n_leaves < cfg.max_leaves) {
    int pick = -1;
    double pick_gain = kMinGain;
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      if (leaves[i].split.feature >= 0 && leaves[i].split.gain > pick_gain) {
        pick_gain = leaves[i].split.gain;
        pick = static_cast<int>(i);
      }
    }
    if (pick < 0) break;

    BuildLeaf parent = std::move(leaves[static_cast<std::size_t>(pick)]);
    leaves.erase(leaves.begin() + pick);

    BuildLeaf left, right;
    for (int i : parent.samples) {
      if (binned(i, parent.split.feature) <= parent.split.boundary) {
        left.samples.push_back(i);
        left.sum_g += g(i);
        left.sum_h += h(i);
      } else {
        right.samples.push_back(i);
        right.sum_g += g(i);
        right.sum_h += h(i);
      }
    }

    GbdtNode& node = tree.nodes[static_cast<std::size_t>(parent.node_id)];
    node.feature = parent.split.feature;
    node.threshold = edges[static_cast<std::size_t>(parent.split.feature)]
                          [static_cast<std::size_t>(parent.split.boundary)];
    node.left = static_cast<int>(tree.nodes.size());
    node.right = node.left + 1;
    tree.nodes.push_back(GbdtNode{});
    tree.nodes.push_back(GbdtNode{});
    left.node_id = node.left;
    right.node_id = node.right;

    left.split = best_split(left, binned, edges, g, h, min_leaf, hist_g,
                            hist_h, hist_n);
    right.split = best_split(right, binned, edges, g, h, min_leaf, hist_g,
                             hist_h, hist_n);
    leaves.push_back(std::move(left));
    leaves.push_back(std::move(right));
    ++n_leaves;
  }

  for (const auto& leaf : leaves) {
    GbdtNode& node = tree.nodes[static_cast<std::size_t>(leaf.node_id)];
    node.feature = -1;
    node.value = cfg.learning_rate * (-leaf.sum_g / (leaf.sum_h + kHessFloor));
  }
  return tree;
}

}  // namespace

int gbdt_min_samples_leaf(Eigen::Index n_train) {
  return std::min<Eigen::Index>(20, n_train / 10);
}

double GbdtTree::predict_row(
    const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
  int at = 0;
  while (nodes[static_cast<std::size_t>(at)].feature >= 0) {
    const GbdtNode& node = nodes[static_cast<std::size_t>(at)];
    at = (row(node.feature) <= node.threshold) ? node.left : node.right;
  }
  return nodes[static_cast<std::size_t>(at)].value;
}

Matrix GbdtModel::decision(const Matrix& x) const {
  Matrix z(x.rows(), x.cols());
  for (Eigen::Index d = 0; d < x.cols(); ++d)
    z.col(d) = (x.col(d).array() - feat_mean(d)) / feat_sd(d);
  Matrix scores(x.rows(), heads);
  for (int c = 0; c < heads; ++c) scores.col(c).setConstant(base_score(c));
  for (int r = 0; r < best_round; ++r)
    for (int c = 0; c < heads; ++c)
      for (Eigen::Index i = 0; i < z.rows(); ++i)
        scores(i, c) +=
            rounds[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]
                .predict_row(z.row(i));
  return scores;
}

Matrix GbdtModel::predict_proba(const Matrix& x) const {
  const Matrix s = decision(x);
  if (heads == 1) {
    Matrix p(x.rows(), 2);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double v = 1.0 / (1.0 + std::exp(-s(i, 0)));
      p(i, 0) = 1.0 - v;
      p(i, 1) = v;
    }
    return p;
  }
  return row_softmax(s);
}

Eigen::VectorXi GbdtModel::predict(const Matrix& x) const {
  const Matrix p = predict_proba(x);
  Eigen::VectorXi out(p.rows());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index arg = 0;
    p.row(i).maxCoeff(&arg);
    out(i) = static_cast<int>(arg);
  }
  return out;
}

GbdtModel fit_gbdt(const Matrix& xtr, const Eigen::VectorXi& ytr,
                   const Matrix& xval, const Eigen::VectorXi& yval, int k,
                   const GbdtConfig& cfg) {
  const Eigen::Index n = xtr.rows();
  const Eigen::Index d = xtr.cols();
  if (n < 20) throw DataError("gbdt requires at least 20 training samples");
  if (ytr.size() != n) throw DataError("label length disagrees with rows");
  if (xval.rows() == 0) throw DataError("empty validation set");
  {
    std::vector<std::int64_t> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (ytr(i) < 0 || ytr(i) >= k) throw DataError("label out of range");
      ++counts[static_cast<std::size_t>(ytr(i))];
    }
    int present = 0;
    for (auto c : counts) present += c > 0 ? 1 : 0;
    if (present < 2)
      throw DataError("gbdt training labels contain a single class");
  }

  GbdtModel model;
  model.classes = k;
  model.heads = (k == 2) ? 1 : k;
  model.feat_mean.resize(d);
  model.feat_sd.resize(d);
  Matrix z(n, d);
  for (Eigen::Index c = 0; c < d; ++c) {
    const double mu = xtr.col(c).mean();
    double sd = std::sqrt((xtr.col(c).array() - mu).square().mean());
    if (sd <= 0.0) sd = 1.0;
    model.feat_mean(c) = mu;
    model.feat_sd(c) = sd;
    z.col(c) = (xtr.col(c).array() - mu) / sd;
  }
  Matrix zval(xval.rows(), d);
  for (Eigen::Index c = 0; c < d; ++c)
    zval.col(c) = (xval.col(c).array() - model.feat_mean(c)) / model.feat_sd(c);

  // Quantile histogram edges on the training data.
  std::vector<std::vector<double>> edges(static_cast<std::size_t>(d));
  BinnedMatrix binned(n, d);
  {
    std::vector<double> sorted(static_cast<std::size_t>(n));
    for (Eigen::Index f = 0; f < d; ++f) {
      for (Eigen::Index i = 0; i < n; ++i)
        sorted[static_cast<std::size_t>(i)] = z(i, f);
      std::sort(sorted.begin(), sorted.end());
      auto& e = edges[static_cast<std::size_t>(f)];
      for (int q = 1; q < cfg.histogram_bins; ++q) {
        const auto pos = static_cast<std::size_t>(
            static_cast<std::int64_t>(q) * n / cfg.histogram_bins);
        const double v = sorted[pos];
        if (e.empty() || v > e.back()) e.push_back(v);
      }
      if (!e.empty() && e.back() >= sorted.back()) e.pop_back();
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto it = std::lower_bound(e.begin(), e.end(), z(i, f));
        binned(i, f) = static_cast<std::uint8_t>(it - e.begin());
      }
    }
  }

  // Base scores from class priors.
  model.base_score.resize(model.heads);
  {
    std::vector<double> prior(static_cast<std::size_t>(k), 0.0);
    for (Eigen::Index i = 0; i < n; ++i)
      prior[static_cast<std::size_t>(ytr(i))] += 1.0;
    for (auto& p : prior) p /= static_cast<double>(n);
    if (model.heads == 1) {
      const double p1 = std::clamp(prior[1], 1e-12, 1.0 - 1e-12);
      model.base_score(0) = std::log(p1 / (1.0 - p1));
    } else {
      for (int c = 0; c < k; ++c)
        model.base_score(c) =
            std::log(std::max(prior[static_cast<std::size_t>(c)], 1e-12));
    }
  }

  const int min_leaf = std::max(1, gbdt_min_samples_leaf(n));
  std::vector<int> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), 0);

  Matrix f_train(n, model.heads);
  Matrix f_val(xval.rows(), model.heads);
  for (int c = 0; c < model.heads; ++c) {
    f_train.col(c).setConstant(model.base_score(c));
    f_val.col(c).setConstant(model.base_score(c));
  }

  auto val_loss = [&]() {
    double loss = 0.0;
    if (model.heads == 1) {
      for (Eigen::Index i = 0; i < f_val.rows(); ++i) {
        const double o = f_val(i, 0);
        loss += (yval(i) == 1)
                    ? (o > 0 ? std::log1p(std::exp(-o)) : -o + std::log1p(std::exp(o)))
                    : (o > 0 ? o + std::log1p(std::exp(-o)) : std::log1p(std::exp(o)));
      }
    } else {
      const Matrix p = row_softmax(f_val);
      for (Eigen::Index i = 0; i < f_val.rows(); ++i)
        loss -= std::log(std::max(p(i, yval(i)), 1e-300));
    }
    return loss / static_cast<double>(f_val.rows());
  };

  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  Vector g(n), h(n);
  for (int round = 0; round < cfg.max_rounds; ++round) {
    std::vector<GbdtTree> round_trees;
    Matrix p_train;
    if (model.heads > 1) p_train = row_softmax(f_train);
    for (int c = 0; c < model.heads; ++c) {
      if (model.heads == 1) {
        for (Eigen::Index i = 0; i < n; ++i) {
          const double p = 1.0 / (1.0 + std::exp(-f_train(i, 0)));
          g(i) = p - static_cast<double>(ytr(i));
          h(i) = std::max(p * (1.0 - p), 1e-16);
        }
      } else {
        for (Eigen::Index i = 0; i < n; ++i) {
          const double p = p_train(i, c);
          g(i) = p - (ytr(i) == c ? 1.0 : 0.0);
          h(i) = std::max(p * (1.0 - p), 1e-16);
        }
      }
      round_trees.push_back(
          build_tree(binned, edges, g, h, all, min_leaf, cfg));
    }
    for (int c = 0; c < model.heads; ++c) {
      const GbdtTree& tree = round_trees[static_cast<std::size_t>(c)];
      for (Eigen::Index i = 0; i < n; ++i)
        f_train(i, c) += tree.predict_row(z.row(i));
      for (Eigen::Index i = 0; i < zval.rows(); ++i)
        f_val(i, c) += tree.predict_row(zval.row(i));
    }
    model.rounds.push_back(std::move(round_trees));

    const double loss = val_loss();
    if (loss < best_loss - 1e-12) {
      best_loss = loss;
      model.best_round = round + 1;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (since_best >= cfg.early_stopping_patience) break;
  }
  model.rounds.resize(static_cast<std::size_t>(model.best_round));
  return model;
}

}  // namespace layerlens
