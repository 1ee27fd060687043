#include "layerlens/mi.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <unordered_map>

namespace layerlens {

namespace {

constexpr double kLog2e = 1.4426950408889634;  // 1/ln(2)

void check_labels(const Eigen::VectorXi& labels, int k) {
  if (labels.size() == 0) throw DataError("labels are empty");
  if (k < 2) throw DataError("cardinality must be >= 2");
  for (Eigen::Index i = 0; i < labels.size(); ++i)
    if (labels(i) < 0 || labels(i) >= k)
      throw DataError("label " + std::to_string(labels(i)) +
                      " out of range [0," + std::to_string(k) + ")");
}

}  // namespace

double entropy(const Eigen::VectorXi& labels, int k) {
  check_labels(labels, k);
  std::vector<std::int64_t> counts(static_cast<std::size_t>(k), 0);
  for (Eigen::Index i = 0; i < labels.size(); ++i)
    ++counts[static_cast<std::size_t>(labels(i))];
  const double n = static_cast<double>(labels.size());
  double h = 0.0;
  for (int c = 0; c < k; ++c) {
    const auto cnt = counts[static_cast<std::size_t>(c)];
    if (cnt == 0) continue;
    const double p = static_cast<double>(cnt) / n;
    h -= p * std::log(p) * kLog2e;
  }
  return h;
}

double plugin_mi(const Eigen::MatrixXi& x_discrete,
                 const Eigen::VectorXi& labels) {
  const Eigen::Index n = x_discrete.rows();
  if (n == 0) throw DataError("empty input");
  if (labels.size() != n) throw DataError("row count disagrees with labels");
  const int k = labels.maxCoeff() + 1;

  std::map<std::vector<int>, std::vector<std::int64_t>> joint;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<int> tuple(static_cast<std::size_t>(x_discrete.cols()));
    for (Eigen::Index d = 0; d < x_discrete.cols(); ++d)
      tuple[static_cast<std::size_t>(d)] = x_discrete(i, d);
    auto& row = joint[tuple];
    if (row.empty()) {
      if (joint.size() > 10000)
        throw DataError("discrete product space exceeds 10^4 tuples");
      row.assign(static_cast<std::size_t>(k), 0);
    }
    ++row[static_cast<std::size_t>(labels(i))];
  }

  std::vector<std::int64_t> class_counts(static_cast<std::size_t>(k), 0);
  for (Eigen::Index i = 0; i < n; ++i)
    ++class_counts[static_cast<std::size_t>(labels(i))];

  const double dn = static_cast<double>(n);
  double mi = 0.0;
  for (const auto& [tuple, row] : joint) {
    std::int64_t nx = 0;
    for (auto c : row) nx += c;
    for (int c = 0; c < k; ++c) {
      const auto nxc = row[static_cast<std::size_t>(c)];
      if (nxc == 0) continue;
      const double pxc = static_cast<double>(nxc) / dn;
      const double px = static_cast<double>(nx) / dn;
      const double pc = static_cast<double>(class_counts[static_cast<std::size_t>(c)]) / dn;
      mi += pxc * std::log(pxc / (px * pc)) * kLog2e;
    }
  }
  return std::max(mi, 0.0);
}

std::vector<double> geometric_bandwidths(double lo, double hi, int t) {
  if (t < 1) throw DataError("ensemble size must be >= 1");
  if (t == 1) return {std::sqrt(lo * hi)};
  std::vector<double> out(static_cast<std::size_t>(t));
  const double ratio = std::pow(hi / lo, 1.0 / (t - 1));
  for (int i = 0; i < t; ++i)
    out[static_cast<std::size_t>(i)] = lo * std::pow(ratio, i);
  return out;
}

MiEstimate estimate_mi(const Matrix& x, const Eigen::VectorXi& labels, int k,
                       const MiEstimatorConfig& cfg) {
  const Eigen::Index n = x.rows();
  if (n < 50) throw DataError("estimate_mi requires N >= 50");
  if (x.cols() < 1) throw DataError("estimate_mi requires dimension >= 1");
  if (labels.size() != n) throw DataError("row count disagrees with labels");
  check_labels(labels, k);
  if (cfg.ensemble_size < 1) throw DataError("ensemble size must be >= 1");
  if (cfg.projection_dim < 1) throw DataError("projection_dim must be >= 1");
  if (cfg.hash_bucket_factor <= 0) throw DataError("hash_bucket_factor must be > 0");
  if (cfg.gamma <= 0) throw DataError("gamma must be > 0");

  std::vector<double> bandwidths = cfg.bandwidth_set.empty()
                                       ? geometric_bandwidths(0.25, 4.0, cfg.ensemble_size)
                                       : cfg.bandwidth_set;
  {
    std::vector<double> sorted = bandwidths;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      if (sorted[i] <= 0) throw DataError("bandwidths must be positive");
      if (i > 0 && sorted[i] == sorted[i - 1])
        throw DataError("bandwidths must be distinct");
    }
  }

  const double h = entropy(labels, k);
  if (h == 0.0) return {0.0, 0.0, 0.0};

  // Standardize columns; drop zero-variance ones.
  std::vector<Eigen::Index> keep;
  Matrix z(n, x.cols());
  for (Eigen::Index d = 0; d < x.cols(); ++d) {
    const double mu = x.col(d).mean();
    const double var = (x.col(d).array() - mu).square().mean();
    const double sd = std::sqrt(var);
    if (sd <= 1e-12 * std::max(1.0, std::abs(mu))) continue;
    z.col(static_cast<Eigen::Index>(keep.size())) = (x.col(d).array() - mu) / sd;
    keep.push_back(d);
  }
  const Eigen::Index d_kept = static_cast<Eigen::Index>(keep.size());
  if (d_kept == 0) return {0.0, h, 0.0};
  Matrix y = z.leftCols(d_kept);

  if (d_kept > cfg.projection_dim) {
    const Eigen::Index p = cfg.projection_dim;
    std::mt19937_64 rng(mix(cfg.seed, 0xA11CEULL));
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix proj(d_kept, p);
    for (Eigen::Index i = 0; i < d_kept; ++i)
      for (Eigen::Index j = 0; j < p; ++j) proj(i, j) = gauss(rng);
    proj /= std::sqrt(static_cast<double>(p));
    y = (y * proj).eval();
  }

  const Eigen::Index d_eff = y.cols();
  Vector sd_eff(d_eff);
  for (Eigen::Index d = 0; d < d_eff; ++d) {
    const double mu = y.col(d).mean();
    sd_eff(d) = std::sqrt((y.col(d).array() - mu).square().mean());
  }

  const std::uint64_t buckets = static_cast<std::uint64_t>(
      std::ceil(cfg.hash_bucket_factor * static_cast<double>(n)));
  std::vector<std::int64_t> class_counts(static_cast<std::size_t>(k), 0);
  for (Eigen::Index i = 0; i < n; ++i)
    ++class_counts[static_cast<std::size_t>(labels(i))];

  const double dn = static_cast<double>(n);
  double total = 0.0;
  std::vector<std::int64_t> q(static_cast<std::size_t>(d_eff));
  for (std::size_t t = 0; t < bandwidths.size(); ++t) {
    const double eps = bandwidths[t];
    const std::uint64_t hash_seed = mix(cfg.seed, static_cast<std::uint64_t>(t));

    // bucket id -> dense row of per-class counts, insertion-ordered
    std::unordered_map<std::uint64_t, std::size_t> bucket_row;
    std::vector<std::vector<std::int64_t>> counts;
    std::vector<std::int64_t> bucket_totals;

    for (Eigen::Index i = 0; i < n; ++i) {
      std::uint64_t hsh = hash_seed;
      for (Eigen::Index d = 0; d < d_eff; ++d) {
        const double w = eps * cfg.gamma * (sd_eff(d) > 0 ? sd_eff(d) : 1.0);
        const double qd = std::floor(y(i, d) / w);
        q[static_cast<std::size_t>(d)] = static_cast<std::int64_t>(qd);
        hsh = splitmix64(hsh ^ static_cast<std::uint64_t>(q[static_cast<std::size_t>(d)]));
      }
      const std::uint64_t b = hsh % buckets;
      auto [it, inserted] = bucket_row.try_emplace(b, counts.size());
      if (inserted) {
        counts.emplace_back(static_cast<std::size_t>(k), 0);
        bucket_totals.push_back(0);
      }
      ++counts[it->second][static_cast<std::size_t>(labels(i))];
      ++bucket_totals[it->second];
    }

    double est = 0.0;
    for (std::size_t r = 0; r < counts.size(); ++r) {
      const double ni = static_cast<double>(bucket_totals[r]);
      for (int c = 0; c < k; ++c) {
        const auto nij = counts[r][static_cast<std::size_t>(c)];
        if (nij == 0) continue;
        const double nj = static_cast<double>(class_counts[static_cast<std::size_t>(c)]);
        est += (static_cast<double>(nij) / dn) *
               std::log(static_cast<double>(nij) * dn / (ni * nj)) * kLog2e;
      }
    }
    total += std::max(est, 0.0);
  }

  MiEstimate out;
  out.entropy_bits = h;
  out.mutual_information_bits =
      std::clamp(total / static_cast<double>(bandwidths.size()), 0.0, h);
  out.uncertainty_coefficient =
      std::clamp(out.mutual_information_bits / h, 0.0, 1.0);
  return out;
}

MiEstimate estimate_mi(const LayerSlab& slab, const Eigen::VectorXi& labels,
                       int k, const MiEstimatorConfig& cfg) {
  return estimate_mi(slab.as_double(), labels, k, cfg);
}

}  // namespace layerlens
