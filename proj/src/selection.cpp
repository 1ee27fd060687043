#include "layerlens/selection.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

#include "layerlens/regularity.hpp"

namespace layerlens {

double regularity_term(double r, int k) {
  // (k*r - 1)/(k - 1) rearranged so r = 1/k gives exactly 0 and r = 1
  // exactly 1 in floating point.
  const double chance = 1.0 / static_cast<double>(k);
  return (r - chance) / (1.0 - chance);
}

double score_layer(double u, double r, int k, double lambda) {
  if (!(u >= 0.0 && u <= 1.0)) throw std::invalid_argument("u outside [0,1]");
  if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("r outside [0,1]");
  if (k < 2) throw std::invalid_argument("k must be >= 2");
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw std::invalid_argument("lambda outside [0,1]");
  return lambda * u + (1.0 - lambda) * regularity_term(r, k);
}

CharacterizationCurve characterize(const ActivationPack& pack,
                                   const ConceptTable& table,
                                   const std::string& concept_name,
                                   const MiEstimatorConfig& mi_cfg,
                                   const CharacterizeOptions& opt) {
  check_pairing(pack, table);
  if (pack.layers.empty()) throw DataError("pack has no layers");
  const int k = table.cardinality(concept_name);
  const Eigen::VectorXi all_labels = table.column(concept_name);
  const SplitPlan split =
      make_split(table, concept_name, opt.max_samples, opt.seed);
  const std::vector<int> pool = split.pool();
  const Eigen::VectorXi labels = take_labels(all_labels, pool);

  CharacterizationCurve curve;
  curve.concept_name = concept_name;
  curve.lambda = opt.lambda;
  curve.layers.resize(pack.layers.size());

  parallel_for(opt.jobs, pack.layers.size(), [&](std::size_t l) {
    const LayerSlab& slab = pack.layers[l];
    const Matrix x = take_rows(slab.data, pool);
    MiEstimatorConfig cfg = mi_cfg;
    cfg.seed = mix(mi_cfg.seed, static_cast<std::uint64_t>(l));
    const MiEstimate mi = estimate_mi(x, labels, k, cfg);
    const RegularityScore reg =
        regularity(x, labels, k, mix(opt.seed, 1000 + static_cast<std::uint64_t>(l)));
    LayerCharacterization& c = curve.layers[l];
    c.layer_index = slab.layer_index;
    c.layer_name = slab.layer_name;
    c.u = mi.uncertainty_coefficient;
    c.r = reg.r_accuracy;
    c.k = k;
    c.score = score_layer(c.u, c.r, k, opt.lambda);
  });
  return curve;
}

int select_layer(const CharacterizationCurve& curve) {
  if (curve.layers.empty()) throw std::invalid_argument("empty curve");
  std::size_t best = 0;
  for (std::size_t l = 1; l < curve.layers.size(); ++l)
    if (curve.layers[l].score > curve.layers[best].score) best = l;
  return curve.layers[best].layer_index;
}

SweepResult lambda_sweep(const ActivationPack& pack, const ConceptTable& table,
                         const std::string& concept_name,
                         const MiEstimatorConfig& mi_cfg,
                         const std::vector<double>& grid,
                         const CharacterizeOptions& opt) {
  if (grid.empty()) throw std::invalid_argument("empty lambda grid");
  for (double l : grid)
    if (!(l >= 0.0 && l <= 1.0))
      throw std::invalid_argument("lambda outside [0,1]");

  CharacterizationCurve curve = characterize(pack, table, concept_name, mi_cfg, opt);
  SweepResult result;
  result.base = curve.layers;
  std::set<int> distinct;
  for (double lambda : grid) {
    CharacterizationCurve rescored = curve;
    rescored.lambda = lambda;
    for (auto& c : rescored.layers)
      c.score = score_layer(c.u, c.r, c.k, lambda);
    const int sel = select_layer(rescored);
    result.selections.emplace_back(lambda, sel);
    distinct.insert(sel);
  }
  result.distinct_layers = static_cast<int>(distinct.size());
  return result;
}

std::vector<double> default_sweep_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 50; ++i) grid.push_back(i * 0.02);
  grid.back() = 1.0;
  return grid;
}

std::string curve_to_csv(const CharacterizationCurve& curve) {
  std::ostringstream out;
  out << "layer_index,layer_name,u,r,score\n";
  for (const auto& c : curve.layers) {
    out << c.layer_index << "," << c.layer_name << "," << format_double(c.u)
        << "," << format_double(c.r) << "," << format_double(c.score) << "\n";
  }
  return out.str();
}

}  // namespace layerlens
