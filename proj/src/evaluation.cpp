#include "layerlens/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace layerlens {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

constexpr std::uint64_t kZooSalt = 0x200;
constexpr std::uint64_t kWalkSaltBase = 7000;
constexpr std::uint64_t kPoolSalt = 7999;

struct SplitSets {
  LabeledSet train, val, test;
};

SplitSets sets_for_layer(const LayerSlab& slab, const Eigen::VectorXi& labels,
                         const SplitPlan& split) {
  SplitSets s;
  s.train = {take_rows(slab.data, split.train_indices),
             take_labels(labels, split.train_indices)};
  s.val = {take_rows(slab.data, split.val_indices),
           take_labels(labels, split.val_indices)};
  s.test = {take_rows(slab.data, split.test_indices),
            take_labels(labels, split.test_indices)};
  return s;
}

int majority_class(const Eigen::VectorXi& y, int k) {
  std::vector<int> counts(static_cast<std::size_t>(k), 0);
  for (Eigen::Index i = 0; i < y.size(); ++i)
    ++counts[static_cast<std::size_t>(y(i))];
  int best = 0;
  for (int c = 1; c < k; ++c)
    if (counts[static_cast<std::size_t>(c)] > counts[static_cast<std::size_t>(best)])
      best = c;
  return best;
}

}  // namespace

AllLayersResult eval_all_layers(const ActivationPack& pack,
                                const ConceptTable& table,
                                const std::string& concept_name,
                                const EvalOptions& opt) {
  check_pairing(pack, table);
  if (pack.layers.empty()) throw DataError("pack has no layers");
  const auto start = Clock::now();
  const int k = table.cardinality(concept_name);
  const Eigen::VectorXi labels = table.column(concept_name);
  const SplitPlan split = make_split(table, concept_name, opt.max_samples, opt.seed);
  if (split.test_indices.empty())
    throw DataError("concept '" + concept_name + "' leaves no test samples");
  const std::uint64_t zoo_seed = mix(opt.seed, kZooSalt);

  AllLayersResult result;
  result.per_layer.resize(pack.layers.size());
  for (std::size_t l = 0; l < pack.layers.size(); ++l) {
    const auto layer_start = Clock::now();
    const SplitSets s = sets_for_layer(pack.layers[l], labels, split);
    const ZooResult zoo = run_zoo(s.train, s.val, s.test, k, zoo_seed, opt.jobs);
    LayerZooOutcome& out = result.per_layer[l];
    out.layer_index = pack.layers[l].layer_index;
    out.val_accuracy = zoo.best.val_accuracy;
    out.test_accuracy = zoo.best.test_accuracy;
    out.wall_seconds = seconds_since(layer_start);
  }

  double sum = 0.0;
  std::size_t oracle = 0, best_val = 0;
  for (std::size_t l = 0; l < result.per_layer.size(); ++l) {
    sum += result.per_layer[l].test_accuracy;
    if (result.per_layer[l].test_accuracy > result.per_layer[oracle].test_accuracy)
      oracle = l;
    if (result.per_layer[l].val_accuracy > result.per_layer[best_val].val_accuracy)
      best_val = l;
  }
  result.layers_avg_acc = sum / static_cast<double>(result.per_layer.size());
  result.oracle_acc = result.per_layer[oracle].test_accuracy;
  result.oracle_layer = result.per_layer[oracle].layer_index;
  result.best_validation_acc = result.per_layer[best_val].test_accuracy;
  result.best_validation_layer = result.per_layer[best_val].layer_index;
  result.wall_seconds = seconds_since(start);
  return result;
}

MethodResult eval_our_method(const ActivationPack& pack,
                             const ConceptTable& table,
                             const std::string& concept_name,
                             const MiEstimatorConfig& mi_cfg,
                             const EvalOptions& opt) {
  const auto start = Clock::now();
  CharacterizeOptions copt;
  copt.lambda = opt.lambda;
  copt.max_samples = opt.max_samples;
  copt.seed = opt.seed;
  copt.jobs = opt.jobs;

  MethodResult result;
  result.curve = characterize(pack, table, concept_name, mi_cfg, copt);
  result.selected_layer = select_layer(result.curve);

  const int k = table.cardinality(concept_name);
  const Eigen::VectorXi labels = table.column(concept_name);
  const SplitPlan split = make_split(table, concept_name, opt.max_samples, opt.seed);
  if (split.test_indices.empty())
    throw DataError("concept '" + concept_name + "' leaves no test samples");
  std::size_t pos = 0;
  for (std::size_t l = 0; l < pack.layers.size(); ++l)
    if (pack.layers[l].layer_index == result.selected_layer) pos = l;
  const SplitSets s = sets_for_layer(pack.layers[pos], labels, split);
  const ZooResult zoo =
      run_zoo(s.train, s.val, s.test, k, mix(opt.seed, kZooSalt), opt.jobs);
  result.accuracy = zoo.best.test_accuracy;
  result.wall_seconds = seconds_since(start);
  return result;
}

InputReduceResult eval_input_reduce(const ActivationPack& pack,
                                    const ConceptTable& table,
                                    const std::string& concept_name,
                                    const EvalOptions& opt) {
  check_pairing(pack, table);
  if (pack.layers.empty()) throw DataError("pack has no layers");
  const auto start = Clock::now();
  const int k = table.cardinality(concept_name);
  const Eigen::VectorXi labels = table.column(concept_name);
  const SplitPlan split = make_split(table, concept_name, opt.max_samples, opt.seed);
  if (split.test_indices.empty())
    throw DataError("concept '" + concept_name + "' leaves no test samples");
  const double chance_bar = 1.0 / static_cast<double>(k) + 0.05;

  InputReduceResult result;
  // (layer position, surviving feature) pairs pooled across layers.
  std::vector<std::pair<std::size_t, int>> pool;
  for (std::size_t l = pack.layers.size(); l-- > 0;) {
    const SplitSets s = sets_for_layer(pack.layers[l], labels, split);
    const std::uint64_t walk_seed =
        mix(opt.seed, kWalkSaltBase + static_cast<std::uint64_t>(
                                          pack.layers[l].layer_index));
    const TrainedProbe probe =
        train_mapping_probe(s.train, s.val, k, walk_seed);
    InputReduceStep step;
    step.layer_index = pack.layers[l].layer_index;
    step.val_accuracy = probe.val_accuracy;
    step.surviving_features = probe.selected_feature_indices;
    step.zero_units = probe.val_accuracy <= chance_bar;
    result.walk.push_back(step);
    if (step.zero_units) {
      result.stop_layer = step.layer_index;
      break;
    }
    for (int f : probe.selected_feature_indices) pool.emplace_back(l, f);
  }

  if (pool.empty()) {
    result.used_majority_fallback = true;
    const Eigen::VectorXi ytr = take_labels(labels, split.train_indices);
    const Eigen::VectorXi yte = take_labels(labels, split.test_indices);
    const int majority = majority_class(ytr, k);
    Eigen::Index correct = 0;
    for (Eigen::Index i = 0; i < yte.size(); ++i)
      if (yte(i) == majority) ++correct;
    result.accuracy =
        static_cast<double>(correct) / static_cast<double>(yte.size());
    result.wall_seconds = seconds_since(start);
    return result;
  }

  auto pooled = [&](const std::vector<int>& idx) {
    Matrix x(static_cast<Eigen::Index>(idx.size()),
             static_cast<Eigen::Index>(pool.size()));
    for (std::size_t j = 0; j < pool.size(); ++j) {
      const Matrix col = take_rows(pack.layers[pool[j].first].data, idx);
      x.col(static_cast<Eigen::Index>(j)) = col.col(pool[j].second);
    }
    return x;
  };
  LabeledSet train{pooled(split.train_indices),
                   take_labels(labels, split.train_indices)};
  LabeledSet val{pooled(split.val_indices),
                 take_labels(labels, split.val_indices)};
  LabeledSet test{pooled(split.test_indices),
                  take_labels(labels, split.test_indices)};
  const TrainedProbe final_probe =
      train_mapping_probe(train, val, k, mix(opt.seed, kPoolSalt));
  result.accuracy = final_probe.accuracy_on(test);
  result.wall_seconds = seconds_since(start);
  return result;
}

ConceptRow evaluate_concept(const ActivationPack& pack,
                            const ConceptTable& table,
                            const std::string& concept_name,
                            const MiEstimatorConfig& mi_cfg,
                            const EvalOptions& opt) {
  check_pairing(pack, table);
  if (pack.layers.empty()) throw DataError("pack has no layers");

  // Characterization timed alone; the method's zoo is the all-layers zoo at
  // the selected layer (identical seed), so its cost is that layer's only.
  const auto char_start = Clock::now();
  CharacterizeOptions copt;
  copt.lambda = opt.lambda;
  copt.max_samples = opt.max_samples;
  copt.seed = opt.seed;
  copt.jobs = opt.jobs;
  const CharacterizationCurve curve =
      characterize(pack, table, concept_name, mi_cfg, copt);
  const int selected = select_layer(curve);
  const double char_seconds = seconds_since(char_start);

  const AllLayersResult layers = eval_all_layers(pack, table, concept_name, opt);
  const InputReduceResult reduce =
      eval_input_reduce(pack, table, concept_name, opt);

  ConceptRow row;
  row.concept_name = concept_name;
  row.selected_layer = selected;
  double selected_zoo_seconds = 0.0;
  for (const auto& out : layers.per_layer) {
    if (out.layer_index == selected) {
      row.method_acc = out.test_accuracy;
      selected_zoo_seconds = out.wall_seconds;
    }
  }
  row.method_time_s = char_seconds + selected_zoo_seconds;
  row.layers_avg_acc = layers.layers_avg_acc;
  row.oracle_acc = layers.oracle_acc;
  row.pct_oracle =
      layers.oracle_acc > 0.0 ? 100.0 * row.method_acc / layers.oracle_acc : 0.0;
  row.best_validation_acc = layers.best_validation_acc;
  row.best_validation_time_s = layers.wall_seconds;
  row.input_reduce_acc = reduce.accuracy;
  row.input_reduce_time_s = reduce.wall_seconds;
  return row;
}

EvaluationReport evaluate_pack(const ActivationPack& pack,
                               const ConceptTable& table,
                               const std::vector<std::string>& concepts,
                               const MiEstimatorConfig& mi_cfg,
                               const EvalOptions& opt) {
  std::vector<std::string> selected = concepts;
  if (selected.empty()) selected = table.concept_names;
  std::vector<ConceptRow> rows;
  for (const auto& concept_name : selected)
    rows.push_back(evaluate_concept(pack, table, concept_name, mi_cfg, opt));
  return build_report(pack.model_name, rows);
}

EvaluationReport build_report(const std::string& model_name,
                              const std::vector<ConceptRow>& rows) {
  if (rows.empty()) throw DataError("cannot build a report from zero rows");
  EvaluationReport report;
  report.model_name = model_name;
  report.rows = rows;
  ConceptRow& avg = report.averages;
  avg.concept_name = "average";
  avg.selected_layer = -1;
  const double n = static_cast<double>(rows.size());
  for (const auto& row : rows) {
    avg.method_acc += row.method_acc / n;
    avg.method_time_s += row.method_time_s / n;
    avg.layers_avg_acc += row.layers_avg_acc / n;
    avg.oracle_acc += row.oracle_acc / n;
    avg.pct_oracle += row.pct_oracle / n;
    avg.best_validation_acc += row.best_validation_acc / n;
    avg.best_validation_time_s += row.best_validation_time_s / n;
    avg.input_reduce_acc += row.input_reduce_acc / n;
    avg.input_reduce_time_s += row.input_reduce_time_s / n;
  }
  return report;
}

}  // namespace layerlens
