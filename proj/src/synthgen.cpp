#include "layerlens/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>

#include <json.hpp>

#include "layerlens/regularity.hpp"

namespace layerlens {

namespace {

using json = nlohmann::ordered_json;

constexpr int kTaskLatents = 4;

}  // namespace

const std::vector<ConceptInfo>& synthetic_concepts() {
  static const std::vector<ConceptInfo> concepts = {
      {"part_a", "part", "z1 + 0.5*z2 > 0"},
      {"part_b", "part", "z2 - 0.7*z3 > 0.15"},
      {"part_c", "part", "z3 + z4 > -0.2"},
      {"part_d", "part", "z4 - 0.4*z1 > 0.1"},
      {"assembly_main", "assembly", "(part_a AND part_b) OR (part_c AND part_d)"},
      {"assembly_alt", "assembly", "part_b OR part_d"},
      {"unrelated", "distractor", "z_d > 0"},
  };
  return concepts;
}

SyntheticData generate_dataset(const SyntheticTask& task, int n) {
  if (n < 1) throw DataError("n must be >= 1");
  if (task.input_dim < kTaskLatents)
    throw DataError("input_dim must be >= 4");
  if (task.noise_std < 0.0) throw DataError("noise_std must be >= 0");

  std::mt19937_64 mix_rng(mix(task.seed, 0xA0ULL));
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix a(task.input_dim, kTaskLatents);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = gauss(mix_rng);

  std::mt19937_64 z_rng(mix(task.seed, 0x5AULL));
  std::mt19937_64 noise_rng(mix(task.seed, 0x7EULL));

  SyntheticData data;
  data.x.resize(n, task.input_dim);
  const auto& concepts = synthetic_concepts();
  data.table.concept_names.reserve(concepts.size());
  for (const auto& c : concepts) data.table.concept_names.push_back(c.name);
  data.table.labels.resize(n, static_cast<Eigen::Index>(concepts.size()));
  data.table.cardinalities.assign(concepts.size(), 2);
  data.table.sample_ids.reserve(static_cast<std::size_t>(n));

  Vector z(kTaskLatents);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < kTaskLatents; ++j) z(j) = gauss(z_rng);
    const double zd = gauss(z_rng);

    const bool g1 = z(0) + 0.5 * z(1) > 0.0;
    const bool g2 = z(1) - 0.7 * z(2) > 0.15;
    const bool g3 = z(2) + z(3) > -0.2;
    const bool g4 = z(3) - 0.4 * z(0) > 0.1;
    const bool h1 = (g1 && g2) || (g3 && g4);
    const bool h2 = g2 || g4;
    const bool distractor = zd > 0.0;

    data.table.labels(i, 0) = g1 ? 1 : 0;
    data.table.labels(i, 1) = g2 ? 1 : 0;
    data.table.labels(i, 2) = g3 ? 1 : 0;
    data.table.labels(i, 3) = g4 ? 1 : 0;
    data.table.labels(i, 4) = h1 ? 1 : 0;
    data.table.labels(i, 5) = h2 ? 1 : 0;
    data.table.labels(i, 6) = distractor ? 1 : 0;

    data.x.row(i) = (a * z).transpose();
    for (Eigen::Index d = 0; d < task.input_dim; ++d)
      data.x(i, d) += task.noise_std * gauss(noise_rng);

    char id[16];
    std::snprintf(id, sizeof(id), "s%06d", i);
    data.table.sample_ids.emplace_back(id);
  }
  return data;
}

ReferenceNet train_reference(const Matrix& x, const Eigen::VectorXi& task_labels,
                             std::uint64_t seed,
                             const std::vector<int>& hidden) {
  if (hidden.size() < 3)
    throw DataError("reference net needs >= 3 hidden layers to probe");
  const Eigen::Index n = x.rows();
  if (task_labels.size() != n)
    throw DataError("label length disagrees with rows");
  if (n < 50) throw DataError("reference training needs >= 50 samples");

  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(mix(seed, 0x51ULL));
  std::shuffle(idx.begin(), idx.end(), rng);
  const Eigen::Index n_train = (n * 6) / 10;
  const Eigen::Index n_val = n / 5;
  auto subset = [&](Eigen::Index from, Eigen::Index count) {
    std::pair<Matrix, Eigen::VectorXi> out;
    out.first.resize(count, x.cols());
    out.second.resize(count);
    for (Eigen::Index i = 0; i < count; ++i) {
      out.first.row(i) = x.row(idx[static_cast<std::size_t>(from + i)]);
      out.second(i) = task_labels(idx[static_cast<std::size_t>(from + i)]);
    }
    return out;
  };
  const auto [xtr, ytr] = subset(0, n_train);
  const auto [xval, yval] = subset(n_train, n_val);
  const auto [xte, yte] = subset(n_train + n_val, n - n_train - n_val);

  std::vector<int> widths;
  widths.push_back(static_cast<int>(x.cols()));
  for (int h : hidden) widths.push_back(h);
  widths.push_back(1);

  ReferenceNet ref{MlpNet(widths, MlpOutput::sigmoid, seed), widths, 0.0, 0.0, 0};
  MlpTrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 32;
  cfg.max_epochs = 500;
  cfg.patience = cfg.max_epochs + 1;  // stop on threshold or epoch cap only
  cfg.stop_val_accuracy = 0.95;
  cfg.seed = seed;
  const MlpTrainLog log = ref.net.train(xtr, ytr, xval, yval, cfg);
  ref.val_accuracy = log.best_val_accuracy;
  ref.epochs = log.epochs_run;
  if (ref.val_accuracy < 0.95)
    throw DataError("reference net validation accuracy " +
                    format_double(ref.val_accuracy) + " below 0.95");
  ref.test_accuracy = ref.net.accuracy(xte, yte);
  return ref;
}

ActivationPack export_pack(const ReferenceNet& net, const Matrix& x,
                           const std::vector<std::string>& sample_ids,
                           const std::string& model_name) {
  if (static_cast<Eigen::Index>(sample_ids.size()) != x.rows())
    throw DataError("sample_ids length disagrees with rows");
  const std::vector<Matrix> acts = net.net.forward_capture(x);
  ActivationPack pack;
  pack.model_name = model_name;
  pack.sample_ids = sample_ids;
  for (std::size_t l = 0; l < acts.size(); ++l) {
    LayerSlab slab;
    slab.layer_index = static_cast<int>(l);
    slab.layer_name =
        l + 1 < acts.size()
            ? "relu_" + std::to_string(net.widths[l + 1])
            : "logit";
    slab.data = acts[l].cast<float>();
    pack.layers.push_back(std::move(slab));
  }
  return pack;
}

Fixture make_fixture(const SyntheticTask& task, int n, int gate_max_samples) {
  std::string last_failure = "no attempts made";
  for (int attempt = 0; attempt < 5; ++attempt) {
    SyntheticTask eff = task;
    eff.seed = attempt == 0 ? task.seed
                            : mix(task.seed, static_cast<std::uint64_t>(attempt));
    SyntheticData data = generate_dataset(eff, n);
    const Eigen::VectorXi task_labels = data.table.column(kTaskConcept);

    std::optional<ReferenceNet> net;
    try {
      net.emplace(train_reference(data.x, task_labels, eff.seed));
    } catch (const DataError& e) {
      last_failure = e.what();
      continue;
    }
    if (net->test_accuracy < 0.95) {
      last_failure = "reference net test accuracy " +
                     format_double(net->test_accuracy) + " below 0.95";
      continue;
    }

    ActivationPack pack =
        export_pack(*net, data.x, data.table.sample_ids, "synth_ref");

    const std::size_t last_hidden = pack.layers.size() - 2;
    const SplitPlan task_split =
        make_split(data.table, kTaskConcept, gate_max_samples, eff.seed);
    const std::vector<int> task_pool = task_split.pool();
    const RegularityScore task_r = regularity(
        take_rows(pack.layers[last_hidden].data, task_pool),
        take_labels(task_labels, task_pool), 2,
        mix(eff.seed, 0x6A7EULL + last_hidden));

    const Eigen::VectorXi distractor_labels = data.table.column("unrelated");
    const SplitPlan d_split =
        make_split(data.table, "unrelated", gate_max_samples, eff.seed);
    const std::vector<int> d_pool = d_split.pool();
    double max_distractor_r = 0.0;
    for (std::size_t l = 0; l < pack.layers.size(); ++l) {
      const RegularityScore r = regularity(
          take_rows(pack.layers[l].data, d_pool),
          take_labels(distractor_labels, d_pool), 2,
          mix(eff.seed, 0x6A7EULL + l));
      max_distractor_r = std::max(max_distractor_r, r.r_accuracy);
    }

    if (task_r.r_accuracy < 0.9) {
      last_failure = "task regularity " + format_double(task_r.r_accuracy) +
                     " below 0.9 at the last hidden layer";
      continue;
    }
    if (max_distractor_r > 0.6) {
      last_failure = "distractor regularity " +
                     format_double(max_distractor_r) + " above chance + 0.1";
      continue;
    }

    Fixture fixture{std::move(pack),   std::move(data.table),
                    std::move(*net),   task,
                    n,                 attempt,
                    eff.seed,          {task_r.r_accuracy, max_distractor_r}};
    return fixture;
  }
  throw DataError("fixture generation failed after 5 attempts: " + last_failure);
}

std::string fixture_json(const Fixture& fixture) {
  json j;
  j["model_name"] = fixture.pack.model_name;
  j["n"] = fixture.n;
  j["input_dim"] = fixture.task.input_dim;
  j["noise_std"] = fixture.task.noise_std;
  j["seed"] = fixture.task.seed;
  j["effective_seed"] = fixture.effective_seed;
  j["attempt"] = fixture.attempt;
  j["task_label"] = kTaskConcept;
  json concepts = json::array();
  for (const auto& c : synthetic_concepts())
    concepts.push_back({{"name", c.name}, {"kind", c.kind}, {"formula", c.formula}});
  j["concepts"] = std::move(concepts);
  j["net"] = {{"widths", fixture.net.widths},
              {"output", "sigmoid"},
              {"epochs", fixture.net.epochs},
              {"val_accuracy", fixture.net.val_accuracy},
              {"test_accuracy", fixture.net.test_accuracy}};
  j["gate"] = {{"task_r_last_hidden", fixture.gate.task_r_last_hidden},
               {"max_distractor_r", fixture.gate.max_distractor_r}};
  return j.dump(2) + "\n";
}

void write_fixture(const Fixture& fixture, const std::filesystem::path& dir) {
  write_pack(fixture.pack, dir);
  write_concepts(fixture.table, dir / "concepts.csv");
  std::ofstream f(dir / "fixture.json", std::ios::trunc);
  if (!f) throw DataError("cannot write " + (dir / "fixture.json").string());
  f << fixture_json(fixture);
}

}  // namespace layerlens
