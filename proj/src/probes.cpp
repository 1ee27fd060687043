#include "layerlens/probes.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>

#include <json.hpp>

#include "layerlens/version.hpp"

namespace layerlens {

namespace {

using json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

Matrix select_columns(const Matrix& x, const std::vector<int>& cols) {
  Matrix out(x.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j)
    out.col(static_cast<Eigen::Index>(j)) = x.col(cols[j]);
  return out;
}

double accuracy_of(const Eigen::VectorXi& pred, const Eigen::VectorXi& y) {
  Eigen::Index correct = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (pred(i) == y(i)) ++correct;
  return y.size() == 0 ? 0.0
                       : static_cast<double>(correct) / static_cast<double>(y.size());
}

MlpTrainConfig to_train_config(const MlpProbeConfig& cfg, double l1,
                               std::uint64_t seed) {
  MlpTrainConfig out;
  out.learning_rate = cfg.learning_rate;
  out.batch_size = cfg.batch_size;
  out.max_epochs = cfg.max_epochs;
  out.patience = cfg.patience;
  out.l1 = l1;
  out.seed = seed;
  return out;
}

}  // namespace

const char* family_name(ProbeFamily family) {
  switch (family) {
    case ProbeFamily::logistic: return "logistic";
    case ProbeFamily::ridge: return "ridge";
    case ProbeFamily::gbdt: return "gbdt";
    case ProbeFamily::mlp: return "mlp";
    case ProbeFamily::mapping: return "mapping";
  }
  return "unknown";
}

ProbeFamily family_from_name(const std::string& name) {
  if (name == "logistic") return ProbeFamily::logistic;
  if (name == "ridge") return ProbeFamily::ridge;
  if (name == "gbdt") return ProbeFamily::gbdt;
  if (name == "mlp") return ProbeFamily::mlp;
  if (name == "mapping") return ProbeFamily::mapping;
  throw DataError("unknown probe family '" + name + "'");
}

void Standardizer::fit(const Matrix& x) {
  mean.resize(x.cols());
  sd.resize(x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double mu = x.col(c).mean();
    double s = std::sqrt((x.col(c).array() - mu).square().mean());
    if (s <= 0.0) s = 1.0;
    mean(c) = mu;
    sd(c) = s;
  }
}

Matrix Standardizer::transform(const Matrix& x) const {
  Matrix z(x.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c)
    z.col(c) = (x.col(c).array() - mean(c)) / sd(c);
  return z;
}

Eigen::VectorXi TrainedProbe::predict(const Matrix& x) const {
  switch (family) {
    case ProbeFamily::logistic:
      return logistic->predict(x);
    case ProbeFamily::ridge:
      return ridge->predict(x);
    case ProbeFamily::gbdt:
      return gbdt->predict(x);
    case ProbeFamily::mlp:
      return mlp->net.predict(mlp->standardizer.transform(x));
    case ProbeFamily::mapping: {
      const Matrix sub = select_columns(x, selected_feature_indices);
      return mlp->net.predict(mlp->standardizer.transform(sub));
    }
  }
  throw DataError("unknown probe family");
}

double TrainedProbe::accuracy_on(const LabeledSet& set) const {
  return accuracy_of(predict(set.x), set.y);
}

TrainedProbe train_logistic_probe(const LabeledSet& train,
                                  const LabeledSet& val, int k,
                                  std::uint64_t seed) {
  const auto start = Clock::now();
  TrainedProbe probe;
  probe.family = ProbeFamily::logistic;
  probe.classes = k;
  probe.seed = seed;
  probe.logistic =
      std::make_shared<LogisticModel>(fit_logistic(train.x, train.y, k));
  probe.val_accuracy = accuracy_of(probe.logistic->predict(val.x), val.y);
  probe.train_time_seconds = seconds_since(start);
  return probe;
}

TrainedProbe train_ridge_probe(const LabeledSet& train, const LabeledSet& val,
                               int k, std::uint64_t seed,
                               const std::vector<double>& alpha_grid) {
  if (alpha_grid.empty()) throw DataError("empty alpha grid");
  const auto start = Clock::now();
  TrainedProbe probe;
  probe.family = ProbeFamily::ridge;
  probe.classes = k;
  probe.seed = seed;
  double best_acc = -1.0;
  for (double alpha : alpha_grid) {
    auto clf = std::make_shared<RidgeClassifier>(
        fit_ridge_classifier(train.x, train.y, k, alpha));
    const double acc = accuracy_of(clf->predict(val.x), val.y);
    if (acc > best_acc) {  // strict: ties keep the earlier (smaller) alpha
      best_acc = acc;
      probe.ridge = std::move(clf);
    }
  }
  probe.val_accuracy = best_acc;
  probe.train_time_seconds = seconds_since(start);
  return probe;
}

TrainedProbe train_gbdt_probe(const LabeledSet& train, const LabeledSet& val,
                              int k, std::uint64_t seed,
                              const GbdtConfig& cfg) {
  const auto start = Clock::now();
  TrainedProbe probe;
  probe.family = ProbeFamily::gbdt;
  probe.classes = k;
  probe.seed = seed;
  probe.gbdt = std::make_shared<GbdtModel>(
      fit_gbdt(train.x, train.y, val.x, val.y, k, cfg));
  probe.val_accuracy = accuracy_of(probe.gbdt->predict(val.x), val.y);
  probe.train_time_seconds = seconds_since(start);
  return probe;
}

TrainedProbe train_mlp_probe(const LabeledSet& train, const LabeledSet& val,
                             int k, std::uint64_t seed,
                             const MlpProbeConfig& cfg) {
  const auto start = Clock::now();
  std::vector<int> widths;
  widths.push_back(static_cast<int>(train.x.cols()));
  for (int h : cfg.hidden) widths.push_back(h);
  widths.push_back(k);
  auto model = std::make_shared<MlpProbeModel>(
      MlpProbeModel{Standardizer{}, MlpNet(widths, MlpOutput::softmax, seed)});
  model->standardizer.fit(train.x);
  const Matrix ztr = model->standardizer.transform(train.x);
  const Matrix zval = model->standardizer.transform(val.x);
  const MlpTrainLog log =
      model->net.train(ztr, train.y, zval, val.y, to_train_config(cfg, 0.0, seed));

  TrainedProbe probe;
  probe.family = ProbeFamily::mlp;
  probe.classes = k;
  probe.seed = seed;
  probe.mlp = std::move(model);
  probe.val_accuracy = log.best_val_accuracy;
  probe.train_time_seconds = seconds_since(start);
  return probe;
}

TrainedProbe train_mapping_probe(const LabeledSet& train, const LabeledSet& val,
                                 int k, std::uint64_t seed,
                                 const MappingProbeConfig& cfg) {
  const auto start = Clock::now();
  const int d = static_cast<int>(train.x.cols());

  struct Candidate {
    std::vector<int> features;
    std::shared_ptr<MlpProbeModel> model;
    double val_accuracy = 0.0;
  };

  auto fit_on = [&](const std::vector<int>& features) {
    Candidate cand;
    cand.features = features;
    const Matrix xtr = select_columns(train.x, features);
    const Matrix xval = select_columns(val.x, features);
    std::vector<int> widths;
    widths.push_back(static_cast<int>(features.size()));
    for (int h : cfg.mlp.hidden) widths.push_back(h);
    widths.push_back(k);
    const std::uint64_t sub_seed =
        mix(seed, static_cast<std::uint64_t>(features.size()));
    cand.model = std::make_shared<MlpProbeModel>(MlpProbeModel{
        Standardizer{}, MlpNet(widths, MlpOutput::softmax, sub_seed)});
    cand.model->standardizer.fit(xtr);
    const MlpTrainLog log = cand.model->net.train(
        cand.model->standardizer.transform(xtr), train.y,
        cand.model->standardizer.transform(xval), val.y,
        to_train_config(cfg.mlp, cfg.l1, sub_seed));
    cand.val_accuracy = log.best_val_accuracy;
    return cand;
  };

  std::vector<int> current(static_cast<std::size_t>(d));
  std::iota(current.begin(), current.end(), 0);
  Candidate last = fit_on(current);
  Candidate best = last;
  int fails = 0;

  while (current.size() > 1 && fails < cfg.reduce_patience) {
    // Rank current features by the max |weight| each is given in the
    // most recently trained net, then keep the top half.
    const Vector saliency = last.model->net.input_saliency();
    std::vector<int> order(current.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return saliency(a) > saliency(b);
    });
    const std::size_t keep = (current.size() + 1) / 2;
    std::vector<int> next;
    next.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i)
      next.push_back(current[static_cast<std::size_t>(order[i])]);
    std::sort(next.begin(), next.end());

    Candidate cand = fit_on(next);
    if (cand.val_accuracy >= best.val_accuracy) {
      best = cand;
      fails = 0;
    } else {
      ++fails;
    }
    last = std::move(cand);
    current = next;
  }

  TrainedProbe probe;
  probe.family = ProbeFamily::mapping;
  probe.classes = k;
  probe.seed = seed;
  probe.mlp = best.model;
  probe.selected_feature_indices = best.features;
  probe.val_accuracy = best.val_accuracy;
  probe.train_time_seconds = seconds_since(start);
  return probe;
}

ZooResult run_zoo(const LabeledSet& train, const LabeledSet& val,
                  const LabeledSet& test, int k, std::uint64_t seed,
                  int jobs) {
  const auto start = Clock::now();
  constexpr std::size_t kFamilies = 5;
  std::vector<std::optional<TrainedProbe>> slots(kFamilies);
  std::vector<std::string> warnings(kFamilies);

  parallel_for(jobs, kFamilies, [&](std::size_t f) {
    const std::uint64_t fam_seed = mix(seed, static_cast<std::uint64_t>(f));
    try {
      switch (f) {
        case 0: slots[f] = train_logistic_probe(train, val, k, fam_seed); break;
        case 1: slots[f] = train_ridge_probe(train, val, k, fam_seed); break;
        case 2: slots[f] = train_gbdt_probe(train, val, k, fam_seed); break;
        case 3: slots[f] = train_mlp_probe(train, val, k, fam_seed); break;
        case 4: slots[f] = train_mapping_probe(train, val, k, fam_seed); break;
      }
    } catch (const std::exception& e) {
      warnings[f] = std::string(family_name(static_cast<ProbeFamily>(f))) +
                    " probe failed: " + e.what();
    }
  });

  ZooResult result;
  for (std::size_t f = 0; f < kFamilies; ++f) {
    if (!warnings[f].empty()) result.warnings.push_back(warnings[f]);
    if (!slots[f]) continue;
    slots[f]->test_accuracy = slots[f]->accuracy_on(test);
    result.all.push_back(std::move(*slots[f]));
  }
  if (result.all.empty())
    throw DataError("all probe families failed: " +
                    (result.warnings.empty() ? std::string("no detail")
                                             : result.warnings.front()));
  std::size_t best = 0;
  for (std::size_t i = 1; i < result.all.size(); ++i)
    if (result.all[i].val_accuracy > result.all[best].val_accuracy) best = i;
  result.best = result.all[best];
  result.wall_seconds = seconds_since(start);
  return result;
}

namespace {

void append_matrix(std::vector<double>& blob, const Matrix& m) {
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) blob.push_back(m(r, c));
}

void append_vector(std::vector<double>& blob, const Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) blob.push_back(v(i));
}

class BlobReader {
 public:
  explicit BlobReader(std::vector<double> data) : data_(std::move(data)) {}

  Matrix matrix(Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
      for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = next();
    return m;
  }

  Vector vector(Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = next();
    return v;
  }

  double next() {
    if (at_ >= data_.size()) throw DataError("probe blob truncated");
    return data_[at_++];
  }

  void expect_end() const {
    if (at_ != data_.size())
      throw DataError("probe blob has trailing data");
  }

 private:
  std::vector<double> data_;
  std::size_t at_ = 0;
};

json net_meta(const MlpNet& net) {
  json j;
  j["widths"] = net.widths();
  j["output"] = net.output() == MlpOutput::softmax ? "softmax" : "sigmoid";
  return j;
}

void append_net(std::vector<double>& blob, const MlpProbeModel& model) {
  append_vector(blob, model.standardizer.mean);
  append_vector(blob, model.standardizer.sd);
  for (std::size_t i = 0; i < model.net.weight_matrices().size(); ++i) {
    append_matrix(blob, model.net.weight_matrices()[i]);
    append_vector(blob, model.net.bias_vectors()[i]);
  }
}

std::shared_ptr<MlpProbeModel> read_net(const json& meta, BlobReader& reader) {
  const std::vector<int> widths = meta.at("widths").get<std::vector<int>>();
  const MlpOutput output = meta.at("output").get<std::string>() == "sigmoid"
                               ? MlpOutput::sigmoid
                               : MlpOutput::softmax;
  auto model = std::make_shared<MlpProbeModel>(
      MlpProbeModel{Standardizer{}, MlpNet(widths, output, 0)});
  model->standardizer.mean = reader.vector(widths.front());
  model->standardizer.sd = reader.vector(widths.front());
  std::vector<Matrix> w;
  std::vector<Vector> b;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    w.push_back(reader.matrix(widths[i + 1], widths[i]));
    b.push_back(reader.vector(widths[i + 1]));
  }
  model->net.set_weights(std::move(w), std::move(b));
  return model;
}

}  // namespace

void save_probe(const TrainedProbe& probe, const std::filesystem::path& base) {
  json meta;
  meta["spec_version"] = kSpecVersion;
  meta["family"] = family_name(probe.family);
  meta["classes"] = probe.classes;
  meta["seed"] = probe.seed;
  meta["val_accuracy"] = probe.val_accuracy;
  meta["test_accuracy"] = probe.test_accuracy;

  std::vector<double> blob;
  switch (probe.family) {
    case ProbeFamily::logistic: {
      const LogisticModel& m = *probe.logistic;
      meta["dim"] = m.weights.cols();
      append_vector(blob, m.feat_mean);
      append_vector(blob, m.feat_sd);
      append_matrix(blob, m.weights);
      append_vector(blob, m.bias);
      break;
    }
    case ProbeFamily::ridge: {
      const RidgeClassifier& m = *probe.ridge;
      meta["dim"] = m.feat_mean.size();
      meta["heads"] = m.weights.rows();
      meta["alpha"] = m.alpha;
      append_vector(blob, m.feat_mean);
      append_vector(blob, m.feat_sd);
      append_matrix(blob, m.weights);
      break;
    }
    case ProbeFamily::gbdt: {
      const GbdtModel& m = *probe.gbdt;
      meta["dim"] = m.feat_mean.size();
      meta["heads"] = m.heads;
      meta["best_round"] = m.best_round;
      json rounds = json::array();
      for (const auto& round : m.rounds) {
        json heads = json::array();
        for (const auto& tree : round) {
          json nodes = json::array();
          for (const auto& node : tree.nodes)
            nodes.push_back({{"feature", node.feature},
                             {"left", node.left},
                             {"right", node.right}});
          heads.push_back(std::move(nodes));
        }
        rounds.push_back(std::move(heads));
      }
      meta["rounds"] = std::move(rounds);
      append_vector(blob, m.feat_mean);
      append_vector(blob, m.feat_sd);
      append_vector(blob, m.base_score);
      for (const auto& round : m.rounds)
        for (const auto& tree : round)
          for (const auto& node : tree.nodes) {
            blob.push_back(node.threshold);
            blob.push_back(node.value);
          }
      break;
    }
    case ProbeFamily::mlp:
    case ProbeFamily::mapping: {
      meta["net"] = net_meta(probe.mlp->net);
      if (probe.family == ProbeFamily::mapping)
        meta["selected_feature_indices"] = probe.selected_feature_indices;
      append_net(blob, *probe.mlp);
      break;
    }
  }

  std::filesystem::path json_path = base;
  json_path += ".json";
  std::ofstream jf(json_path, std::ios::trunc);
  if (!jf) throw DataError("cannot write " + json_path.string());
  jf << meta.dump(2) << "\n";

  std::filesystem::path bin_path = base;
  bin_path += ".bin";
  std::ofstream bf(bin_path, std::ios::binary | std::ios::trunc);
  if (!bf) throw DataError("cannot write " + bin_path.string());
  bf.write(reinterpret_cast<const char*>(blob.data()),
           static_cast<std::streamsize>(blob.size() * sizeof(double)));
}

TrainedProbe load_probe(const std::filesystem::path& base) {
  std::filesystem::path json_path = base;
  json_path += ".json";
  std::ifstream jf(json_path);
  if (!jf) throw DataError("cannot open " + json_path.string());
  json meta;
  try {
    jf >> meta;
  } catch (const json::exception& e) {
    throw DataError("malformed probe metadata: " + std::string(e.what()));
  }

  std::filesystem::path bin_path = base;
  bin_path += ".bin";
  std::ifstream bf(bin_path, std::ios::binary | std::ios::ate);
  if (!bf) throw DataError("cannot open " + bin_path.string());
  const auto bytes = static_cast<std::size_t>(bf.tellg());
  if (bytes % sizeof(double) != 0)
    throw DataError("probe blob size is not a multiple of 8");
  std::vector<double> data(bytes / sizeof(double));
  bf.seekg(0);
  bf.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(bytes));
  if (!bf) throw DataError("read failure on " + bin_path.string());
  BlobReader reader(std::move(data));

  TrainedProbe probe;
  try {
    probe.family = family_from_name(meta.at("family").get<std::string>());
    probe.classes = meta.at("classes").get<int>();
    probe.seed = meta.at("seed").get<std::uint64_t>();
    probe.val_accuracy = meta.at("val_accuracy").get<double>();
    probe.test_accuracy = meta.at("test_accuracy").get<double>();

    switch (probe.family) {
      case ProbeFamily::logistic: {
        const auto d = meta.at("dim").get<Eigen::Index>();
        auto m = std::make_shared<LogisticModel>();
        m->classes = probe.classes;
        m->feat_mean = reader.vector(d);
        m->feat_sd = reader.vector(d);
        m->weights = reader.matrix(probe.classes, d);
        m->bias = reader.vector(probe.classes);
        probe.logistic = std::move(m);
        break;
      }
      case ProbeFamily::ridge: {
        const auto d = meta.at("dim").get<Eigen::Index>();
        const auto heads = meta.at("heads").get<Eigen::Index>();
        auto m = std::make_shared<RidgeClassifier>();
        m->classes = probe.classes;
        m->alpha = meta.at("alpha").get<double>();
        m->feat_mean = reader.vector(d);
        m->feat_sd = reader.vector(d);
        m->weights = reader.matrix(heads, d + 1);
        probe.ridge = std::move(m);
        break;
      }
      case ProbeFamily::gbdt: {
        const auto d = meta.at("dim").get<Eigen::Index>();
        auto m = std::make_shared<GbdtModel>();
        m->classes = probe.classes;
        m->heads = meta.at("heads").get<int>();
        m->best_round = meta.at("best_round").get<int>();
        m->feat_mean = reader.vector(d);
        m->feat_sd = reader.vector(d);
        m->base_score = reader.vector(m->heads);
        for (const auto& round : meta.at("rounds")) {
          std::vector<GbdtTree> trees;
          for (const auto& jtree : round) {
            GbdtTree tree;
            for (const auto& jnode : jtree) {
              GbdtNode node;
              node.feature = jnode.at("feature").get<int>();
              node.left = jnode.at("left").get<int>();
              node.right = jnode.at("right").get<int>();
              node.threshold = reader.next();
              node.value = reader.next();
              tree.nodes.push_back(node);
            }
            trees.push_back(std::move(tree));
          }
          m->rounds.push_back(std::move(trees));
        }
        probe.gbdt = std::move(m);
        break;
      }
      case ProbeFamily::mlp:
      case ProbeFamily::mapping: {
        probe.mlp = read_net(meta.at("net"), reader);
        if (probe.family == ProbeFamily::mapping)
          probe.selected_feature_indices =
              meta.at("selected_feature_indices").get<std::vector<int>>();
        break;
      }
    }
  } catch (const json::exception& e) {
    throw DataError("malformed probe metadata: " + std::string(e.what()));
  }
  reader.expect_end();
  return probe;
}

}  // namespace layerlens
