#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "layerlens/common.hpp"
#include "layerlens/gbdt.hpp"
#include "layerlens/logistic.hpp"
#include "layerlens/mlp.hpp"
#include "layerlens/ridge.hpp"

namespace layerlens {

enum class ProbeFamily { logistic, ridge, gbdt, mlp, mapping };

const char* family_name(ProbeFamily family);
ProbeFamily family_from_name(const std::string& name);

struct LabeledSet {
  Matrix x;
  Eigen::VectorXi y;
};

struct Standardizer {
  Vector mean;
  Vector sd;  // zero-variance columns get 1

  void fit(const Matrix& x);
  Matrix transform(const Matrix& x) const;
};

// MLP-family parameters plus the feature standardizer they expect.
struct MlpProbeModel {
  Standardizer standardizer;
  MlpNet net;
};

struct TrainedProbe {
  ProbeFamily family = ProbeFamily::logistic;
  int classes = 2;
  std::uint64_t seed = 0;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  double train_time_seconds = 0.0;
  // Mapping family only: surviving input columns, ascending.
  std::vector<int> selected_feature_indices;

  std::shared_ptr<const LogisticModel> logistic;
  std::shared_ptr<const RidgeClassifier> ridge;
  std::shared_ptr<const GbdtModel> gbdt;
  std::shared_ptr<const MlpProbeModel> mlp;  // mlp and mapping families

  Eigen::VectorXi predict(const Matrix& x) const;
  double accuracy_on(const LabeledSet& set) const;
};

struct MlpProbeConfig {
  std::vector<int> hidden = {10};
  double learning_rate = 1e-3;
  int batch_size = 32;
  int max_epochs = 200;
  int patience = 15;
};

struct MappingProbeConfig {
  MlpProbeConfig mlp;
  double l1 = 0.001;
  int reduce_patience = 3;  // consecutive failing reduction steps
};

TrainedProbe train_logistic_probe(const LabeledSet& train,
                                  const LabeledSet& val, int k,
                                  std::uint64_t seed);
TrainedProbe train_ridge_probe(const LabeledSet& train, const LabeledSet& val,
                               int k, std::uint64_t seed,
                               const std::vector<double>& alpha_grid =
                                   ridge_alpha_grid());
TrainedProbe train_gbdt_probe(const LabeledSet& train, const LabeledSet& val,
                              int k, std::uint64_t seed,
                              const GbdtConfig& cfg = {});
TrainedProbe train_mlp_probe(const LabeledSet& train, const LabeledSet& val,
                             int k, std::uint64_t seed,
                             const MlpProbeConfig& cfg = {});
TrainedProbe train_mapping_probe(const LabeledSet& train, const LabeledSet& val,
                                 int k, std::uint64_t seed,
                                 const MappingProbeConfig& cfg = {});

struct ZooResult {
  TrainedProbe best;
  std::vector<TrainedProbe> all;          // family order, failures omitted
  std::vector<std::string> warnings;      // one per failed family
  double wall_seconds = 0.0;
};

// Trains all five families; best by validation accuracy, ties broken by
// family order (logistic < ridge < gbdt < mlp < mapping). Test labels are
// only touched after every family's parameters are frozen.
ZooResult run_zoo(const LabeledSet& train, const LabeledSet& val,
                  const LabeledSet& test, int k, std::uint64_t seed,
                  int jobs = 1);

// base.json + base.bin; reload reproduces predictions bit-exactly.
void save_probe(const TrainedProbe& probe, const std::filesystem::path& base);
TrainedProbe load_probe(const std::filesystem::path& base);

}  // namespace layerlens
