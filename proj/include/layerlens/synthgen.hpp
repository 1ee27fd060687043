#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "layerlens/common.hpp"
#include "layerlens/core.hpp"
#include "layerlens/mlp.hpp"

namespace layerlens {

struct SyntheticTask {
  int input_dim = 16;
  double noise_std = 0.15;
  std::uint64_t seed = 0;
};

// Concept layout: four linear-threshold parts over the task latents,
// two boolean assemblies over the parts, and one distractor driven by a
// latent the inputs never see. assembly_main is the training target.
struct ConceptInfo {
  std::string name;
  std::string kind;  // part | assembly | distractor
  std::string formula;
};

const std::vector<ConceptInfo>& synthetic_concepts();
inline constexpr const char* kTaskConcept = "assembly_main";

struct SyntheticData {
  Matrix x;  // n x input_dim
  ConceptTable table;
};

SyntheticData generate_dataset(const SyntheticTask& task, int n);

struct ReferenceNet {
  MlpNet net;
  std::vector<int> widths;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  int epochs = 0;
};

// Trains until validation accuracy >= 0.95 or 500 epochs; throws if the
// threshold is never reached. Needs >= 3 hidden layers to probe.
ReferenceNet train_reference(const Matrix& x, const Eigen::VectorXi& task_labels,
                             std::uint64_t seed,
                             const std::vector<int>& hidden = {64, 48, 32, 16, 8});

// Post-ReLU activations per hidden layer plus the pre-sigmoid logit.
ActivationPack export_pack(const ReferenceNet& net, const Matrix& x,
                           const std::vector<std::string>& sample_ids,
                           const std::string& model_name);

struct FixtureGate {
  double task_r_last_hidden = 0.0;
  double max_distractor_r = 0.0;
};

struct Fixture {
  ActivationPack pack;
  ConceptTable table;
  ReferenceNet net;
  SyntheticTask task;
  int n = 0;
  int attempt = 0;
  std::uint64_t effective_seed = 0;
  FixtureGate gate;
};

// Regenerates with a derived seed on gate failure, at most 5 attempts.
Fixture make_fixture(const SyntheticTask& task, int n,
                     int gate_max_samples = 400);

std::string fixture_json(const Fixture& fixture);
void write_fixture(const Fixture& fixture, const std::filesystem::path& dir);

}  // namespace layerlens
