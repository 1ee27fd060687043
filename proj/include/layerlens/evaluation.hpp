#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "layerlens/common.hpp"
#include "layerlens/core.hpp"
#include "layerlens/probes.hpp"
#include "layerlens/selection.hpp"

namespace layerlens {

struct EvalOptions {
  double lambda = 0.26;
  int max_samples = 1000;
  std::uint64_t seed = 0;
  int jobs = 1;
};

struct LayerZooOutcome {
  int layer_index = 0;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  double wall_seconds = 0.0;
};

struct AllLayersResult {
  std::vector<LayerZooOutcome> per_layer;
  double layers_avg_acc = 0.0;      // mean per-layer best-zoo test accuracy
  double oracle_acc = 0.0;          // max test accuracy (reporting only)
  int oracle_layer = 0;
  double best_validation_acc = 0.0; // test accuracy at max-validation layer
  int best_validation_layer = 0;
  double wall_seconds = 0.0;
};

struct MethodResult {
  CharacterizationCurve curve;
  int selected_layer = 0;
  double accuracy = 0.0;
  double wall_seconds = 0.0;  // characterization + the one zoo
};

struct InputReduceStep {
  int layer_index = 0;
  double val_accuracy = 0.0;
  std::vector<int> surviving_features;
  bool zero_units = false;
};

struct InputReduceResult {
  std::vector<InputReduceStep> walk;  // last layer first
  int stop_layer = -1;                // -1 when every layer contributed
  bool used_majority_fallback = false;
  double accuracy = 0.0;
  double wall_seconds = 0.0;
};

struct ConceptRow {
  std::string concept_name;
  int selected_layer = 0;
  double method_acc = 0.0;
  double method_time_s = 0.0;
  double layers_avg_acc = 0.0;
  double oracle_acc = 0.0;
  double pct_oracle = 0.0;
  double best_validation_acc = 0.0;
  double best_validation_time_s = 0.0;
  double input_reduce_acc = 0.0;
  double input_reduce_time_s = 0.0;
};

struct EvaluationReport {
  std::string model_name;
  std::vector<ConceptRow> rows;
  ConceptRow averages;  // concept_name "average"; selected_layer -1
};

AllLayersResult eval_all_layers(const ActivationPack& pack,
                                const ConceptTable& table,
                                const std::string& concept_name,
                                const EvalOptions& opt);

MethodResult eval_our_method(const ActivationPack& pack,
                             const ConceptTable& table,
                             const std::string& concept_name,
                             const MiEstimatorConfig& mi_cfg,
                             const EvalOptions& opt);

InputReduceResult eval_input_reduce(const ActivationPack& pack,
                                    const ConceptTable& table,
                                    const std::string& concept_name,
                                    const EvalOptions& opt);

ConceptRow evaluate_concept(const ActivationPack& pack,
                            const ConceptTable& table,
                            const std::string& concept_name,
                            const MiEstimatorConfig& mi_cfg,
                            const EvalOptions& opt);

EvaluationReport evaluate_pack(const ActivationPack& pack,
                               const ConceptTable& table,
                               const std::vector<std::string>& concepts,
                               const MiEstimatorConfig& mi_cfg,
                               const EvalOptions& opt);

EvaluationReport build_report(const std::string& model_name,
                              const std::vector<ConceptRow>& rows);

std::string report_csv(const EvaluationReport& report);
std::string report_per_concept_csv(const EvaluationReport& report);
std::string report_json(const EvaluationReport& report, double lambda,
                        int max_samples, std::uint64_t seed);
// report.csv re-parsed into rows; used to verify emission is lossless.
std::vector<ConceptRow> parse_per_concept_csv(const std::string& csv);

std::string curve_svg(const CharacterizationCurve& curve);
std::string sweep_svg(const std::vector<std::pair<double, int>>& selections,
                      int n_layers, const std::string& concept_name);

}  // namespace layerlens
