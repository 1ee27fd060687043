#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "layerlens/common.hpp"
#include "layerlens/core.hpp"
#include "layerlens/mi.hpp"

namespace layerlens {

struct LayerCharacterization {
  int layer_index = 0;
  std::string layer_name;
  double u = 0.0;
  double r = 0.0;
  int k = 2;
  double score = 0.0;
};

struct CharacterizationCurve {
  std::string concept_name;
  std::vector<LayerCharacterization> layers;  // ordered by layer_index
  double lambda = 0.26;
};

// Chance-level regularity maps to 0, perfect regularity to 1, exactly.
double regularity_term(double r, int k);

// lambda*u + (1-lambda)*(k*r - 1)/(k - 1)
double score_layer(double u, double r, int k, double lambda);

struct CharacterizeOptions {
  double lambda = 0.26;
  int max_samples = 1000;
  std::uint64_t seed = 0;
  int jobs = 1;
};

CharacterizationCurve characterize(const ActivationPack& pack,
                                   const ConceptTable& table,
                                   const std::string& concept_name,
                                   const MiEstimatorConfig& mi_cfg,
                                   const CharacterizeOptions& opt);

// Argmax of score; ties broken by the smallest layer index.
int select_layer(const CharacterizationCurve& curve);

struct SweepResult {
  std::vector<std::pair<double, int>> selections;  // (lambda, layer)
  int distinct_layers = 0;
  std::vector<LayerCharacterization> base;  // shared (u, r, k) per layer
};

SweepResult lambda_sweep(const ActivationPack& pack, const ConceptTable& table,
                         const std::string& concept_name,
                         const MiEstimatorConfig& mi_cfg,
                         const std::vector<double>& grid,
                         const CharacterizeOptions& opt);

std::vector<double> default_sweep_grid();  // 0.0 to 1.0 step 0.02

std::string curve_to_csv(const CharacterizationCurve& curve);

}  // namespace layerlens
