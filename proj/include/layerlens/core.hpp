#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "layerlens/common.hpp"

namespace layerlens {

// Row-major so slab files map 1:1 onto memory.
using MatrixF =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LayerSlab {
  int layer_index = 0;
  std::string layer_name;
  MatrixF data;  // N x D, finite entries only

  Eigen::Index rows() const { return data.rows(); }
  Eigen::Index dim() const { return data.cols(); }
  Matrix as_double() const { return data.cast<double>(); }
};

struct ActivationPack {
  std::string model_name;
  std::vector<LayerSlab> layers;
  std::vector<std::string> sample_ids;

  Eigen::Index n_samples() const {
    return static_cast<Eigen::Index>(sample_ids.size());
  }
};

struct ConceptTable {
  std::vector<std::string> concept_names;
  Eigen::MatrixXi labels;  // N x num_concepts
  std::vector<int> cardinalities;
  std::vector<std::string> sample_ids;

  Eigen::Index n_samples() const { return labels.rows(); }
  // Throws DataError listing available names when absent.
  int concept_index(const std::string& name) const;
  Eigen::VectorXi column(const std::string& name) const;
  int cardinality(const std::string& name) const;
};

struct SplitPlan {
  std::vector<int> train_indices;
  std::vector<int> val_indices;
  std::vector<int> test_indices;
  std::uint64_t seed = 0;
  int max_samples = 1000;

  // train + val, ascending; the balanced characterization pool.
  std::vector<int> pool() const;
};

ActivationPack load_pack(const std::filesystem::path& dir);
void write_pack(const ActivationPack& pack, const std::filesystem::path& dir);

ConceptTable load_concepts(const std::filesystem::path& csv_path);
void write_concepts(const ConceptTable& table,
                    const std::filesystem::path& csv_path);

// Rejects mismatched sample ids (count or any position).
void check_pairing(const ActivationPack& pack, const ConceptTable& table);

SplitPlan make_split(const ConceptTable& table, const std::string& concept_name,
                     int max_samples, std::uint64_t seed);

// Rows of X at the given indices, cast to double.
Matrix take_rows(const MatrixF& data, const std::vector<int>& idx);
Eigen::VectorXi take_labels(const Eigen::VectorXi& y,
                            const std::vector<int>& idx);

}  // namespace layerlens
