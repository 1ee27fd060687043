#include "layerlens/core.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

namespace layerlens {

static_assert(std::endian::native == std::endian::little,
              "slab files are little-endian; big-endian hosts unsupported");

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

int ConceptTable::concept_index(const std::string& name) const {
  for (std::size_t j = 0; j < concept_names.size(); ++j)
    if (concept_names[j] == name) return static_cast<int>(j);
  std::string msg = "unknown concept '" + name + "'; available:";
  for (const auto& n : concept_names) msg += " " + n;
  throw DataError(msg);
}

Eigen::VectorXi ConceptTable::column(const std::string& name) const {
  return labels.col(concept_index(name));
}

int ConceptTable::cardinality(const std::string& name) const {
  return cardinalities[static_cast<std::size_t>(concept_index(name))];
}

std::vector<int> SplitPlan::pool() const {
  std::vector<int> p = train_indices;
  p.insert(p.end(), val_indices.begin(), val_indices.end());
  std::sort(p.begin(), p.end());
  return p;
}

ActivationPack load_pack(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream mf(manifest_path);
  if (!mf) throw DataError("cannot open " + manifest_path.string());
  json m;
  try {
    mf >> m;
  } catch (const json::exception& e) {
    throw DataError("malformed manifest " + manifest_path.string() + ": " +
                    e.what());
  }

  ActivationPack pack;
  try {
    pack.model_name = m.at("model_name").get<std::string>();
    pack.sample_ids = m.at("sample_ids").get<std::vector<std::string>>();
    const auto n = m.at("n_samples").get<std::int64_t>();
    if (n < 0 || static_cast<std::size_t>(n) != pack.sample_ids.size())
      throw DataError("manifest n_samples disagrees with sample_ids length");
    int expect_index = 0;
    for (const auto& jl : m.at("layers")) {
      LayerSlab slab;
      slab.layer_index = jl.at("index").get<int>();
      slab.layer_name = jl.at("name").get<std::string>();
      const auto dim = jl.at("dim").get<std::int64_t>();
      const auto file = jl.at("file").get<std::string>();
      if (slab.layer_index != expect_index)
        throw DataError("layer indices not consecutive at '" +
                        slab.layer_name + "'");
      ++expect_index;
      if (dim < 1)
        throw DataError("layer '" + slab.layer_name + "' has dim < 1");

      const fs::path slab_path = dir / file;
      std::ifstream sf(slab_path, std::ios::binary | std::ios::ate);
      if (!sf)
        throw DataError("missing slab file " + slab_path.string() +
                        " for layer '" + slab.layer_name + "'");
      const std::uint64_t size = static_cast<std::uint64_t>(sf.tellg());
      const std::uint64_t expect =
          static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(dim) * 4;
      if (size != expect)
        throw DataError("slab file " + slab_path.string() + " for layer '" +
                        slab.layer_name + "': expected " +
                        std::to_string(expect) + " bytes, found " +
                        std::to_string(size));
      slab.data.resize(n, dim);
      sf.seekg(0);
      sf.read(reinterpret_cast<char*>(slab.data.data()),
              static_cast<std::streamsize>(size));
      if (!sf)
        throw DataError("read failure on " + slab_path.string());

      const float* p = slab.data.data();
      for (std::uint64_t i = 0; i < static_cast<std::uint64_t>(n) * dim; ++i) {
        if (!std::isfinite(p[i]))
          throw DataError("non-finite value in layer '" + slab.layer_name +
                          "' at byte offset " + std::to_string(i * 4));
      }
      pack.layers.push_back(std::move(slab));
    }
  } catch (const json::exception& e) {
    throw DataError("malformed manifest " + manifest_path.string() + ": " +
                    e.what());
  }
  return pack;
}

void write_pack(const ActivationPack& pack, const fs::path& dir) {
  fs::create_directories(dir);
  json m;
  m["model_name"] = pack.model_name;
  m["n_samples"] = pack.sample_ids.size();
  json layers = json::array();
  for (const auto& slab : pack.layers) {
    if (static_cast<std::size_t>(slab.rows()) != pack.sample_ids.size())
      throw DataError("layer '" + slab.layer_name +
                      "' row count disagrees with sample_ids");
    const std::string file =
        "layer_" + std::to_string(slab.layer_index) + ".bin";
    layers.push_back({{"index", slab.layer_index},
                      {"name", slab.layer_name},
                      {"dim", slab.dim()},
                      {"file", file}});
    std::ofstream sf(dir / file, std::ios::binary | std::ios::trunc);
    if (!sf) throw DataError("cannot write " + (dir / file).string());
    sf.write(reinterpret_cast<const char*>(slab.data.data()),
             static_cast<std::streamsize>(slab.data.size() * 4));
    if (!sf) throw DataError("write failure on " + (dir / file).string());
  }
  m["layers"] = std::move(layers);
  m["sample_ids"] = pack.sample_ids;
  std::ofstream mf(dir / "manifest.json", std::ios::trunc);
  if (!mf) throw DataError("cannot write " + (dir / "manifest.json").string());
  mf << m.dump(2) << "\n";
}

ConceptTable load_concepts(const fs::path& csv_path) {
  std::ifstream f(csv_path);
  if (!f) throw DataError("cannot open " + csv_path.string());
  std::string line;
  if (!std::getline(f, line))
    throw DataError("empty concepts file " + csv_path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();

  ConceptTable table;
  {
    std::stringstream ss(line);
    std::string cell;
    bool first = true;
    while (std::getline(ss, cell, ',')) {
      if (first) {
        if (cell != "sample_id")
          throw DataError("concepts header must start with sample_id, got '" +
                          cell + "'");
        first = false;
      } else {
        table.concept_names.push_back(cell);
      }
    }
    if (first) throw DataError("concepts header missing sample_id column");
  }
  const std::size_t m = table.concept_names.size();
  if (m == 0) throw DataError("concepts file declares no concepts");

  std::vector<int> flat;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      if (col == 0) {
        table.sample_ids.push_back(cell);
      } else {
        if (col > m)
          throw DataError("concepts row " + std::to_string(lineno) +
                          " has too many fields");
        std::size_t pos = 0;
        int v = 0;
        try {
          v = std::stoi(cell, &pos);
        } catch (const std::exception&) {
          pos = 0;
        }
        if (pos != cell.size() || v < 0)
          throw DataError("concepts row " + std::to_string(lineno) +
                          ": label '" + cell + "' is not a nonnegative integer");
        flat.push_back(v);
      }
      ++col;
    }
    if (col != m + 1)
      throw DataError("concepts row " + std::to_string(lineno) + " has " +
                      std::to_string(col) + " fields, expected " +
                      std::to_string(m + 1));
  }
  const std::size_t n = table.sample_ids.size();
  if (n == 0) throw DataError("concepts file has no rows");
  table.labels.resize(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      table.labels(i, j) = flat[i * m + j];
  table.cardinalities.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    const int k = table.labels.col(j).maxCoeff() + 1;
    table.cardinalities[j] = std::max(2, k);
  }
  return table;
}

void write_concepts(const ConceptTable& table, const fs::path& csv_path) {
  std::ofstream f(csv_path, std::ios::trunc);
  if (!f) throw DataError("cannot write " + csv_path.string());
  f << "sample_id";
  for (const auto& n : table.concept_names) f << "," << n;
  f << "\n";
  for (Eigen::Index i = 0; i < table.labels.rows(); ++i) {
    f << table.sample_ids[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < table.labels.cols(); ++j)
      f << "," << table.labels(i, j);
    f << "\n";
  }
}

void check_pairing(const ActivationPack& pack, const ConceptTable& table) {
  if (pack.sample_ids.size() != table.sample_ids.size())
    throw DataError("pack has " + std::to_string(pack.sample_ids.size()) +
                    " samples but concepts table has " +
                    std::to_string(table.sample_ids.size()));
  for (std::size_t i = 0; i < pack.sample_ids.size(); ++i)
    if (pack.sample_ids[i] != table.sample_ids[i])
      throw DataError("sample_id mismatch at row " + std::to_string(i) +
                      ": pack '" + pack.sample_ids[i] + "' vs concepts '" +
                      table.sample_ids[i] + "'");
}

SplitPlan make_split(const ConceptTable& table, const std::string& concept_name,
                     int max_samples, std::uint64_t seed) {
  if (max_samples < 20) throw DataError("max_samples must be >= 20");
  const int j = table.concept_index(concept_name);
  const int k = table.cardinalities[static_cast<std::size_t>(j)];
  const Eigen::Index n = table.labels.rows();

  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = table.labels(i, j);
    if (c < 0 || c >= k)
      throw DataError("label out of range for concept '" + concept_name + "'");
    by_class[static_cast<std::size_t>(c)].push_back(static_cast<int>(i));
  }
  std::size_t min_avail = static_cast<std::size_t>(n);
  for (int c = 0; c < k; ++c)
    min_avail = std::min(min_avail, by_class[static_cast<std::size_t>(c)].size());
  if (min_avail < 5)
    throw DataError("concept '" + concept_name +
                    "' has a class with fewer than 5 samples");

  const int t = static_cast<int>(
      std::min<std::size_t>(min_avail, static_cast<std::size_t>(max_samples / k)));
  if (t < 5)
    throw DataError("concept '" + concept_name +
                    "': fewer than 5 samples per class fit under max_samples");

  std::mt19937_64 rng(mix(seed, fnv1a64(concept_name)));
  for (auto& cls : by_class) std::shuffle(cls.begin(), cls.end(), rng);

  const int total = k * t;
  const int total_val = static_cast<int>(std::lround(0.20 * total));

  SplitPlan plan;
  plan.seed = seed;
  plan.max_samples = max_samples;
  for (int c = 0; c < k; ++c) {
    const auto& cls = by_class[static_cast<std::size_t>(c)];
    const int val_c = total_val / k + (c < total_val % k ? 1 : 0);
    for (int i = 0; i < t; ++i) {
      if (i < val_c)
        plan.val_indices.push_back(cls[static_cast<std::size_t>(i)]);
      else
        plan.train_indices.push_back(cls[static_cast<std::size_t>(i)]);
    }
  }
  int t_test = t;
  for (int c = 0; c < k; ++c)
    t_test = std::min(t_test,
                      static_cast<int>(by_class[static_cast<std::size_t>(c)].size()) - t);
  t_test = std::max(t_test, 0);
  for (int c = 0; c < k; ++c) {
    const auto& cls = by_class[static_cast<std::size_t>(c)];
    for (int i = t; i < t + t_test; ++i)
      plan.test_indices.push_back(cls[static_cast<std::size_t>(i)]);
  }
  std::sort(plan.train_indices.begin(), plan.train_indices.end());
  std::sort(plan.val_indices.begin(), plan.val_indices.end());
  std::sort(plan.test_indices.begin(), plan.test_indices.end());
  return plan;
}

Matrix take_rows(const MatrixF& data, const std::vector<int>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), data.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = data.row(idx[i]).cast<double>();
  return out;
}

Eigen::VectorXi take_labels(const Eigen::VectorXi& y,
                            const std::vector<int>& idx) {
  Eigen::VectorXi out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i)
    out(static_cast<Eigen::Index>(i)) = y(idx[i]);
  return out;
}

}  // namespace layerlens
