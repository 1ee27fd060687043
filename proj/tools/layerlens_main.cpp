// layerlens: characterize concepts across network layers, pick the layer
// that represents each one best, and compare against probing baselines.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "layerlens/common.hpp"
#include "layerlens/core.hpp"
#include "layerlens/evaluation.hpp"
#include "layerlens/mi.hpp"
#include "layerlens/probes.hpp"
#include "layerlens/selection.hpp"
#include "layerlens/synthgen.hpp"
#include "layerlens/version.hpp"

#include <json.hpp>

namespace fs = std::filesystem;
using layerlens::DataError;
using ordered_json = nlohmann::ordered_json;

namespace {

struct RunConfig {
  std::string pack_dir;
  std::string concepts_arg;
  double lambda = 0.26;
  int max_samples = 1000;
  std::uint64_t seed = 0;
  int jobs = static_cast<int>(std::thread::hardware_concurrency());
  std::string out_dir = ".";
  std::vector<std::string> formats;
  bool timings = false;

  int mi_ensemble = 15;
  double gamma = 1.0;
  double hash_bucket_factor = 1.0;
  int projection_dim = 20;

  layerlens::MiEstimatorConfig mi_config() const {
    layerlens::MiEstimatorConfig cfg;
    cfg.ensemble_size = mi_ensemble;
    cfg.gamma = gamma;
    cfg.hash_bucket_factor = hash_bucket_factor;
    cfg.projection_dim = projection_dim;
    cfg.seed = seed;
    return cfg;
  }

  layerlens::CharacterizeOptions characterize_options() const {
    layerlens::CharacterizeOptions opt;
    opt.lambda = lambda;
    opt.max_samples = max_samples;
    opt.seed = seed;
    opt.jobs = jobs;
    return opt;
  }

  layerlens::EvalOptions eval_options() const {
    layerlens::EvalOptions opt;
    opt.lambda = lambda;
    opt.max_samples = max_samples;
    opt.seed = seed;
    opt.jobs = jobs;
    return opt;
  }

  bool wants(const std::string& fmt) const {
    for (const auto& f : formats)
      if (f == fmt) return true;
    return false;
  }
};

void add_common_flags(CLI::App* cmd, RunConfig& cfg, bool needs_pack) {
  if (needs_pack)
    cmd->add_option("--pack", cfg.pack_dir, "Activation pack directory")
        ->required();
  cmd->add_option("--concepts", cfg.concepts_arg,
                  "Comma-separated concept names (default: all in the pack)");
  cmd->add_option("--lambda", cfg.lambda,
                  "Informativeness/regularity trade-off")
      ->default_val(0.26)
      ->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--max-samples", cfg.max_samples,
                  "Balanced sample budget per concept")
      ->default_val(1000)
      ->check(CLI::Range(20, 1000000));
  cmd->add_option("--seed", cfg.seed, "Base RNG seed")->default_val(0);
  cmd->add_option("--jobs", cfg.jobs, "Worker thread cap")
      ->default_val(cfg.jobs)
      ->check(CLI::Range(1, 4096));
  cmd->add_option("--out", cfg.out_dir, "Output directory")->default_val(".");
  cmd->add_flag("--timings", cfg.timings,
                "Report measured wall times instead of zeros");
  cmd->add_option("--mi-ensemble", cfg.mi_ensemble,
                  "Bandwidths in the estimator ensemble")
      ->default_val(15)
      ->check(CLI::Range(1, 1000));
  cmd->add_option("--gamma", cfg.gamma, "Quantization width multiplier")
      ->default_val(1.0)
      ->check(CLI::PositiveNumber);
  cmd->add_option("--hash-bucket-factor", cfg.hash_bucket_factor,
                  "Hash buckets per sample")
      ->default_val(1.0)
      ->check(CLI::PositiveNumber);
  cmd->add_option("--projection-dim", cfg.projection_dim,
                  "Random projection target dimension")
      ->default_val(20)
      ->check(CLI::Range(1, 10000));
}

void add_format_flag(CLI::App* cmd, RunConfig& cfg,
                     const std::vector<std::string>& allowed,
                     const std::string& def) {
  cfg.formats = {def};
  cmd->add_option("--format", cfg.formats,
                  "Output formats (repeat or comma-separate)")
      ->delimiter(',')
      ->check(CLI::IsMember(allowed));
}

std::vector<std::string> resolve_concepts(const RunConfig& cfg,
                                          const layerlens::ConceptTable& table) {
  if (cfg.concepts_arg.empty()) return table.concept_names;
  std::vector<std::string> names;
  std::stringstream ss(cfg.concepts_arg);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) names.push_back(item);
  if (names.empty()) throw DataError("--concepts parsed to an empty list");
  for (const auto& name : names) table.concept_index(name);  // validates
  return names;
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << content;
  if (!out) throw DataError("short write to " + path.string());
}

fs::path prepare_out_dir(const RunConfig& cfg) {
  fs::path dir(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir.string());
  return dir;
}

struct LoadedPack {
  layerlens::ActivationPack pack;
  layerlens::ConceptTable table;
};

LoadedPack load_inputs(const RunConfig& cfg) {
  LoadedPack in;
  in.pack = layerlens::load_pack(cfg.pack_dir);
  in.table = layerlens::load_concepts(fs::path(cfg.pack_dir) / "concepts.csv");
  layerlens::check_pairing(in.pack, in.table);
  return in;
}

ordered_json curve_json(const layerlens::CharacterizationCurve& curve) {
  ordered_json j;
  j["spec_version"] = layerlens::kSpecVersion;
  j["concept"] = curve.concept_name;
  j["lambda"] = curve.lambda;
  ordered_json layers = ordered_json::array();
  for (const auto& lc : curve.layers) {
    ordered_json row;
    row["layer_index"] = lc.layer_index;
    row["layer_name"] = lc.layer_name;
    row["u"] = lc.u;
    row["r"] = lc.r;
    row["regularity_term"] = layerlens::regularity_term(lc.r, lc.k);
    row["score"] = lc.score;
    layers.push_back(std::move(row));
  }
  j["layers"] = std::move(layers);
  return j;
}

int cmd_synth(const RunConfig& cfg, int n_samples, int input_dim,
              double noise_std) {
  layerlens::SyntheticTask task;
  task.input_dim = input_dim;
  task.noise_std = noise_std;
  task.seed = cfg.seed;
  layerlens::Fixture fixture = layerlens::make_fixture(task, n_samples);
  fs::path dir = prepare_out_dir(cfg);
  layerlens::write_fixture(fixture, dir);
  std::cout << "wrote fixture to " << dir.string() << " (n=" << fixture.n
            << ", layers=" << fixture.pack.layers.size() << ", attempt="
            << fixture.attempt << ")\n";
  return 0;
}

int cmd_characterize(const RunConfig& cfg) {
  LoadedPack in = load_inputs(cfg);
  const auto names = resolve_concepts(cfg, in.table);
  fs::path dir = prepare_out_dir(cfg);
  for (const auto& name : names) {
    layerlens::CharacterizationCurve curve = layerlens::characterize(
        in.pack, in.table, name, cfg.mi_config(), cfg.characterize_options());
    if (cfg.wants("csv"))
      write_text(dir / ("curve_" + name + ".csv"),
                 layerlens::curve_to_csv(curve));
    if (cfg.wants("svg"))
      write_text(dir / ("curve_" + name + ".svg"),
                 layerlens::curve_svg(curve));
    if (cfg.wants("json"))
      write_text(dir / ("curve_" + name + ".json"),
                 curve_json(curve).dump(2) + "\n");
    std::cout << "characterized " << name << " over " << curve.layers.size()
              << " layers\n";
  }
  return 0;
}

int cmd_select(const RunConfig& cfg) {
  LoadedPack in = load_inputs(cfg);
  const auto names = resolve_concepts(cfg, in.table);
  fs::path dir = prepare_out_dir(cfg);
  ordered_json j;
  j["spec_version"] = layerlens::kSpecVersion;
  j["model_name"] = in.pack.model_name;
  j["lambda"] = cfg.lambda;
  j["max_samples"] = cfg.max_samples;
  j["seed"] = cfg.seed;
  ordered_json selections = ordered_json::array();
  for (const auto& name : names) {
    layerlens::CharacterizationCurve curve = layerlens::characterize(
        in.pack, in.table, name, cfg.mi_config(), cfg.characterize_options());
    const int layer = layerlens::select_layer(curve);
    const auto& lc = curve.layers[static_cast<std::size_t>(layer)];
    ordered_json row;
    row["concept"] = name;
    row["layer_index"] = lc.layer_index;
    row["layer_name"] = lc.layer_name;
    row["u"] = lc.u;
    row["r"] = lc.r;
    row["score"] = lc.score;
    selections.push_back(std::move(row));
    std::cout << name << " -> layer " << lc.layer_index << " ("
              << lc.layer_name << ")\n";
  }
  j["selections"] = std::move(selections);
  write_text(dir / "selection.json", j.dump(2) + "\n");
  return 0;
}

int cmd_probe(const RunConfig& cfg) {
  LoadedPack in = load_inputs(cfg);
  const auto names = resolve_concepts(cfg, in.table);
  fs::path dir = prepare_out_dir(cfg);
  std::string summary =
      "concept,layer_index,family,val_accuracy,test_accuracy,"
      "train_time_seconds,best\n";
  for (const auto& name : names) {
    layerlens::CharacterizationCurve curve = layerlens::characterize(
        in.pack, in.table, name, cfg.mi_config(), cfg.characterize_options());
    const int layer = layerlens::select_layer(curve);
    const int k = in.table.cardinality(name);
    const Eigen::VectorXi labels = in.table.column(name);
    const layerlens::SplitPlan split =
        layerlens::make_split(in.table, name, cfg.max_samples, cfg.seed);
    const auto& slab = in.pack.layers[static_cast<std::size_t>(layer)];
    layerlens::LabeledSet train{layerlens::take_rows(slab.data,
                                                     split.train_indices),
                                layerlens::take_labels(labels,
                                                       split.train_indices)};
    layerlens::LabeledSet val{layerlens::take_rows(slab.data,
                                                   split.val_indices),
                              layerlens::take_labels(labels,
                                                     split.val_indices)};
    layerlens::LabeledSet test{layerlens::take_rows(slab.data,
                                                    split.test_indices),
                               layerlens::take_labels(labels,
                                                      split.test_indices)};
    if (test.y.size() == 0)
      throw DataError("concept '" + name + "' leaves no test samples");
    layerlens::ZooResult zoo = layerlens::run_zoo(
        train, val, test, k, layerlens::mix(cfg.seed, 0x200), cfg.jobs);
    for (const auto& warning : zoo.warnings)
      std::cerr << "warning: " << name << ": " << warning << "\n";
    for (const auto& probe : zoo.all) {
      const std::string family = layerlens::family_name(probe.family);
      layerlens::save_probe(probe, dir / ("probe_" + name + "_" + family));
      const double shown_time = cfg.timings ? probe.train_time_seconds : 0.0;
      summary += name + "," + std::to_string(layer) + "," + family + "," +
                 layerlens::format_double(probe.val_accuracy) + "," +
                 layerlens::format_double(probe.test_accuracy) + "," +
                 layerlens::format_double(shown_time) + "," +
                 (probe.family == zoo.best.family ? "1" : "0") + "\n";
    }
    std::cout << name << ": layer " << layer << ", best family "
              << layerlens::family_name(zoo.best.family) << " (test "
              << layerlens::format_double(zoo.best.test_accuracy) << ")\n";
  }
  write_text(dir / "probe_summary.csv", summary);
  return 0;
}

int cmd_evaluate(const RunConfig& cfg) {
  LoadedPack in = load_inputs(cfg);
  const auto names = resolve_concepts(cfg, in.table);
  layerlens::EvaluationReport report = layerlens::evaluate_pack(
      in.pack, in.table, names, cfg.mi_config(), cfg.eval_options());
  if (!cfg.timings) {
    auto zero_times = [](layerlens::ConceptRow& row) {
      row.method_time_s = 0.0;
      row.best_validation_time_s = 0.0;
      row.input_reduce_time_s = 0.0;
    };
    for (auto& row : report.rows) zero_times(row);
    zero_times(report.averages);
  }
  fs::path dir = prepare_out_dir(cfg);
  if (cfg.wants("csv")) {
    write_text(dir / "report.csv", layerlens::report_csv(report));
    write_text(dir / "report_per_concept.csv",
               layerlens::report_per_concept_csv(report));
  }
  if (cfg.wants("json"))
    write_text(dir / "report.json",
               layerlens::report_json(report, cfg.lambda, cfg.max_samples,
                                      cfg.seed));
  std::cout << "evaluated " << report.rows.size() << " concepts on "
            << report.model_name << "; mean method accuracy "
            << layerlens::format_double(report.averages.method_acc) << "\n";
  return 0;
}

int cmd_ablate(const RunConfig& cfg, int grid_points) {
  LoadedPack in = load_inputs(cfg);
  const auto names = resolve_concepts(cfg, in.table);
  fs::path dir = prepare_out_dir(cfg);
  std::vector<double> grid;
  if (grid_points == 51) {
    grid = layerlens::default_sweep_grid();
  } else {
    grid.reserve(static_cast<std::size_t>(grid_points));
    for (int i = 0; i < grid_points; ++i)
      grid.push_back(static_cast<double>(i) /
                     static_cast<double>(grid_points - 1));
    grid.back() = 1.0;
  }
  for (const auto& name : names) {
    layerlens::SweepResult sweep = layerlens::lambda_sweep(
        in.pack, in.table, name, cfg.mi_config(), grid,
        cfg.characterize_options());
    if (cfg.wants("csv")) {
      std::string csv = "lambda,selected_layer\n";
      for (const auto& [lambda, layer] : sweep.selections)
        csv += layerlens::format_double(lambda) + "," +
               std::to_string(layer) + "\n";
      write_text(dir / ("ablation_" + name + ".csv"), csv);
    }
    if (cfg.wants("svg"))
      write_text(dir / ("ablation_" + name + ".svg"),
                 layerlens::sweep_svg(sweep.selections,
                                      static_cast<int>(in.pack.layers.size()),
                                      name));
    std::cout << name << ": " << sweep.distinct_layers
              << " distinct layers across " << sweep.selections.size()
              << " lambda values\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Concept characterization and layer selection for trained "
               "networks"};
  app.require_subcommand(1);

  RunConfig cfg;
  if (cfg.jobs < 1) cfg.jobs = 1;  // hardware_concurrency may report 0

  int n_samples = 4000;
  int input_dim = 16;
  double noise_std = 0.15;
  int grid_points = 51;

  CLI::App* synth = app.add_subcommand(
      "synth", "Generate a synthetic activation pack with known concepts");
  add_common_flags(synth, cfg, /*needs_pack=*/false);
  synth->get_option("--out")->required();
  synth->add_option("--n-samples", n_samples, "Dataset size")
      ->default_val(4000)
      ->check(CLI::Range(100, 10000000));
  synth->add_option("--input-dim", input_dim, "Observed input dimension")
      ->default_val(16)
      ->check(CLI::Range(4, 100000));
  synth->add_option("--noise-std", noise_std, "Observation noise scale")
      ->default_val(0.15)
      ->check(CLI::NonNegativeNumber);

  CLI::App* characterize = app.add_subcommand(
      "characterize", "Emit per-layer U/R/score curves per concept");
  add_common_flags(characterize, cfg, true);
  add_format_flag(characterize, cfg, {"csv", "svg", "json"}, "csv");

  CLI::App* select = app.add_subcommand(
      "select", "Pick the best layer per concept (selection.json)");
  add_common_flags(select, cfg, true);

  CLI::App* probe = app.add_subcommand(
      "probe", "Train the probe zoo at each concept's selected layer");
  add_common_flags(probe, cfg, true);

  CLI::App* evaluate = app.add_subcommand(
      "evaluate", "Compare layer selection against probing baselines");
  add_common_flags(evaluate, cfg, true);
  add_format_flag(evaluate, cfg, {"csv", "json"}, "csv");

  CLI::App* ablate = app.add_subcommand(
      "ablate", "Sweep lambda and record the selected layer per value");
  add_common_flags(ablate, cfg, true);
  add_format_flag(ablate, cfg, {"csv", "svg"}, "csv");
  ablate->add_option("--grid-points", grid_points, "Sweep grid size")
      ->default_val(51)
      ->check(CLI::Range(2, 100000));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (synth->parsed()) return cmd_synth(cfg, n_samples, input_dim, noise_std);
    if (characterize->parsed()) return cmd_characterize(cfg);
    if (select->parsed()) return cmd_select(cfg);
    if (probe->parsed()) return cmd_probe(cfg);
    if (evaluate->parsed()) return cmd_evaluate(cfg);
    if (ablate->parsed()) return cmd_ablate(cfg, grid_points);
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
