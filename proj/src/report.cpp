#include <charconv>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "layerlens/evaluation.hpp"
#include "layerlens/version.hpp"

namespace layerlens {

namespace {

using json = nlohmann::ordered_json;

const char* kPerConceptHeader =
    "concept,selected_layer,method_acc,method_time_s,layers_avg_acc,"
    "oracle_acc,pct_oracle,best_validation_acc,best_validation_time_s,"
    "input_reduce_acc,input_reduce_time_s";

void append_row_fields(std::ostringstream& out, const ConceptRow& row) {
  out << format_double(row.method_acc) << "," << format_double(row.method_time_s)
      << "," << format_double(row.layers_avg_acc) << ","
      << format_double(row.oracle_acc) << "," << format_double(row.pct_oracle)
      << "," << format_double(row.best_validation_acc) << ","
      << format_double(row.best_validation_time_s) << ","
      << format_double(row.input_reduce_acc) << ","
      << format_double(row.input_reduce_time_s);
}

double parse_double(const std::string& cell) {
  double v = 0.0;
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
    throw DataError("bad numeric cell '" + cell + "'");
  return v;
}

json row_json(const ConceptRow& row) {
  json j;
  j["concept_name"] = row.concept_name;
  if (row.selected_layer >= 0) j["selected_layer"] = row.selected_layer;
  j["method_acc"] = row.method_acc;
  j["method_time_s"] = row.method_time_s;
  j["layers_avg_acc"] = row.layers_avg_acc;
  j["oracle_acc"] = row.oracle_acc;
  j["pct_oracle"] = row.pct_oracle;
  j["best_validation_acc"] = row.best_validation_acc;
  j["best_validation_time_s"] = row.best_validation_time_s;
  j["input_reduce_acc"] = row.input_reduce_acc;
  j["input_reduce_time_s"] = row.input_reduce_time_s;
  return j;
}

}  // namespace

std::string report_csv(const EvaluationReport& report) {
  std::ostringstream out;
  out << "model_name,n_concepts,method_acc,method_time_s,layers_avg_acc,"
         "oracle_acc,pct_oracle,best_validation_acc,best_validation_time_s,"
         "input_reduce_acc,input_reduce_time_s\n";
  out << report.model_name << "," << report.rows.size() << ",";
  append_row_fields(out, report.averages);
  out << "\n";
  return out.str();
}

std::string report_per_concept_csv(const EvaluationReport& report) {
  std::ostringstream out;
  out << kPerConceptHeader << "\n";
  for (const auto& row : report.rows) {
    out << row.concept_name << "," << row.selected_layer << ",";
    append_row_fields(out, row);
    out << "\n";
  }
  return out.str();
}

std::vector<ConceptRow> parse_per_concept_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != kPerConceptHeader)
    throw DataError("unexpected per-concept CSV header");
  std::vector<ConceptRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> cells;
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 11)
      throw DataError("per-concept CSV row has " +
                      std::to_string(cells.size()) + " cells, expected 11");
    ConceptRow row;
    row.concept_name = cells[0];
    row.selected_layer = static_cast<int>(parse_double(cells[1]));
    row.method_acc = parse_double(cells[2]);
    row.method_time_s = parse_double(cells[3]);
    row.layers_avg_acc = parse_double(cells[4]);
    row.oracle_acc = parse_double(cells[5]);
    row.pct_oracle = parse_double(cells[6]);
    row.best_validation_acc = parse_double(cells[7]);
    row.best_validation_time_s = parse_double(cells[8]);
    row.input_reduce_acc = parse_double(cells[9]);
    row.input_reduce_time_s = parse_double(cells[10]);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string report_json(const EvaluationReport& report, double lambda,
                        int max_samples, std::uint64_t seed) {
  json j;
  j["spec_version"] = kSpecVersion;
  j["model_name"] = report.model_name;
  j["lambda"] = lambda;
  j["max_samples"] = max_samples;
  j["seed"] = seed;
  json rows = json::array();
  for (const auto& row : report.rows) rows.push_back(row_json(row));
  j["concepts"] = std::move(rows);
  j["averages"] = row_json(report.averages);
  return j.dump(2) + "\n";
}

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 400.0;
constexpr double kLeft = 56.0;
constexpr double kRight = 616.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 360.0;

double x_at(double frac) { return kLeft + frac * (kRight - kLeft); }
double y_at(double value01) { return kBottom - value01 * (kBottom - kTop); }

void svg_open(std::ostringstream& out, const std::string& title) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\""
      << format_double(kWidth) << "\" height=\"" << format_double(kHeight)
      << "\" viewBox=\"0 0 " << format_double(kWidth) << " "
      << format_double(kHeight) << "\">\n";
  out << "<rect width=\"" << format_double(kWidth) << "\" height=\""
      << format_double(kHeight) << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << format_double(kWidth / 2)
      << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"14\">"
      << title << "</text>\n";
}

void svg_axes(std::ostringstream& out) {
  out << "<line x1=\"" << format_double(kLeft) << "\" y1=\""
      << format_double(kBottom) << "\" x2=\"" << format_double(kRight)
      << "\" y2=\"" << format_double(kBottom)
      << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  out << "<line x1=\"" << format_double(kLeft) << "\" y1=\""
      << format_double(kTop) << "\" x2=\"" << format_double(kLeft)
      << "\" y2=\"" << format_double(kBottom)
      << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
}

void svg_polyline(std::ostringstream& out, const std::vector<double>& xs,
                  const std::vector<double>& ys, const char* color) {
  out << "<polyline fill=\"none\" stroke=\"" << color
      << "\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i > 0) out << " ";
    out << format_double(xs[i]) << "," << format_double(ys[i]);
  }
  out << "\"/>\n";
}

}  // namespace

std::string curve_svg(const CharacterizationCurve& curve) {
  std::ostringstream out;
  svg_open(out, curve.concept_name);
  svg_axes(out);
  for (int tick = 0; tick <= 4; ++tick) {
    const double v = tick * 0.25;
    out << "<line x1=\"" << format_double(kLeft) << "\" y1=\""
        << format_double(y_at(v)) << "\" x2=\"" << format_double(kRight)
        << "\" y2=\"" << format_double(y_at(v))
        << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    out << "<text x=\"" << format_double(kLeft - 8) << "\" y=\""
        << format_double(y_at(v) + 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"11\">"
        << format_double(v) << "</text>\n";
  }
  const std::size_t n = curve.layers.size();
  std::vector<double> xs, us, rs;
  for (std::size_t i = 0; i < n; ++i) {
    const double frac = n == 1 ? 0.5 : static_cast<double>(i) / (n - 1);
    xs.push_back(x_at(frac));
    us.push_back(y_at(curve.layers[i].u));
    rs.push_back(y_at(curve.layers[i].r));
    out << "<text x=\"" << format_double(xs.back()) << "\" y=\""
        << format_double(kBottom + 16)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"11\">"
        << curve.layers[i].layer_index << "</text>\n";
  }
  svg_polyline(out, xs, us, "#1f77b4");
  svg_polyline(out, xs, rs, "#ff7f0e");
  out << "<text x=\"" << format_double(kRight - 140) << "\" y=\""
      << format_double(kTop + 4)
      << "\" font-family=\"sans-serif\" font-size=\"12\" "
         "fill=\"#1f77b4\">informativeness U</text>\n";
  out << "<text x=\"" << format_double(kRight - 140) << "\" y=\""
      << format_double(kTop + 20)
      << "\" font-family=\"sans-serif\" font-size=\"12\" "
         "fill=\"#ff7f0e\">regularity R</text>\n";
  out << "<text x=\"" << format_double((kLeft + kRight) / 2) << "\" y=\""
      << format_double(kHeight - 8)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\">layer</text>\n";
  out << "</svg>\n";
  return out.str();
}

std::string sweep_svg(const std::vector<std::pair<double, int>>& selections,
                      int n_layers, const std::string& concept_name) {
  std::ostringstream out;
  svg_open(out, concept_name);
  svg_axes(out);
  const double denom = n_layers > 1 ? static_cast<double>(n_layers - 1) : 1.0;
  std::vector<double> xs, ys;
  for (const auto& [lambda, layer] : selections) {
    xs.push_back(x_at(lambda));
    ys.push_back(y_at(static_cast<double>(layer) / denom));
  }
  svg_polyline(out, xs, ys, "#2ca02c");
  for (int tick = 0; tick <= 4; ++tick) {
    const double v = tick * 0.25;
    out << "<text x=\"" << format_double(x_at(v)) << "\" y=\""
        << format_double(kBottom + 16)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"11\">"
        << format_double(v) << "</text>\n";
  }
  out << "<text x=\"" << format_double((kLeft + kRight) / 2) << "\" y=\""
      << format_double(kHeight - 8)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\">lambda</text>\n";
  out << "<text x=\"" << format_double(kLeft - 8) << "\" y=\""
      << format_double(kTop - 8)
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
         "font-size=\"11\">layer "
      << (n_layers - 1) << "</text>\n";
  out << "<text x=\"" << format_double(kLeft - 8) << "\" y=\""
      << format_double(kBottom + 4)
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
         "font-size=\"11\">layer 0</text>\n";
  out << "</svg>\n";
  return out.str();
}

}  // namespace layerlens
