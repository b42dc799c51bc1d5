#include "c4/report.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace c4 {

namespace fs = std::filesystem;

namespace {

const char* kHeader =
    "step,td_loss,penalty,objective,tr_n_sample_convention,active_cluster,cluster_occupancy_entropy,eval_return";

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double number(const std::string& cell, const std::string& file, std::size_t line, const char* column) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw CsvError(file, line, std::string("bad number in column ") + column + ": '" + cell + "'");
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '"') out += "&quot;";
    else out += c;
  }
  return out;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

}  // namespace

MetricsRun parse_metrics_csv(const std::string& text, const std::string& path) {
  MetricsRun run;
  run.path = path;
  std::stringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw CsvError(path, 1, "empty file");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHeader) throw CsvError(path, 1, "unexpected header");
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != 8) throw CsvError(path, lineno, "expected 8 fields, got " + std::to_string(cells.size()));
    MetricRecord r;
    r.step = static_cast<long>(number(cells[0], path, lineno, "step"));
    r.td_loss = number(cells[1], path, lineno, "td_loss");
    r.penalty = number(cells[2], path, lineno, "penalty");
    r.objective = number(cells[3], path, lineno, "objective");
    r.tr_n = number(cells[4], path, lineno, "tr_n_sample_convention");
    r.active_cluster = static_cast<int>(number(cells[5], path, lineno, "active_cluster"));
    r.occupancy_entropy = number(cells[6], path, lineno, "cluster_occupancy_entropy");
    if (!cells[7].empty()) r.eval_return = number(cells[7], path, lineno, "eval_return");
    run.rows.push_back(r);
  }
  return run;
}

MetricsRun read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CsvError(path, 0, "cannot open file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_metrics_csv(ss.str(), path);
}

void assign_labels(std::vector<MetricsRun>& runs) {
  std::map<std::string, int> stems;
  for (const auto& r : runs) ++stems[fs::path(r.path).stem().string()];
  for (auto& r : runs) {
    const fs::path p(r.path);
    const std::string stem = p.stem().string();
    const std::string parent = p.parent_path().filename().string();
    r.label = stems[stem] > 1 && !parent.empty() ? parent + "/" + stem : stem;
  }
}

std::string svg_line_plot(const std::string& title, const std::string& y_label, const std::vector<Series>& series) {
  const double width = 720, height = 420, left = 70, right = 170, top = 40, bottom = 50;
  const double pw = width - left - right, ph = height - top - bottom;

  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i]) || !std::isfinite(s.x[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymin -= 0.5, ymax += 0.5;
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return top + (ymax - y) / (ymax - ymin) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << left + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
    << "</text>\n";
  o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double fy = ymin + (ymax - ymin) * t / 4.0, fx = xmin + (xmax - xmin) * t / 4.0;
    o << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << py(fy) << "\" y2=\"" << py(fy)
      << "\" stroke=\"#ddd\"/>\n";
    o << "<text x=\"" << left - 6 << "\" y=\"" << py(fy) + 4 << "\" text-anchor=\"end\">" << fmt(fy) << "</text>\n";
    o << "<text x=\"" << px(fx) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">" << fmt(fx)
      << "</text>\n";
  }
  o << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\">step</text>\n";
  o << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(y_label) << "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* colour = kPalette[k % std::size(kPalette)];
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < s.x.size(); ++i)
      if (std::isfinite(s.y[i]) && std::isfinite(s.x[i])) keep.push_back(i);
    // keep the file small on long runs; the last point always survives
    const std::size_t stride = std::max<std::size_t>(1, keep.size() / 4000);
    o << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.3\" points=\"";
    for (std::size_t j = 0; j < keep.size(); ++j) {
      if (j % stride != 0 && j + 1 != keep.size()) continue;
      char buf[64];
      std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", j ? " " : "", px(s.x[keep[j]]), py(s.y[keep[j]]));
      o << buf;
    }
    o << "\"/>\n";
    const double ly = top + 14 + 18 * static_cast<double>(k);
    o << "<line x1=\"" << left + pw + 12 << "\" x2=\"" << left + pw + 32 << "\" y1=\"" << ly << "\" y2=\"" << ly
      << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly + 4 << "\">" << escape(s.label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

MetricSummary summarize(const std::vector<double>& values) {
  std::vector<double> v;
  for (double x : values)
    if (!std::isnan(x)) v.push_back(x);
  MetricSummary s;
  s.count = v.size();
  if (v.empty()) return s;
  s.final = v.back();
  std::sort(v.begin(), v.end());
  s.min = v.front();
  s.max = v.back();
  const std::size_t h = v.size() / 2;
  s.median = v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
  return s;
}

std::vector<std::string> report_metrics() { return {"td_loss", "tr_n", "eval_return"}; }

std::vector<double> metric_column(const MetricsRun& run, const std::string& metric) {
  std::vector<double> out;
  out.reserve(run.rows.size());
  for (const auto& r : run.rows) {
    if (metric == "td_loss") out.push_back(r.td_loss);
    else if (metric == "tr_n") out.push_back(r.tr_n);
    else if (metric == "eval_return") out.push_back(r.eval_return);
    else if (metric == "penalty") out.push_back(r.penalty);
    else if (metric == "objective") out.push_back(r.objective);
    else throw InputError("unknown metric '" + metric + "'");
  }
  return out;
}

std::string summary_json(const std::vector<MetricsRun>& runs) {
  nlohmann::json doc = {{"runs", nlohmann::json::array()}};
  for (const auto& run : runs) {
    nlohmann::json metrics = nlohmann::json::object();
    for (const auto& m : report_metrics()) {
      const auto s = summarize(metric_column(run, m));
      if (s.count == 0) metrics[m] = {{"count", 0}};
      else
        metrics[m] = {{"count", s.count}, {"final", s.final}, {"median", s.median}, {"min", s.min}, {"max", s.max}};
    }
    doc["runs"].push_back({{"label", run.label}, {"file", run.path}, {"rows", run.rows.size()}, {"metrics", metrics}});
  }
  return doc.dump(2) + "\n";
}

void write_report(const std::vector<MetricsRun>& runs, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const std::map<std::string, std::string> titles = {{"td_loss", "TD loss"},
                                                     {"tr_n", "normalized cross-covariance trace"},
                                                     {"eval_return", "greedy evaluation return"}};
  for (const auto& m : report_metrics()) {
    std::vector<Series> series;
    for (const auto& run : runs) {
      Series s{run.label, {}, metric_column(run, m)};
      for (const auto& r : run.rows) s.x.push_back(static_cast<double>(r.step));
      series.push_back(std::move(s));
    }
    std::ofstream(fs::path(out_dir) / (m + ".svg")) << svg_line_plot(titles.at(m), m, series);
  }
  std::ofstream(fs::path(out_dir) / "summary.json") << summary_json(runs);
}

}  // namespace c4
