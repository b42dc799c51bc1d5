#pragma once

// Reads trainer metric CSVs back and renders overlay line plots (SVG) plus a
// summary of final and median values per run.

#include "c4/td_train.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace c4 {

class CsvError : public std::runtime_error {
 public:
  CsvError(const std::string& file, std::size_t line, const std::string& what)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + what), file_(file), line_(line) {}
  const std::string& file() const { return file_; }
  std::size_t line() const { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

struct MetricsRun {
  std::string label;
  std::string path;
  std::vector<MetricRecord> rows;
};

MetricsRun parse_metrics_csv(const std::string& text, const std::string& path);
MetricsRun read_metrics_csv(const std::string& path);

/// Plot labels: file stems, prefixed by the parent directory where stems collide.
void assign_labels(std::vector<MetricsRun>& runs);

struct Series {
  std::string label;
  std::vector<double> x, y;
};

std::string svg_line_plot(const std::string& title, const std::string& y_label, const std::vector<Series>& series);

struct MetricSummary {
  std::size_t count = 0;  // non-missing values
  double final = 0.0;
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
};

/// Missing values (NaN) are skipped; count == 0 leaves the rest zero.
MetricSummary summarize(const std::vector<double>& values);

/// Metrics plotted and summarized: td_loss, tr_n, eval_return.
std::vector<std::string> report_metrics();
std::vector<double> metric_column(const MetricsRun& run, const std::string& metric);

std::string summary_json(const std::vector<MetricsRun>& runs);

/// Writes <metric>.svg for each reported metric and summary.json into out_dir.
void write_report(const std::vector<MetricsRun>& runs, const std::string& out_dir);

}  // namespace c4
