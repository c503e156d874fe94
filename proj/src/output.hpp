#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "harness.hpp"

namespace enkf::experiment {

namespace fs = std::filesystem;

/// Shortest round-trip decimal; "NaN" for NaN.
std::string format_number(double v);

const char* tool_version();

/// Summary table: one row per variant with the table column names.
std::vector<std::string> summary_header();
std::vector<std::string> summary_row(const BatchSummary& s, const ExperimentContext& ctx);

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);
void write_text(const fs::path& path, const std::string& text);

void write_thresholds(const fs::path& path, const Thresholds& t);

struct RunOutputOptions {
  /// Per-step JSONL is written for the first `records` trials; negative for all.
  int records = 10;
  int histogram_bins = 40;
};

/// summary.csv, trials/<variant>.jsonl, figures/*.csv|svg, thresholds.json and
/// manifest.json under `dir`.
void write_run(const fs::path& dir, const ExperimentContext& ctx, const BatchResult& result,
               const RunOutputOptions& options = {});

/// sweep_<axis>.csv (one column per grid value, the table layout) and
/// sweep_<axis>_long.csv (one row per grid value and variant).
void write_sweep(const fs::path& dir, const ExperimentContext& ctx, SweepAxis axis,
                 const std::vector<SweepPoint>& points, double seconds);

/// Minimal SVG line plot; series share the x axis.
struct SvgSeries {
  std::string label;
  std::vector<double> y;
};
std::string svg_line_plot(const std::string& title, const std::vector<double>& x, const std::vector<SvgSeries>& series,
                          bool log_y = false);
std::string svg_bar_plot(const std::string& title, const std::vector<std::string>& labels,
                         const std::vector<double>& values, bool log_y = false);

/// Regenerates report.md and report_*.svg from the CSV artifacts found in
/// `dir` and its immediate subdirectories. Throws ConfigError listing the
/// expected artifacts when none exist.
fs::path write_report(const fs::path& dir);

}  // namespace enkf::experiment
