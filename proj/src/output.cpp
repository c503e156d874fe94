#include "output.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace enkf::experiment {

using nlohmann::json;

#ifndef ENKF_GIT_DESCRIBE
#define ENKF_GIT_DESCRIBE "unknown"
#endif

const char* tool_version() { return ENKF_GIT_DESCRIBE; }

std::string format_number(double v) {
  if (std::isnan(v)) return "NaN";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::string percent(double fraction) {
  if (std::isnan(fraction)) return "NaN";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g%%", 100.0 * fraction);
  return buf;
}

std::string fixed(double v, int digits) {
  if (std::isnan(v)) return "NaN";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string file_stem(const std::string& variant) {
  std::string s;
  for (char c : variant) s += (c == '@' || c == ':') ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

}  // namespace

std::vector<std::string> summary_header() {
  return {"Filter",
          "Integrator",
          "Cata. Div.",
          "RMSE",
          "Pattern Cor.",
          "Avg. Time",
          "Triggered Trials",
          "Avg. Triggers per Triggered Trial",
          "Avg. Triggers per Trial",
          "Average Θ_n",
          "P(Θ_n>M₁)",
          "Average Ξ_n",
          "P(Ξ_n>M₂)",
          "P(Θ_n>M₁) recorded window",
          "P(Ξ_n>M₂) recorded window",
          "Innovation Violations",
          "Max Innovation Ratio",
          "Energy Log Slope",
          "Solver Failures",
          "RMSE (non-diverged)",
          "Pattern Cor. (non-diverged)",
          "Benchmark RMSE",
          "M₁",
          "M₂",
          "F",
          "rho",
          "h",
          "T",
          "trials",
          "seed",
          "git_describe",
          "config_hash"};
}

std::vector<std::string> summary_row(const BatchSummary& s, const ExperimentContext& ctx) {
  const ExperimentConfig& c = ctx.config;
  const double bench = ctx.thresholds.benchmark ? ctx.thresholds.benchmark->benchmark_rmse() : std::nan("");
  return {s.variant,
          s.integrator,
          percent(s.divergence_fraction),
          fixed(s.rmse, 4),
          fixed(s.correlation, 4),
          fixed(s.seconds_per_trial, 3),
          std::to_string(s.triggered_trials),
          fixed(s.triggers_per_triggered_trial, 3),
          fixed(s.triggers_per_trial, 3),
          fixed(s.theta_mean, 4),
          percent(s.p_theta),
          fixed(s.xi_mean, 4),
          percent(s.p_xi),
          percent(s.p_theta_window),
          percent(s.p_xi_window),
          std::to_string(s.innovation_violations),
          fixed(s.max_innovation_ratio, 6),
          format_number(s.energy_log_slope),
          std::to_string(s.solver_failures),
          fixed(s.rmse_finite, 4),
          fixed(s.correlation_finite, 4),
          fixed(bench, 4),
          format_number(ctx.thresholds.m1),
          format_number(ctx.thresholds.m2),
          format_number(c.forcing),
          format_number(c.rho),
          format_number(c.h),
          format_number(c.total_time),
          std::to_string(s.trials),
          std::to_string(c.seed),
          tool_version(),
          config_hash(c)};
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
}

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) os << (i ? "," : "") << csv_field(fields[i]);
    os << '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  write_text(path, os.str());
}

void write_thresholds(const fs::path& path, const Thresholds& t) { write_text(path, to_json(t).dump(2) + "\n"); }

std::string svg_line_plot(const std::string& title, const std::vector<double>& x, const std::vector<SvgSeries>& series,
                          bool log_y) {
  constexpr double W = 720, H = 420, L = 70, R = 150, T = 40, B = 50;
  auto tr = [&](double v) { return log_y ? std::log10(v) : v; };
  double x0 = x.empty() ? 0 : x.front(), x1 = x.empty() ? 1 : x.back();
  double y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series)
    for (double v : s.y)
      if (std::isfinite(v) && (!log_y || v > 0)) {
        y0 = std::min(y0, tr(v));
        y1 = std::max(y1, tr(v));
      }
  if (!std::isfinite(y0)) y0 = 0, y1 = 1;
  if (y1 <= y0) y1 = y0 + 1;
  if (x1 <= x0) x1 = x0 + 1;
  auto px = [&](double v) { return L + (v - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double v) { return H - B - (tr(v) - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title) << "</text>\n";
  os << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = y0 + (y1 - y0) * i / 4, xv = x0 + (x1 - x0) * i / 4;
    const double ypix = H - B - (H - T - B) * i / 4.0;
    os << "<text x=\"" << L - 6 << "\" y=\"" << ypix + 4 << "\" text-anchor=\"end\">"
       << fixed(log_y ? std::pow(10.0, yv) : yv, 2) << "</text>\n";
    os << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << fixed(xv, 2) << "</text>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % std::size(kPalette)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1\" points=\"";
    for (std::size_t i = 0; i < series[s].y.size() && i < x.size(); ++i) {
      const double v = series[s].y[i];
      if (!std::isfinite(v) || (log_y && v <= 0)) continue;
      os << fixed(px(x[i]), 2) << ',' << fixed(py(v), 2) << ' ';
    }
    os << "\"/>\n";
    const double ly = T + 14 + 16.0 * static_cast<double>(s);
    os << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly - 4 << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly - 4
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << W - R + 34 << "\" y=\"" << ly << "\">" << xml_escape(series[s].label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string svg_bar_plot(const std::string& title, const std::vector<std::string>& labels,
                         const std::vector<double>& values, bool log_y) {
  constexpr double W = 720, H = 420, L = 70, R = 20, T = 40, B = 80;
  double top = 0;
  for (double v : values)
    if (std::isfinite(v)) top = std::max(top, log_y ? std::log10(1 + v) : v);
  if (!(top > 0)) top = 1;
  const double slot = (W - L - R) / std::max<std::size_t>(1, values.size());
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title) << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double x = L + slot * static_cast<double>(i) + slot * 0.15;
    const double v = values[i];
    if (std::isfinite(v)) {
      const double hgt = (log_y ? std::log10(1 + v) : v) / top * (H - T - B);
      os << "<rect x=\"" << fixed(x, 2) << "\" y=\"" << fixed(H - B - hgt, 2) << "\" width=\"" << fixed(slot * 0.7, 2)
         << "\" height=\"" << fixed(hgt, 2) << "\" fill=\"" << kPalette[i % std::size(kPalette)] << "\"/>\n";
      os << "<text x=\"" << fixed(x + slot * 0.35, 2) << "\" y=\"" << fixed(H - B - hgt - 4, 2)
         << "\" text-anchor=\"middle\">" << fixed(v, 3) << "</text>\n";
    } else {
      os << "<text x=\"" << fixed(x + slot * 0.35, 2) << "\" y=\"" << H - B - 4 << "\" text-anchor=\"middle\">NaN</text>\n";
    }
    os << "<text x=\"" << fixed(x + slot * 0.35, 2) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">"
       << xml_escape(i < labels.size() ? labels[i] : "") << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_run(const fs::path& dir, const ExperimentContext& ctx, const BatchResult& result,
               const RunOutputOptions& options) {
  fs::create_directories(dir);
  std::vector<std::vector<std::string>> rows;
  for (const auto& s : result.summaries) rows.push_back(summary_row(s, ctx));
  write_csv(dir / "summary.csv", summary_header(), rows);
  write_thresholds(dir / "thresholds.json", ctx.thresholds);

  std::vector<std::string> files{"summary.csv", "thresholds.json"};
  const long cycles = ctx.config.cycles();
  std::vector<double> time;
  for (long n = 1; n <= cycles; ++n) time.push_back(static_cast<double>(n) * ctx.config.h);

  if (!result.records.empty()) {
    std::vector<SvgSeries> error_series;
    std::vector<std::string> header{"n", "t"};
    std::vector<std::string> names;
    for (const auto& s : result.summaries) {
      const auto same = std::count_if(result.summaries.begin(), result.summaries.end(),
                                      [&](const BatchSummary& o) { return o.variant == s.variant; });
      names.push_back(same > 1 ? s.variant + "@" + s.integrator : s.variant);
    }
    for (std::size_t v = 0; v < result.variants.size(); ++v) {
      const auto& recs = result.records[v];
      const std::string stem = file_stem(names[v]);
      const std::size_t keep =
          options.records < 0 ? recs.size() : std::min(recs.size(), static_cast<std::size_t>(options.records));
      std::ostringstream jl;
      for (std::size_t t = 0; t < keep; ++t) {
        const auto& r = recs[t];
        for (std::size_t i = 0; i < r.error.size(); ++i) {
          json line{{"trial", r.trial},   {"n", i + 1},           {"error", r.error[i]}, {"theta", r.theta[i]},
                    {"xi", r.xi[i]},      {"lambda", r.lambda[i]}, {"triggered", r.triggered[i] != 0}};
          jl << line.dump() << '\n';
        }
        json end{{"trial", r.trial},
                 {"diverged", r.verdict.diverged},
                 {"cause", std::string(to_string(r.verdict.cause))},
                 {"trigger_count", r.trigger_count},
                 {"rmse", r.verdict.diverged ? json(nullptr) : json(r.rmse)},
                 {"correlation", r.verdict.diverged ? json(nullptr) : json(r.correlation)}};
        if (r.verdict.first_step) end["diverged_at"] = *r.verdict.first_step;
        if (r.first_trigger) end["first_trigger"] = *r.first_trigger;
        jl << end.dump() << '\n';
      }
      write_text(dir / "trials" / (stem + ".jsonl"), jl.str());
      files.push_back("trials/" + stem + ".jsonl");

      if (!recs.empty()) {
        SvgSeries s{names[v], recs.front().error};
        s.y.resize(static_cast<std::size_t>(cycles), std::nan(""));
        error_series.push_back(std::move(s));
        header.push_back(names[v]);
      }

      const auto& variant = result.variants[v];
      if (variant.adaptive) {
        const auto hist = statistics_histograms(recs, ctx.thresholds.m1, ctx.thresholds.m2, options.histogram_bins);
        std::vector<std::vector<std::string>> hrows;
        for (const auto* pair : {&hist.theta, &hist.xi}) {
          const std::string name = pair == &hist.theta ? "theta" : "xi";
          for (std::size_t b = 0; b < pair->counts.size(); ++b) {
            const long c = pair->counts[b];
            hrows.push_back({name, format_number(pair->edges[b]), format_number(pair->edges[b + 1]), std::to_string(c),
                             format_number(c > 0 ? std::log10(static_cast<double>(c)) : 0.0),
                             format_number(pair->threshold)});
          }
        }
        write_csv(dir / "figures" / ("histogram_" + stem + ".csv"),
                  {"statistic", "bin_lo", "bin_hi", "count", "log10_count", "threshold"}, hrows);
        files.push_back("figures/histogram_" + stem + ".csv");
        for (const auto* pair : {&hist.theta, &hist.xi}) {
          const std::string name = pair == &hist.theta ? "theta" : "xi";
          std::vector<std::string> labels;
          std::vector<double> counts;
          for (std::size_t b = 0; b < pair->counts.size(); ++b) {
            labels.push_back(b % 8 == 0 ? fixed(pair->edges[b], 1) : "");
            counts.push_back(static_cast<double>(pair->counts[b]));
          }
          write_text(dir / "figures" / ("histogram_" + stem + "_" + name + ".svg"),
                     svg_bar_plot(names[v] + " " + name + " (log counts)", labels, counts, true));
        }
      }
    }
    std::vector<std::vector<std::string>> erows;
    for (long n = 1; n <= cycles; ++n) {
      std::vector<std::string> row{std::to_string(n), format_number(time[static_cast<std::size_t>(n - 1)])};
      for (const auto& s : error_series) row.push_back(format_number(s.y[static_cast<std::size_t>(n - 1)]));
      erows.push_back(std::move(row));
    }
    write_csv(dir / "figures" / "error_series.csv", header, erows);
    write_text(dir / "figures" / "error_series.svg",
               svg_line_plot("posterior error |mean - truth|, trial 0", time, error_series, true));
    files.push_back("figures/error_series.csv");
  }

  json manifest{{"tool_version", tool_version()},
                {"config_hash", config_hash(ctx.config)},
                {"seed", ctx.config.seed},
                {"config", to_json(ctx.config)},
                {"files", files},
                {"timing", {{"total_seconds", result.seconds}}}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

void write_sweep(const fs::path& dir, const ExperimentContext& ctx, SweepAxis axis,
                 const std::vector<SweepPoint>& points, double seconds) {
  fs::create_directories(dir);
  const std::string name(to_string(axis));
  std::vector<std::string> header{name};
  for (const auto& p : points) header.push_back(p.label);

  std::vector<std::string> variants;
  for (const auto& p : points)
    for (const auto& s : p.summaries)
      if (std::find(variants.begin(), variants.end(), s.variant) == variants.end()) variants.push_back(s.variant);

  const std::vector<std::pair<std::string, std::string (*)(const BatchSummary&)>> metrics{
      {"Cata. Div.", [](const BatchSummary& s) { return percent(s.divergence_fraction); }},
      {"RMSE", [](const BatchSummary& s) { return fixed(s.rmse, 4); }},
      {"Pattern Cor.", [](const BatchSummary& s) { return fixed(s.correlation, 4); }},
      {"Avg. Time", [](const BatchSummary& s) { return fixed(s.seconds_per_trial, 3); }},
      {"Average Θ_n", [](const BatchSummary& s) { return fixed(s.theta_mean, 4); }},
      {"P(Θ_n>M₁)", [](const BatchSummary& s) { return percent(s.p_theta); }},
      {"P(Ξ_n>M₂)", [](const BatchSummary& s) { return percent(s.p_xi); }},
  };
  std::vector<std::vector<std::string>> rows;
  for (const auto& v : variants)
    for (const auto& [metric, fn] : metrics) {
      std::vector<std::string> row{v + " " + metric};
      for (const auto& p : points) {
        auto it = std::find_if(p.summaries.begin(), p.summaries.end(), [&](const auto& s) { return s.variant == v; });
        row.push_back(it == p.summaries.end() ? "" : fn(*it));
      }
      rows.push_back(std::move(row));
    }
  write_csv(dir / ("sweep_" + name + ".csv"), header, rows);

  std::vector<std::string> long_header = summary_header();
  long_header.insert(long_header.begin(), name);
  std::vector<std::vector<std::string>> long_rows;
  for (const auto& p : points) {
    ExperimentContext point_ctx = ctx;
    if (axis == SweepAxis::Rho) point_ctx.config.rho = p.value;
    if (axis == SweepAxis::H) point_ctx.config.h = p.value;
    if (axis == SweepAxis::Integrator)
      point_ctx.config.integrator = ctx.config.sweep_integrators[static_cast<std::size_t>(p.value)];
    for (const auto& s : p.summaries) {
      auto row = summary_row(s, point_ctx);
      row.insert(row.begin(), p.label);
      long_rows.push_back(std::move(row));
    }
  }
  write_csv(dir / ("sweep_" + name + "_long.csv"), long_header, long_rows);
  write_thresholds(dir / "thresholds.json", ctx.thresholds);

  json manifest{{"tool_version", tool_version()},
                {"config_hash", config_hash(ctx.config)},
                {"seed", ctx.config.seed},
                {"config", to_json(ctx.config)},
                {"axis", name},
                {"files", {"sweep_" + name + ".csv", "sweep_" + name + "_long.csv", "thresholds.json"}},
                {"timing", {{"total_seconds", seconds}}}};
  write_text(dir / ("manifest_sweep_" + name + ".json"), manifest.dump(2) + "\n");
}

}  // namespace enkf::experiment
