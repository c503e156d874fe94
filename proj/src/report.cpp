#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "output.hpp"

namespace enkf::experiment {

namespace {

using Table = std::vector<std::vector<std::string>>;

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

Table read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read '" + path.string() + "'");
  Table t;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) t.push_back(split_csv_line(line));
  return t;
}

void markdown_table(std::ostringstream& os, const Table& t, const std::vector<std::string>& keep = {}) {
  if (t.empty()) return;
  std::vector<std::size_t> cols;
  for (std::size_t c = 0; c < t.front().size(); ++c)
    if (keep.empty() || std::find(keep.begin(), keep.end(), t.front()[c]) != keep.end()) cols.push_back(c);
  auto row = [&](const std::vector<std::string>& r) {
    os << '|';
    for (std::size_t c : cols) os << ' ' << (c < r.size() ? r[c] : "") << " |";
    os << '\n';
  };
  row(t.front());
  os << '|';
  for (std::size_t i = 0; i < cols.size(); ++i) os << " --- |";
  os << '\n';
  for (std::size_t r = 1; r < t.size(); ++r) row(t[r]);
  os << '\n';
}

double parse_value(const std::string& s) {
  if (s.empty() || s == "NaN") return std::nan("");
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    return std::nan("");
  }
}

std::size_t column(const Table& t, const std::string& name) {
  const auto& h = t.front();
  const auto it = std::find(h.begin(), h.end(), name);
  if (it == h.end()) throw Error("CSV is missing column '" + name + "'");
  return static_cast<std::size_t>(it - h.begin());
}

std::string slug(const fs::path& rel) {
  std::string s = rel.generic_string();
  for (char& c : s)
    if (c == '/' || c == '.') c = '_';
  return s.empty() ? "root" : s;
}

}  // namespace

fs::path write_report(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("report directory '" + dir.string() + "' does not exist");
  std::vector<fs::path> dirs{dir};
  std::vector<fs::path> subdirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) subdirs.push_back(e.path());
  std::sort(subdirs.begin(), subdirs.end());
  dirs.insert(dirs.end(), subdirs.begin(), subdirs.end());

  std::ostringstream md;
  md << "# Experiment report\n\n";
  int sections = 0;
  for (const auto& d : dirs) {
    const fs::path rel = fs::relative(d, dir);
    const std::string where = rel == "." ? std::string(".") : rel.generic_string();
    const std::string tag = slug(rel == "." ? fs::path() : rel);

    if (fs::exists(d / "summary.csv")) {
      const Table t = read_csv(d / "summary.csv");
      md << "## Batch summary (" << where << ")\n\n";
      markdown_table(md, t,
                     {"Filter", "Integrator", "Cata. Div.", "RMSE", "Pattern Cor.", "Avg. Time", "Triggered Trials",
                      "Avg. Triggers per Triggered Trial", "Average Θ_n", "P(Θ_n>M₁)", "P(Ξ_n>M₂)", "Benchmark RMSE"});
      if (t.size() > 1) {
        const std::size_t f = column(t, "Filter"), r = column(t, "RMSE");
        std::vector<std::string> labels;
        std::vector<double> values;
        for (std::size_t i = 1; i < t.size(); ++i) {
          labels.push_back(t[i][f]);
          values.push_back(parse_value(t[i][r]));
        }
        const std::string svg = "report_" + tag + "_rmse.svg";
        write_text(dir / svg, svg_bar_plot("RMSE (" + where + ")", labels, values));
        md << "![RMSE](" << svg << ")\n\n";
      }
      ++sections;
    }

    std::vector<fs::path> sweeps;
    for (const auto& e : fs::directory_iterator(d)) {
      const std::string name = e.path().filename().string();
      if (e.is_regular_file() && name.rfind("sweep_", 0) == 0 && name.size() > 4 &&
          name.substr(name.size() - 4) == ".csv" && name.find("_long") == std::string::npos)
        sweeps.push_back(e.path());
    }
    std::sort(sweeps.begin(), sweeps.end());
    for (const auto& p : sweeps) {
      const Table t = read_csv(p);
      const std::string axis = p.stem().string().substr(6);
      md << "## Sweep over " << axis << " (" << where << ")\n\n";
      markdown_table(md, t);
      if (!t.empty() && t.front().size() > 1) {
        std::vector<double> x;
        for (std::size_t c = 1; c < t.front().size(); ++c) x.push_back(static_cast<double>(c - 1));
        const std::string suffix = " RMSE";
        std::vector<SvgSeries> series;
        for (std::size_t i = 1; i < t.size(); ++i) {
          const std::string& label = t[i][0];
          if (label.size() <= suffix.size() || label.compare(label.size() - suffix.size(), suffix.size(), suffix) != 0)
            continue;
          SvgSeries s{label.substr(0, label.size() - suffix.size()), {}};
          for (std::size_t c = 1; c < t[i].size(); ++c) s.y.push_back(parse_value(t[i][c]));
          series.push_back(std::move(s));
        }
        const std::string svg = "report_" + tag + "_sweep_" + axis + ".svg";
        write_text(dir / svg, svg_line_plot("RMSE across " + axis + " grid index (" + where + ")", x, series));
        md << "![sweep " << axis << "](" << svg << ")\n\n";
      }
      ++sections;
    }
  }
  if (sections == 0)
    throw ConfigError("no artifacts found in '" + dir.string() +
                      "'; expected summary.csv (from 'enkf run') or sweep_rho.csv, sweep_h.csv, "
                      "sweep_integrator.csv (from 'enkf sweep') in the directory or its immediate subdirectories");
  const fs::path out = dir / "report.md";
  write_text(out, md.str());
  return out;
}

}  // namespace enkf::experiment
