#include "config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace enkf::experiment {

using nlohmann::json;

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

double parse_number(std::string_view text, std::string_view what) {
  const std::string t = trim(text);
  double v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size())
    throw ConfigError("invalid " + std::string(what) + " '" + t + "'");
  return v;
}

template <typename T>
T as(const json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

Mat matrix_from_json(const json& j, const std::string& path) {
  if (j.is_number()) return Mat::Constant(1, 1, j.get<double>());
  if (!j.is_array() || j.empty()) throw ConfigError(path + ": expected a non-empty array of rows");
  if (!j.front().is_array()) {
    Mat m(1, static_cast<Eigen::Index>(j.size()));
    for (std::size_t c = 0; c < j.size(); ++c) m(0, static_cast<Eigen::Index>(c)) = as<double>(j[c], path);
    return m;
  }
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j.front().size());
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw ConfigError(path + ": rows must all have " + std::to_string(cols) + " entries");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = as<double>(row[static_cast<std::size_t>(c)], path);
  }
  return m;
}

json matrix_to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

IntegratorSpec integrator_from_json(const json& j, const std::string& path) {
  if (j.is_string()) return parse_integrator(j.get<std::string>());
  if (!j.is_object()) throw ConfigError(path + ": expected an integrator name or object");
  IntegratorSpec spec;
  try {
    spec = parse_integrator(as<std::string>(j.at("scheme"), path + ".scheme"));
  } catch (const json::out_of_range&) {
    throw ConfigError(path + ": missing 'scheme'");
  } catch (const InvalidArgument& e) {
    throw ConfigError(path + ": " + e.what());
  }
  if (j.contains("step")) spec.step = as<double>(j["step"], path + ".step");
  if (j.contains("tolerance")) spec.implicit_tolerance = as<double>(j["tolerance"], path + ".tolerance");
  if (j.contains("max_iterations"))
    spec.implicit_max_iterations = as<int>(j["max_iterations"], path + ".max_iterations");
  if (j.contains("rtol")) spec.rk45_rel_tol = as<double>(j["rtol"], path + ".rtol");
  if (j.contains("atol")) spec.rk45_abs_tol = as<double>(j["atol"], path + ".atol");
  return spec;
}

json integrator_to_json(const IntegratorSpec& s) {
  json j{{"scheme", std::string(to_string(s.scheme))}, {"step", s.step}};
  if (s.scheme == Scheme::ImplicitEuler) {
    j["tolerance"] = s.implicit_tolerance;
    j["max_iterations"] = s.implicit_max_iterations;
  }
  if (s.scheme == Scheme::AdaptiveRK45) {
    j["rtol"] = s.rk45_rel_tol;
    j["atol"] = s.rk45_abs_tol;
  }
  return j;
}

void check_keys(const json& obj, const std::string& path, std::initializer_list<std::string_view> allowed) {
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError(path + ": unknown key '" + key + "'");
  }
}

std::pair<int, int> line_column(const std::string& text, std::size_t byte) {
  int line = 1, col = 1;
  for (std::size_t i = 0; i < text.size() && i + 1 < byte; ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace

std::string VariantSpec::name() const {
  std::string out(to_string(kind));
  if (constant && adaptive) return out + "-CAI";
  if (constant) return out + "-CI";
  if (adaptive) return out + "-AI";
  return out;
}

VariantSpec parse_variant(std::string_view token) {
  std::string t = lower(trim(token));
  VariantSpec v;
  std::string integ;
  if (const auto at = t.find('@'); at != std::string::npos) {
    integ = t.substr(at + 1);
    t.resize(at);
  }
  std::string base = t, suffix;
  if (const auto dash = t.find('-'); dash != std::string::npos) {
    base = t.substr(0, dash);
    suffix = t.substr(dash + 1);
  }
  if (base == "enkf")
    v.kind = FilterKind::EnKF;
  else if (base == "etkf")
    v.kind = FilterKind::ETKF;
  else if (base == "eakf")
    v.kind = FilterKind::EAKF;
  else
    throw ConfigError("unknown filter '" + std::string(token) + "' (expected enkf, etkf or eakf with -ai, -ci, -cai)");
  if (suffix == "ai") {
    v.adaptive = true;
  } else if (suffix == "ci") {
    v.constant = true;
  } else if (suffix == "cai") {
    v.constant = v.adaptive = true;
  } else if (!suffix.empty()) {
    throw ConfigError("unknown inflation suffix in '" + std::string(token) + "'");
  }
  if (!integ.empty()) v.integrator = parse_integrator(integ);
  return v;
}

std::vector<VariantSpec> parse_variants(std::string_view list) {
  std::vector<VariantSpec> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    const auto comma = list.find(',', start);
    const auto piece = list.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    if (!trim(piece).empty()) out.push_back(parse_variant(piece));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw ConfigError("empty variant list");
  return out;
}

IntegratorSpec parse_integrator(std::string_view text) {
  const std::string t = lower(trim(text));
  const auto colon = t.find(':');
  Scheme scheme;
  try {
    scheme = scheme_from_string(t.substr(0, colon));
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  IntegratorSpec spec;
  switch (scheme) {
    case Scheme::ExplicitEuler: spec = IntegratorSpec::explicit_euler(); break;
    case Scheme::RK4: spec = IntegratorSpec::rk4(); break;
    case Scheme::ImplicitEuler: spec = IntegratorSpec::implicit_euler(); break;
    case Scheme::AdaptiveRK45: spec = IntegratorSpec::rk45(); break;
  }
  if (colon != std::string::npos) spec.step = parse_number(t.substr(colon + 1), "integrator step");
  if (!(spec.step > 0)) throw ConfigError("integrator step must be positive");
  return spec;
}

std::string integrator_label(const IntegratorSpec& spec) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s:%g", std::string(to_string(spec.scheme)).c_str(), spec.step);
  return buf;
}

long ExperimentConfig::cycles() const { return static_cast<long>(std::ceil(total_time / h - 1e-9)); }

long ExperimentConfig::window_start() const { return std::max(1L, std::lround(total_time / (2 * h))); }

bool ExperimentConfig::any_adaptive() const {
  return std::any_of(variants.begin(), variants.end(), [](const VariantSpec& v) { return v.adaptive; });
}

FilterConfig ExperimentConfig::filter_config(const VariantSpec& v, double m1_value, double m2_value) const {
  FilterConfig fc;
  fc.kind = v.kind;
  fc.options.literal_esrf_theta = literal_esrf_theta;
  if (v.constant) {
    fc.policy.constant = constant_kind;
    fc.policy.rho = rho;
  }
  if (v.adaptive) fc.policy.adaptive = AdaptiveInflation{c_phi, m1_value, m2_value};
  return fc;
}

ModelSpec<double> ExperimentConfig::model() const {
  if (model_kind == ModelKind::Linear)
    return ModelSpec<double>::linear_gaussian(linear_drift,
                                              linear_noise.size() ? linear_noise : Mat(Mat::Zero(dimension, dimension)));
  return ModelSpec<double>::lorenz96(forcing, dimension);
}

IntegratorSpec ExperimentConfig::integrator_for(const VariantSpec& v) const {
  return v.integrator ? *v.integrator : integrator;
}

void ExperimentConfig::validate() const {
  if (dimension < 1) throw ConfigError("model.dimension must be positive");
  if (model_kind == ModelKind::Linear) {
    if (linear_drift.rows() != dimension || linear_drift.cols() != dimension)
      throw ConfigError("model.drift must be d x d with d = model.dimension");
    if (linear_noise.size() != 0 && (linear_noise.rows() != dimension || linear_noise.cols() != dimension))
      throw ConfigError("model.noise must be d x d with d = model.dimension");
  }
  if (members < 2) throw ConfigError("ensemble.members must be at least 2");
  if (h_raw.cols() != dimension)
    throw ConfigError("observation.H must have " + std::to_string(dimension) + " columns");
  if (gamma.rows() != h_raw.rows() || gamma.cols() != h_raw.rows())
    throw ConfigError("observation.gamma must be q x q with q = rows of H");
  if (variants.empty()) throw ConfigError("no filter variants selected");
  if (!(rho >= 0)) throw ConfigError("filters.rho must be non-negative");
  if (!(c_phi > 0)) throw ConfigError("filters.c_phi must be positive");
  if (!(h > 0) || !(total_time > 0)) throw ConfigError("run.h and run.T must be positive");
  if (cycles() < 2) throw ConfigError("run.T must cover at least two observation intervals");
  if (trials < 1) throw ConfigError("run.trials must be positive");
  if (jobs < 0) throw ConfigError("run.jobs must be non-negative");
  if (m1 && !(*m1 > 0)) throw ConfigError("filters.thresholds.M1 must be positive");
  if (m2 && !(*m2 > 0)) throw ConfigError("filters.thresholds.M2 must be positive");
  auto check = [this](const IntegratorSpec& s) {
    if (s.scheme != Scheme::AdaptiveRK45) micro_steps(h, s.step);
  };
  try {
    check(integrator);
    check(truth_integrator);
    check(climatology_integrator);
    for (const auto& v : variants)
      if (v.integrator) check(*v.integrator);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.h_raw = Mat::Zero(1, c.dimension);
  c.h_raw(0, 0) = 1.0;
  c.gamma = Mat::Constant(1, 1, 0.01);
  c.variants = parse_variants("enkf,enkf-ai,enkf-ci,enkf-cai");
  c.sweep_rho = {1.0, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005};
  c.sweep_h = {0.01, 0.02, 0.05, 0.1, 0.2, 0.5};
  c.sweep_integrators = {IntegratorSpec::explicit_euler(), IntegratorSpec::rk4(), IntegratorSpec::implicit_euler(),
                         IntegratorSpec::rk45()};
  return c;
}

double parse_regime(std::string_view regime) {
  std::string r = lower(trim(regime));
  if (!r.empty() && r[0] == 'f') r.erase(0, 1);
  const double f = parse_number(r, "regime");
  if (!std::isfinite(f)) throw ConfigError("invalid regime");
  return f;
}

void apply_json(ExperimentConfig& c, const json& j) {
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  check_keys(j, "config",
             {"regime", "model", "observation", "ensemble", "filters", "integrator", "truth_integrator", "climatology",
              "run", "sweep"});
  if (j.contains("regime")) c.forcing = parse_regime(as<std::string>(j["regime"], "regime"));

  if (j.contains("model")) {
    const json& m = j["model"];
    check_keys(m, "model", {"type", "forcing", "dimension", "drift", "noise"});
    if (m.contains("type")) {
      const std::string t = lower(as<std::string>(m["type"], "model.type"));
      if (t == "lorenz96") c.model_kind = ModelKind::Lorenz96;
      else if (t == "linear") c.model_kind = ModelKind::Linear;
      else throw ConfigError("model.type: unknown model '" + t + "' (expected lorenz96 or linear)");
    }
    if (m.contains("forcing")) c.forcing = as<double>(m["forcing"], "model.forcing");
    if (m.contains("drift")) c.linear_drift = matrix_from_json(m["drift"], "model.drift");
    if (m.contains("noise")) c.linear_noise = matrix_from_json(m["noise"], "model.noise");
    if (m.contains("dimension")) {
      const int d = as<int>(m["dimension"], "model.dimension");
      if (d != c.dimension && d > 0) {
        const Mat old = c.h_raw;
        c.h_raw = Mat::Zero(old.rows(), d);
        c.h_raw.leftCols(std::min<Eigen::Index>(d, old.cols())) = old.leftCols(std::min<Eigen::Index>(d, old.cols()));
      }
      c.dimension = d;
    }
  }
  if (j.contains("observation")) {
    const json& o = j["observation"];
    check_keys(o, "observation", {"H", "gamma", "noise_variance"});
    if (o.contains("H")) c.h_raw = matrix_from_json(o["H"], "observation.H");
    if (o.contains("gamma")) c.gamma = matrix_from_json(o["gamma"], "observation.gamma");
    if (o.contains("noise_variance"))
      c.gamma = as<double>(o["noise_variance"], "observation.noise_variance") * Mat::Identity(c.h_raw.rows(), c.h_raw.rows());
  }
  if (j.contains("ensemble")) {
    const json& e = j["ensemble"];
    check_keys(e, "ensemble", {"members"});
    if (e.contains("members")) c.members = as<int>(e["members"], "ensemble.members");
  }
  if (j.contains("filters")) {
    const json& f = j["filters"];
    check_keys(f, "filters", {"variants", "rho", "constant", "c_phi", "thresholds", "literal_esrf_theta", "noise_dimension"});
    if (f.contains("variants")) {
      const json& v = f["variants"];
      if (v.is_string()) {
        c.variants = parse_variants(v.get<std::string>());
      } else if (v.is_array()) {
        c.variants.clear();
        for (std::size_t i = 0; i < v.size(); ++i) {
          const std::string path = "filters.variants[" + std::to_string(i) + "]";
          if (v[i].is_string()) {
            c.variants.push_back(parse_variant(v[i].get<std::string>()));
          } else if (v[i].is_object()) {
            if (!v[i].contains("name")) throw ConfigError(path + ": missing 'name'");
            VariantSpec spec = parse_variant(as<std::string>(v[i]["name"], path + ".name"));
            if (v[i].contains("integrator")) spec.integrator = integrator_from_json(v[i]["integrator"], path + ".integrator");
            c.variants.push_back(spec);
          } else {
            throw ConfigError(path + ": expected a name or an object");
          }
        }
      } else {
        throw ConfigError("filters.variants: expected a list");
      }
    }
    if (f.contains("rho")) c.rho = as<double>(f["rho"], "filters.rho");
    if (f.contains("constant")) {
      const std::string k = lower(as<std::string>(f["constant"], "filters.constant"));
      if (k == "additive")
        c.constant_kind = ConstantInflation::Additive;
      else if (k == "multiplicative")
        c.constant_kind = ConstantInflation::Multiplicative;
      else
        throw ConfigError("filters.constant: expected 'additive' or 'multiplicative'");
    }
    if (f.contains("c_phi")) c.c_phi = as<double>(f["c_phi"], "filters.c_phi");
    if (f.contains("literal_esrf_theta")) c.literal_esrf_theta = as<bool>(f["literal_esrf_theta"], "filters.literal_esrf_theta");
    if (f.contains("noise_dimension")) {
      const std::string k = lower(as<std::string>(f["noise_dimension"], "filters.noise_dimension"));
      if (k == "q" || k == "observed")
        c.noise_dimension = NoiseDimension::Observed;
      else if (k == "d" || k == "state")
        c.noise_dimension = NoiseDimension::State;
      else
        throw ConfigError("filters.noise_dimension: expected 'q' or 'd'");
    }
    if (f.contains("thresholds")) {
      const json& t = f["thresholds"];
      if (t.is_string()) {
        const std::string s = t.get<std::string>();
        if (s == "derive") {
          c.derive_thresholds = true;
        } else {
          c.thresholds_file = s;
        }
      } else if (t.is_object()) {
        check_keys(t, "filters.thresholds", {"M1", "M2", "derive", "file"});
        if (t.contains("M1")) c.m1 = as<double>(t["M1"], "filters.thresholds.M1");
        if (t.contains("M2")) c.m2 = as<double>(t["M2"], "filters.thresholds.M2");
        if (t.contains("derive")) c.derive_thresholds = as<bool>(t["derive"], "filters.thresholds.derive");
        if (t.contains("file")) c.thresholds_file = as<std::string>(t["file"], "filters.thresholds.file");
      } else {
        throw ConfigError("filters.thresholds: expected \"derive\", a file name or {M1, M2}");
      }
    }
  }
  if (j.contains("integrator")) c.integrator = integrator_from_json(j["integrator"], "integrator");
  if (j.contains("truth_integrator")) c.truth_integrator = integrator_from_json(j["truth_integrator"], "truth_integrator");
  if (j.contains("climatology")) {
    const json& k = j["climatology"];
    check_keys(k, "climatology", {"run_length", "burn_in", "chains", "integrator"});
    if (k.contains("run_length")) c.climatology.run_length = as<double>(k["run_length"], "climatology.run_length");
    if (k.contains("burn_in")) c.climatology.burn_in = as<double>(k["burn_in"], "climatology.burn_in");
    if (k.contains("chains")) c.climatology.chains = as<int>(k["chains"], "climatology.chains");
    if (k.contains("integrator")) c.climatology_integrator = integrator_from_json(k["integrator"], "climatology.integrator");
  }
  if (j.contains("run")) {
    const json& r = j["run"];
    check_keys(r, "run", {"h", "T", "trials", "seed", "jobs", "literal_rmse"});
    if (r.contains("h")) c.h = as<double>(r["h"], "run.h");
    if (r.contains("T")) c.total_time = as<double>(r["T"], "run.T");
    if (r.contains("trials")) c.trials = as<int>(r["trials"], "run.trials");
    if (r.contains("seed")) c.seed = as<std::uint64_t>(r["seed"], "run.seed");
    if (r.contains("jobs")) c.jobs = as<int>(r["jobs"], "run.jobs");
    if (r.contains("literal_rmse")) c.literal_rmse = as<bool>(r["literal_rmse"], "run.literal_rmse");
  }
  if (j.contains("sweep")) {
    const json& s = j["sweep"];
    check_keys(s, "sweep", {"rho", "h", "integrator"});
    if (s.contains("rho")) c.sweep_rho = as<std::vector<double>>(s["rho"], "sweep.rho");
    if (s.contains("h")) c.sweep_h = as<std::vector<double>>(s["h"], "sweep.h");
    if (s.contains("integrator")) {
      c.sweep_integrators.clear();
      const json& list = s["integrator"];
      if (!list.is_array()) throw ConfigError("sweep.integrator: expected a list");
      for (std::size_t i = 0; i < list.size(); ++i)
        c.sweep_integrators.push_back(integrator_from_json(list[i], "sweep.integrator[" + std::to_string(i) + "]"));
    }
  }
}

static json model_json(const ExperimentConfig& c) {
  json m{{"forcing", c.forcing}, {"dimension", c.dimension}};
  if (c.model_kind == ModelKind::Linear) {
    m["type"] = "linear";
    m["drift"] = matrix_to_json(c.linear_drift);
    if (c.linear_noise.size()) m["noise"] = matrix_to_json(c.linear_noise);
  }
  return m;
}

json to_json(const ExperimentConfig& c) {
  json variants = json::array();
  for (const auto& v : c.variants) {
    if (v.integrator)
      variants.push_back({{"name", v.name()}, {"integrator", integrator_to_json(*v.integrator)}});
    else
      variants.push_back(v.name());
  }
  json thresholds{{"derive", c.derive_thresholds}};
  if (c.m1) thresholds["M1"] = *c.m1;
  if (c.m2) thresholds["M2"] = *c.m2;
  if (!c.thresholds_file.empty()) thresholds["file"] = c.thresholds_file;
  json sweep_integrators = json::array();
  for (const auto& s : c.sweep_integrators) sweep_integrators.push_back(integrator_to_json(s));
  return json{
      {"model", model_json(c)},
      {"observation", {{"H", matrix_to_json(c.h_raw)}, {"gamma", matrix_to_json(c.gamma)}}},
      {"ensemble", {{"members", c.members}}},
      {"filters",
       {{"variants", variants},
        {"rho", c.rho},
        {"constant", c.constant_kind == ConstantInflation::Multiplicative ? "multiplicative" : "additive"},
        {"c_phi", c.c_phi},
        {"thresholds", thresholds},
        {"literal_esrf_theta", c.literal_esrf_theta},
        {"noise_dimension", c.noise_dimension == NoiseDimension::State ? "d" : "q"}}},
      {"integrator", integrator_to_json(c.integrator)},
      {"truth_integrator", integrator_to_json(c.truth_integrator)},
      {"climatology",
       {{"run_length", c.climatology.run_length},
        {"burn_in", c.climatology.burn_in},
        {"chains", c.climatology.chains},
        {"integrator", integrator_to_json(c.climatology_integrator)}}},
      {"run",
       {{"h", c.h},
        {"T", c.total_time},
        {"trials", c.trials},
        {"seed", c.seed},
        {"literal_rmse", c.literal_rmse}}},
      {"sweep", {{"rho", c.sweep_rho}, {"h", c.sweep_h}, {"integrator", sweep_integrators}}},
  };
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_column(text, e.byte);
    std::string msg = e.what();
    if (const auto pos = msg.find("syntax error"); pos != std::string::npos) msg = msg.substr(pos);
    throw ConfigError(origin + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + msg);
  }
  ExperimentConfig c = default_config();
  try {
    apply_json(c, j);
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

std::string config_hash(const ExperimentConfig& config) {
  const std::string text = to_json(config).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace enkf::experiment
