#pragma once

#include <fstream>
#include <regex>
#include <set>

#include <yaml-cpp/yaml.h>

#include "json.hpp"
#include "gauge.hpp"
#include "xisearch.hpp"

namespace bsgap {

using json = nlohmann::json;

inline constexpr const char* tool_version = "0.4.0";

// 64-bit FNV-1a, printed as 16 hex digits.
inline std::string fnv1a_hex(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace detail {

inline json scalar_to_json(const YAML::Node& n) {
  const std::string& s = n.Scalar();
  if (n.Tag() == "!") return s;  // quoted
  static const std::regex integer(R"([+-]?[0-9]+)");
  static const std::regex real(R"([+-]?([0-9]+\.?[0-9]*|\.[0-9]+)([eE][+-]?[0-9]+)?)");
  if (std::regex_match(s, integer)) return std::stoll(s);
  if (std::regex_match(s, real)) return std::stod(s);
  if (s == "true" || s == "True") return true;
  if (s == "false" || s == "False") return false;
  if (s == "~" || s == "null" || s.empty()) return nullptr;
  return s;
}

inline json yaml_to_json(const YAML::Node& n) {
  switch (n.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined:
      return nullptr;
    case YAML::NodeType::Scalar:
      return scalar_to_json(n);
    case YAML::NodeType::Sequence: {
      json a = json::array();
      for (const auto& c : n) a.push_back(yaml_to_json(c));
      return a;
    }
    case YAML::NodeType::Map: {
      json o = json::object();
      for (const auto& kv : n) {
        const std::string key = kv.first.as<std::string>();
        if (o.contains(key)) throw Error(Errc::validation, "duplicate key '" + key + "'", key);
        o[key] = yaml_to_json(kv.second);
      }
      return o;
    }
  }
  return nullptr;
}

// Typed reads with the dotted field name in every error.
struct Reader {
  const json& node;
  std::string path;
  std::set<std::string> seen{};

  std::string at(const std::string& key) const { return path.empty() ? key : path + "." + key; }
  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    throw Error(Errc::validation, at(key) + ": " + why, at(key));
  }
  bool has(const std::string& key) {
    seen.insert(key);
    return node.is_object() && node.contains(key) && !node.at(key).is_null();
  }
  const json& get(const std::string& key) {
    if (!has(key)) fail(key, "missing");
    return node.at(key);
  }
  double number(const std::string& key) {
    const json& v = get(key);
    if (!v.is_number()) fail(key, "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) fail(key, "must be finite");
    return x;
  }
  double number(const std::string& key, double fallback) { return has(key) ? number(key) : fallback; }
  long long integer(const std::string& key) {
    const json& v = get(key);
    if (!v.is_number_integer()) fail(key, "expected an integer");
    return v.get<long long>();
  }
  long long integer(const std::string& key, long long fallback) { return has(key) ? integer(key) : fallback; }
  std::string text(const std::string& key) {
    const json& v = get(key);
    if (!v.is_string()) fail(key, "expected a string");
    return v.get<std::string>();
  }
  std::string text(const std::string& key, const std::string& fallback) { return has(key) ? text(key) : fallback; }
  std::vector<double> numbers(const std::string& key) {
    const json& v = get(key);
    if (!v.is_array()) fail(key, "expected a list of numbers");
    std::vector<double> out;
    for (const auto& x : v) {
      if (!x.is_number()) fail(key, "expected a list of numbers");
      out.push_back(x.get<double>());
    }
    return out;
  }
  std::vector<int> integers(const std::string& key) {
    const json& v = get(key);
    if (!v.is_array()) fail(key, "expected a list of integers");
    std::vector<int> out;
    for (const auto& x : v) {
      if (!x.is_number_integer()) fail(key, "expected a list of integers");
      out.push_back(x.get<int>());
    }
    return out;
  }
  Mat matrix(const std::string& key, int d) {
    const json& v = get(key);
    if (!v.is_array() || static_cast<int>(v.size()) != d) fail(key, "expected " + std::to_string(d) + " rows");
    Mat M(d, d);
    for (int i = 0; i < d; ++i) {
      if (!v[i].is_array() || static_cast<int>(v[i].size()) != d) fail(key, "expected a square matrix");
      for (int j = 0; j < d; ++j) {
        if (!v[i][j].is_number()) fail(key, "matrix entries must be numbers");
        M(i, j) = v[i][j].get<double>();
      }
    }
    return M;
  }
  Reader child(const std::string& key) {
    const json& v = get(key);
    if (!v.is_object()) fail(key, "expected a block");
    return Reader{v, at(key)};
  }
  void finish() const {
    if (!node.is_object()) return;
    for (const auto& [k, _] : node.items())
      if (!seen.count(k)) fail(k, "unknown key");
  }
};

}  // namespace detail

// eps given as a number or as c*h^p (also h^p, c*h, h).
struct EpsRule {
  double c = 0;
  double p = 0;
  bool is_rule = false;
  std::string text;
  double value(double h) const { return is_rule ? c * std::pow(h, p) : c; }
};

inline EpsRule parse_eps_rule(const json& v, const std::string& field = "parameters.eps") {
  EpsRule r;
  if (v.is_number()) {
    r.c = v.get<double>();
    if (!(r.c >= 0)) throw Error(Errc::validation, field + ": must be >= 0", field);
    r.text = json(r.c).dump();
    return r;
  }
  if (!v.is_string()) throw Error(Errc::validation, field + ": expected a number or a rule like 0.5*h^1.5", field);
  static const std::regex rule(
      R"(\s*(?:([0-9]*\.?[0-9]+(?:[eE][+-]?[0-9]+)?)\s*\*\s*)?h\s*(?:\^\s*([+-]?[0-9]*\.?[0-9]+))?\s*)");
  std::smatch m;
  const std::string s = v.get<std::string>();
  if (!std::regex_match(s, m, rule)) throw Error(Errc::validation, field + ": cannot read rule '" + s + "'", field);
  r.is_rule = true;
  r.c = m[1].matched ? std::stod(m[1].str()) : 1.0;
  r.p = m[2].matched ? std::stod(m[2].str()) : 1.0;
  r.text = s;
  return r;
}

struct Manifest {
  explicit Manifest(FloquetProblem p) : problem(std::move(p)) {}

  json canonical;
  std::string hash;
  std::string name;

  FloquetProblem problem;
  double tau = 1.0;
  EpsRule eps_rule;

  ResonanceConfig resonance;
  XiSearchConfig xisearch;
  CertifyConfig certify;
  GaugeConfig gauge;
  double certify_scale = 1.0;  // certification radius as a multiple of the achieved upsilon

  std::vector<int> bands_grid;
  std::optional<Interval> bands_window;
  std::optional<double> gaps_half_width;
  std::optional<double> gaps_target;  // default eps * h
  Vec xi_frac;                         // resonance-map and gauge-check

  bool measure = false;
  std::vector<Vec> measure_thetas;
  double measure_rho = 0.1;
  std::size_t measure_samples = 100000;

  std::vector<double> count_h;
  EpsRule count_w;
  Vec count_xi_frac;

  std::map<std::string, std::uint64_t> seeds;
  std::string output_dir = "out";

  int dim() const { return problem.lattice.dim(); }

  void override_seeds(std::uint64_t s) {
    for (auto& [k, v] : seeds) v = s;
    apply_seeds();
  }
  void apply_seeds() {
    xisearch.seed = seeds.at("xisearch");
    certify.seed = seeds.at("certify");
  }
};

namespace detail {

// Rows of `basis` are generators of Gamma; `dual_basis` gives Gamma* instead; `cubic: s` means s Z^d.
inline LatticePair read_lattice(Reader r, std::optional<int> d_hint) {
  const int given = static_cast<int>(r.has("basis") ? 1 : 0) + (r.has("dual_basis") ? 1 : 0) + (r.has("cubic") ? 1 : 0);
  if (given != 1) r.fail("basis", "give exactly one of basis, dual_basis or cubic");
  std::optional<int> d = d_hint;
  if (r.has("d")) {
    const int dd = static_cast<int>(r.integer("d"));
    if (d && *d != dd) r.fail("d", "disagrees with parameters.d");
    d = dd;
  }
  auto rows = [&](const std::string& key) {
    const json& v = r.get(key);
    const int n = v.is_array() ? static_cast<int>(v.size()) : 0;
    if (d && *d != n) r.fail(key, "expected " + std::to_string(*d) + " rows");
    if (n < 1 || n > 3) r.fail(key, "dimension must be 1, 2 or 3");
    return Mat(r.matrix(key, n).transpose());
  };
  LatticePair lat = [&] {
    if (r.has("basis")) return LatticePair::from_primal(rows("basis"));
    if (r.has("dual_basis")) return LatticePair::from_dual(rows("dual_basis"));
    if (!d) r.fail("d", "cubic lattices need d here or in parameters");
    if (*d < 1 || *d > 3) r.fail("d", "must be 1, 2 or 3");
    return LatticePair::cubic(*d, r.number("cubic"));
  }();
  r.finish();
  return lat;
}

inline SymbolModel read_symbol(Reader r, int d) {
  const std::string model = r.text("model");
  SymbolModel s = [&] {
    if (model == "power") return SymbolModel::power(d, r.number("m", 2.0));
    if (model == "quadratic") return SymbolModel::quadratic(r.matrix("M", d));
    if (model == "double_well") return SymbolModel::double_well(d, r.number("a"), r.number("b"), r.number("c"));
    r.fail("model", "expected power, quadratic or double_well");
  }();
  r.finish();
  return s;
}

inline Perturbation read_perturbation(Reader r, const LatticePair& lat) {
  const int d = lat.dim();
  std::vector<Perturbation::Mode> modes;
  if (r.has("cosine")) {
    Reader c = r.child("cosine");
    const double amp = c.number("amplitude", 1.0);
    const json& th = c.get("thetas");
    if (!th.is_array()) c.fail("thetas", "expected a list of integer vectors");
    for (const auto& t : th) {
      if (!t.is_array() || static_cast<int>(t.size()) != d) c.fail("thetas", "each theta needs d integers");
      Label l(d);
      for (int i = 0; i < d; ++i) {
        if (!t[i].is_number_integer()) c.fail("thetas", "each theta needs d integers");
        l[i] = t[i].get<int>();
      }
      modes.push_back({l, Coefficient::constant(amp, d)});
      modes.push_back({Label(-l), Coefficient::constant(amp, d)});
    }
    c.finish();
  }
  if (r.has("modes")) {
    const json& ms = r.get("modes");
    if (!ms.is_array()) r.fail("modes", "expected a list of {theta, value}");
    for (std::size_t k = 0; k < ms.size(); ++k) {
      Reader m{ms[k], r.at("modes") + "[" + std::to_string(k) + "]"};
      const auto th = m.integers("theta");
      if (static_cast<int>(th.size()) != d) m.fail("theta", "needs d integers");
      const json& v = m.get("value");
      Coefficient b = v.is_number() ? Coefficient::constant(v.get<double>(), d)
                      : v.is_string() ? Coefficient::parse(v.get<std::string>(), d)
                                      : (m.fail("value", "expected a number or an expression"), Coefficient(d));
      modes.push_back({Eigen::Map<const Label>(th.data(), d), b});
      m.finish();
    }
  }
  r.finish();
  return Perturbation(lat, modes);
}

inline Vec read_vec(Reader& r, const std::string& key, int d, Vec fallback) {
  if (!r.has(key)) return fallback;
  const auto v = r.numbers(key);
  if (static_cast<int>(v.size()) != d) r.fail(key, "needs " + std::to_string(d) + " entries");
  return Eigen::Map<const Vec>(v.data(), d);
}

}  // namespace detail

inline Manifest manifest_from_json(const json& root) {
  detail::Reader r{root, ""};
  const std::string name = r.text("name", "unnamed");
  auto pr = r.child("parameters");
  const double h = pr.number("h");
  if (!(h > 0 && h < 1)) pr.fail("h", "must lie in (0, 1)");
  const EpsRule eps_rule = parse_eps_rule(pr.get("eps"));
  const double tau = pr.number("tau");
  std::optional<int> d_hint;
  if (pr.has("d")) d_hint = static_cast<int>(pr.integer("d"));
  pr.finish();

  const LatticePair lat = detail::read_lattice(r.child("lattice"), d_hint);
  const int d = lat.dim();
  const SymbolModel sym = detail::read_symbol(r.child("symbol"), d);
  Perturbation B;
  if (r.has("perturbation")) B = detail::read_perturbation(r.child("perturbation"), lat);

  Manifest m(FloquetProblem{lat, sym, B, h, eps_rule.value(h)});
  m.canonical = root;
  m.hash = fnv1a_hex(root.dump());
  m.name = name;
  m.eps_rule = eps_rule;
  m.tau = tau;

  if (r.has("window")) {
    auto w = r.child("window");
    m.problem.window.C1 = w.number("C1", m.problem.window.C1);
    m.problem.window.delta = w.number("delta", m.problem.window.delta);
    m.problem.window.margin_shells = w.number("margin_shells", m.problem.window.margin_shells);
    w.finish();
  }
  m.problem.validate();

  if (r.has("resonance")) {
    auto c = r.child("resonance");
    auto& rc = m.resonance;
    rc.delta = c.number("delta", rc.delta);
    if (c.has("delta_n")) rc.delta_n = c.numbers("delta_n");
    rc.kappa = c.number("kappa", rc.kappa);
    rc.K = c.number("K", rc.K);
    rc.C_omega = c.number("C_omega", rc.C_omega);
    rc.omega_abs = c.number("omega_abs", rc.omega_abs);
    if (c.has("rho")) rc.rho = c.number("rho");
    m.xi_frac = detail::read_vec(c, "xi_frac", d, Vec::Zero(d));
    if (c.has("measure")) {
      auto ms = c.child("measure");
      m.measure = true;
      m.measure_rho = ms.number("rho");
      m.measure_samples = static_cast<std::size_t>(ms.integer("samples", 100000));
      const json& th = ms.get("thetas");
      if (!th.is_array() || th.empty()) ms.fail("thetas", "expected a non-empty list of vectors");
      for (const auto& t : th) {
        if (!t.is_array() || static_cast<int>(t.size()) != d) ms.fail("thetas", "each theta needs d entries");
        Vec v(d);
        for (int i = 0; i < d; ++i) v[i] = t[i].get<double>();
        m.measure_thetas.push_back(v);
      }
      ms.finish();
    }
    c.finish();
  }
  m.resonance.validate(d, h, m.problem.eps);

  if (r.has("gauge")) {
    auto c = r.child("gauge");
    m.gauge.rounds = static_cast<int>(c.integer("rounds", m.gauge.rounds));
    if (c.has("tol_block")) m.gauge.tol_block = c.number("tol_block");
    m.gauge.floor_factor = c.number("floor_factor", m.gauge.floor_factor);
    if (c.has("xi_frac")) m.xi_frac = detail::read_vec(c, "xi_frac", d, m.xi_frac);
    c.finish();
  }

  auto& xc = m.xisearch;
  xc.tau = m.tau;
  if (r.has("xisearch")) {
    auto c = r.child("xisearch");
    xc.sigma = c.number("sigma", xc.sigma);
    xc.front = c.number("front", xc.front);
    xc.front0 = c.number("front0", xc.front0);
    xc.front1 = c.number("front1", xc.front1);
    xc.front_prime = c.number("front_prime", xc.front_prime);
    const std::string f = c.text("formula", "standard");
    if (f == "standard") xc.formula = UpsilonFormula::standard;
    else if (f == "improved") xc.formula = UpsilonFormula::improved;
    else c.fail("formula", "expected standard or improved");
    xc.max_rejection = static_cast<std::size_t>(c.integer("max_rejection", static_cast<long long>(xc.max_rejection)));
    xc.boundary_margin = c.number("boundary_margin", xc.boundary_margin);
    xc.form_tol = c.number("form_tol", xc.form_tol);
    xc.t_points = static_cast<int>(c.integer("t_points", xc.t_points));
    xc.snap_knots = static_cast<int>(c.integer("snap_knots", xc.snap_knots));
    xc.max_halvings = static_cast<int>(c.integer("max_halvings", xc.max_halvings));
    if (c.has("rho_star")) xc.rho_star = c.number("rho_star");
    if (c.has("upsilon")) xc.upsilon = c.number("upsilon");
    m.certify_scale = c.number("certify_scale", 1.0);
    if (!(m.certify_scale > 0)) c.fail("certify_scale", "must be positive");
    m.certify.grid_per_axis = static_cast<int>(c.integer("certify_grid", m.certify.grid_per_axis));
    c.finish();
  }
  m.certify.front = xc.front;
  if (d >= 2) xc.validate(d, h, m.problem.eps);

  if (r.has("bands")) {
    auto c = r.child("bands");
    if (c.has("grid")) m.bands_grid = c.integers("grid");
    if (c.has("window")) {
      const auto w = c.numbers("window");
      if (w.size() != 2 || !(w[0] < w[1])) c.fail("window", "expected [lo, hi] with lo < hi");
      m.bands_window = Interval{w[0], w[1]};
    }
    c.finish();
  }
  if (!m.bands_grid.empty() && static_cast<int>(m.bands_grid.size()) != d)
    throw Error(Errc::validation, "bands.grid: needs d entries", "bands.grid");

  if (r.has("gaps")) {
    auto c = r.child("gaps");
    if (c.has("half_width")) m.gaps_half_width = c.number("half_width");
    if (c.has("target_resolution")) m.gaps_target = c.number("target_resolution");
    c.finish();
  }

  if (r.has("count")) {
    auto c = r.child("count");
    m.count_h = c.numbers("h");
    m.count_w = parse_eps_rule(c.get("w"), "count.w");
    m.count_xi_frac = detail::read_vec(c, "xi_frac", d, Vec::Zero(d));
    c.finish();
  }

  m.seeds = {{"xisearch", 1}, {"certify", 1}, {"measure", 1}};
  if (r.has("seeds")) {
    auto c = r.child("seeds");
    for (auto& [k, v] : m.seeds) {
      const long long s = c.integer(k, static_cast<long long>(v));
      if (s < 0) c.fail(k, "seeds are non-negative integers");
      v = static_cast<std::uint64_t>(s);
    }
    c.finish();
  }
  m.apply_seeds();
  if (r.has("output")) {
    auto c = r.child("output");
    m.output_dir = c.text("dir", m.output_dir);
    c.finish();
  }
  r.finish();
  return m;
}

inline Manifest parse_manifest(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw Error(Errc::validation, std::string("manifest is not valid YAML: ") + e.what(), "manifest");
  }
  if (!root.IsMap()) throw Error(Errc::validation, "manifest must be a mapping", "manifest");
  return manifest_from_json(detail::yaml_to_json(root));
}

inline Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::validation, "cannot read manifest " + path, "manifest");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str());
}

}  // namespace bsgap
