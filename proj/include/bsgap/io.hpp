#pragma once

#include <charconv>
#include <chrono>
#include <ctime>
#include <filesystem>

#include "manifest.hpp"

namespace bsgap {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

// Shortest round-trip text, so reruns are byte-identical.
inline std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

inline ojson jnum(double x) {
  if (std::isfinite(x)) return x;
  return fmt(x);  // JSON has no inf/nan
}

template <class V>
ojson jvec(const V& v) {
  ojson a = ojson::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if constexpr (std::is_integral_v<std::decay_t<decltype(v[0])>>) a.push_back(v[i]);
    else a.push_back(jnum(v[i]));
  }
  return a;
}

inline ojson jmat_cols(const Mat& m) {
  ojson a = ojson::array();
  for (Eigen::Index j = 0; j < m.cols(); ++j) a.push_back(jvec(Vec(m.col(j))));
  return a;
}

inline ojson jinterval(const Interval& i) { return ojson{{"lo", jnum(i.lo)}, {"hi", jnum(i.hi)}}; }

// What every output carries.
struct OutputHeader {
  std::string hash;
  std::map<std::string, std::uint64_t> seeds;
  std::string command;
  double h = 0, eps = 0, tau = 0;
  std::string eps_rule;

  static OutputHeader of(const Manifest& m, std::string command) {
    return {m.hash, m.seeds, std::move(command), m.problem.h, m.problem.eps, m.tau, m.eps_rule.text};
  }
  std::string seed_list() const {
    std::string s;
    for (const auto& [k, v] : seeds) s += (s.empty() ? "" : " ") + k + "=" + std::to_string(v);
    return s;
  }
  std::vector<std::string> lines() const {
    return {"tool: bsgap " + std::string(tool_version), "manifest_hash: " + hash, "seeds: " + seed_list(),
            "command: " + command, "h: " + fmt(h) + " eps: " + fmt(eps) + " (" + eps_rule + ") tau: " + fmt(tau)};
  }
  ojson json() const {
    ojson s = ojson::object();
    for (const auto& [k, v] : seeds) s[k] = v;
    return {{"tool", "bsgap"},  {"version", tool_version}, {"manifest_hash", hash}, {"seeds", s},
            {"command", command}, {"h", jnum(h)}, {"eps", jnum(eps)}, {"eps_rule", eps_rule}, {"tau", jnum(tau)}};
  }
};

class Csv {
 public:
  Csv(const fs::path& path, const OutputHeader& hdr, const std::vector<std::string>& columns) : out_(path) {
    if (!out_) throw Error(Errc::validation, "cannot write " + path.string(), "output.dir");
    for (const auto& l : hdr.lines()) out_ << "# " << l << '\n';
    row_strings(columns);
  }
  template <class... T>
  void row(const T&... cells) {
    bool first = true;
    ((out_ << (first ? "" : ",") << cell(cells), first = false), ...);
    out_ << '\n';
  }
  void row_strings(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }

 private:
  static std::string cell(double x) { return fmt(x); }
  static std::string cell(int x) { return std::to_string(x); }
  static std::string cell(long x) { return std::to_string(x); }
  static std::string cell(std::size_t x) { return std::to_string(x); }
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }
  std::ofstream out_;
};

inline void write_json(const fs::path& path, const OutputHeader& hdr, const ojson& body) {
  ojson doc = {{"_header", hdr.json()}};
  for (const auto& [k, v] : body.items()) doc[k] = v;
  std::ofstream out(path);
  if (!out) throw Error(Errc::validation, "cannot write " + path.string(), "output.dir");
  out << doc.dump(2) << '\n';
}

inline ojson error_json(Errc code, const std::string& message, const std::string& field) {
  return {{"error", {{"code", to_string(code)}, {"exit_code", exit_code(code)}, {"message", message}, {"field", field}}}};
}

// Append-only, one JSON object per line.
inline void append_run_record(const fs::path& dir, const std::string& hash, const std::string& command,
                              double wall_seconds, const std::vector<std::string>& outputs, int exit) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  ojson rec = {{"time", stamp},          {"manifest_hash", hash}, {"command", command},
               {"wall_time_s", wall_seconds}, {"outputs", outputs}, {"tool_version", tool_version},
               {"exit_code", exit}};
  std::ofstream out(dir / "runs.log", std::ios::app);
  out << rec.dump() << '\n';
}

// ---- module records ------------------------------------------------------------

inline void write_bands_csv(const fs::path& path, const OutputHeader& hdr, const BandTable& t) {
  const int d = t.grid.empty() ? 0 : static_cast<int>(t.grid.front().size());
  std::vector<std::string> cols;
  for (int i = 1; i <= d; ++i) cols.push_back("xi" + std::to_string(i));
  cols.push_back("band_index");
  cols.push_back("value");
  Csv csv(path, hdr, cols);
  for (std::size_t g = 0; g < t.grid.size(); ++g) {
    for (Eigen::Index k = 0; k < t.values[g].size(); ++k) {
      std::vector<std::string> r;
      for (int i = 0; i < d; ++i) r.push_back(fmt(t.grid[g][i]));
      r.push_back(std::to_string(t.below[g] + k));  // global sorted index
      r.push_back(fmt(t.values[g][k]));
      csv.row_strings(r);
    }
  }
}

inline ojson band_summary(const BandTable& t, const std::vector<int>& shape) {
  std::size_t rows = 0, bmin = SIZE_MAX, bmax = 0;
  for (std::size_t g = 0; g < t.grid.size(); ++g) {
    rows += static_cast<std::size_t>(t.values[g].size());
    bmin = std::min(bmin, t.basis_size[g]);
    bmax = std::max(bmax, t.basis_size[g]);
  }
  ojson fails = ojson::array();
  for (const auto& [i, why] : t.failures) fails.push_back({{"point", i}, {"reason", why}});
  return {{"grid", shape},
          {"points", t.grid.size()},
          {"window", jinterval(t.window)},
          {"rows", rows},
          {"basis_size_min", t.grid.empty() ? 0 : bmin},
          {"basis_size_max", bmax},
          {"covering_radius", t.covering_radius ? jnum(*t.covering_radius) : ojson(nullptr)},
          {"lipschitz", jnum(t.lipschitz)},
          {"eig_tol", jnum(t.eig_tol)},
          {"failures", fails}};
}

inline ojson gap_json(const GapReport& g) {
  ojson gaps = ojson::array();
  for (const auto& i : g.gaps)
    gaps.push_back({{"gap_start", jnum(i.lo)}, {"gap_end", jnum(i.hi)}, {"resolution", jnum(g.resolution)}});
  return {{"gaps", gaps},
          {"count", g.gaps.size()},
          {"resolution", jnum(g.resolution)},
          {"resolution_is_lower_bound", g.resolution_is_lower_bound},
          {"failed_points", g.failed_points}};
}

inline void write_resonance_csv(const fs::path& path, const OutputHeader& hdr, const ResonancePartition& p) {
  const int d = p.dim();
  std::vector<std::string> cols;
  for (int i = 1; i <= d; ++i) cols.push_back("gamma" + std::to_string(i));
  for (const char* c : {"stratum", "class_id", "subspace_id"}) cols.push_back(c);
  Csv csv(path, hdr, cols);
  for (const auto& pt : p.points) {
    std::vector<std::string> r;
    for (int i = 0; i < d; ++i) r.push_back(std::to_string(pt.gamma[i]));
    r.push_back(std::to_string(pt.stratum));
    r.push_back(std::to_string(pt.cls));
    r.push_back(std::to_string(pt.subspace));
    csv.row_strings(r);
  }
}

inline ojson partition_json(const ResonancePartition& p, const ClassStats& st, const PartitionCheck& chk) {
  return {{"h", jnum(p.h)},
          {"eps", jnum(p.eps)},
          {"tau", jnum(p.tau)},
          {"xi_frac", jvec(p.xi_frac)},
          {"window_halfwidth", jnum(p.window)},
          {"rho", jnum(p.rho)},
          {"rho_n", p.rho_n},
          {"subspace_radius", jnum(p.subspace_radius)},
          {"subspaces", p.subspaces.size()},
          {"points", st.total},
          {"per_stratum", st.per_stratum},
          {"classes", p.classes.size()},
          {"resonant_classes", st.resonant_classes},
          {"largest_class", st.largest_class},
          {"sum_class_sizes", st.sum_class_sizes},
          {"multi_candidate_points", p.multi_candidate_points},
          {"check",
           {{"ok", chk.ok()},
            {"reflexive", chk.reflexive},
            {"symmetric", chk.symmetric},
            {"transitive", chk.transitive},
            {"classes_consistent", chk.classes_consistent},
            {"unique_subspace", chk.unique_subspace},
            {"total", chk.total},
            {"widened_violations", chk.widened_violations},
            {"max_diameter", jnum(chk.max_diameter)},
            {"diameter_constant", jnum(chk.diameter_constant)},
            {"failures", chk.failures}}},
          {"notices", p.notices}};
}

inline ojson measure_json(const MeasureEstimate& m, double rho) {
  return {{"seed", m.seed},       {"samples", m.samples}, {"estimate", jnum(m.fraction)},
          {"standard_error", jnum(m.standard_error)}, {"proposals", m.proposals}, {"rho", jnum(rho)}};
}

inline ojson gauge_json(const GaugePipeline& g) {
  const auto& r = g.run;
  ojson blocks = ojson::array();
  for (const auto& b : g.blocks.blocks)
    blocks.push_back({{"id", b.id}, {"size", b.indices.size()}, {"classes", b.classes}});
  ojson merges = ojson::array();
  for (const auto& [a, b] : g.blocks.merges) merges.push_back({a, b});
  return {{"basis_size", g.original.basis.size()},
          {"window", jinterval(g.window)},
          {"residuals", r.residuals},
          {"kill_sizes", r.kill_sizes},
          {"generator_max", r.generator_max},
          {"unitarity_defect", jnum(r.unitarity_defect)},
          {"spectral_defect", jnum(g.spectral_defect)},
          {"tol_block", jnum(g.tol_block)},
          {"blocks", blocks},
          {"outside", g.blocks.outside.size()},
          {"block_residual", jnum(g.blocks.residual)},
          {"dropped_mass_sq", jnum(g.blocks.dropped_mass_sq)},
          {"removed_norm", jnum(g.blocks.removed_norm)},
          {"merges", merges},
          {"comparison",
           {{"hausdorff", jnum(g.comparison.hausdorff)},
            {"clusters_checked", g.comparison.clusters_checked},
            {"separation", jnum(g.comparison.separation)},
            {"full_in_window", jvec(g.comparison.full_in_window)},
            {"blocks_in_window", jvec(g.comparison.blocks_in_window)}}},
          {"bprime",
           {{"max_deviation", jnum(g.bprime.max_deviation)},
            {"scale", jnum(g.bprime.scale)},
            {"fitted_C", jnum(g.bprime.fitted_C)},
            {"points", g.bprime.points}}},
          {"partition_classes", g.partition.classes.size()}};
}

inline ojson stats_json(const RejectionStats& s) {
  return {{"draws", s.draws},          {"no_root", s.no_root}, {"boundary", s.boundary}, {"resonant", s.resonant},
          {"separation", s.separation}, {"form", s.form},       {"spiral", s.spiral}};
}

inline ojson step_json(const StepReport& s) {
  ojson ex = ojson::array();
  for (const auto& i : s.excluded) ex.push_back({jnum(i.lo), jnum(i.hi)});
  return {{"k", s.k},
          {"eta", jvec(s.eta)},
          {"guard", s.guard},
          {"upsilon_target", jnum(s.upsilon_target)},
          {"upsilon", jnum(s.upsilon)},
          {"halvings", s.halvings},
          {"t_range", jinterval(s.t_range)},
          {"t_chosen", jnum(s.t_chosen)},
          {"excluded_intervals", ex.size()},
          {"excluded_length", jnum(s.excluded_length)},
          {"free_length", jnum(s.free_length)},
          {"R_hat", jnum(s.R_hat)},
          {"candidates", s.candidates},
          {"near_antipodal", s.near_antipodal},
          {"antipodal_width", jnum(s.antipodal_width)},
          {"band", jnum(s.band)},
          {"clearance", jnum(s.clearance)},
          {"ok", s.ok}};
}

inline ojson xi_result_json(const XiSearchResult& r) {
  const auto& st = r.start;
  ojson anti = ojson::array();
  for (const auto& a : r.antipodal_report)
    anti.push_back({{"location", jvec(a.location)},
                    {"nu", jnum(a.nu)},
                    {"form_gap", jnum(a.form_gap)},
                    {"form_separation", jnum(a.form_separation)},
                    {"mechanism", a.mechanism}});
  ojson steps = ojson::array();
  for (const auto& s : r.steps) steps.push_back(step_json(s));
  return {{"success", r.success},
          {"failure", r.failure},
          {"seed", r.seed},
          {"start",
           {{"seed_point", jvec(st.seed)},
            {"xi", jvec(st.xi)},
            {"gamma", jvec(st.gamma)},
            {"xi_frac", jvec(st.xi_frac)},
            {"projection_shift", jnum(st.projection_shift)},
            {"rho_star", jnum(st.rho_star)},
            {"nonresonant", st.nonres.nonresonant},
            {"worst_theta", jvec(st.nonres.worst_theta)},
            {"worst_value", jnum(st.nonres.worst_value)},
            {"local_separation", jnum(st.local_separation)},
            {"min_form_gap", jnum(st.min_form_gap)},
            {"rejections", stats_json(st.stats)}}},
          {"xi_star", jvec(r.xi_star)},
          {"gamma_star", jvec(r.gamma_star)},
          {"xi_frac_star", jvec(r.xi_frac_star)},
          {"band_index", r.band_index},
          {"lambda", jnum(r.lambda)},
          {"center_residual", jnum(r.center_residual)},
          {"upsilon", jnum(r.upsilon)},
          {"upsilon_formula", jnum(r.upsilon_formula)},
          {"lipschitz", jnum(r.lipschitz)},
          {"frame", jmat_cols(r.frame)},
          {"steps", steps},
          {"antipodal", anti},
          {"notices", r.notices}};
}

inline ojson certify_json(const CertifyReport& c) {
  return {{"pass", c.pass},
          {"failure", c.failure},
          {"upsilon", jnum(c.upsilon)},
          {"lambda", jnum(c.lambda)},
          {"center_residual", jnum(c.center_residual)},
          {"center_ok", c.center_ok},
          {"coverage_ok", c.coverage_ok},
          {"separation_ok", c.separation_ok},
          {"margin_lo", jnum(c.margin_lo)},
          {"margin_hi", jnum(c.margin_hi)},
          {"monotone", c.monotone},
          {"min_competitor", jnum(c.min_competitor)},
          {"required", jnum(c.required)},
          {"ratio", jnum(c.ratio)},
          {"witness", jvec(c.witness)},
          {"witness_value", jnum(c.witness_value)},
          {"direction", jvec(c.direction)},
          {"samples", c.samples}};
}

// Per-step excluded t-intervals, one row per interval.
inline void write_step_intervals(const fs::path& path, const OutputHeader& hdr, const XiSearchResult& r) {
  Csv csv(path, hdr, {"step", "kind", "t_lo", "t_hi"});
  for (const auto& s : r.steps) {
    csv.row(s.k, std::string("range"), s.t_range.lo, s.t_range.hi);
    for (const auto& i : s.excluded) csv.row(s.k, std::string("excluded"), i.lo, i.hi);
    csv.row(s.k, std::string("chosen"), s.t_chosen, s.t_chosen);
  }
}

}  // namespace bsgap
