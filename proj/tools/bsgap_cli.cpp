#include <iostream>

#include "CLI11.hpp"
#include "bsgap/bsgap.hpp"

using namespace bsgap;

namespace {

struct Globals {
  std::string manifest;
  std::string out;
  unsigned workers = 0;
  std::optional<std::uint64_t> seed_override;
  std::string argv_line;
};

struct Context {
  Manifest m;
  fs::path dir;
  unsigned workers;
  std::vector<std::string> outputs;

  fs::path file(const std::string& name) {
    outputs.push_back(name);
    return dir / name;
  }
};

Context open_context(const Globals& g) {
  Context c{load_manifest(g.manifest), {}, g.workers, {}};
  if (g.seed_override) c.m.override_seeds(*g.seed_override);
  c.dir = g.out.empty() ? fs::path(c.m.output_dir) : fs::path(g.out);
  std::error_code ec;
  fs::create_directories(c.dir, ec);
  if (ec) throw Error(Errc::validation, "cannot create output directory " + c.dir.string(), "output.dir");
  return c;
}

std::vector<int> parse_grid(const std::string& s, int d) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    int v = 0;
    auto r = std::from_chars(part.data(), part.data() + part.size(), v);
    if (r.ec != std::errc() || r.ptr != part.data() + part.size() || v < 1)
      throw Error(Errc::validation, "bad --grid '" + s + "', expected e.g. 64x64", "grid");
    out.push_back(v);
  }
  if (static_cast<int>(out.size()) == 1) out.assign(static_cast<std::size_t>(d), out.front());
  if (static_cast<int>(out.size()) != d)
    throw Error(Errc::validation, "--grid needs " + std::to_string(d) + " factors", "grid");
  return out;
}

std::string grid_text(const std::vector<int>& g) {
  std::string s;
  for (int v : g) s += (s.empty() ? "" : "x") + std::to_string(v);
  return s;
}

double default_half_width(const Manifest& m) {
  if (m.gaps_half_width) return *m.gaps_half_width;
  return m.problem.eps > 0 ? 5.0 * m.problem.eps : 0.5 * m.problem.h;
}

int cmd_bands(Context& c, const std::string& grid_flag) {
  const Manifest& m = c.m;
  const int d = m.dim();
  std::vector<int> shape = !grid_flag.empty() ? parse_grid(grid_flag, d)
                           : !m.bands_grid.empty() ? m.bands_grid
                                                   : std::vector<int>(static_cast<std::size_t>(d), 32);
  const double hw = default_half_width(m);
  const Interval window = m.bands_window ? *m.bands_window : Interval{m.tau - hw, m.tau + hw};
  const BandTable t = sweep(m.problem, regular_grid(m.problem.lattice, shape), window, c.workers);
  const auto hdr = OutputHeader::of(m, "bands --grid " + grid_text(shape));
  write_bands_csv(c.file("bands.csv"), hdr, t);
  write_json(c.file("bands.json"), hdr, band_summary(t, shape));
  return t.failures.empty() ? 0 : 4;
}

int cmd_gaps(Context& c, std::optional<double> tau_flag, std::optional<double> hw_flag, const std::string& grid_flag) {
  Manifest& m = c.m;
  const int d = m.dim();
  const double tau = tau_flag.value_or(m.tau);
  const double hw = hw_flag.value_or(default_half_width(m));
  if (hw < 0) throw Error(Errc::validation, "half width must be non-negative", "gaps.half_width");
  const double h = m.problem.h;
  const double target = m.gaps_target.value_or(m.problem.eps > 0 ? m.problem.eps * h : h * h);
  std::string cmd = "gaps --tau " + fmt(tau) + " --half-width " + fmt(hw);
  ojson body;
  if (!(hw > 0)) {
    body = gap_json(GapReport{});
    body["grid"] = ojson::array();
    body["window"] = jinterval({tau, tau});
  } else {
    const Interval window{tau - hw, tau + hw};
    std::vector<int> shape;
    if (!grid_flag.empty()) shape = parse_grid(grid_flag, d);
    else if (!m.bands_grid.empty()) shape = m.bands_grid;
    else shape.assign(static_cast<std::size_t>(d), grid_resolution_for(m.problem, window, target));
    cmd += " --grid " + grid_text(shape);
    const BandTable t = sweep(m.problem, regular_grid(m.problem.lattice, shape), window, c.workers);
    const GapReport g = gap_report(t, tau, hw);
    body = gap_json(g);
    body["grid"] = shape;
    body["window"] = jinterval(window);
    body["target_resolution"] = jnum(target);
    body["resolution_meets_target"] = g.resolution <= target;
    body["lipschitz"] = jnum(t.lipschitz);
  }
  write_json(c.file("gaps.json"), OutputHeader::of(m, cmd), body);
  return 0;
}

int cmd_resonance_map(Context& c) {
  const Manifest& m = c.m;
  const auto& p = m.problem;
  const ResonancePartition part =
      build_partition(p.symbol, p.lattice, m.resonance, p.h, p.eps, m.xi_frac, m.tau, c.workers);
  const auto hdr = OutputHeader::of(m, "resonance-map");
  write_resonance_csv(c.file("resonance_map.csv"), hdr, part);
  const PartitionCheck chk = verify_partition(part, p.lattice, p.symbol);
  write_json(c.file("resonance.json"), hdr, partition_json(part, class_stats(part), chk));
  if (m.measure) {
    const auto est = measure_estimate(p.symbol, m.tau, m.measure_thetas, m.measure_rho, m.measure_samples,
                                      m.seeds.at("measure"));
    write_json(c.file("measure.json"), hdr, measure_json(est, m.measure_rho));
  }
  return chk.ok() ? 0 : 3;
}

int cmd_gauge_check(Context& c) {
  const Manifest& m = c.m;
  const GaugePipeline g = run_gauge_pipeline(m.problem, m.resonance, m.gauge, m.xi_frac, m.tau, c.workers);
  ojson body = gauge_json(g);
  body["xi_frac"] = jvec(m.xi_frac);
  write_json(c.file("gauge.json"), OutputHeader::of(m, "gauge-check"), body);
  return 0;
}

int cmd_find_xi(Context& c) {
  Manifest& m = c.m;
  XiSearchConfig xc = m.xisearch;
  xc.workers = c.workers;
  CertifyConfig cc = m.certify;
  cc.workers = c.workers;
  const auto hdr = OutputHeader::of(m, "find-xi");
  const XiSearchResult r = run_xi_search(m.problem, m.resonance, xc);
  ojson body = {{"result", xi_result_json(r)}};
  int code = 0;
  if (r.success) {
    const double radius = r.upsilon * m.certify_scale;
    const CertifyReport rep = certify(m.problem, r.xi_frac_star, m.tau, radius, cc);
    body["certification"] = certify_json(rep);
    body["certification"]["upsilon_scale"] = jnum(m.certify_scale);
    code = rep.pass ? 0 : 3;
  } else {
    body["certification"] = {{"pass", false}, {"failure", "search did not finish: " + r.failure}};
    code = 3;
  }
  write_json(c.file("xi_search.json"), hdr, body);
  write_step_intervals(c.file("xi_steps.csv"), hdr, r);
  return code;
}

int cmd_count(Context& c) {
  const Manifest& m = c.m;
  if (m.count_h.empty()) throw Error(Errc::validation, "count block is missing", "count");
  const auto hdr = OutputHeader::of(m, "count");
  Csv csv(c.file("count.csv"), hdr, {"h", "w", "count"});
  std::vector<double> lx, ly;
  ojson rows = ojson::array();
  for (double h : m.count_h) {
    if (!(h > 0 && h < 1)) throw Error(Errc::validation, "count.h entries must lie in (0, 1)", "count.h");
    const double w = m.count_w.value(h);
    const std::size_t n = shell_count(m.problem.lattice, m.problem.symbol, m.tau, w, h, m.count_xi_frac);
    csv.row(h, w, n);
    rows.push_back({{"h", jnum(h)}, {"w", jnum(w)}, {"count", n}});
    if (n > 0) {
      lx.push_back(std::log(h));
      ly.push_back(std::log(static_cast<double>(n)));
    }
  }
  ojson body = {{"rows", rows}, {"w_rule", m.count_w.text}};
  if (lx.size() >= 2) {
    // least-squares slope of log count against log h
    const double n = static_cast<double>(lx.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      sx += lx[i];
      sy += ly[i];
      sxx += lx[i] * lx[i];
      sxy += lx[i] * ly[i];
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    body["loglog_slope"] = jnum(slope);
    body["loglog_intercept"] = jnum((sy - slope * sx) / n);
  }
  write_json(c.file("count.json"), hdr, body);
  return 0;
}

void report_error(const Globals& g, Errc code, const std::string& msg, const std::string& field) {
  const ojson e = error_json(code, msg, field);
  std::cerr << e.dump() << '\n';
  if (!g.out.empty()) {
    std::error_code ec;
    fs::create_directories(g.out, ec);
    std::ofstream(fs::path(g.out) / "error.json") << e.dump(2) << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  Globals g;
  for (int i = 0; i < argc; ++i) g.argv_line += (i ? " " : "") + std::string(argv[i]);

  CLI::App app{"Band-structure gap experiments for periodic pseudodifferential operators"};
  app.require_subcommand(1);
  app.add_option("--manifest", g.manifest, "experiment manifest (YAML)")->required();
  app.add_option("--out", g.out, "output directory (overrides output.dir)");
  app.add_option("--workers", g.workers, "parallel width, 0 = all cores");
  app.add_option("--seed-override", g.seed_override, "replace every manifest seed");

  std::string grid;
  std::optional<double> tau, half_width;
  auto* bands = app.add_subcommand("bands", "sweep band values over a quasimomentum grid");
  bands->add_option("--grid", grid, "grid shape, e.g. 64x64");
  auto* gaps = app.add_subcommand("gaps", "gap report around tau");
  gaps->add_option("--tau", tau);
  gaps->add_option("--half-width", half_width);
  gaps->add_option("--grid", grid);
  auto* rmap = app.add_subcommand("resonance-map", "resonance partition and measure estimate");
  auto* gauge = app.add_subcommand("gauge-check", "gauge transform and block comparison");
  auto* findxi = app.add_subcommand("find-xi", "search and certify a quasimomentum ball");
  auto* count = app.add_subcommand("count", "lattice shell counts over h");
  for (auto* s : {bands, gaps, rmap, gauge, findxi, count}) s->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    report_error(g, Errc::validation, e.what(), "arguments");
    return 2;
  }

  const auto t0 = std::chrono::steady_clock::now();
  std::string hash;
  std::optional<Context> ctx;
  int code = 0;
  try {
    ctx.emplace(open_context(g));
    hash = ctx->m.hash;
    Context& c = *ctx;
    if (bands->parsed()) code = cmd_bands(c, grid);
    else if (gaps->parsed()) code = cmd_gaps(c, tau, half_width, grid);
    else if (rmap->parsed()) code = cmd_resonance_map(c);
    else if (gauge->parsed()) code = cmd_gauge_check(c);
    else if (findxi->parsed()) code = cmd_find_xi(c);
    else code = cmd_count(c);
  } catch (const Error& e) {
    report_error(g, e.code(), e.what(), e.field());
    code = exit_code(e.code());
  } catch (const std::exception& e) {
    report_error(g, Errc::numerical, e.what(), "");
    code = 4;
  }
  if (ctx) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    append_run_record(ctx->dir, hash, g.argv_line, secs, ctx->outputs, code);
  }
  return code;
}
