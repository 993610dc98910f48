#pragma once

#include <random>

#include <boost/math/tools/minima.hpp>

#include "floquet.hpp"
#include "resonance.hpp"
#include "symbols.hpp"

namespace bsgap {

enum class UpsilonFormula { standard, improved };

inline std::string to_string(UpsilonFormula f) { return f == UpsilonFormula::standard ? "standard" : "improved"; }

// The improved formula needs d >= 3 and h <= eps <= h^(2/3 - sigma).
inline double compute_upsilon(int d, double h, double eps, double sigma, UpsilonFormula f, double front = 0.1) {
  if (d != 2 && d != 3) throw Error(Errc::argument, "upsilon is defined for d = 2 or 3", "d");
  if (!(h > 0 && h < 1)) throw Error(Errc::argument, "h must lie in (0, 1)", "h");
  if (eps < 0) throw Error(Errc::argument, "eps must be >= 0", "eps");
  if (!(sigma > 0)) throw Error(Errc::argument, "sigma must be positive", "sigma");
  const double dd = d;
  if (f == UpsilonFormula::improved) {
    if (d < 3)
      throw Error(Errc::refused, "the improved upsilon formula needs d >= 3", "upsilon_formula");
    const double top = std::pow(h, 2.0 / 3.0 - sigma);
    if (eps < h || eps > top)
      throw Error(Errc::refused,
                  "the improved upsilon formula needs h <= eps <= h^(2/3 - sigma) = " + std::to_string(top) +
                      ", got eps = " + std::to_string(eps),
                  "upsilon_formula");
    return front * std::pow(eps, -1.5 * (dd - 2)) * std::pow(h, dd * dd - dd - 1 - sigma);
  }
  const double inv_eps = std::pow(eps, -1.5 * (dd - 1));  // +inf at eps = 0
  if (d == 2) return front * h * std::min(1.0 / std::abs(std::log(h)), inv_eps * std::pow(h, sigma));
  return front * std::pow(h, (dd - 1) * (dd - 1)) * std::min(1.0, inv_eps * std::pow(h, dd - 1 + sigma));
}

struct XiSearchConfig {
  double tau = 1.0;
  double sigma = 0.01;
  double front = 0.1;       // epsilon in the separation |lambda_m - tau| >= front * upsilon * h
  double front0 = 0.3;      // t_range = [-front0, front0]
  double front1 = 0.1;      // transversality factor for the step-1 bunch
  double front_prime = 0.25;
  UpsilonFormula formula = UpsilonFormula::standard;
  std::size_t max_rejection = 2000;
  std::uint64_t seed = 1;
  double boundary_margin = 0.02;  // in dual-basis coordinates of the folded point
  double form_tol = 1e-3;
  int spiral_steps = 8;
  double spiral_step = 0.02;
  double shell_C = 1.0;
  double antipodal_C = 1.0;
  int t_points = 601;
  int snap_knots = 25;
  int max_halvings = 6;
  std::optional<double> rho_star;   // default: eps^(1/2) h^(-delta)
  std::optional<double> upsilon;    // overrides the first-step target
  std::optional<double> eval_halfwidth;  // eigenvalue window around tau, default h
  unsigned workers = 1;

  Interval t_range() const { return {-front0, front0}; }

  std::vector<std::string> validate(int d, double h, double eps) const {
    auto bad = [](const char* field, const std::string& why) { throw Error(Errc::validation, why, field); };
    if (!(front > 0 && front0 > 0 && front1 > 0 && front_prime > 0)) bad("front", "front constants must be positive");
    if (!(sigma > 0)) bad("sigma", "sigma must be positive");
    if (max_rejection < 1) bad("max_rejection", "max_rejection must be >= 1");
    if (!(boundary_margin >= 0 && boundary_margin < 0.5)) bad("boundary_margin", "boundary_margin must lie in [0, 0.5)");
    if (t_points < 3) bad("t_points", "t_points must be >= 3");
    if (snap_knots < 2) bad("snap_knots", "snap_knots must be >= 2");
    if (max_halvings < 0) bad("max_halvings", "max_halvings must be >= 0");
    if (rho_star && !(*rho_star >= 0)) bad("rho_star", "rho_star must be >= 0");
    if (upsilon && !(*upsilon > 0)) bad("upsilon", "upsilon must be positive");
    if (d != 2 && d != 3) throw Error(Errc::argument, "the search runs in d = 2 or 3", "d");
    std::vector<std::string> notes;
    if (eps < h)
      notes.push_back("eps = " + std::to_string(eps) + " is below h = " + std::to_string(h) +
                      "; the construction is only claimed for h <= eps");
    return notes;
  }
};

// ---- base point -------------------------------------------------------------------

struct RejectionStats {
  std::size_t draws = 0;
  std::size_t no_root = 0;
  std::size_t boundary = 0;
  std::size_t resonant = 0;
  std::size_t separation = 0;
  std::size_t form = 0;
  std::size_t spiral = 0;
  double acceptance_rate() const { return draws == 0 ? 0.0 : 1.0 / static_cast<double>(draws); }
  std::string summary() const {
    return "draws " + std::to_string(draws) + ", no root " + std::to_string(no_root) + ", boundary " +
           std::to_string(boundary) + ", resonant " + std::to_string(resonant) + ", separation " +
           std::to_string(separation) + ", form " + std::to_string(form) + ", spiral " + std::to_string(spiral);
  }
};

struct XiStar {
  Vec seed;      // point on Sigma_tau of A0
  Vec xi;        // on Sigma'_tau of the effective symbol
  Label gamma;
  Vec xi_frac;   // xi / h folded into the cell
  double projection_shift = 0;
  double rho_star = 0;
  NonResonance nonres;
  double local_separation = 0;
  double min_form_gap = std::numeric_limits<double>::infinity();
  std::vector<AntipodalPoint> antipodal;
  RejectionStats stats;
};

namespace detail {

// Root of f(s) = 0 nearest to s = 0 by growing a symmetric bracket.
template <class F>
double nearest_root(F&& f, double s_max, double start = 1e-9) {
  if (f(0.0) == 0.0) return 0.0;
  for (double c = start; c <= s_max; c *= 2) {
    const double lo = f(-c), hi = f(c);
    const double f0 = f(0.0);
    if ((f0 > 0) != (hi > 0)) return bracket_root(f, 0.0, c);
    if ((f0 > 0) != (lo > 0)) return bracket_root(f, -c, 0.0);
  }
  throw Error(Errc::out_of_range, "no root within the bracket limit " + std::to_string(s_max));
}

inline double edge_distance(const Vec& frac_coords) {
  double m = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < frac_coords.size(); ++i)
    m = std::min(m, std::min(frac_coords[i], 1.0 - frac_coords[i]));
  return m;
}

}  // namespace detail

// Sigma_tau seed moved along its A0-normal onto Sigma'_tau.
inline Vec project_to_effective(const SymbolModel& a0, const SymbolModel& eff, double tau, const Vec& seed) {
  const Vec g = a0.gradient(seed);
  if (g.norm() == 0.0) throw Error(Errc::numerical, "gradient vanishes at the seed");
  const Vec n = g / g.norm();
  const double s = detail::nearest_root([&](double t) { return eff(seed + t * n) - tau; },
                                        2.0 * eff.level_radius(tau) + 1.0);
  return seed + s * n;
}

inline double local_separation(const SymbolModel& eff, const Vec& xi, double h, const std::vector<DualPoint>& thetas) {
  const double v = eff(xi);
  double m = std::numeric_limits<double>::infinity();
  for (const auto& t : thetas) m = std::min(m, std::abs(eff(xi + h * t.xi) - v));
  return m;
}

inline XiStar select_xistar(const FloquetProblem& p, const ResonanceConfig& rc, const XiSearchConfig& xc) {
  const int d = p.lattice.dim();
  xc.validate(d, p.h, p.eps);
  const double tau = xc.tau;
  const double h = p.h;
  const SymbolModel eff = effective_symbol(p.symbol, p.perturbation, p.eps);
  const auto micro = check_microhyperbolicity(p.symbol, tau, default_level_samples(d));
  if (micro.empty_level_set) throw Error(Errc::empty_level_set, "level set is empty at tau", "tau");
  if (!micro.pass) throw Error(Errc::validation, "microhyperbolicity fails at tau", "tau");

  XiStar out;
  out.rho_star = xc.rho_star ? *xc.rho_star : rc.base_rho(h, p.eps);
  const auto res_thetas = theta_set(p.lattice, rc.subspace_radius(h));
  const auto sep_thetas = theta_set(p.lattice, rc.theta_radius(h));
  const double sep_floor = xc.front * std::pow(h, 1.0 + rc.delta);
  const LevelSet cache = sample_level_set(eff, tau, d <= 2 ? 2000 : 4000);
  const double R = 1.05 * p.symbol.level_radius(tau) + 1e-9;

  std::mt19937_64 rng(xc.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  RejectionStats& st = out.stats;

  // All checks except the form gap; returns false with the counter bumped.
  auto admissible = [&](const Vec& xi, XiStar& cand) {
    const Folded f = fold_to_fundamental(p.lattice, xi / h);
    if (detail::edge_distance(f.frac_coords) < xc.boundary_margin) {
      ++st.boundary;
      return false;
    }
    cand.gamma = f.gamma;
    cand.xi_frac = xi / h - p.lattice.point(f.gamma);
    cand.nonres = is_nonresonant(eff, xi, out.rho_star, res_thetas);
    if (!cand.nonres.nonresonant) {
      ++st.resonant;
      return false;
    }
    cand.local_separation = local_separation(eff, xi, h, sep_thetas);
    if (cand.local_separation < sep_floor) {
      ++st.separation;
      return false;
    }
    return true;
  };
  auto form_ok = [&](const Vec& xi, XiStar& cand) {
    try {
      cand.antipodal = antipodal_points(eff, tau, xi, &cache, xc.form_tol);
    } catch (const Error&) {
      return false;
    }
    cand.min_form_gap = std::numeric_limits<double>::infinity();
    for (const auto& a : cand.antipodal) cand.min_form_gap = std::min(cand.min_form_gap, a.form_gap);
    return cand.min_form_gap >= xc.form_tol;
  };

  while (st.draws < xc.max_rejection) {
    ++st.draws;
    Vec u(d);
    for (int i = 0; i < d; ++i) u[i] = normal(rng);
    u.normalize();
    const auto roots = ray_roots(p.symbol, tau, u, R);
    if (roots.empty()) {
      ++st.no_root;
      continue;
    }
    const Vec seed = roots[rng() % roots.size()] * u;
    Vec xi;
    try {
      xi = project_to_effective(p.symbol, eff, tau, seed);
    } catch (const Error&) {
      ++st.no_root;
      continue;
    }
    XiStar cand;
    if (!admissible(xi, cand)) continue;
    if (!form_ok(xi, cand)) {
      ++st.form;
      // fixed tangent spiral around the rejected point
      const Mat T = orthonormal_complement(eff.gradient(xi));
      bool found = false;
      for (int j = 1; j <= xc.spiral_steps && st.draws < xc.max_rejection; ++j) {
        ++st.draws;
        ++st.spiral;
        const double phi = j * pi * (3.0 - std::sqrt(5.0));
        Vec dir = T.col(0) * std::cos(phi);
        if (T.cols() > 1) dir += T.col(1) * std::sin(phi);
        Vec moved;
        try {
          moved = project_to_effective(eff, eff, tau, xi + j * xc.spiral_step * dir);
        } catch (const Error&) {
          continue;
        }
        XiStar c2;
        if (!admissible(moved, c2)) continue;
        if (form_ok(moved, c2)) {
          xi = moved;
          cand = c2;
          found = true;
          break;
        }
        ++st.form;
      }
      if (!found) continue;
    }
    cand.seed = seed;
    cand.xi = xi;
    cand.projection_shift = (xi - seed).norm();
    cand.rho_star = out.rho_star;
    cand.stats = st;
    return cand;
  }
  throw Error(Errc::budget_exhausted,
              "no admissible base point in " + std::to_string(xc.max_rejection) + " draws (" + st.summary() +
                  "); rho_star = " + std::to_string(out.rho_star) + " may be too large",
              "max_rejection");
}

// ---- tangent frame ----------------------------------------------------------------

struct TangentFrame {
  Mat eta;  // d x (d-1), columns orthonormal and tangent at xi
  Vec normal;
  double separation = std::numeric_limits<double>::infinity();  // min_j |Q*(eta_1) - Q_j(eta_1)|
  std::vector<double> per_point;
};

// Normal curvature value -eta^T H eta / <grad A(p), n*> for the surface through p.
inline double form_value(const SymbolModel& s, const Vec& p, const Vec& n_star, const Vec& eta) {
  return -eta.dot(s.hessian(p) * eta) / s.gradient(p).dot(n_star);
}

inline TangentFrame tangent_frame(const SymbolModel& eff, const Vec& xi, const std::vector<AntipodalPoint>& antipodal,
                                  double form_tol = 1e-3) {
  const int d = eff.dim();
  if (d < 2) throw Error(Errc::argument, "tangent frames need d >= 2", "d");
  const Vec g = eff.gradient(xi);
  if (g.norm() == 0.0) throw Error(Errc::numerical, "gradient vanishes at xi");
  TangentFrame f;
  f.normal = g / g.norm();
  const Mat T = orthonormal_complement(g);
  auto score = [&](const Vec& eta, std::vector<double>* per) {
    const double q0 = form_value(eff, xi, f.normal, eta);
    double m = std::numeric_limits<double>::infinity();
    for (const auto& a : antipodal) {
      const double v = std::abs(q0 - form_value(eff, a.location, f.normal, eta));
      if (per) per->push_back(v);
      m = std::min(m, v);
    }
    return m;
  };
  f.eta.resize(d, d - 1);
  if (d == 2) {
    f.eta.col(0) = lexicographic_positive(T.col(0));
  } else {
    auto dir = [&](double phi) -> Vec { return std::cos(phi) * T.col(0) + std::sin(phi) * T.col(1); };
    const int scan = 360;
    int best = 0;
    double best_v = -1;
    for (int k = 0; k < scan; ++k) {
      const double v = score(dir(pi * k / scan), nullptr);
      if (v > best_v + 1e-12) {
        best_v = v;
        best = k;
      }
    }
    double phi = pi * best / scan;
    if (!antipodal.empty()) {
      const double step = pi / scan;
      const auto r = boost::math::tools::brent_find_minima([&](double x) { return -score(dir(x), nullptr); },
                                                           phi - step, phi + step, 40);
      if (-r.second > best_v) phi = r.first;
    }
    const Vec e1 = lexicographic_positive(dir(phi).normalized());
    Vec e2(3);
    e2 << f.normal[1] * e1[2] - f.normal[2] * e1[1], f.normal[2] * e1[0] - f.normal[0] * e1[2],
        f.normal[0] * e1[1] - f.normal[1] * e1[0];
    e2 = lexicographic_positive(e2.normalized());
    f.eta.col(0) = e1;
    f.eta.col(1) = e2;
  }
  f.separation = score(f.eta.col(0), &f.per_point);
  if (!antipodal.empty() && !(f.separation >= form_tol))
    throw Error(Errc::refused, "no tangent direction separates the second fundamental forms at the antipodal points (best " +
                                   std::to_string(f.separation) + ")");
  return f;
}

// ---- curve on the effective level set --------------------------------------------

// delta(t) = t eta + s(t) nu with eff(xi + delta) = level (default eff(xi)).
inline Vec track_curve(const SymbolModel& eff, const Vec& xi, const Vec& eta, double t,
                       std::optional<double> level = std::nullopt) {
  if (t == 0.0) return Vec::Zero(xi.size());
  const Vec g = eff.gradient(xi);
  if (g.norm() == 0.0) throw Error(Errc::numerical, "gradient vanishes at xi");
  const Vec n = g / g.norm();
  const double target = level ? *level : eff(xi);
  const Vec base = xi + t * eta;
  double s;
  try {
    s = detail::nearest_root([&](double x) { return eff(base + x * n) - target; }, std::max(1.0, 2.0 * xi.norm()),
                             1e-12 + 1e-3 * t * t);
  } catch (const Error& e) {
    throw Error(Errc::out_of_range, "curve parameter t = " + std::to_string(t) + " leaves the surface: " + e.what(), "t");
  }
  return t * eta + s * n;
}

// ---- exclusion sets -----------------------------------------------------------------

struct ExclusionResult {
  std::vector<Interval> excluded;  // merged
  std::vector<Interval> free;
  double excluded_length = 0;
  double R_hat = 0;
  std::size_t candidates = 0;
};

namespace detail {
inline double total_length(const std::vector<Interval>& v) {
  double s = 0;
  for (const auto& i : v) s += i.width();
  return s;
}
}  // namespace detail

// value(i, t) is candidate i along the curve; a candidate is excluded where
// |value - tau| <= halfband. Grid sampling with bracketed refinement at the edges.
template <class F>
ExclusionResult exclusion_set(std::size_t n, F&& value, const std::vector<double>& derivatives, double tau,
                              double halfband, Interval range, int t_points, unsigned workers = 1) {
  if (derivatives.size() != n) throw Error(Errc::argument, "one derivative per candidate is required");
  std::vector<double> grid(static_cast<std::size_t>(t_points));
  for (int k = 0; k < t_points; ++k) grid[k] = range.lo + range.width() * k / (t_points - 1);
  std::vector<std::vector<Interval>> per(n);
  parallel_for(n, workers, [&](std::size_t i) {
    auto inside = [&](double t) { return std::abs(value(i, t) - tau) <= halfband; };
    auto edge = [&](double a, double b) {
      // locate the change of inside() between a and b
      const double va = value(i, a) - tau;
      const double vb = value(i, b) - tau;
      for (double level : {halfband, -halfband}) {
        if ((va - level > 0) != (vb - level > 0))
          return bracket_root([&](double t) { return value(i, t) - tau - level; }, a, b, 1e-14);
      }
      return 0.5 * (a + b);
    };
    bool in = inside(grid[0]);
    double start = grid[0];
    for (std::size_t k = 1; k < grid.size(); ++k) {
      const bool now = inside(grid[k]);
      if (now != in) {
        const double e = edge(grid[k - 1], grid[k]);
        if (in) per[i].push_back({start, e});
        else start = e;
        in = now;
      }
    }
    if (in) per[i].push_back({start, grid.back()});
  });
  ExclusionResult r;
  r.candidates = n;
  std::vector<Interval> all;
  for (auto& v : per) all.insert(all.end(), v.begin(), v.end());
  r.excluded = merge_intervals(all);
  r.free = complement_within(r.excluded, range);
  r.excluded_length = detail::total_length(r.excluded);
  for (double g : derivatives) r.R_hat += 1.0 / std::abs(g);
  return r;
}

struct Candidate {
  Label gamma;
  Vec point;  // h gamma
  double derivative = 0;  // <grad eff(h gamma), eta>
  bool near_antipodal = false;
};

// Diagonal candidates in the 2Ch shell, without the neighbourhoods of xi* and
// of its antipodal points (radius h^(1 - kappa)).
inline std::vector<Candidate> shell_candidates(const SymbolModel& eff, const LatticePair& lat, double h, double tau,
                                               double C, double kappa, const Vec& xi_star,
                                               const std::vector<AntipodalPoint>& antipodal, const Vec& eta,
                                               std::vector<Candidate>* near_antipodal = nullptr) {
  const double shell = 2.0 * C * h;
  const double R = eff.level_radius(tau + shell) / h + 1.0;
  const double excl = std::pow(h, 1.0 - kappa);
  std::vector<Candidate> out;
  for (const auto& q : enumerate_ball(lat, R)) {
    const Vec x = h * q.xi;
    if (std::abs(eff(x) - tau) > shell) continue;
    if ((x - xi_star).norm() <= excl) continue;
    Candidate c{q.label, x, eff.gradient(x).dot(eta), false};
    bool near = false;
    for (const auto& a : antipodal)
      if ((x - a.location).norm() <= excl) near = true;
    if (near) {
      c.near_antipodal = true;
      if (near_antipodal) near_antipodal->push_back(c);
      continue;
    }
    out.push_back(c);
  }
  return out;
}

// Model exclusion along xi_frac(t) = center + track_curve(h t) / h.
inline ExclusionResult bad_intervals(const SymbolModel& eff, const std::vector<Candidate>& cands, const Vec& center_frac,
                                     const Vec& center_phys, const Vec& eta, double h, double tau, double upsilon,
                                     Interval range, int t_points, unsigned workers = 1) {
  const double level = eff(center_phys);
  std::vector<double> derivs;
  for (const auto& c : cands) derivs.push_back(c.derivative);
  auto curve = [&](double t) -> Vec { return center_frac + track_curve(eff, center_phys, eta, h * t, level) / h; };
  // the grid points are shared by every candidate
  std::vector<Vec> cached(static_cast<std::size_t>(t_points));
  for (int k = 0; k < t_points; ++k) cached[k] = curve(range.lo + range.width() * k / (t_points - 1));
  auto at = [&](double t) -> Vec {
    const long k = std::lround((t - range.lo) / range.width() * (t_points - 1));
    if (k >= 0 && k < t_points && range.lo + range.width() * k / (t_points - 1) == t) return cached[k];
    return curve(t);
  };
  auto value = [&](std::size_t i, double t) { return eff(cands[i].point + h * at(t)); };
  return exclusion_set(cands.size(), value, derivs, tau, upsilon * h, range, t_points, workers);
}

// ---- spectral probe ------------------------------------------------------------

struct SpectralProbe {
  const FloquetProblem* problem = nullptr;
  BasisPlan plan;
  Interval window;

  SpectralProbe(const FloquetProblem& p, double tau, double halfwidth)
      : problem(&p), plan(plan_basis(p, core_window(p, {tau - halfwidth, tau + halfwidth}))),
        window{tau - halfwidth, tau + halfwidth} {}

  Vec values(const Vec& xf) const { return band_values(assemble(*problem, plan, xf), window); }

  // eigenvalues below `top` at xf, counting from the bottom of the spectrum
  std::size_t count_below(const Vec& xf, double top) const {
    const auto m = assemble(*problem, plan, xf);
    return static_cast<std::size_t>(hermitian_eigenvalues(m.entries, Interval{-1e300, top}, m.real).size());
  }
};

namespace detail {
inline Eigen::Index nearest_index(const Vec& v, double x) {
  if (v.size() == 0) throw Error(Errc::numerical, "no eigenvalue in the probe window");
  Eigen::Index k = 0;
  (v.array() - x).abs().minCoeff(&k);
  return k;
}
inline double competitor_distance(const Vec& v, Eigen::Index skip, double tau, Eigen::Index* which = nullptr) {
  double m = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i == skip) continue;
    const double dd = std::abs(v[i] - tau);
    if (dd < m) {
      m = dd;
      if (which) *which = i;
    }
  }
  return m;
}
}  // namespace detail

struct Snap {
  Vec xi_frac;
  double shift = 0;
  double value = 0;
  double residual = 0;
  int iterations = 0;
};

// Moves xf along dir until the band continued from `expect` equals tau (secant).
inline Snap snap_to_level(const SpectralProbe& pr, const Vec& xf, const Vec& dir, double tau, double expect,
                          double slope, double tol = 1e-12, int max_iter = 40) {
  if (!(slope > 0)) throw Error(Errc::argument, "snap slope must be positive");
  auto eval = [&](double s, double predicted) {
    const Vec v = pr.values(xf + s * dir);
    return v[detail::nearest_index(v, predicted)];
  };
  Snap out;
  double s0 = 0, l0 = eval(0, expect);
  double g0 = l0 - tau;
  out.value = l0;
  out.residual = std::abs(g0);
  if (out.residual <= tol) {
    out.xi_frac = xf;
    return out;
  }
  double s1 = -g0 / slope;
  double g1 = eval(s1, tau) - tau;
  double best_s = std::abs(g1) < std::abs(g0) ? s1 : s0;
  double best_g = std::abs(g1) < std::abs(g0) ? g1 : g0;
  int it = 1;
  for (; it < max_iter && std::abs(best_g) > tol; ++it) {
    if (g1 == g0) break;
    const double s2 = s1 - g1 * (s1 - s0) / (g1 - g0);
    const double g2 = eval(s2, tau) - tau;
    s0 = s1;
    g0 = g1;
    s1 = s2;
    g1 = g2;
    if (std::abs(g2) < std::abs(best_g)) {
      best_g = g2;
      best_s = s2;
    }
  }
  out.xi_frac = xf + best_s * dir;
  out.shift = best_s;
  out.value = tau + best_g;
  out.residual = std::abs(best_g);
  out.iterations = it;
  return out;
}

// ---- steps ------------------------------------------------------------------------

struct StepReport {
  int k = 1;
  Vec eta;
  std::string guard;  // "spectral" or "model"
  double upsilon_target = 0;
  double upsilon = 0;
  int halvings = 0;
  Interval t_range;
  double t_chosen = 0;
  std::vector<Interval> excluded;
  double excluded_length = 0;
  double free_length = 0;
  double R_hat = 0;
  std::size_t candidates = 0;
  std::size_t near_antipodal = 0;
  double antipodal_width = 0;
  double band = 0;  // competitor clearance demanded at the chosen point
  double clearance = 0;  // measured competitor distance there
  bool ok = false;
};

struct AntipodalReport {
  Vec location;
  double nu = 0;
  double form_gap = 0;
  double form_separation = 0;
  std::string mechanism;
};

struct XiSearchResult {
  bool success = false;
  std::string failure;
  XiStar start;
  Vec xi_star;
  Label gamma_star;
  Vec xi_frac_star;
  std::size_t band_index = 0;
  double lambda = 0;
  double center_residual = 0;
  double upsilon = 0;
  double upsilon_formula = 0;
  std::vector<StepReport> steps;
  std::vector<AntipodalReport> antipodal_report;
  Mat frame;
  double lipschitz = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> notices;
};

namespace detail {

inline double largest_run_midpoint(const std::vector<double>& grid, const std::vector<bool>& free, double* length) {
  std::size_t best_a = 0, best_b = 0;
  double best = -1;
  std::size_t k = 0;
  while (k < grid.size()) {
    if (!free[k]) {
      ++k;
      continue;
    }
    std::size_t j = k;
    while (j + 1 < grid.size() && free[j + 1]) ++j;
    const double len = grid[j] - grid[k];
    if (len > best) {
      best = len;
      best_a = k;
      best_b = j;
    }
    k = j + 1;
  }
  if (best < 0) return std::numeric_limits<double>::quiet_NaN();
  if (length) *length = best;
  return 0.5 * (grid[best_a] + grid[best_b]);
}

inline std::vector<Interval> runs_excluded(const std::vector<double>& grid, const std::vector<bool>& free) {
  std::vector<Interval> out;
  const double half = grid.size() > 1 ? 0.5 * (grid[1] - grid[0]) : 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k)
    if (!free[k]) out.push_back({std::max(grid.front(), grid[k] - half), std::min(grid.back(), grid[k] + half)});
  return merge_intervals(out);
}

}  // namespace detail

struct SearchState {
  const FloquetProblem* p;
  const XiSearchConfig* xc;
  SymbolModel eff;
  SpectralProbe probe;
  Label gamma;
  Vec xf;  // current snapped centre
  double lipschitz;

  Vec phys() const { return p->h * (p->lattice.point(gamma) + xf); }
  Vec normal() const {
    const Vec g = eff.gradient(phys());
    return g / g.norm();
  }
  double slope() const { return p->h * eff.gradient(phys()).norm(); }
};

// Full-spectrum guard along the curve through the current centre.
inline StepReport spectral_step(SearchState& S, int k, const Vec& eta_in, double upsilon, Interval range) {
  const auto& p = *S.p;
  const auto& xc = *S.xc;
  const double h = p.h, tau = xc.tau;
  StepReport rep;
  rep.k = k;
  rep.guard = "spectral";
  rep.t_range = range;
  rep.upsilon_target = upsilon;
  const Vec c_phys = S.phys();
  const Vec nu = S.normal();
  Vec eta = eta_in - eta_in.dot(nu) * nu;
  eta.normalize();
  rep.eta = eta;
  const double level = S.eff(c_phys);
  const double slope = S.slope();
  auto base = [&](double t) -> Vec { return S.xf + track_curve(S.eff, c_phys, eta, h * t, level) / h; };

  // exact corrections along nu at the knots, continued from the centre
  const int nk = xc.snap_knots;
  std::vector<double> knots(nk), shifts(nk, 0.0);
  for (int j = 0; j < nk; ++j) knots[j] = range.lo + range.width() * j / (nk - 1);
  const int mid = static_cast<int>(std::lower_bound(knots.begin(), knots.end(), 0.0) - knots.begin());
  auto run_knots = [&](int from, int to, int dir) {
    double prev_shift = 0;
    for (int j = from; j != to; j += dir) {
      const Vec b = base(knots[j]);
      const Snap sn = snap_to_level(S.probe, b + prev_shift * nu, nu, tau, tau, slope, 1e-12, 20);
      shifts[j] = prev_shift + sn.shift;
      prev_shift = shifts[j];
    }
  };
  run_knots(mid, nk, 1);
  run_knots(mid - 1, -1, -1);
  auto shift_at = [&](double t) {
    auto it = std::upper_bound(knots.begin(), knots.end(), t);
    if (it == knots.begin()) return shifts.front();
    if (it == knots.end()) return shifts.back();
    const std::size_t j = static_cast<std::size_t>(it - knots.begin());
    const double w = (t - knots[j - 1]) / (knots[j] - knots[j - 1]);
    return (1 - w) * shifts[j - 1] + w * shifts[j];
  };
  auto point = [&](double t) -> Vec { return base(t) + shift_at(t) * nu; };

  const std::size_t n = static_cast<std::size_t>(xc.t_points);
  std::vector<double> grid(n), clearance(n);
  for (std::size_t i = 0; i < n; ++i) grid[i] = range.lo + range.width() * static_cast<double>(i) / (n - 1);
  parallel_for(n, xc.workers, [&](std::size_t i) {
    const Vec v = S.probe.values(point(grid[i]));
    clearance[i] = detail::competitor_distance(v, detail::nearest_index(v, tau), tau);
  });
  const double dt = range.width() / static_cast<double>(n - 1);
  std::vector<bool> free(n);
  double t = std::numeric_limits<double>::quiet_NaN();
  for (int hv = 0; hv <= xc.max_halvings; ++hv) {
    const double ups = upsilon / std::pow(2.0, hv);
    rep.band = xc.front * ups * h + S.lipschitz * ups + 0.5 * S.lipschitz * dt;
    for (std::size_t i = 0; i < n; ++i) free[i] = clearance[i] >= rep.band;
    double len = 0;
    t = detail::largest_run_midpoint(grid, free, &len);
    rep.halvings = hv;
    rep.upsilon = ups;
    if (std::isfinite(t)) break;
  }
  rep.excluded = detail::runs_excluded(grid, free);
  rep.excluded_length = detail::total_length(rep.excluded);
  rep.free_length = range.width() - rep.excluded_length;
  if (!std::isfinite(t)) return rep;
  rep.t_chosen = t;
  const Vec moved = point(t);
  const Snap sn = snap_to_level(S.probe, moved, nu, tau, tau, slope);
  S.xf = sn.xi_frac;
  const Vec v = S.probe.values(S.xf);
  rep.clearance = detail::competitor_distance(v, detail::nearest_index(v, tau), tau);
  rep.ok = true;
  return rep;
}

// Diagonal-model step for the intermediate directions (d = 3, step 1).
inline StepReport model_step(SearchState& S, int k, const Vec& eta_in, double upsilon, Interval range,
                             const Vec& xi_star, const std::vector<AntipodalPoint>& antipodal, double kappa) {
  const auto& p = *S.p;
  const auto& xc = *S.xc;
  const double h = p.h, tau = xc.tau;
  StepReport rep;
  rep.k = k;
  rep.guard = "model";
  rep.t_range = range;
  rep.upsilon_target = upsilon;
  const Vec c_phys = S.phys();
  const Vec nu = S.normal();
  Vec eta = eta_in - eta_in.dot(nu) * nu;
  eta.normalize();
  rep.eta = eta;
  std::vector<Candidate> near;
  auto cands = shell_candidates(S.eff, p.lattice, h, tau, xc.shell_C, kappa, xi_star, antipodal, eta, &near);
  // the step-1 bunch: transversal to eta relative to the distance from the special points
  std::vector<Candidate> bunch;
  for (const auto& c : cands) {
    double dist = (c.point - xi_star).norm();
    for (const auto& a : antipodal) dist = std::min(dist, (c.point - a.location).norm());
    if (std::abs(c.derivative) >= xc.front1 * dist) bunch.push_back(c);
  }
  rep.candidates = bunch.size();
  rep.near_antipodal = near.size();
  double t = std::numeric_limits<double>::quiet_NaN();
  const int n = xc.t_points;
  const double level = S.eff(c_phys);
  std::vector<Vec> curve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    curve[i] = S.xf + track_curve(S.eff, c_phys, eta, h * (range.lo + range.width() * i / (n - 1)), level) / h;
  for (int hv = 0; hv <= xc.max_halvings; ++hv) {
    const double ups = upsilon / std::pow(2.0, hv);
    auto ex = bad_intervals(S.eff, bunch, S.xf, c_phys, eta, h, tau, ups, range, n, xc.workers);
    rep.R_hat = ex.R_hat;
    // square-root width around the closest approach of each near-antipodal candidate
    rep.antipodal_width = xc.antipodal_C * std::pow(ups * h, 0.5) / h;
    std::vector<Interval> all = ex.excluded;
    for (const auto& c : near) {
      double best = std::numeric_limits<double>::infinity(), tb = 0;
      for (int i = 0; i < n; ++i) {
        const double ti = range.lo + range.width() * i / (n - 1);
        const double v = std::abs(S.eff(c.point + h * curve[i]) - tau);
        if (v < best) {
          best = v;
          tb = ti;
        }
      }
      if (best <= ups * h) all.push_back({tb - 0.5 * rep.antipodal_width, tb + 0.5 * rep.antipodal_width});
    }
    rep.excluded = merge_intervals(all);
    const auto free = complement_within(rep.excluded, range);
    rep.excluded_length = range.width() - detail::total_length(free);
    rep.free_length = detail::total_length(free);
    rep.halvings = hv;
    rep.upsilon = ups;
    if (!free.empty()) {
      const auto it = std::max_element(free.begin(), free.end(),
                                       [](const Interval& a, const Interval& b) { return a.width() < b.width(); });
      if (it->width() > 0) {
        t = it->mid();
        break;
      }
    }
  }
  rep.band = rep.upsilon * h;
  if (!std::isfinite(t)) return rep;
  rep.t_chosen = t;
  const Vec moved = S.xf + track_curve(S.eff, c_phys, eta, h * t, S.eff(c_phys)) / h;
  const Snap sn = snap_to_level(S.probe, moved, nu, tau, tau, S.slope());
  S.xf = sn.xi_frac;
  rep.ok = true;
  return rep;
}

inline XiSearchResult run_xi_search(const FloquetProblem& p, const ResonanceConfig& rc, const XiSearchConfig& xc) {
  const int d = p.lattice.dim();
  XiSearchResult out;
  out.notices = xc.validate(d, p.h, p.eps);
  out.seed = xc.seed;
  const double h = p.h, tau = xc.tau;
  out.start = select_xistar(p, rc, xc);
  const SymbolModel eff = effective_symbol(p.symbol, p.perturbation, p.eps);
  const TangentFrame frame = tangent_frame(eff, out.start.xi, out.start.antipodal, xc.form_tol);
  out.frame = frame.eta;

  const double W = xc.eval_halfwidth ? *xc.eval_halfwidth : h;
  const double lip = h * max_gradient_below(eff, tau + W + 1.0);
  SearchState S{&p, &xc, eff, SpectralProbe(p, tau, W), out.start.gamma, out.start.xi_frac, lip};
  out.lipschitz = lip;

  // exact start on the full band
  {
    const Snap sn = snap_to_level(S.probe, S.xf, S.normal(), tau, tau, S.slope());
    S.xf = sn.xi_frac;
  }
  out.upsilon_formula = compute_upsilon(d, h, p.eps, xc.sigma, xc.formula, xc.front);
  double ups = xc.upsilon ? *xc.upsilon : (d == 2 ? out.upsilon_formula : xc.front * std::pow(h, d - 1));

  Interval range = xc.t_range();
  for (int k = 1; k <= d - 1; ++k) {
    const Vec eta = frame.eta.col(k - 1);
    StepReport rep;
    if (k < d - 1) {
      rep = model_step(S, k, eta, ups, range, out.start.xi, out.start.antipodal, rc.kappa);
    } else {
      if (k > 1) {
        // R_hat along the new direction from the diagonal model, then the shrink
        auto cands = shell_candidates(eff, p.lattice, h, tau, xc.shell_C, rc.kappa, out.start.xi,
                                      out.start.antipodal, eta);
        double R = 0;
        for (const auto& c : cands) R += 1.0 / std::abs(c.derivative);
        ups = xc.front * ups / std::max(R, 1.0);
        rep = spectral_step(S, k, eta, ups, range);
        rep.R_hat = R;
        rep.candidates = cands.size();
      } else {
        rep = spectral_step(S, k, eta, ups, range);
        auto cands = shell_candidates(eff, p.lattice, h, tau, xc.shell_C, rc.kappa, out.start.xi,
                                      out.start.antipodal, rep.eta);
        for (const auto& c : cands) rep.R_hat += 1.0 / std::abs(c.derivative);
        rep.candidates = cands.size();
      }
      rep.antipodal_width = xc.antipodal_C * std::pow(rep.upsilon * h, 0.5) / h;
    }
    out.steps.push_back(rep);
    if (!rep.ok) {
      out.upsilon = k > 1 ? out.steps[k - 2].upsilon : 0.0;
      out.failure = "step " + std::to_string(k) + " found no free parameter after " + std::to_string(rep.halvings) +
                    " halvings (R_hat " + std::to_string(rep.R_hat) + ", excluded " +
                    std::to_string(rep.excluded_length) + " of " + std::to_string(range.width()) + ")";
      break;
    }
    ups = rep.upsilon;
    range = {-xc.front_prime * ups, xc.front_prime * ups};
  }

  out.gamma_star = S.gamma;
  out.xi_frac_star = S.xf;
  out.xi_star = S.phys();
  const Vec v = S.probe.values(S.xf);
  out.lambda = v[detail::nearest_index(v, tau)];
  out.center_residual = std::abs(out.lambda - tau);
  out.band_index = S.probe.count_below(S.xf, out.lambda + 1e-12);
  for (std::size_t j = 0; j < out.start.antipodal.size(); ++j) {
    const auto& a = out.start.antipodal[j];
    AntipodalReport ar{a.location, a.nu, a.form_gap, j < frame.per_point.size() ? frame.per_point[j] : 0.0, ""};
    ar.mechanism = d == 2 ? "form gap along eta_1; competitors cleared by the full-spectrum guard"
                          : "form gap along eta_1; square-root width exclusion in step 1";
    out.antipodal_report.push_back(ar);
  }
  if (out.failure.empty()) {
    out.success = true;
    out.upsilon = ups;
  }
  return out;
}

// ---- certification --------------------------------------------------------------

struct CertifyConfig {
  double front = 0.1;
  double center_tol = 1e-9;
  int diameter_points = 41;
  int grid_per_axis = 0;  // 0: 21 in d = 2, 7 in d = 3
  int random_points = 16;
  std::uint64_t seed = 1;
  std::optional<double> eval_halfwidth;
  unsigned workers = 1;
};

struct CertifyReport {
  bool pass = false;
  bool center_ok = false;
  bool coverage_ok = false;
  bool separation_ok = false;
  double upsilon = 0;
  double lambda = 0;
  double center_residual = 0;
  double margin_lo = 0;  // (tau - upsilon h) - lambda(start of diameter)
  double margin_hi = 0;  // lambda(end of diameter) - (tau + upsilon h)
  bool monotone = false;
  double min_competitor = std::numeric_limits<double>::infinity();
  double required = 0;
  double ratio = 0;
  Vec witness;  // xi_frac of the nearest competitor
  double witness_value = 0;
  Vec direction;
  std::size_t samples = 0;
  std::string failure;
};

inline CertifyReport certify(const FloquetProblem& p, const Vec& xf, double tau, double upsilon,
                             const CertifyConfig& cc = {}) {
  const int d = p.lattice.dim();
  const double h = p.h;
  CertifyReport r;
  r.upsilon = upsilon;
  const double W = cc.eval_halfwidth ? *cc.eval_halfwidth : std::max(h, 4 * upsilon * h);
  const SpectralProbe pr(p, tau, W);
  const Vec v0 = pr.values(xf);
  const Eigen::Index c0 = detail::nearest_index(v0, tau);
  r.lambda = v0[c0];
  r.center_residual = std::abs(r.lambda - tau);
  r.center_ok = r.center_residual <= cc.center_tol;
  r.samples = 1;
  r.witness = xf;
  if (upsilon == 0.0) {
    r.coverage_ok = r.separation_ok = true;
    r.pass = r.center_ok;
    if (!r.pass) r.failure = "centre residual " + std::to_string(r.center_residual);
    return r;
  }
  r.required = cc.front * upsilon * h;

  // gradient of the tracked band by central differences
  Vec g(d);
  const double fd = 1e-6;
  for (int i = 0; i < d; ++i) {
    Vec e = Vec::Zero(d);
    e[i] = fd;
    const Vec a = pr.values(xf + e), b = pr.values(xf - e);
    g[i] = (a[detail::nearest_index(a, r.lambda)] - b[detail::nearest_index(b, r.lambda)]) / (2 * fd);
  }
  if (g.norm() == 0.0) throw Error(Errc::certification, "tracked band is flat at the centre");
  r.direction = g / g.norm();

  auto record = [&](const Vec& v, Eigen::Index tracked, const Vec& at) {
    Eigen::Index w = -1;
    const double c = detail::competitor_distance(v, tracked, tau, &w);
    if (c < r.min_competitor) {
      r.min_competitor = c;
      r.witness = at;
      r.witness_value = w >= 0 ? v[w] : 0.0;
    }
  };
  record(v0, c0, xf);

  // diameter, tracked by continuity outward from the centre
  const int N = cc.diameter_points | 1;
  const int half = N / 2;
  std::vector<Vec> dvals(N);
  std::vector<double> track(N);
  std::vector<Vec> dpts(N);
  for (int i = 0; i < N; ++i) dpts[i] = xf + (upsilon * (i - half) / half) * r.direction;
  parallel_for(static_cast<std::size_t>(N), cc.workers, [&](std::size_t i) { dvals[i] = pr.values(dpts[i]); });
  std::vector<Eigen::Index> tidx(N);
  tidx[half] = c0;
  track[half] = r.lambda;
  const double step = g.norm() * upsilon / half;
  for (int dir : {1, -1}) {
    double prev = r.lambda, prev2 = r.lambda - dir * step;
    for (int i = half + dir; i >= 0 && i < N; i += dir) {
      const double predicted = 2 * prev - prev2;
      tidx[i] = detail::nearest_index(dvals[i], predicted);
      track[i] = dvals[i][tidx[i]];
      prev2 = prev;
      prev = track[i];
    }
  }
  r.monotone = true;
  for (int i = 0; i < N; ++i) {
    record(dvals[i], tidx[i], dpts[i]);
    if (i > 0 && !(track[i] > track[i - 1])) r.monotone = false;
  }
  r.margin_lo = (tau - upsilon * h) - track.front();
  r.margin_hi = track.back() - (tau + upsilon * h);
  r.coverage_ok = r.margin_lo >= 0 && r.margin_hi >= 0 && r.monotone;
  r.samples += static_cast<std::size_t>(N);

  // grid in the ball plus seeded uniform points
  std::vector<Vec> pts;
  const int m = cc.grid_per_axis > 0 ? cc.grid_per_axis : (d == 2 ? 21 : 7);
  std::vector<int> idx(static_cast<std::size_t>(d), 0);
  while (true) {
    Vec off(d);
    for (int i = 0; i < d; ++i) off[i] = upsilon * (-1.0 + 2.0 * idx[i] / (m - 1));
    if (off.norm() <= upsilon * (1 + 1e-12)) pts.push_back(xf + off);
    int i = 0;
    while (i < d && ++idx[i] == m) idx[i++] = 0;
    if (i == d) break;
  }
  std::mt19937_64 rng(cc.seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  for (int k = 0; k < cc.random_points; ++k) {
    Vec u(d);
    for (int i = 0; i < d; ++i) u[i] = nd(rng);
    u *= upsilon * std::pow(ud(rng), 1.0 / d) / u.norm();
    pts.push_back(xf + u);
  }
  std::vector<Vec> vals(pts.size());
  parallel_for(pts.size(), cc.workers, [&](std::size_t i) { vals[i] = pr.values(pts[i]); });
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double predicted = r.lambda + g.dot(pts[i] - xf);
    record(vals[i], detail::nearest_index(vals[i], predicted), pts[i]);
  }
  r.samples += pts.size();

  r.ratio = r.min_competitor / r.required;
  r.separation_ok = r.min_competitor >= r.required;
  r.pass = r.center_ok && r.coverage_ok && r.separation_ok;
  if (!r.center_ok) r.failure = "centre residual " + std::to_string(r.center_residual);
  else if (!r.coverage_ok) r.failure = "coverage margins " + std::to_string(r.margin_lo) + ", " + std::to_string(r.margin_hi);
  else if (!r.separation_ok)
    r.failure = "competitor at distance " + std::to_string(r.min_competitor) + " < " + std::to_string(r.required) +
                " near xi_frac = " + format_vector(r.witness);
  return r;
}

inline CertifyReport certify(const FloquetProblem& p, const XiSearchResult& res, double tau, CertifyConfig cc = {}) {
  if (!res.success) throw Error(Errc::certification, "search did not finish: " + res.failure);
  return certify(p, res.xi_frac_star, tau, res.upsilon, cc);
}

}  // namespace bsgap
