#pragma once

#include "lattice.hpp"
#include "perturbation.hpp"
#include "symbol_model.hpp"

namespace bsgap {

struct WindowConfig {
  double C1 = 1.0;
  double delta = 0.05;
  double margin_shells = 2.0;
};

// Everything needed to build the fibre matrices A_h(xi).
struct FloquetProblem {
  LatticePair lattice;
  SymbolModel symbol;
  Perturbation perturbation;
  double h = 0.1;
  double eps = 0.0;
  WindowConfig window{};

  void validate() const {
    if (!(h > 0)) throw Error(Errc::argument, "h must be positive", "parameters.h");
    if (!(eps >= 0)) throw Error(Errc::argument, "epsilon must be non-negative", "parameters.epsilon");
    if (lattice.dim() != symbol.dim())
      throw Error(Errc::validation, "lattice and symbol dimensions differ", "dimension");
  }
};

// Padding around a target energy range: max(C1 h^{1-delta}, 10 eps).
inline double window_padding(const FloquetProblem& p) {
  return std::max(p.window.C1 * std::pow(p.h, 1.0 - p.window.delta), 10.0 * p.eps);
}

inline Interval core_window(const FloquetProblem& p, Interval target) {
  const double w = window_padding(p);
  return {target.lo - w, target.hi + w};
}

// Energy spread of one lattice shell near energy e.
inline double shell_energy(const FloquetProblem& p, double e) {
  return p.h * max_gradient_below(p.symbol, e) * p.lattice.shortest();
}

struct BasisPlan {
  Interval window;   // values kept by the sweep
  double e_top = 0;  // basis cut: A0(h(gamma+xi)) <= e_top
  double radius = 0; // |h(gamma+xi)| bound implied by e_top
};

inline BasisPlan plan_basis(const FloquetProblem& p, Interval window) {
  p.validate();
  BasisPlan plan;
  plan.window = window;
  const double top = window.hi;
  plan.e_top = top + p.window.margin_shells * shell_energy(p, top + 1.0);
  // the zero mode shifts diagonals by at most eps max|b_0|
  if (!p.perturbation.empty()) {
    const double R = p.symbol.level_radius(plan.e_top) + 1.0;
    plan.e_top += p.eps * p.perturbation.max_abs(R);
  }
  plan.radius = p.symbol.level_radius(plan.e_top);
  return plan;
}

struct PlaneWaveBasis {
  std::vector<Label> labels;
  std::vector<Vec> momenta;  // h(gamma + xi_frac)
  Vec xi_frac;
  double h = 0;
  double e_top = 0;
  std::map<Label, int, LabelLess> index;

  std::size_t size() const { return labels.size(); }
  int find(const Label& g) const {
    auto it = index.find(g);
    return it == index.end() ? -1 : it->second;
  }
};

inline PlaneWaveBasis make_basis(const FloquetProblem& p, const BasisPlan& plan, const Vec& xi_frac) {
  PlaneWaveBasis b;
  b.xi_frac = xi_frac;
  b.h = p.h;
  b.e_top = plan.e_top;
  const double r = plan.radius / p.h + xi_frac.norm() + 1e-9;
  for (const auto& pt : enumerate_ball(p.lattice, r)) {
    const Vec z = p.h * (pt.xi + xi_frac);
    if (p.symbol(z) <= plan.e_top) {
      b.index.emplace(pt.label, static_cast<int>(b.labels.size()));
      b.labels.push_back(pt.label);
      b.momenta.push_back(z);
    }
  }
  if (b.labels.empty()) {
    std::ostringstream os;
    os << "plane-wave basis is empty for basis cut " << plan.e_top << " at xi_frac " << format_vector(xi_frac);
    throw Error(Errc::empty_basis, os.str());
  }
  return b;
}

struct FloquetMatrix {
  PlaneWaveBasis basis;
  CMat entries;
  double h = 0;
  double eps = 0;
  bool real = true;

  double diagonal(int i) const { return entries(i, i).real(); }
};

// Weyl quantisation: entry (g', g) = eps b_{g'-g}(h((g+g')/2 + xi_frac)).
inline FloquetMatrix assemble(const FloquetProblem& p, PlaneWaveBasis basis) {
  const auto n = static_cast<Eigen::Index>(basis.size());
  FloquetMatrix m;
  m.h = p.h;
  m.eps = p.eps;
  m.real = p.perturbation.real_matrix();
  m.entries = CMat::Zero(n, n);
  const Coefficient* b0 = p.perturbation.zero_mode();
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec& z = basis.momenta[static_cast<std::size_t>(i)];
    double d = p.symbol(z);
    if (b0 != nullptr && p.eps != 0.0) d += p.eps * (*b0)(z).real();
    m.entries(i, i) = d;
  }
  if (p.eps != 0.0) {
    for (const auto& [theta, b] : p.perturbation.modes()) {
      if (theta.cwiseAbs().maxCoeff() == 0) continue;
      const Vec th = p.lattice.point(theta);
      for (Eigen::Index j = 0; j < n; ++j) {
        const int i = basis.find(basis.labels[static_cast<std::size_t>(j)] + theta);
        if (i < 0) continue;
        const Vec mid = basis.momenta[static_cast<std::size_t>(j)] + 0.5 * p.h * th;
        m.entries(i, j) = p.eps * b(mid);
      }
    }
  }
  m.basis = std::move(basis);
  return m;
}

inline FloquetMatrix assemble(const FloquetProblem& p, const BasisPlan& plan, const Vec& xi_frac) {
  return assemble(p, make_basis(p, plan, xi_frac));
}

inline double hermiticity_defect(const CMat& a) { return (a - a.adjoint()).cwiseAbs().maxCoeff(); }

inline Vec band_values(const FloquetMatrix& m, std::optional<Interval> window = std::nullopt) {
  return hermitian_eigenvalues(m.entries, window, m.real);
}

// ---- quasimomentum grids ----------------------------------------------------

struct GridSpec {
  std::vector<Vec> points;  // physical xi_frac
  std::vector<int> shape;   // per-axis resolution, empty for explicit lists
  // every point of the cell lies within this distance of a grid point (periodically);
  // unset for explicit lists
  std::optional<double> covering_radius;
};

// Vertices i/N of the half-open cell in dual-basis coordinates.
inline GridSpec regular_grid(const LatticePair& lat, const std::vector<int>& shape) {
  const int d = lat.dim();
  if (static_cast<int>(shape.size()) != d) throw Error(Errc::argument, "grid shape must have d entries", "grid");
  for (int n : shape)
    if (n < 1) throw Error(Errc::argument, "grid resolution must be >= 1", "grid");
  GridSpec g;
  g.shape = shape;
  std::vector<int> k(static_cast<std::size_t>(d), 0);
  while (true) {
    Vec c(d);
    for (int i = 0; i < d; ++i) c[i] = static_cast<double>(k[static_cast<std::size_t>(i)]) / shape[static_cast<std::size_t>(i)];
    g.points.push_back(lat.dual() * c);
    int i = 0;
    while (i < d && k[static_cast<std::size_t>(i)] == shape[static_cast<std::size_t>(i)] - 1) k[static_cast<std::size_t>(i++)] = 0;
    if (i == d) break;
    ++k[static_cast<std::size_t>(i)];
  }
  // rounding each coordinate to the nearest vertex moves by at most half of a
  // +-combination of the scaled generators
  double r = 0.0;
  Label s = Label::Constant(d, -1);
  while (true) {
    Vec v = Vec::Zero(d);
    for (int j = 0; j < d; ++j) v += (static_cast<double>(s[j]) / shape[static_cast<std::size_t>(j)]) * lat.dual().col(j);
    r = std::max(r, 0.5 * v.norm());
    int j = 0;
    while (j < d && s[j] == 1) s[j++] = -1;
    if (j == d) break;
    s[j] += 2;
  }
  g.covering_radius = r;
  return g;
}

inline GridSpec explicit_grid(std::vector<Vec> points) {
  GridSpec g;
  g.points = std::move(points);
  return g;
}

// ---- sweeps -------------------------------------------------------------------

struct BandTable {
  std::vector<Vec> grid;
  Interval window;
  std::vector<Vec> values;           // in-window eigenvalues, ascending
  std::vector<int> below;            // eigenvalues below window.lo
  std::vector<int> above;            // eigenvalues above window.hi
  std::vector<std::size_t> basis_size;
  std::vector<std::pair<std::size_t, std::string>> failures;
  std::optional<double> covering_radius;
  double lipschitz = 0.0;            // bound on |d lambda / d xi|
  double eig_tol = 0.0;

  // N_h(xi, tau) = #{mu < tau}; only meaningful for tau inside the window
  int counting(std::size_t i, double tau) const {
    int c = below[i];
    for (Eigen::Index k = 0; k < values[i].size(); ++k)
      if (values[i][k] < tau) ++c;
    return c;
  }
  bool ok(std::size_t i) const {
    for (const auto& f : failures)
      if (f.first == i) return false;
    return true;
  }
};

inline BandTable sweep(const FloquetProblem& p, const GridSpec& grid, Interval window, unsigned workers = 0) {
  const BasisPlan plan = plan_basis(p, window);
  const std::size_t n = grid.points.size();
  BandTable t;
  t.grid = grid.points;
  t.window = window;
  t.values.assign(n, Vec());
  t.below.assign(n, 0);
  t.above.assign(n, 0);
  t.basis_size.assign(n, 0);
  t.covering_radius = grid.covering_radius;
  std::vector<double> grad(n, 0.0), scale(n, 0.0);
  std::vector<std::string> errors(n);
  parallel_for(n, workers, [&](std::size_t i) {
    try {
      const FloquetMatrix m = assemble(p, plan, grid.points[i]);
      const Vec all = hermitian_eigenvalues(m.entries, std::nullopt, m.real);
      int lo = 0, hi = 0;
      std::vector<double> in;
      for (Eigen::Index k = 0; k < all.size(); ++k) {
        if (all[k] < window.lo) ++lo;
        else if (all[k] > window.hi) ++hi;
        else in.push_back(all[k]);
      }
      t.values[i] = Eigen::Map<Vec>(in.data(), static_cast<Eigen::Index>(in.size()));
      t.below[i] = lo;
      t.above[i] = hi;
      t.basis_size[i] = m.basis.size();
      for (const auto& z : m.basis.momenta) grad[i] = std::max(grad[i], p.symbol.gradient(z).norm());
      scale[i] = all.size() ? all.cwiseAbs().maxCoeff() : 0.0;
    } catch (const Error& e) {
      errors[i] = std::string(to_string(e.code())) + ": " + e.what();
    }
  });
  double g = 0.0, s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i].empty()) t.failures.emplace_back(i, errors[i]);
    g = std::max(g, grad[i]);
    s = std::max(s, scale[i]);
  }
  double bmax = 0.0;
  if (!p.perturbation.empty()) bmax = p.perturbation.max_abs(plan.radius + p.h * p.perturbation.support_radius());
  t.lipschitz = p.h * g + p.eps * p.perturbation.support_radius() * bmax;
  t.eig_tol = 1e-10 * std::max(1.0, s);
  return t;
}

// ---- gaps -----------------------------------------------------------------------

struct GapReport {
  std::vector<Interval> gaps;
  double resolution = 0.0;
  bool resolution_is_lower_bound = false;  // explicit grids carry no covering radius
  std::size_t failed_points = 0;
};

// Maximal pieces of [tau - hw, tau + hw] farther than the resolution from every band
// value, with spectrum present on both sides.
inline GapReport gap_report(const BandTable& t, double tau, double half_width) {
  GapReport r;
  r.failed_points = t.failures.size();
  if (t.covering_radius) {
    r.resolution = std::max(t.lipschitz * *t.covering_radius, t.eig_tol);
  } else {
    r.resolution = t.eig_tol;
    r.resolution_is_lower_bound = true;
  }
  if (!(half_width > 0)) return r;
  const Interval range{tau - half_width, tau + half_width};
  if (range.lo < t.window.lo || range.hi > t.window.hi)
    throw Error(Errc::argument, "band table window does not cover the requested range", "half_width");
  std::vector<Interval> covered;
  double min_value = std::numeric_limits<double>::infinity();
  double max_value = -std::numeric_limits<double>::infinity();
  bool any_below = false, any_above = false;
  for (std::size_t i = 0; i < t.values.size(); ++i) {
    if (!t.ok(i)) continue;
    any_below = any_below || t.below[i] > 0;
    any_above = any_above || t.above[i] > 0;
    for (Eigen::Index k = 0; k < t.values[i].size(); ++k) {
      const double v = t.values[i][k];
      min_value = std::min(min_value, v);
      max_value = std::max(max_value, v);
      if (v + r.resolution >= range.lo && v - r.resolution <= range.hi)
        covered.push_back({v - r.resolution, v + r.resolution});
    }
  }
  for (const auto& g : complement_within(merge_intervals(covered), range)) {
    if (!(g.width() > 0)) continue;
    const bool left = any_below || min_value < g.lo;
    const bool right = any_above || max_value > g.hi;
    if (left && right) r.gaps.push_back(g);
  }
  return r;
}

// Per-axis resolution making the gap resolution at most target (a cubic-style grid).
inline int grid_resolution_for(const FloquetProblem& p, Interval window, double target) {
  const BasisPlan plan = plan_basis(p, window);
  const double g = max_gradient_below(p.symbol, plan.e_top);
  double bmax = 0.0;
  if (!p.perturbation.empty()) bmax = p.perturbation.max_abs(plan.radius + p.h * p.perturbation.support_radius());
  const double L = p.h * g + p.eps * p.perturbation.support_radius() * bmax;
  const std::vector<int> one(static_cast<std::size_t>(p.lattice.dim()), 1);
  const double r1 = *regular_grid(p.lattice, one).covering_radius;
  return std::max(1, static_cast<int>(std::ceil(1.02 * L * r1 / target)));
}

}  // namespace bsgap
