#pragma once

#include <numeric>

#include "perturbation.hpp"
#include "symbol_model.hpp"

namespace bsgap {

// Deterministic unit directions: +-1 in d=1, equal angles in d=2, a Fibonacci sphere in d=3.
inline std::vector<Vec> sphere_directions(int d, std::size_t count) {
  std::vector<Vec> out;
  if (d == 1) return {make_vec({-1.0}), make_vec({1.0})};
  if (d > 3) throw Error(Errc::argument, "only d <= 3 is supported");
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    Vec u(d);
    if (d == 2) {
      const double phi = 2 * pi * (static_cast<double>(k) + 0.25) / static_cast<double>(count);
      u << std::cos(phi), std::sin(phi);
    } else {
      const double z = 1.0 - 2.0 * (static_cast<double>(k) + 0.5) / static_cast<double>(count);
      const double r = std::sqrt(std::max(0.0, 1 - z * z));
      const double phi = static_cast<double>(k) * pi * (3.0 - std::sqrt(5.0));
      u << r * std::cos(phi), r * std::sin(phi), z;
    }
    out.push_back(u);
  }
  return out;
}

// Roots of A0(r u) = tau for r in [0, R].
inline std::vector<double> ray_roots(const SymbolModel& s, double tau, const Vec& u, double R, int scan = 256) {
  std::vector<double> roots;
  auto g = [&](double r) { return s(r * u) - tau; };
  double r0 = 0.0, g0 = g(0.0);
  if (std::abs(g0) <= 1e-14 * std::max(1.0, std::abs(tau))) roots.push_back(0.0);
  for (int k = 1; k <= scan; ++k) {
    const double r1 = R * k / scan;
    const double g1 = g(r1);
    if (g1 == 0.0) {
      roots.push_back(r1);
    } else if (g0 != 0.0 && (g0 > 0) != (g1 > 0)) {
      roots.push_back(bracket_root(g, r0, r1));
    }
    r0 = r1;
    g0 = g1;
  }
  return roots;
}

struct LevelPoint {
  Vec point;
  Vec normal;  // grad A0 / |grad A0| (zero when the gradient vanishes)
  int component = 0;
};

struct LevelSet {
  std::vector<LevelPoint> points;
  int components = 0;
  bool empty() const { return points.empty(); }
};

namespace detail {
struct DisjointSets {
  std::vector<std::size_t> parent;
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};
}  // namespace detail

inline std::size_t default_level_samples(int d) { return d <= 2 ? 1000 : 10000; }

// Samples Sigma_tau on rays from the origin and groups them into connected
// components by single linkage at a few times the largest nearest-neighbour gap.
inline LevelSet sample_level_set(const SymbolModel& s, double tau, std::size_t directions = 0) {
  const int d = s.dim();
  if (directions == 0) directions = default_level_samples(d);
  const double R = 1.05 * s.level_radius(tau) + 1e-9;
  LevelSet ls;
  if (!(R > 0)) return ls;
  bool origin_done = false;
  for (const auto& u : sphere_directions(d, directions)) {
    for (double r : ray_roots(s, tau, u, R)) {
      if (r == 0.0) {
        if (origin_done) continue;
        origin_done = true;
      }
      LevelPoint p;
      p.point = r * u;
      const Vec g = s.gradient(p.point);
      const double gn = g.norm();
      p.normal = gn > 0 ? Vec(g / gn) : Vec(Vec::Zero(d));
      ls.points.push_back(std::move(p));
    }
  }
  const std::size_t n = ls.points.size();
  if (n == 0) return ls;
  // sweep in the first coordinate; both passes only look at |dx| within range
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return ls.points[a].point[0] < ls.points[b].point[0]; });
  auto x0 = [&](std::size_t k) { return ls.points[order[k]].point[0]; };
  double max_nn = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    double best = std::numeric_limits<double>::infinity();
    const Vec& p = ls.points[order[k]].point;
    for (std::size_t j = k + 1; j < n && x0(j) - x0(k) < best; ++j)
      best = std::min(best, (ls.points[order[j]].point - p).norm());
    for (std::size_t j = k; j-- > 0 && x0(k) - x0(j) < best;)
      best = std::min(best, (ls.points[order[j]].point - p).norm());
    if (std::isfinite(best)) max_nn = std::max(max_nn, best);
  }
  const double link = 4.0 * max_nn + 1e-12;
  detail::DisjointSets ds(n);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t j = k + 1; j < n && x0(j) - x0(k) <= link; ++j)
      if ((ls.points[order[j]].point - ls.points[order[k]].point).norm() <= link) ds.unite(order[j], order[k]);
  std::map<std::size_t, int> ids;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t root = ds.find(i);
    auto it = ids.find(root);
    if (it == ids.end()) it = ids.emplace(root, static_cast<int>(ids.size())).first;
    ls.points[i].component = it->second;
  }
  ls.components = static_cast<int>(ids.size());
  return ls;
}

struct HypothesisCheck {
  bool pass = false;
  bool empty_level_set = false;
  double margin = 0.0;
  // witness for a failed convexity check
  std::optional<Vec> witness_point;
  std::optional<Vec> witness_direction;
  std::vector<int> component_signs;
};

// |A0 - tau| + |grad A0| >= eps0 on Sigma_tau.
inline HypothesisCheck check_microhyperbolicity(const SymbolModel& s, double tau, std::size_t sample_count,
                                                double eps0 = 1e-3) {
  if (sample_count < 1) throw Error(Errc::argument, "sample_count must be >= 1", "sample_count");
  HypothesisCheck out;
  const LevelSet ls = sample_level_set(s, tau, sample_count);
  if (ls.empty()) {
    out.empty_level_set = true;
    return out;
  }
  out.margin = std::numeric_limits<double>::infinity();
  for (const auto& p : ls.points) {
    const double lhs = std::abs(s(p.point) - tau) + s.gradient(p.point).norm();
    if (lhs < out.margin) {
      out.margin = lhs;
      out.witness_point = p.point;
    }
  }
  out.pass = out.margin >= eps0;
  return out;
}

// Tangential Hessian definite with one sign per component.
inline HypothesisCheck check_strong_convexity(const SymbolModel& s, double tau, std::size_t sample_count,
                                              double eps0 = 1e-3) {
  if (sample_count < 1) throw Error(Errc::argument, "sample_count must be >= 1", "sample_count");
  HypothesisCheck out;
  const LevelSet ls = sample_level_set(s, tau, sample_count);
  if (ls.empty()) {
    out.empty_level_set = true;
    return out;
  }
  const int d = s.dim();
  out.component_signs.assign(static_cast<std::size_t>(ls.components), 0);
  out.margin = std::numeric_limits<double>::infinity();
  bool mixed = false;
  for (const auto& p : ls.points) {
    const Vec g = s.gradient(p.point);
    if (g.norm() == 0.0 || d == 1) {
      if (d == 1) continue;  // no tangent directions
      out.margin = 0.0;
      out.witness_point = p.point;
      mixed = true;
      continue;
    }
    const Mat T = orthonormal_complement(g);
    const Mat K = T.transpose() * s.hessian(p.point) * T;
    Eigen::SelfAdjointEigenSolver<Mat> es(K);
    const Vec ev = es.eigenvalues();
    int sign = 0;
    if (ev.minCoeff() > 0) sign = 1;
    else if (ev.maxCoeff() < 0) sign = -1;
    auto& cs = out.component_signs[static_cast<std::size_t>(p.component)];
    if (sign == 0 || (cs != 0 && cs != sign)) {
      if (!mixed) {
        out.witness_point = p.point;
        const Eigen::Index k = sign == 0 ? 0 : (cs > 0 ? 0 : ev.size() - 1);
        out.witness_direction = T * es.eigenvectors().col(k);
      }
      mixed = true;
    }
    if (cs == 0) cs = sign;
    const double m = ev.cwiseAbs().minCoeff();
    out.margin = std::min(out.margin, sign == 0 ? 0.0 : m);
  }
  if (d == 1) out.margin = std::numeric_limits<double>::infinity();
  out.pass = !mixed && out.margin >= eps0;
  return out;
}

// Hessian of the local graph xi_k = f(xi_other) of Sigma through p, k the graph axis.
inline Mat graph_hessian(const SymbolModel& s, const Vec& p, int k) {
  const int d = s.dim();
  const Vec g = s.gradient(p);
  const Mat H = s.hessian(p);
  if (std::abs(g[k]) < 1e-12) throw Error(Errc::coordinate_choice, "gradient component too small for the graph chart");
  std::vector<int> other;
  for (int i = 0; i < d; ++i)
    if (i != k) other.push_back(i);
  const int m = d - 1;
  Vec f1(m);
  for (int a = 0; a < m; ++a) f1[a] = -g[other[a]] / g[k];
  Mat out(m, m);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b) {
      const int ia = other[a], ib = other[b];
      out(a, b) = -(H(ia, ib) + H(ia, k) * f1[b] + H(ib, k) * f1[a] + H(k, k) * f1[a] * f1[b]) / g[k];
    }
  return out;
}

struct FormGap {
  bool pass = false;
  double form_gap = 0.0;
  int axis = 0;
};

// Second-order comparison of Sigma near xi with its translate through eta.
inline FormGap check_condition_1_14(const SymbolModel& s, const Vec& xi, const Vec& eta, double tol = 1e-6) {
  const Vec g = s.gradient(xi);
  int k = 0;
  g.cwiseAbs().maxCoeff(&k);
  if (std::abs(g[k]) < 1e-12) throw Error(Errc::coordinate_choice, "gradient vanishes at xi");
  FormGap out;
  out.axis = k;
  if (s.dim() == 1) {
    out.form_gap = 0.0;
    out.pass = false;
    return out;
  }
  const Mat f = graph_hessian(s, xi, k);
  const Mat h = graph_hessian(s, eta, k);
  out.form_gap = (f - h).cwiseAbs().maxCoeff();
  out.pass = out.form_gap >= tol;
  return out;
}

struct AntipodalPoint {
  Vec location;
  double nu = 0.0;
  double form_gap = 0.0;
  int component = 0;
};

// Newton on [A0 - tau; T^T grad A0] = 0, the Gauss-map fibre over the normal n.
inline Vec gauss_fibre_newton(const SymbolModel& s, double tau, const Vec& n, Vec x, int max_iter = 60) {
  const Mat T = orthonormal_complement(n);
  const int d = s.dim();
  auto residual = [&](const Vec& y) {
    Vec F(d);
    F[0] = s(y) - tau;
    F.tail(d - 1) = T.transpose() * s.gradient(y);
    return F;
  };
  Vec F = residual(x);
  const double scale = std::max(1.0, std::abs(tau));
  for (int it = 0; it < max_iter; ++it) {
    const Vec g = s.gradient(x);
    if (std::abs(F[0]) <= 1e-14 * scale && F.tail(d - 1).norm() <= 1e-13 * std::max(1.0, g.norm())) return x;
    Mat J(d, d);
    J.row(0) = g.transpose();
    J.bottomRows(d - 1) = T.transpose() * s.hessian(x);
    const Vec step = J.colPivHouseholderQr().solve(-F);
    double lambda = 1.0;
    Vec trial = x + step;
    Vec Ft = residual(trial);
    while (Ft.norm() > F.norm() && lambda > 1e-6) {
      lambda *= 0.5;
      trial = x + lambda * step;
      Ft = residual(trial);
    }
    if (!Ft.allFinite()) break;
    x = trial;
    F = Ft;
  }
  const Vec g = s.gradient(x);
  if (std::abs(F[0]) <= 1e-11 * scale && F.tail(d - 1).norm() <= 1e-10 * std::max(1.0, g.norm())) return x;
  throw Error(Errc::no_convergence, "Gauss-map Newton did not converge near " + format_vector(x) +
                                        " for normal " + format_vector(n));
}

// All eta != xi on Sigma_tau with grad A0(eta) parallel to grad A0(xi).
inline std::vector<AntipodalPoint> antipodal_points(const SymbolModel& s, double tau, const Vec& xi,
                                                    const LevelSet* cached = nullptr, double form_tol = 1e-6) {
  const double resid = std::abs(s(xi) - tau);
  if (resid > 1e-10 * std::max(1.0, std::abs(tau)))
    throw Error(Errc::argument, "xi is not on the level set (residual " + std::to_string(resid) + ")", "xi");
  LevelSet local;
  if (cached == nullptr) {
    local = sample_level_set(s, tau, s.dim() <= 2 ? 2000 : 4000);
    cached = &local;
  }
  const Vec g = s.gradient(xi);
  const Vec n = g / g.norm();
  std::vector<AntipodalPoint> out;
  for (int c = 0; c < cached->components; ++c) {
    for (double orient : {1.0, -1.0}) {
      const Vec target = orient * n;
      const LevelPoint* best = nullptr;
      double score = -2.0;
      for (const auto& p : cached->points) {
        if (p.component != c) continue;
        const double v = p.normal.dot(target);
        if (v > score) {
          score = v;
          best = &p;
        }
      }
      if (best == nullptr) continue;
      Vec eta;
      try {
        eta = gauss_fibre_newton(s, tau, n, best->point);
      } catch (const Error& e) {
        throw Error(Errc::no_convergence, std::string(e.what()) + " (component " + std::to_string(c) +
                                              ", orientation " + (orient > 0 ? "+" : "-") + ")");
      }
      if ((eta - xi).norm() <= 1e-6 * (1.0 + xi.norm())) continue;
      bool dup = false;
      for (const auto& q : out)
        if ((q.location - eta).norm() <= 1e-8 * (1.0 + eta.norm())) dup = true;
      if (dup) continue;
      AntipodalPoint ap;
      ap.location = eta;
      ap.nu = s.gradient(eta).dot(g) / g.squaredNorm();
      ap.component = c;
      ap.form_gap = check_condition_1_14(s, xi, eta, form_tol).form_gap;
      out.push_back(ap);
    }
  }
  std::sort(out.begin(), out.end(), [](const AntipodalPoint& a, const AntipodalPoint& b) {
    if (a.nu != b.nu) return a.nu < b.nu;
    return std::lexicographical_compare(a.location.begin(), a.location.end(), b.location.begin(),
                                        b.location.end());
  });
  return out;
}

}  // namespace bsgap
