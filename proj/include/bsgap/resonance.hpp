#pragma once

#include <random>

#include <boost/math/tools/minima.hpp>

#include "lattice.hpp"
#include "symbols.hpp"

namespace bsgap {

// Radii (omega, subspace radius) are in units of the shortest dual vector.
struct ResonanceConfig {
  double delta = 0.05;
  std::vector<double> delta_n;  // delta_1 < ... < delta_{d-1}; empty means 0.05 (1 + n/d)
  double kappa = 0.05;
  double K = 3.0;
  double C_omega = 6.0;
  double omega_abs = 3.0;
  std::optional<double> rho;  // base threshold; default eps^{1/2} h^{-delta}
  double tie_tol = 1e-9;
  int line_samples = 400;
  std::size_t max_subspace_points = 10000;

  double stratum_delta(int n, int d) const {
    if (!delta_n.empty()) return delta_n.at(static_cast<std::size_t>(n - 1));
    return 0.05 * (1.0 + static_cast<double>(n) / d);
  }
  double base_rho(double h, double eps) const { return rho ? *rho : std::sqrt(eps) * std::pow(h, -delta); }
  double rho_n(int n, int d, double h, double eps) const { return std::sqrt(eps) * std::pow(h, -stratum_delta(n, d)); }
  double omega(double h) const { return std::max(std::pow(h, -kappa), omega_abs); }
  double theta_radius(double h) const { return K * omega(h); }
  double subspace_radius(double h) const { return K * std::pow(h, -kappa); }
  double window_halfwidth(double h, double eps) const { return C_omega * eps * std::pow(h, -delta); }

  // Hard errors for malformed settings, notices for regime departures.
  std::vector<std::string> validate(int d, double h, double eps) const {
    if (!(delta > 0) || !(kappa > 0) || !(K > 0) || !(C_omega > 0))
      throw Error(Errc::validation, "resonance exponents and constants must be positive", "resonance");
    if (!delta_n.empty() && static_cast<int>(delta_n.size()) != d - 1)
      throw Error(Errc::validation, "delta_n needs d-1 entries", "resonance.delta_n");
    for (int n = 1; n + 1 <= d - 1; ++n)
      if (!(stratum_delta(n, d) < stratum_delta(n + 1, d)))
        throw Error(Errc::validation, "delta_n must be strictly increasing", "resonance.delta_n");
    if (d > 1 && !(stratum_delta(1, d) > 0))
      throw Error(Errc::validation, "delta_1 must be positive", "resonance.delta_n");
    std::vector<std::string> notes;
    const double lo = std::sqrt(eps) * std::pow(h, -delta), hi = std::pow(h, delta);
    const double r = base_rho(h, eps);
    if (r < lo * (1 - 1e-12) || r > hi * (1 + 1e-12)) {
      std::ostringstream os;
      os << "rho = " << r << " lies outside [eps^{1/2} h^{-delta}, h^delta] = [" << lo << ", " << hi << "]";
      notes.push_back(os.str());
    }
    if (eps > 0 && eps < h) {
      std::ostringstream os;
      os << "eps = " << eps << " is below h = " << h << " (outside h <= eps <= h^theta)";
      notes.push_back(os.str());
    }
    return notes;
  }
};

struct NonResonance {
  bool nonresonant = true;
  Label worst_theta;
  double worst_value = std::numeric_limits<double>::infinity();
};

// |<grad A0(xi), theta>| >= rho for every theta != 0 in the list.
inline NonResonance is_nonresonant(const SymbolModel& s, const Vec& xi, double rho,
                                   const std::vector<DualPoint>& thetas) {
  NonResonance r;
  const Vec g = s.gradient(xi);
  for (const auto& t : thetas) {
    if (t.norm == 0.0) continue;
    const double v = std::abs(g.dot(t.xi));
    if (v < r.worst_value) {
      r.worst_value = v;
      r.worst_theta = t.label;
    }
  }
  r.nonresonant = r.worst_value >= rho;
  return r;
}

// Theta'_K without the origin.
inline std::vector<DualPoint> theta_set(const LatticePair& lat, double radius_units) {
  auto pts = enumerate_ball(lat, radius_units * lat.shortest() * (1 + 1e-12));
  pts.erase(pts.begin());
  return pts;
}

// ---- slice scores -------------------------------------------------------------
// violation(xi') = max(|A0 - tau|/w - 1, |P grad A0|/rho - 1); the slice meets
// Lambda(V, rho) inside Omega iff its minimum is <= 0.

namespace detail {

inline double slice_violation(const SymbolModel& s, const Vec& x, const Mat& Q, double tau, double w, double rho) {
  const double a = w > 0 ? std::abs(s(x) - tau) / w - 1.0 : (s(x) == tau ? -1.0 : 1.0);
  const double g = (Q.transpose() * s.gradient(x)).norm() / rho - 1.0;
  return std::max(a, g);
}

inline double line_score(const SymbolModel& s, const Vec& p, const Vec& v, double tau, double w, double rho,
                         double ball, int samples) {
  // chord of the ball |x| <= ball along p + t v
  const double b = p.dot(v);
  const double c = p.squaredNorm() - ball * ball;
  const double disc = b * b - c;
  if (disc <= 0) return std::numeric_limits<double>::infinity();
  const double t0 = -b - std::sqrt(disc), t1 = -b + std::sqrt(disc);
  Mat Q = v;
  auto f = [&](double t) { return slice_violation(s, p + t * v, Q, tau, w, rho); };
  double best = std::numeric_limits<double>::infinity();
  int arg = 0;
  std::vector<double> ts(static_cast<std::size_t>(samples) + 1);
  for (int k = 0; k <= samples; ++k) {
    ts[static_cast<std::size_t>(k)] = t0 + (t1 - t0) * k / samples;
    const double val = f(ts[static_cast<std::size_t>(k)]);
    if (val < best) {
      best = val;
      arg = k;
    }
  }
  const double lo = ts[static_cast<std::size_t>(std::max(arg - 1, 0))];
  const double hi = ts[static_cast<std::size_t>(std::min(arg + 1, samples))];
  if (hi > lo) {
    std::uintmax_t it = 100;
    const auto r = boost::math::tools::brent_find_minima(f, lo, hi, 52, it);
    best = std::min(best, r.second);
  }
  return best;
}

// Plane slices (d = 3): critical point of A0 on the slice, then the least-curvature
// ray out to |P grad| = rho, which reaches the highest energy at that gradient bound.
inline double plane_score(const SymbolModel& s, const Vec& p, const Mat& Q, double tau, double w, double rho) {
  auto at = [&](const Vec& t) { return Vec(p + Q * t); };
  Vec t = -Q.transpose() * p;
  bool converged = false;
  for (int it = 0; it < 60; ++it) {
    const Vec g = Q.transpose() * s.gradient(at(t));
    if (g.norm() <= 1e-13 * (1.0 + s.gradient(at(t)).norm())) {
      converged = true;
      break;
    }
    const Mat H = Q.transpose() * s.hessian(at(t)) * Q;
    Vec step = H.ldlt().solve(-g);
    if (!step.allFinite()) break;
    double lam = 1.0;
    while (lam > 1e-8 && (Q.transpose() * s.gradient(at(t + lam * step))).norm() > g.norm()) lam *= 0.5;
    t += lam * step;
  }
  auto f = [&](const Vec& x) { return slice_violation(s, at(x), Q, tau, w, rho); };
  double best = f(t);
  if (!converged) return best;
  const Mat H = Q.transpose() * s.hessian(at(t)) * Q;
  Eigen::SelfAdjointEigenSolver<Mat> es(H);
  const Vec e = es.eigenvectors().col(0);
  for (double sign : {1.0, -1.0}) {
    auto grad_norm = [&](double r) { return (Q.transpose() * s.gradient(at(t + sign * r * e))).norm() - rho; };
    double hi = 1e-3;
    while (grad_norm(hi) < 0 && hi < 1e3) hi *= 2;
    if (grad_norm(hi) < 0) continue;
    const double rmax = bracket_root(grad_norm, 0.0, hi, 1e-12);
    auto g1 = [&](double r) { return f(Vec(t + sign * r * e)); };
    for (int k = 0; k <= 50; ++k) best = std::min(best, g1(rmax * k / 50.0));
    std::uintmax_t it = 100;
    best = std::min(best, boost::math::tools::brent_find_minima(g1, 0.0, rmax, 52, it).second);
  }
  return best;
}

}  // namespace detail

// ---- partition ------------------------------------------------------------------

struct ResonancePoint {
  Label gamma;
  Vec xi;  // h(gamma + xi_frac)
  int stratum = 0;
  int cls = -1;
  int subspace = -1;  // index into ResonancePartition::subspaces
  double score = std::numeric_limits<double>::infinity();
  int candidates = 0;  // subspaces of the chosen dimension that also matched
  bool tie = false;
};

struct ResonanceClass {
  int id = 0;
  int stratum = 0;
  int subspace = -1;
  std::vector<int> members;  // indices into points, ascending
};

struct ResonancePartition {
  double h = 0, eps = 0, tau = 0;
  Vec xi_frac;
  double window = 0;  // Omega half width
  double rho = 0;
  std::vector<double> rho_n;  // rho_n[n-1]
  double subspace_radius = 0;
  std::vector<LatticeSubspace> subspaces;
  std::vector<int> subspace_dim;
  std::vector<ResonancePoint> points;
  std::vector<ResonanceClass> classes;
  std::map<Label, int, LabelLess> index;
  std::vector<std::string> notices;
  int multi_candidate_points = 0;

  int find(const Label& g) const {
    auto it = index.find(g);
    return it == index.end() ? -1 : it->second;
  }
  int class_of(const Label& g) const {
    const int i = find(g);
    return i < 0 ? -1 : points[static_cast<std::size_t>(i)].cls;
  }
  int dim() const { return static_cast<int>(xi_frac.size()); }
};

inline ResonancePartition build_partition(const SymbolModel& s, const LatticePair& lat, const ResonanceConfig& cfg,
                                          double h, double eps, const Vec& xi_frac, double tau,
                                          unsigned workers = 1) {
  const int d = lat.dim();
  if (!(h > 0)) throw Error(Errc::argument, "h must be positive", "parameters.h");
  if (!(eps >= 0)) throw Error(Errc::argument, "epsilon must be non-negative", "parameters.epsilon");
  ResonancePartition part;
  part.notices = cfg.validate(d, h, eps);
  part.h = h;
  part.eps = eps;
  part.tau = tau;
  part.xi_frac = xi_frac;
  part.window = cfg.window_halfwidth(h, eps);
  part.rho = cfg.base_rho(h, eps);
  for (int n = 1; n <= d - 1; ++n) part.rho_n.push_back(cfg.rho_n(n, d, h, eps));
  part.subspace_radius = cfg.subspace_radius(h);

  const double w = part.window;
  const double R = s.level_radius(tau + w) / h + xi_frac.norm() + 1e-9;
  for (const auto& pt : enumerate_ball(lat, R)) {
    const Vec xi = h * (pt.xi + xi_frac);
    if (std::abs(s(xi) - tau) <= w) {
      ResonancePoint rp;
      rp.gamma = pt.label;
      rp.xi = xi;
      part.index.emplace(pt.label, static_cast<int>(part.points.size()));
      part.points.push_back(std::move(rp));
    }
  }
  if (part.points.empty()) part.notices.push_back("Omega_tau contains no lattice points");

  // subspaces by dimension, highest first
  std::vector<std::vector<int>> by_dim(static_cast<std::size_t>(d));
  for (int n = d - 1; n >= 1; --n) {
    auto list = lattice_subspaces(lat, n, part.subspace_radius * lat.shortest(), cfg.max_subspace_points);
    if (list.truncated) part.notices.push_back(list.notice);
    for (auto& sp : list.spaces) {
      by_dim[static_cast<std::size_t>(n)].push_back(static_cast<int>(part.subspaces.size()));
      part.subspaces.push_back(std::move(sp));
      part.subspace_dim.push_back(n);
    }
  }

  const double ball = s.level_radius(tau + w) * (1 + 1e-9) + 1e-12;
  std::vector<std::string> tie_notes(part.points.size());
  parallel_for(part.points.size(), workers, [&](std::size_t i) {
    auto& rp = part.points[i];
    const Vec p = h * lat.point(rp.gamma);
    for (int n = d - 1; n >= 1; --n) {
      const double rho = part.rho_n[static_cast<std::size_t>(n - 1)];
      double best = std::numeric_limits<double>::infinity();
      int arg = -1, matches = 0;
      for (int id : by_dim[static_cast<std::size_t>(n)]) {
        const auto& V = part.subspaces[static_cast<std::size_t>(id)];
        const double sc = n == 1 ? detail::line_score(s, p, V.frame.col(0), tau, w, rho, ball, cfg.line_samples)
                                 : detail::plane_score(s, p, V.frame, tau, w, rho);
        if (sc <= cfg.tie_tol) ++matches;
        if (sc < best) {
          best = sc;
          arg = id;
        }
      }
      if (arg >= 0 && best <= cfg.tie_tol) {
        rp.stratum = n;
        rp.subspace = arg;
        rp.score = best;
        rp.candidates = matches;
        rp.tie = best > 0;
        if (rp.tie) {
          std::ostringstream os;
          os << "point " << format_vector(rp.gamma) << " is within the tie tolerance of stratum " << n
             << " (score " << best << "), assigned to it";
          tie_notes[i] = os.str();
        }
        return;
      }
    }
    rp.stratum = 0;
  });
  for (const auto& t : tie_notes)
    if (!t.empty()) part.notices.push_back(t);

  // classes: union-find inside each (stratum, subspace) bucket
  const std::size_t N = part.points.size();
  detail::DisjointSets ds(N);
  std::map<int, std::vector<int>> buckets;
  for (std::size_t i = 0; i < N; ++i) {
    if (part.points[i].candidates > 1) ++part.multi_candidate_points;
    if (part.points[i].stratum > 0) buckets[part.points[i].subspace].push_back(static_cast<int>(i));
  }
  for (const auto& [sid, members] : buckets) {
    const auto& V = part.subspaces[static_cast<std::size_t>(sid)];
    for (std::size_t a = 0; a < members.size(); ++a)
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        const Vec diff = lat.point(part.points[static_cast<std::size_t>(members[a])].gamma -
                                   part.points[static_cast<std::size_t>(members[b])].gamma);
        if (V.contains(diff, 1e-9)) ds.unite(static_cast<std::size_t>(members[a]), static_cast<std::size_t>(members[b]));
      }
  }
  std::map<std::size_t, int> root_to_class;
  for (std::size_t i = 0; i < N; ++i) {
    const std::size_t r = ds.find(i);
    auto it = root_to_class.find(r);
    if (it == root_to_class.end()) {
      it = root_to_class.emplace(r, static_cast<int>(part.classes.size())).first;
      ResonanceClass c;
      c.id = it->second;
      c.stratum = part.points[i].stratum;
      c.subspace = part.points[i].subspace;
      part.classes.push_back(c);
    }
    part.points[i].cls = it->second;
    part.classes[static_cast<std::size_t>(it->second)].members.push_back(static_cast<int>(i));
  }
  if (part.multi_candidate_points > 0) {
    std::ostringstream os;
    os << part.multi_candidate_points << " points matched more than one subspace of their stratum";
    part.notices.push_back(os.str());
  }
  return part;
}

struct ClassStats {
  std::size_t total = 0;
  std::vector<std::size_t> per_stratum;
  std::size_t sum_class_sizes = 0;  // over classes of strata n >= 1
  std::size_t resonant_classes = 0;
  std::size_t largest_class = 0;
};

inline ClassStats class_stats(const ResonancePartition& p) {
  ClassStats st;
  st.total = p.points.size();
  st.per_stratum.assign(static_cast<std::size_t>(std::max(1, p.dim())), 0);
  for (const auto& pt : p.points) ++st.per_stratum[static_cast<std::size_t>(pt.stratum)];
  for (const auto& c : p.classes) {
    st.largest_class = std::max(st.largest_class, c.members.size());
    if (c.stratum > 0) {
      st.sum_class_sizes += c.members.size();
      ++st.resonant_classes;
    }
  }
  return st;
}

struct PartitionCheck {
  bool reflexive = true;
  bool symmetric = true;
  bool transitive = true;
  bool classes_consistent = true;
  bool unique_subspace = true;  // one subspace per class, differences inside it
  bool total = true;
  std::size_t widened_violations = 0;  // points outside Lambda(V, 2 rho_n) at h gamma
  double max_diameter = 0.0;
  double diameter_constant = 0.0;  // max_diameter / rho_{d-1}
  std::vector<std::string> failures;

  bool ok() const { return reflexive && symmetric && transitive && classes_consistent && unique_subspace && total; }
};

// Exhaustive check of the class relation on the built data.
inline PartitionCheck verify_partition(const ResonancePartition& p, const LatticePair& lat, const SymbolModel& s) {
  PartitionCheck out;
  const std::size_t N = p.points.size();
  auto related = [&](std::size_t i, std::size_t j) {
    const auto& a = p.points[i];
    const auto& b = p.points[j];
    if (i == j) return true;
    if (a.stratum == 0 || b.stratum == 0) return false;
    if (a.stratum != b.stratum || a.subspace != b.subspace) return false;
    return p.subspaces[static_cast<std::size_t>(a.subspace)].contains(lat.point(a.gamma - b.gamma), 1e-9);
  };
  // the relation can only hold inside one bucket, so check per bucket
  std::map<int, std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < N; ++i) {
    if (p.points[i].stratum < 0 || p.points[i].stratum >= std::max(1, p.dim())) out.total = false;
    if (p.points[i].cls < 0 || p.points[i].cls >= static_cast<int>(p.classes.size())) out.total = false;
    if (!related(i, i)) out.reflexive = false;
    buckets[p.points[i].stratum == 0 ? -1 - static_cast<int>(i) : p.points[i].subspace].push_back(i);
  }
  for (const auto& [key, m] : buckets) {
    const std::size_t k = m.size();
    std::vector<char> R(k * k);
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) R[a * k + b] = related(m[a], m[b]);
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) {
        if (R[a * k + b] != R[b * k + a]) out.symmetric = false;
        const bool same = p.points[m[a]].cls == p.points[m[b]].cls;
        if (same != static_cast<bool>(R[a * k + b])) out.classes_consistent = false;
        if (!R[a * k + b]) continue;
        for (std::size_t c = 0; c < k; ++c)
          if (R[b * k + c] && !R[a * k + c]) out.transitive = false;
      }
  }
  // classes never mix buckets
  for (const auto& c : p.classes) {
    for (int i : c.members) {
      const auto& pt = p.points[static_cast<std::size_t>(i)];
      if (pt.cls != c.id || pt.stratum != c.stratum || pt.subspace != c.subspace) out.unique_subspace = false;
      if (c.stratum == 0 && c.members.size() != 1) out.unique_subspace = false;
      for (int j : c.members) {
        const auto& q = p.points[static_cast<std::size_t>(j)];
        out.max_diameter = std::max(out.max_diameter, (pt.xi - q.xi).norm());
        if (c.stratum > 0 &&
            !p.subspaces[static_cast<std::size_t>(c.subspace)].contains(lat.point(pt.gamma - q.gamma), 1e-9))
          out.unique_subspace = false;
      }
    }
  }
  if (!p.rho_n.empty()) out.diameter_constant = out.max_diameter / p.rho_n.back();
  for (const auto& pt : p.points) {
    if (pt.stratum == 0) continue;
    const auto& V = p.subspaces[static_cast<std::size_t>(pt.subspace)];
    const Vec g = V.frame.transpose() * s.gradient(p.h * lat.point(pt.gamma));
    if (g.norm() > 2.0 * p.rho_n[static_cast<std::size_t>(pt.stratum - 1)]) ++out.widened_violations;
  }
  if (!out.reflexive) out.failures.push_back("relation is not reflexive");
  if (!out.symmetric) out.failures.push_back("relation is not symmetric");
  if (!out.transitive) out.failures.push_back("relation is not transitive");
  if (!out.classes_consistent) out.failures.push_back("class ids disagree with the relation");
  if (!out.unique_subspace) out.failures.push_back("a class spans more than one subspace translate");
  if (!out.total) out.failures.push_back("partition is not total");
  return out;
}

// ---- measure of resonant sets on Sigma_tau ----------------------------------------------------

struct MeasureEstimate {
  double fraction = 0.0;
  double standard_error = 0.0;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  std::size_t proposals = 0;
};

// mu_tau-fraction of Sigma_tau where |<grad A0, theta>| < rho for some theta in the list
// (scaled by |theta| when requested). Volume-uniform points of the thin shell
// |A0 - tau| <= s are mu_tau-distributed (coarea), then projected onto Sigma_tau.
inline MeasureEstimate measure_estimate(const SymbolModel& s, double tau, const std::vector<Vec>& thetas, double rho,
                                        std::size_t samples, std::uint64_t seed, bool scale_by_norm = false) {
  if (samples < 1000) throw Error(Errc::argument, "measure estimate needs at least 1000 samples", "samples");
  const int d = s.dim();
  const LevelSet ls = sample_level_set(s, tau, d == 2 ? 720 : 4000);
  if (ls.empty()) throw Error(Errc::empty_level_set, "level set is empty", "tau");
  double rmin = std::numeric_limits<double>::infinity(), rmax = 0.0, gmin = std::numeric_limits<double>::infinity();
  for (const auto& p : ls.points) {
    rmin = std::min(rmin, p.point.norm());
    rmax = std::max(rmax, p.point.norm());
    gmin = std::min(gmin, s.gradient(p.point).norm());
  }
  const double sig = 1e-3 * std::max(1.0, std::abs(tau));
  // the shell lies within sig/|grad| (plus sampling slack) of the sampled radii
  const double slack = 4.0 * sig / std::max(gmin, 1e-12) + 0.05 * (rmax - rmin) + 1e-3 * rmax;
  const double r0 = std::max(0.0, rmin - slack), r1 = rmax + slack;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif;
  MeasureEstimate out;
  out.seed = seed;
  std::size_t hits = 0;
  while (out.samples < samples) {
    ++out.proposals;
    if (out.proposals > 2000 * samples) throw Error(Errc::no_convergence, "shell rejection sampling stalled");
    Vec u(d);
    for (int i = 0; i < d; ++i) u[i] = normal(rng);
    u.normalize();
    // radius with density ~ r^{d-1} on [r0, r1]
    const double a = std::pow(r0, d), b = std::pow(r1, d);
    const double r = std::pow(a + (b - a) * unif(rng), 1.0 / d);
    Vec x = r * u;
    if (std::abs(s(x) - tau) > sig) continue;
    // Newton along the gradient onto Sigma_tau
    for (int it = 0; it < 30; ++it) {
      const Vec g = s.gradient(x);
      const double f = s(x) - tau;
      if (std::abs(f) <= 1e-14 * std::max(1.0, std::abs(tau))) break;
      x -= f * g / g.squaredNorm();
    }
    ++out.samples;
    const Vec g = s.gradient(x);
    for (const auto& t : thetas) {
      const double lim = scale_by_norm ? rho * t.norm() : rho;
      if (std::abs(g.dot(t)) < lim) {
        ++hits;
        break;
      }
    }
  }
  out.fraction = static_cast<double>(hits) / static_cast<double>(out.samples);
  out.standard_error = std::sqrt(out.fraction * (1 - out.fraction) / static_cast<double>(out.samples));
  return out;
}

inline MeasureEstimate measure_estimate(const SymbolModel& s, double tau, const Vec& theta, double rho,
                                        std::size_t samples, std::uint64_t seed) {
  return measure_estimate(s, tau, std::vector<Vec>{theta}, rho, samples, seed);
}

}  // namespace bsgap
