#pragma once

#include <unsupported/Eigen/MatrixFunctions>

#include "floquet.hpp"
#include "resonance.hpp"

namespace bsgap {

struct GaugeConfig {
  int rounds = 3;
  std::optional<double> tol_block;  // default max(1e-12, eps^3 / (h rho)^2)
  double floor_factor = 0.1;        // denominators below floor_factor * h * rho * |theta| are an inconsistency
};

inline double default_tol_block(double eps, double h, double rho) {
  return std::max(1e-12, std::pow(eps, 3) / std::pow(h * rho, 2));
}

// Which pairs of basis points the elimination may touch. Built once per
// (basis, partition) and reused across rounds and across eps.
struct GaugeLayout {
  std::vector<int> omega;  // basis index -> partition point, or -1
  std::vector<int> key;    // basis index -> class id for Omega points, -1 - index otherwise
  std::vector<std::pair<int, int>> eligible;  // i < j, off-block, Omega endpoint, |<grad A0(mid), theta>| >= rho |theta|
  std::vector<std::pair<int, int>> resonant;  // i < j, off-block, Omega endpoint, resonant midpoint
  double rho = 0;
  double h = 0;
  std::size_t omega_count = 0;
};

inline bool midpoint_nonresonant(const SymbolModel& s, const LatticePair& lat, double h, const Vec& xi_frac,
                                 const Label& a, const Label& b, double rho) {
  const Vec mid = 0.5 * (lat.point(a) + lat.point(b));
  const Vec theta = lat.point(a - b);
  return std::abs(s.gradient(h * (mid + xi_frac)).dot(theta)) >= rho * theta.norm();
}

inline GaugeLayout make_layout(const PlaneWaveBasis& basis, const ResonancePartition& part, const SymbolModel& s,
                               const LatticePair& lat) {
  if (std::abs(basis.h - part.h) > 1e-15 * part.h || (basis.xi_frac - part.xi_frac).norm() > 1e-12)
    throw Error(Errc::argument, "partition and matrix were built for different h or xi_frac");
  GaugeLayout L;
  L.rho = part.rho;
  L.h = part.h;
  const int n = static_cast<int>(basis.size());
  L.omega.assign(static_cast<std::size_t>(n), -1);
  L.key.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) L.key[static_cast<std::size_t>(i)] = -1 - i;
  for (std::size_t k = 0; k < part.points.size(); ++k) {
    const int i = basis.find(part.points[k].gamma);
    if (i < 0) {
      std::ostringstream os;
      os << "Omega point " << format_vector(part.points[k].gamma) << " is missing from the plane-wave basis";
      throw Error(Errc::argument, os.str());
    }
    L.omega[static_cast<std::size_t>(i)] = static_cast<int>(k);
    L.key[static_cast<std::size_t>(i)] = part.points[k].cls;
  }
  L.omega_count = part.points.size();
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      if (L.omega[static_cast<std::size_t>(i)] < 0 && L.omega[static_cast<std::size_t>(j)] < 0) continue;
      if (L.key[static_cast<std::size_t>(i)] == L.key[static_cast<std::size_t>(j)]) continue;
      const bool nr = midpoint_nonresonant(s, lat, part.h, part.xi_frac, basis.labels[static_cast<std::size_t>(i)],
                                           basis.labels[static_cast<std::size_t>(j)], part.rho);
      (nr ? L.eligible : L.resonant).emplace_back(i, j);
    }
  return L;
}

struct GaugeGenerator {
  CMat G;
  int rounds = 0;
  std::vector<std::pair<Label, Label>> kill_set;  // (gamma', gamma)
  double min_denominator = std::numeric_limits<double>::infinity();
  double max_entry = 0.0;
};

inline double eligible_residual(const CMat& H, const GaugeLayout& L) {
  double r = 0.0;
  for (const auto& [i, j] : L.eligible) r = std::max(r, std::abs(H(i, j)));
  return r;
}

// First-order generator: G_ij = H_ij / (d_i - d_j), so that [G, diag(d)] cancels H_ij.
inline GaugeGenerator build_generator(const CMat& H, const PlaneWaveBasis& basis, const GaugeLayout& L,
                                      const GaugeConfig& cfg = {}) {
  GaugeGenerator g;
  const auto n = H.rows();
  g.G = CMat::Zero(n, n);
  for (const auto& [i, j] : L.eligible) {
    const cplx hij = H(i, j);
    if (hij == cplx(0.0)) continue;
    const double den = H(i, i).real() - H(j, j).real();
    // |momentum difference| = h |theta|
    const double floor = cfg.floor_factor * L.rho *
                         (basis.momenta[static_cast<std::size_t>(i)] - basis.momenta[static_cast<std::size_t>(j)]).norm();
    if (std::abs(den) < floor) {
      std::ostringstream os;
      os << "targeted pair " << format_vector(basis.labels[static_cast<std::size_t>(i)]) << ", "
         << format_vector(basis.labels[static_cast<std::size_t>(j)]) << " has denominator " << den
         << " below the floor " << floor;
      throw Error(Errc::inconsistency, os.str());
    }
    g.min_denominator = std::min(g.min_denominator, std::abs(den));
    g.G(i, j) = hij / den;
    g.G(j, i) = -std::conj(g.G(i, j));
    g.max_entry = std::max(g.max_entry, std::abs(g.G(i, j)));
    g.kill_set.emplace_back(basis.labels[static_cast<std::size_t>(i)], basis.labels[static_cast<std::size_t>(j)]);
  }
  g.rounds = 1;
  return g;
}

struct GaugeRun {
  FloquetMatrix matrix;             // conjugated
  std::vector<double> residuals;    // [0] before any round, then one per round
  std::vector<std::size_t> kill_sizes;
  std::vector<double> generator_max;
  double unitarity_defect = 0.0;    // max over rounds of |U U* - I|
  GaugeLayout layout;
};

inline GaugeRun conjugate(const FloquetMatrix& m, const GaugeLayout& L, const GaugeConfig& cfg = {}) {
  if (cfg.rounds < 1) throw Error(Errc::argument, "rounds must be >= 1", "gauge.rounds");
  GaugeRun run;
  run.layout = L;
  run.matrix = m;
  CMat& H = run.matrix.entries;
  run.residuals.push_back(eligible_residual(H, L));
  for (int k = 1; k <= cfg.rounds; ++k) {
    const GaugeGenerator gen = build_generator(H, m.basis, L, cfg);
    run.kill_sizes.push_back(gen.kill_set.size());
    run.generator_max.push_back(gen.max_entry);
    if (!gen.kill_set.empty()) {
      const CMat U = gen.G.exp();
      run.unitarity_defect = std::max(
          run.unitarity_defect, (U * U.adjoint() - CMat::Identity(H.rows(), H.cols())).cwiseAbs().maxCoeff());
      CMat Hn = U * H * U.adjoint();
      H = 0.5 * (Hn + Hn.adjoint());
    }
    run.residuals.push_back(eligible_residual(H, L));
    // residuals[0] is the input, so growth is judged between rounds only
    if (k >= 2 && run.residuals[static_cast<std::size_t>(k)] > run.residuals[static_cast<std::size_t>(k - 1)]) {
      std::ostringstream os;
      os << "gauge residual grew in round " << k << ": " << run.residuals[static_cast<std::size_t>(k - 1)]
         << " -> " << run.residuals[static_cast<std::size_t>(k)] << " (max |G| " << gen.max_entry
         << "; rho may be too small or eps too large)";
      throw Error(Errc::divergence, os.str());
    }
  }
  run.matrix.real = run.matrix.real && is_real(H);
  return run;
}

struct Block {
  int id = 0;
  std::vector<int> indices;  // basis indices, ascending
  std::vector<int> classes;  // partition classes merged into this block
  CMat matrix;
};

struct BlockOperator {
  std::vector<Block> blocks;
  std::vector<int> outside;  // basis indices outside Omega, kept as pure diagonal
  Vec diagonal_part;         // conjugated diagonal for every basis point
  double residual = 0.0;
  double tol_block = 0.0;
  double dropped_mass_sq = 0.0;  // zeroed Omega-Omega off-block entries
  double max_dropped = 0.0;
  double cutoff_mass_sq = 0.0;   // Omega <-> outside entries removed by the cutoff
  double max_cutoff = 0.0;
  double removed_norm = 0.0;     // spectral norm of everything zeroed (Weyl shift bound)
  std::vector<std::pair<int, int>> merges;  // classes joined by resonant couplings above tol_block

  Vec eigenvalues() const {
    std::vector<double> v;
    for (const auto& b : blocks) {
      const Vec e = hermitian_eigenvalues(b.matrix);
      v.insert(v.end(), e.data(), e.data() + e.size());
    }
    for (int i : outside) v.push_back(diagonal_part[i]);
    std::sort(v.begin(), v.end());
    return Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
};

inline BlockOperator block_decompose(const CMat& H, const GaugeLayout& L, const ResonancePartition& part,
                                     double tol_block) {
  BlockOperator B;
  B.tol_block = tol_block;
  B.residual = 0.0;
  std::pair<int, int> worst{-1, -1};
  for (const auto& [i, j] : L.eligible)
    if (std::abs(H(i, j)) > B.residual) {
      B.residual = std::abs(H(i, j));
      worst = {i, j};
    }
  if (B.residual > tol_block) {
    std::ostringstream os;
    os << "residual " << B.residual << " at entry (" << worst.first << ", " << worst.second
       << ") exceeds tol_block " << tol_block;
    throw Error(Errc::refused, os.str());
  }
  const int n = static_cast<int>(H.rows());
  B.diagonal_part = H.diagonal().real();
  // merge classes joined by large resonant couplings inside Omega
  detail::DisjointSets ds(part.classes.size());
  for (const auto& [i, j] : L.resonant) {
    const int ki = L.key[static_cast<std::size_t>(i)], kj = L.key[static_cast<std::size_t>(j)];
    if (ki < 0 || kj < 0) continue;
    if (std::abs(H(i, j)) > tol_block && ds.find(static_cast<std::size_t>(ki)) != ds.find(static_cast<std::size_t>(kj))) {
      B.merges.emplace_back(std::min(ki, kj), std::max(ki, kj));
      ds.unite(static_cast<std::size_t>(ki), static_cast<std::size_t>(kj));
    }
  }
  std::map<std::size_t, int> root_block;
  std::vector<int> block_of(static_cast<std::size_t>(n), -1);
  for (int i = 0; i < n; ++i) {
    const int k = L.key[static_cast<std::size_t>(i)];
    if (k < 0) {
      B.outside.push_back(i);
      continue;
    }
    const std::size_t r = ds.find(static_cast<std::size_t>(k));
    auto it = root_block.find(r);
    if (it == root_block.end()) {
      it = root_block.emplace(r, static_cast<int>(B.blocks.size())).first;
      Block b;
      b.id = it->second;
      B.blocks.push_back(b);
    }
    auto& b = B.blocks[static_cast<std::size_t>(it->second)];
    b.indices.push_back(i);
    if (std::find(b.classes.begin(), b.classes.end(), k) == b.classes.end()) b.classes.push_back(k);
    block_of[static_cast<std::size_t>(i)] = it->second;
  }
  for (auto& b : B.blocks) {
    const auto m = static_cast<Eigen::Index>(b.indices.size());
    b.matrix.resize(m, m);
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index c = 0; c < m; ++c)
        b.matrix(a, c) = H(b.indices[static_cast<std::size_t>(a)], b.indices[static_cast<std::size_t>(c)]);
    std::sort(b.classes.begin(), b.classes.end());
  }
  CMat E = CMat::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double v = std::abs(H(i, j));
      if (v == 0.0) continue;
      const int bi = block_of[static_cast<std::size_t>(i)], bj = block_of[static_cast<std::size_t>(j)];
      if (bi < 0 || bj < 0 || bi != bj) {
        E(i, j) = H(i, j);
        E(j, i) = H(j, i);
      }
      if (bi >= 0 && bj >= 0) {
        if (bi == bj) continue;
        B.dropped_mass_sq += 2 * v * v;
        B.max_dropped = std::max(B.max_dropped, v);
      } else if (bi >= 0 || bj >= 0) {
        B.cutoff_mass_sq += 2 * v * v;
        B.max_cutoff = std::max(B.max_cutoff, v);
      }
    }
  if (n > 0) B.removed_norm = hermitian_eigenvalues(E).cwiseAbs().maxCoeff();
  return B;
}

struct SpectraComparison {
  double hausdorff = 0.0;
  std::vector<std::pair<double, double>> matching;  // (full, block); NaN marks an unmatched value
  std::size_t clusters_checked = 0;
  double separation = 0.0;
  Vec full_in_window, blocks_in_window;
};

inline SpectraComparison spectra_compare(const CMat& A, const BlockOperator& B, Interval window) {
  SpectraComparison out;
  const Vec fa = hermitian_eigenvalues(A);
  const Vec fb = B.eigenvalues();
  auto in_window = [&](const Vec& v) {
    std::vector<double> r;
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (window.contains(v[i])) r.push_back(v[i]);
    return r;
  };
  const auto wa = in_window(fa), wb = in_window(fb);
  out.full_in_window = Eigen::Map<const Vec>(wa.data(), static_cast<Eigen::Index>(wa.size()));
  out.blocks_in_window = Eigen::Map<const Vec>(wb.data(), static_cast<Eigen::Index>(wb.size()));
  auto dist = [](double x, const Vec& v) {
    double d = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < v.size(); ++i) d = std::min(d, std::abs(x - v[i]));
    return d;
  };
  for (double x : wa) out.hausdorff = std::max(out.hausdorff, dist(x, fb));
  for (double x : wb) out.hausdorff = std::max(out.hausdorff, dist(x, fa));

  std::vector<std::tuple<double, std::size_t, std::size_t>> cand;
  for (std::size_t i = 0; i < wa.size(); ++i)
    for (std::size_t j = 0; j < wb.size(); ++j) cand.emplace_back(std::abs(wa[i] - wb[j]), i, j);
  std::sort(cand.begin(), cand.end());
  std::vector<char> ua(wa.size()), ub(wb.size());
  for (const auto& [dd, i, j] : cand) {
    if (ua[i] || ub[j]) continue;
    ua[i] = ub[j] = 1;
    out.matching.emplace_back(wa[i], wb[j]);
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < wa.size(); ++i)
    if (!ua[i]) out.matching.emplace_back(wa[i], nan);
  for (std::size_t j = 0; j < wb.size(); ++j)
    if (!ub[j]) out.matching.emplace_back(nan, wb[j]);

  // clusters separated by more than twice the removed norm must hold equal counts (Weyl)
  const double sep = std::max(4.0 * out.hausdorff, 2.0 * B.removed_norm) + 1e-12;
  out.separation = sep;
  std::vector<std::pair<double, int>> all;
  for (double x : wa) all.emplace_back(x, 0);
  for (double x : wb) all.emplace_back(x, 1);
  std::sort(all.begin(), all.end());
  std::size_t k = 0;
  while (k < all.size()) {
    std::size_t e = k + 1;
    while (e < all.size() && all[e].first - all[e - 1].first <= sep) ++e;
    const double lo = all[k].first, hi = all[e - 1].first;
    if (lo - window.lo > sep && window.hi - hi > sep) {
      int ca = 0, cb = 0;
      for (std::size_t q = k; q < e; ++q) (all[q].second == 0 ? ca : cb)++;
      ++out.clusters_checked;
      if (ca != cb) {
        std::ostringstream os;
        os << "cluster [" << lo << ", " << hi << "] holds " << ca << " full and " << cb << " block eigenvalues";
        throw Error(Errc::inconsistency, os.str());
      }
    }
    k = e;
  }
  return out;
}

// Post-conjugation diagonal against A0 + eps Re b_0 on stratum-0 points.
struct BPrimeDiagnostic {
  double max_deviation = 0.0;
  double scale = 0.0;  // eps^2 rho^{-2}
  double fitted_C = 0.0;
  std::size_t points = 0;
};

inline BPrimeDiagnostic bprime_diagnostic(const CMat& H, const PlaneWaveBasis& basis, const FloquetProblem& p,
                                          const ResonancePartition& part) {
  BPrimeDiagnostic d;
  d.scale = p.eps * p.eps / (part.rho * part.rho);
  const Coefficient* b0 = p.perturbation.zero_mode();
  for (const auto& pt : part.points) {
    if (pt.stratum != 0) continue;
    const int i = basis.find(pt.gamma);
    if (i < 0) continue;
    const Vec& z = basis.momenta[static_cast<std::size_t>(i)];
    const double ref = p.symbol(z) + (b0 ? p.eps * (*b0)(z).real() : 0.0);
    d.max_deviation = std::max(d.max_deviation, std::abs(H(i, i).real() - ref));
    ++d.points;
  }
  d.fitted_C = d.scale > 0 ? d.max_deviation / d.scale : 0.0;
  return d;
}

// The whole chain at one quasimomentum: basis over the Omega window, partition, conjugation, blocks.
struct GaugePipeline {
  FloquetMatrix original;
  ResonancePartition partition;
  GaugeRun run;
  BlockOperator blocks;
  SpectraComparison comparison;
  BPrimeDiagnostic bprime;
  double tol_block = 0.0;
  Interval window;
  double spectral_defect = 0.0;  // sorted eigenvalues before/after, relative
};

inline double sorted_spectrum_defect(const CMat& a, const CMat& b) {
  const Vec x = hermitian_eigenvalues(a), y = hermitian_eigenvalues(b);
  if (x.size() != y.size()) return std::numeric_limits<double>::infinity();
  const double scale = std::max(1.0, x.cwiseAbs().maxCoeff());
  return (x - y).cwiseAbs().maxCoeff() / scale;
}

inline GaugePipeline run_gauge_pipeline(const FloquetProblem& p, const ResonanceConfig& rc, const GaugeConfig& gc,
                                        const Vec& xi_frac, double tau, unsigned workers = 1,
                                        const ResonancePartition* fixed_partition = nullptr) {
  GaugePipeline out;
  out.partition = fixed_partition ? *fixed_partition
                                  : build_partition(p.symbol, p.lattice, rc, p.h, p.eps, xi_frac, tau, workers);
  const double w = out.partition.window;
  out.original = assemble(p, plan_basis(p, {tau - w, tau + w}), xi_frac);
  const GaugeLayout L = make_layout(out.original.basis, out.partition, p.symbol, p.lattice);
  out.run = conjugate(out.original, L, gc);
  out.tol_block = gc.tol_block ? *gc.tol_block : default_tol_block(p.eps, p.h, out.partition.rho);
  out.blocks = block_decompose(out.run.matrix.entries, L, out.partition, out.tol_block);
  out.window = {tau - w / 2, tau + w / 2};
  out.comparison = spectra_compare(out.original.entries, out.blocks, out.window);
  out.bprime = bprime_diagnostic(out.run.matrix.entries, out.original.basis, p, out.partition);
  out.spectral_defect = sorted_spectrum_defect(out.original.entries, out.run.matrix.entries);
  return out;
}

}  // namespace bsgap
