#pragma once

#include "core.hpp"
#include "symbol_model.hpp"

namespace bsgap {

// Generators of the dual lattice: columns D_j with <D_j, Y_k> = 2 pi delta_jk.
inline Mat dual_lattice(const Mat& primal) {
  if (primal.rows() != primal.cols() || primal.rows() == 0)
    throw Error(Errc::degenerate_lattice, "lattice basis must be a non-empty square matrix", "lattice");
  Eigen::FullPivLU<Mat> lu(primal);
  double scale = 1.0;
  for (Eigen::Index j = 0; j < primal.cols(); ++j) scale *= std::max(primal.col(j).norm(), 1e-300);
  if (!lu.isInvertible() || std::abs(lu.determinant()) <= 1e-12 * scale)
    throw Error(Errc::degenerate_lattice, "lattice basis is singular", "lattice");
  Mat dual = 2.0 * pi * lu.inverse().transpose();
  const Mat pairing = dual.transpose() * primal;
  const Mat want = 2.0 * pi * Mat::Identity(primal.rows(), primal.cols());
  if ((pairing - want).cwiseAbs().maxCoeff() > 1e-12 * 2.0 * pi * primal.rows() *
                                                   (1.0 + primal.cwiseAbs().maxCoeff() * dual.cwiseAbs().maxCoeff()))
    throw Error(Errc::degenerate_lattice, "dual pairing check failed (ill-conditioned basis)", "lattice");
  return dual;
}

class LatticePair {
 public:
  static LatticePair from_primal(const Mat& primal) { return LatticePair(primal, dual_lattice(primal)); }
  static LatticePair from_dual(const Mat& dual) { return LatticePair(dual_lattice(dual), dual); }
  // Gamma = scale * Z^d, so Gamma* = (2 pi / scale) Z^d.
  static LatticePair cubic(int d, double scale) {
    if (d < 1) throw Error(Errc::argument, "dimension must be >= 1", "dimension");
    if (!(scale > 0)) throw Error(Errc::degenerate_lattice, "cubic scale must be positive", "lattice");
    return from_primal(scale * Mat::Identity(d, d));
  }

  int dim() const { return static_cast<int>(primal_.rows()); }
  const Mat& primal() const { return primal_; }
  const Mat& dual() const { return dual_; }

  Vec point(const Label& k) const { return dual_ * k.cast<double>(); }
  // Coordinates of x with respect to the dual basis.
  Vec coordinates(const Vec& x) const { return dual_inverse_ * x; }

  // Length of the shortest non-zero dual vector.
  double shortest() const { return shortest_; }
  // Diameter of the fundamental cell spanned by the dual basis.
  double cell_diameter() const { return cell_diameter_; }

 private:
  LatticePair(Mat primal, Mat dual) : primal_(std::move(primal)), dual_(std::move(dual)) {
    dual_inverse_ = dual_.inverse();
    const int d = dim();
    cell_diameter_ = 0.0;
    shortest_ = std::numeric_limits<double>::infinity();
    // sign patterns in {-1,0,1}^d cover both the cell diagonals and the basis itself
    Label k = Label::Constant(d, -1);
    while (true) {
      if (k.cwiseAbs().maxCoeff() > 0) {
        const double n = point(k).norm();
        cell_diameter_ = std::max(cell_diameter_, n);
        shortest_ = std::min(shortest_, n);
      }
      int i = 0;
      while (i < d && k[i] == 1) k[i++] = -1;
      if (i == d) break;
      ++k[i];
    }
    for (int j = 0; j < d; ++j) shortest_ = std::min(shortest_, dual_.col(j).norm());
  }

  Mat primal_, dual_, dual_inverse_;
  double shortest_ = 0.0;
  double cell_diameter_ = 0.0;
};

struct DualPoint {
  Label label;
  Vec xi;
  double norm = 0.0;
};

// All gamma in Gamma* with |gamma| <= r, ascending norm, ties lexicographic.
inline std::vector<DualPoint> enumerate_ball(const LatticePair& lat, double r) {
  std::vector<DualPoint> out;
  if (!(r >= 0)) return out;
  const int d = lat.dim();
  const Mat inv = lat.dual().inverse();
  Label bound(d);
  for (int i = 0; i < d; ++i) bound[i] = static_cast<int>(std::floor(r * inv.row(i).norm() + 1e-9));
  const double r2 = r * r * (1.0 + 1e-12);
  Label k = -bound;
  while (true) {
    const Vec x = lat.point(k);
    const double n2 = x.squaredNorm();
    if (n2 <= r2) out.push_back({k, x, std::sqrt(n2)});
    int i = 0;
    while (i < d && k[i] == bound[i]) {
      k[i] = -bound[i];
      ++i;
    }
    if (i == d) break;
    ++k[i];
  }
  std::sort(out.begin(), out.end(), [](const DualPoint& a, const DualPoint& b) {
    const double tol = 1e-12 * std::max(1.0, std::max(a.norm, b.norm));
    if (std::abs(a.norm - b.norm) > tol) return a.norm < b.norm;
    for (Eigen::Index i = 0; i < a.xi.size(); ++i) {
      const double t = 1e-12 * std::max(1.0, std::abs(a.xi[i]));
      if (std::abs(a.xi[i] - b.xi[i]) > t) return a.xi[i] < b.xi[i];
    }
    return LabelLess{}(a.label, b.label);
  });
  return out;
}

struct Folded {
  Label gamma;
  Vec frac;         // physical point in the half-open cell
  Vec frac_coords;  // its dual-basis coordinates, each in [0, 1)
};

inline Folded fold_to_fundamental(const LatticePair& lat, const Vec& xi) {
  const Vec c = lat.coordinates(xi);
  const int d = lat.dim();
  Label k(d);
  Vec fc(d);
  for (int i = 0; i < d; ++i) {
    double f = std::floor(c[i]);
    double rem = c[i] - f;
    if (rem >= 1.0) {
      f += 1.0;
      rem = 0.0;
    }
    k[i] = static_cast<int>(f);
    fc[i] = rem;
  }
  Vec frac = xi - lat.point(k);
  return {k, frac, fc};
}

struct LatticeSubspace {
  std::vector<Label> generators;
  Mat generator_vectors;  // d x n
  Mat frame;              // d x n orthonormal

  int dim() const { return static_cast<int>(frame.cols()); }
  Mat projector() const { return frame * frame.transpose(); }
  Mat complement_projector() const {
    return Mat::Identity(frame.rows(), frame.rows()) - projector();
  }
  bool contains(const Vec& v, double tol = 1e-9) const {
    return (v - frame * (frame.transpose() * v)).norm() <= tol * (1.0 + v.norm());
  }
};

struct SubspaceList {
  std::vector<LatticeSubspace> spaces;
  double radius_used = 0.0;
  bool truncated = false;
  std::string notice;
};

inline SubspaceList lattice_subspaces(const LatticePair& lat, int n, double r,
                                      std::size_t max_points = 10000) {
  const int d = lat.dim();
  if (n < 1 || n > d - 1)
    throw Error(Errc::argument, "subspace dimension must lie in [1, d-1]", "n");
  SubspaceList out;
  out.radius_used = r;
  auto pts = enumerate_ball(lat, r);
  pts.erase(pts.begin());  // origin
  if (pts.size() > max_points) {
    // keep whole norm shells only
    std::size_t keep = max_points;
    while (keep > 0 && std::abs(pts[keep].norm - pts[keep - 1].norm) <= 1e-12 * pts[keep].norm) --keep;
    out.radius_used = keep > 0 ? pts[keep - 1].norm : 0.0;
    std::ostringstream os;
    os << "generator radius capped from " << r << " to " << out.radius_used << " (" << pts.size()
       << " candidate points exceed the limit " << max_points << ")";
    out.truncated = true;
    out.notice = os.str();
    pts.resize(keep);
  }
  // one representative of each +-gamma pair
  std::vector<DualPoint> reps;
  for (const auto& p : pts) {
    for (int i = 0; i < d; ++i) {
      if (p.label[i] != 0) {
        if (p.label[i] > 0) reps.push_back(p);
        break;
      }
    }
  }
  std::vector<Mat> projectors;
  std::vector<std::size_t> idx(static_cast<std::size_t>(n));
  std::function<void(std::size_t, std::size_t)> choose = [&](std::size_t depth, std::size_t start) {
    if (depth == static_cast<std::size_t>(n)) {
      Mat g(d, n);
      for (int j = 0; j < n; ++j) g.col(j) = reps[idx[static_cast<std::size_t>(j)]].xi;
      auto frame = orthonormal_frame(g);
      if (!frame) return;
      const Mat P = *frame * frame->transpose();
      for (const auto& Q : projectors)
        if ((P - Q).norm() < 1e-10) return;
      projectors.push_back(P);
      LatticeSubspace s;
      for (int j = 0; j < n; ++j) s.generators.push_back(reps[idx[static_cast<std::size_t>(j)]].label);
      s.generator_vectors = g;
      s.frame = *frame;
      out.spaces.push_back(std::move(s));
      return;
    }
    for (std::size_t i = start; i < reps.size(); ++i) {
      idx[depth] = i;
      if (depth > 0) {
        // skip early when the partial set is already dependent
        Mat g(d, static_cast<Eigen::Index>(depth + 1));
        for (std::size_t j = 0; j <= depth; ++j) g.col(static_cast<Eigen::Index>(j)) = reps[idx[j]].xi;
        if (!orthonormal_frame(g)) continue;
      }
      choose(depth + 1, i + 1);
    }
  };
  choose(0, 0);
  return out;
}

struct SubspaceAngle {
  bool nested = false;
  double angle = 0.0;  // radians in (0, pi/2] when not nested
};

inline SubspaceAngle subspace_angle(const LatticeSubspace& V, const LatticeSubspace& W, double tol = 1e-10) {
  const Mat M = V.frame.transpose() * W.frame;
  Eigen::JacobiSVD<Mat> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec s = svd.singularValues();
  int shared = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s[i] >= 1.0 - tol) ++shared;
  if (shared == V.dim() || shared == W.dim()) return {true, 0.0};
  // principal vectors beyond the intersection; the largest remaining cosine
  double c = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s[i] < 1.0 - tol) c = std::max(c, s[i]);
  return {false, std::acos(std::clamp(c, 0.0, 1.0))};
}

// #{gamma : |A0(h(gamma + xi_frac)) - tau| <= w} by direct enumeration.
inline std::size_t shell_count(const LatticePair& lat, const SymbolModel& symbol, double tau, double w,
                               double h, const Vec& xi_frac) {
  if (!(h > 0)) throw Error(Errc::argument, "h must be positive", "h");
  if (!(w >= 0)) throw Error(Errc::argument, "half width must be non-negative", "w");
  const double R = symbol.level_radius(tau + w) / h + lat.cell_diameter() + xi_frac.norm();
  std::size_t count = 0;
  for (const auto& p : enumerate_ball(lat, R)) {
    const Vec z = h * (p.xi + xi_frac);
    if (std::abs(symbol(z) - tau) <= w) ++count;
  }
  return count;
}

}  // namespace bsgap
