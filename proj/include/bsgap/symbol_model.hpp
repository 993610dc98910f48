#pragma once

#include <memory>

#include "core.hpp"

namespace bsgap {

// Unperturbed symbol A0(xi) with analytic first and second derivatives.
class SymbolModel {
 public:
  using ValueFn = std::function<double(const Vec&)>;
  using GradientFn = std::function<Vec(const Vec&)>;
  using HessianFn = std::function<Mat(const Vec&)>;
  using RadiusFn = std::function<double(double)>;

  struct Parts {
    std::string id;
    int dim = 0;
    double order = 2.0;
    ValueFn value;
    GradientFn gradient;
    HessianFn hessian;
    // R(E) such that A0(xi) <= E implies |xi| <= R(E).
    RadiusFn level_radius;
    double c0 = 1.0;  // A0 >= c0 |xi|^m - C0
    double C0 = 0.0;
    bool centrally_symmetric = false;
  };

  explicit SymbolModel(Parts p) : parts_(std::make_shared<const Parts>(std::move(p))) {
    if (parts_->dim < 1) throw Error(Errc::argument, "symbol dimension must be >= 1", "symbol");
    if (!parts_->value || !parts_->gradient || !parts_->hessian || !parts_->level_radius)
      throw Error(Errc::argument, "symbol needs value, gradient, hessian and level radius", "symbol");
  }

  static SymbolModel power(int d, double m) {
    if (!(m > 0)) throw Error(Errc::argument, "power symbol needs m > 0", "symbol.m");
    Parts p;
    p.id = "power(m=" + trimmed(m) + ")";
    p.dim = d;
    p.order = m;
    p.value = [m](const Vec& x) { return m == 2.0 ? x.squaredNorm() : std::pow(x.norm(), m); };
    p.gradient = [m, d](const Vec& x) -> Vec {
      if (m == 2.0) return 2.0 * x;
      const double r = x.norm();
      if (r == 0.0) return Vec::Zero(d);
      return m * std::pow(r, m - 2.0) * x;
    };
    p.hessian = [m, d](const Vec& x) -> Mat {
      if (m == 2.0) return 2.0 * Mat::Identity(d, d);
      const double r = x.norm();
      if (r == 0.0) {
        const double diag = m > 2.0 ? 0.0 : std::numeric_limits<double>::infinity();
        return diag * Mat::Identity(d, d);
      }
      return m * std::pow(r, m - 2.0) *
             (Mat::Identity(d, d) + (m - 2.0) * x * x.transpose() / (r * r));
    };
    p.level_radius = [m](double e) { return e <= 0 ? 0.0 : std::pow(e, 1.0 / m); };
    p.centrally_symmetric = true;
    return SymbolModel(std::move(p));
  }

  static SymbolModel quadratic(const Mat& M) {
    const int d = static_cast<int>(M.rows());
    if (M.rows() != M.cols()) throw Error(Errc::argument, "quadratic form must be square", "symbol.M");
    if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + M.cwiseAbs().maxCoeff()))
      throw Error(Errc::argument, "quadratic form must be symmetric", "symbol.M");
    Eigen::SelfAdjointEigenSolver<Mat> es(M);
    const double lmin = es.eigenvalues().minCoeff();
    if (!(lmin > 0)) throw Error(Errc::argument, "quadratic form must be positive definite", "symbol.M");
    Parts p;
    p.id = "quadratic";
    p.dim = d;
    p.order = 2.0;
    p.value = [M](const Vec& x) { return x.dot(M * x); };
    p.gradient = [M](const Vec& x) -> Vec { return 2.0 * (M * x); };
    p.hessian = [M](const Vec&) -> Mat { return 2.0 * M; };
    p.level_radius = [lmin](double e) { return e <= 0 ? 0.0 : std::sqrt(e / lmin); };
    p.c0 = lmin;
    p.centrally_symmetric = true;
    return SymbolModel(std::move(p));
  }

  // c(|xi|^2 - a^2)^2 + b
  static SymbolModel double_well(int d, double a, double b, double c) {
    if (!(c > 0)) throw Error(Errc::argument, "double well needs c > 0", "symbol.c");
    Parts p;
    p.id = "double_well(a=" + trimmed(a) + ",b=" + trimmed(b) + ",c=" + trimmed(c) + ")";
    p.dim = d;
    p.order = 4.0;
    const double a2 = a * a;
    p.value = [a2, b, c](const Vec& x) {
      const double s = x.squaredNorm() - a2;
      return c * s * s + b;
    };
    p.gradient = [a2, c](const Vec& x) -> Vec { return 4.0 * c * (x.squaredNorm() - a2) * x; };
    p.hessian = [a2, c, d](const Vec& x) -> Mat {
      return 4.0 * c * (x.squaredNorm() - a2) * Mat::Identity(d, d) + 8.0 * c * x * x.transpose();
    };
    p.level_radius = [a2, b, c](double e) {
      if (e < b) return 0.0;
      return std::sqrt(a2 + std::sqrt((e - b) / c));
    };
    p.c0 = 0.5 * c;
    p.C0 = std::max(0.0, c * a2 * a2 - b);
    p.centrally_symmetric = true;
    return SymbolModel(std::move(p));
  }

  static SymbolModel custom(Parts p) { return SymbolModel(std::move(p)); }

  double operator()(const Vec& x) const { return parts_->value(x); }
  double value(const Vec& x) const { return parts_->value(x); }
  Vec gradient(const Vec& x) const { return parts_->gradient(x); }
  Mat hessian(const Vec& x) const { return parts_->hessian(x); }
  double level_radius(double e) const { return parts_->level_radius(e); }

  int dim() const { return parts_->dim; }
  double order() const { return parts_->order; }
  const std::string& id() const { return parts_->id; }
  double c0() const { return parts_->c0; }
  double C0() const { return parts_->C0; }
  bool centrally_symmetric() const { return parts_->centrally_symmetric; }
  const Parts& parts() const { return *parts_; }

 private:
  static std::string trimmed(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
  }

  std::shared_ptr<const Parts> parts_;
};

// Rough max of |grad A0| over {A0 <= e}, sampled on rays.
inline double max_gradient_below(const SymbolModel& s, double e, int directions = 64, int radii = 48) {
  const int d = s.dim();
  if (d > 3) throw Error(Errc::argument, "only d <= 3 is supported");
  const double R = s.level_radius(e);
  double best = 0.0;
  std::vector<Vec> dirs;
  if (d == 1) {
    dirs = {make_vec({1.0}), make_vec({-1.0})};
  } else {
    // deterministic directions: low-discrepancy on the sphere
    for (int k = 0; k < directions; ++k) {
      Vec u(d);
      if (d == 2) {
        const double phi = 2 * pi * (k + 0.5) / directions;
        u << std::cos(phi), std::sin(phi);
      } else {
        const double z = 1.0 - 2.0 * (k + 0.5) / directions;
        const double r = std::sqrt(std::max(0.0, 1 - z * z));
        const double phi = k * pi * (3.0 - std::sqrt(5.0));
        u << r * std::cos(phi), r * std::sin(phi), z;
      }
      dirs.push_back(u);
    }
  }
  for (const auto& u : dirs) {
    for (int j = 0; j <= radii; ++j) {
      const Vec x = (R * j / radii) * u;
      if (s(x) <= e) best = std::max(best, s.gradient(x).norm());
    }
  }
  return best;
}

}  // namespace bsgap
