#pragma once

#include <cctype>
#include <string_view>

#include "lattice.hpp"
#include "symbol_model.hpp"

namespace bsgap {

// b(xi) = c + <l, xi> + xi^T Q xi with complex c, l, Q (Q upper-triangular storage).
class Coefficient {
 public:
  Coefficient() = default;
  explicit Coefficient(int d) : lin_(CVec::Zero(d)), quad_(CMat::Zero(d, d)) {}

  static Coefficient constant(cplx c, int d) {
    Coefficient b(d);
    b.c0_ = c;
    return b;
  }

  static Coefficient from_terms(cplx c, const CVec& lin, const CMat& quad) {
    Coefficient b(static_cast<int>(lin.size()));
    b.c0_ = c;
    b.lin_ = lin;
    b.quad_ = quad.triangularView<Eigen::Upper>();
    return b;
  }

  // Grammar: sum of terms, each a product of numbers, 'i', and xiK / xiK^2 (K is 1-based);
  // total degree in xi at most 2.
  static Coefficient parse(std::string_view text, int d);

  int dim() const { return static_cast<int>(lin_.size()); }
  cplx constant_term() const { return c0_; }
  const CVec& linear() const { return lin_; }
  const CMat& quadratic() const { return quad_; }

  cplx operator()(const Vec& xi) const {
    cplx v = c0_;
    for (int i = 0; i < dim(); ++i) v += lin_[i] * xi[i];
    for (int i = 0; i < dim(); ++i)
      for (int j = i; j < dim(); ++j) v += quad_(i, j) * xi[i] * xi[j];
    return v;
  }

  // Gradient / Hessian of the real part (used for the real-valued zero mode).
  Vec gradient_real(const Vec& xi) const {
    Vec g = lin_.real();
    const Mat q = quad_.real();
    g += q * xi + q.transpose() * xi;
    return g;
  }
  Mat hessian_real() const {
    const Mat q = quad_.real();
    return q + q.transpose();
  }

  Coefficient conjugate() const {
    Coefficient b = *this;
    b.c0_ = std::conj(c0_);
    b.lin_ = lin_.conjugate();
    b.quad_ = quad_.conjugate();
    return b;
  }

  bool is_constant() const {
    return lin_.cwiseAbs().maxCoeff() == 0.0 && quad_.cwiseAbs().maxCoeff() == 0.0;
  }
  bool is_real() const {
    return c0_.imag() == 0.0 && lin_.imag().cwiseAbs().maxCoeff() == 0.0 &&
           quad_.imag().cwiseAbs().maxCoeff() == 0.0;
  }
  bool is_zero() const { return c0_ == 0.0 && is_constant(); }

  double distance(const Coefficient& o) const {
    double m = std::abs(c0_ - o.c0_);
    if (dim() > 0) {
      m = std::max(m, (lin_ - o.lin_).cwiseAbs().maxCoeff());
      m = std::max(m, (quad_ - o.quad_).cwiseAbs().maxCoeff());
    }
    return m;
  }

  // sup |b| over |xi| <= R (triangle-inequality bound)
  double bound(double R) const {
    double s = std::abs(c0_);
    if (dim() > 0) s += lin_.norm() * R + quad_.norm() * R * R;
    return s;
  }

  // |grad b| bound over |xi| <= R
  double gradient_bound(double R) const {
    if (dim() == 0) return 0.0;
    return lin_.norm() + 2.0 * quad_.norm() * R;
  }

 private:
  cplx c0_ = 0.0;
  CVec lin_;
  CMat quad_;
};

namespace detail {

struct CoefficientParser {
  std::string_view s;
  std::size_t pos = 0;
  int d = 0;

  [[noreturn]] void fail(const std::string& why) const {
    throw Error(Errc::validation, "coefficient expression '" + std::string(s) + "': " + why,
                "perturbation.modes.value");
  }
  void skip() {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  }
  bool eat(char c) {
    skip();
    if (pos < s.size() && s[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  }

  // one factor: number, i, xiK, xiK^2
  void factor(cplx& coef, std::vector<int>& vars) {
    skip();
    if (pos >= s.size()) fail("unexpected end");
    const char c = s[pos];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(std::string(s.substr(pos)), &used);
      } catch (...) {
        fail("bad number");
      }
      pos += used;
      coef *= v;
      skip();
      if (pos < s.size() && s[pos] == 'i' && !(pos + 1 < s.size() && s[pos + 1] == 'x')) {
        // 2i, 0.5i (but not "2 xi1")
        if (!(pos + 1 < s.size() && std::isalpha(static_cast<unsigned char>(s[pos + 1])))) {
          ++pos;
          coef *= cplx(0, 1);
        }
      }
      return;
    }
    if (s.substr(pos, 2) == "xi") {
      pos += 2;
      if (pos < s.size() && s[pos] == '_') ++pos;
      if (pos >= s.size() || !std::isdigit(static_cast<unsigned char>(s[pos]))) fail("xi needs an index");
      int k = 0;
      while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) k = 10 * k + (s[pos++] - '0');
      if (k < 1 || k > d) fail("xi index out of range");
      int power = 1;
      if (eat('^')) {
        skip();
        if (pos >= s.size() || !std::isdigit(static_cast<unsigned char>(s[pos]))) fail("bad exponent");
        power = s[pos++] - '0';
      }
      for (int p = 0; p < power; ++p) vars.push_back(k - 1);
      return;
    }
    if (c == 'i') {
      ++pos;
      coef *= cplx(0, 1);
      return;
    }
    fail(std::string("unexpected character '") + c + "'");
  }

  Coefficient run() {
    CVec lin = CVec::Zero(d);
    CMat quad = CMat::Zero(d, d);
    cplx c0 = 0.0;
    skip();
    if (pos >= s.size()) fail("empty expression");
    bool first = true;
    while (true) {
      skip();
      if (pos >= s.size()) break;
      double sign = 1.0;
      if (eat('+')) {
      } else if (eat('-')) {
        sign = -1.0;
      } else if (!first) {
        fail("expected + or -");
      }
      first = false;
      cplx coef = sign;
      std::vector<int> vars;
      factor(coef, vars);
      while (eat('*')) factor(coef, vars);
      if (vars.size() > 2) fail("degree above 2");
      if (vars.empty()) c0 += coef;
      else if (vars.size() == 1) lin[vars[0]] += coef;
      else quad(std::min(vars[0], vars[1]), std::max(vars[0], vars[1])) += coef;
    }
    return Coefficient::from_terms(c0, lin, quad);
  }
};

}  // namespace detail

inline Coefficient Coefficient::parse(std::string_view text, int d) {
  detail::CoefficientParser p{text, 0, d};
  return p.run();
}

class Perturbation {
 public:
  struct Mode {
    Label theta;
    Coefficient value;
  };

  Perturbation() = default;

  Perturbation(const LatticePair& lat, const std::vector<Mode>& modes) : dual_(lat.dual()) {
    const int d = lat.dim();
    for (const auto& m : modes) {
      if (m.theta.size() != d) throw Error(Errc::validation, "mode label has wrong dimension", "perturbation.modes.theta");
      if (m.value.dim() != d) throw Error(Errc::validation, "coefficient has wrong dimension", "perturbation.modes.value");
      if (m.value.is_zero()) continue;
      auto [it, fresh] = modes_.emplace(m.theta, m.value);
      if (!fresh) throw Error(Errc::validation, "duplicate mode " + format_vector(m.theta), "perturbation.modes.theta");
    }
    for (const auto& [theta, b] : modes_) {
      const Label minus = -theta;
      auto it = modes_.find(minus);
      const double scale = 1e-14 * (1.0 + b.bound(1.0));
      if (it == modes_.end() || it->second.distance(b.conjugate()) > scale) {
        throw Error(Errc::validation,
                    "Hermitian symmetry violated: b_{-theta} must equal conj(b_theta) for theta = " +
                        format_vector(theta),
                    "perturbation.modes");
      }
    }
    support_radius_ = 0.0;
    for (const auto& [theta, b] : modes_) support_radius_ = std::max(support_radius_, (dual_ * theta.cast<double>()).norm());
  }

  // sum over theta of amplitude * 2 cos(<theta, x>)
  static Perturbation cosine_sum(const LatticePair& lat, const std::vector<Label>& thetas, double amplitude = 1.0) {
    std::vector<Mode> modes;
    for (const auto& t : thetas) {
      modes.push_back({t, Coefficient::constant(amplitude, lat.dim())});
      modes.push_back({Label(-t), Coefficient::constant(amplitude, lat.dim())});
    }
    return Perturbation(lat, modes);
  }

  cplx coefficient(const Label& theta, const Vec& xi) const {
    auto it = modes_.find(theta);
    return it == modes_.end() ? cplx(0.0) : it->second(xi);
  }

  const std::map<Label, Coefficient, LabelLess>& modes() const { return modes_; }
  bool empty() const { return modes_.empty(); }
  double support_radius() const { return support_radius_; }

  const Coefficient* zero_mode() const {
    if (dual_.rows() == 0) return nullptr;
    auto it = modes_.find(Label::Zero(dual_.rows()));
    return it == modes_.end() ? nullptr : &it->second;
  }

  double max_abs(double xi_radius) const {
    double m = 0.0;
    for (const auto& [t, b] : modes_) m = std::max(m, b.bound(xi_radius));
    return m;
  }

  // Real coefficients plus Hermitian symmetry give a real symmetric matrix.
  bool real_matrix() const {
    for (const auto& [t, b] : modes_)
      if (!b.is_real()) return false;
    return true;
  }

  // C_L with |b_theta(xi)| <= C_L (|theta|+1)^{-L} (|xi|+1)^m on |xi| <= R.
  double decay_constant(double L, double m, double R) const {
    double c = 0.0;
    for (const auto& [t, b] : modes_) {
      const double th = (dual_ * t.cast<double>()).norm();
      // b.bound(r)/(r+1)^m is maximised somewhere in [0, R]; a coarse scan is enough
      for (int k = 0; k <= 32; ++k) {
        const double r = R * k / 32.0;
        c = std::max(c, b.bound(r) * std::pow(th + 1.0, L) / std::pow(r + 1.0, m));
      }
    }
    return c;
  }

 private:
  Mat dual_;
  std::map<Label, Coefficient, LabelLess> modes_;
  double support_radius_ = 0.0;
};

// A0 + eps * b_0, the symbol whose level set the search works on.
inline SymbolModel effective_symbol(const SymbolModel& a0, const Perturbation& B, double eps) {
  const Coefficient* b0 = B.zero_mode();
  if (b0 == nullptr || eps == 0.0) return a0;
  const Coefficient b = *b0;
  SymbolModel::Parts p = a0.parts();
  p.id = a0.id() + "+eps*b0";
  p.value = [a0, b, eps](const Vec& x) { return a0(x) + eps * b(x).real(); };
  p.gradient = [a0, b, eps](const Vec& x) -> Vec { return a0.gradient(x) + eps * b.gradient_real(x); };
  p.hessian = [a0, b, eps](const Vec& x) -> Mat { return a0.hessian(x) + eps * b.hessian_real(); };
  p.level_radius = [a0, b, eps](double e) {
    double R = a0.level_radius(e + eps * std::abs(b.constant_term()));
    for (int k = 0; k < 3; ++k) R = a0.level_radius(e + eps * b.bound(2.0 * R + 1.0));
    return R;
  };
  p.centrally_symmetric = a0.centrally_symmetric() && b.linear().cwiseAbs().maxCoeff() == 0.0;
  return SymbolModel(std::move(p));
}

}  // namespace bsgap
