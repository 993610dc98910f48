#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#define lapack_complex_float std::complex<float>
#define lapack_complex_double std::complex<double>
#include <lapacke.h>

#include <Eigen/Dense>
#include <boost/math/tools/roots.hpp>

namespace bsgap {

using cplx = std::complex<double>;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using Label = Eigen::VectorXi;  // integer coordinates in the dual basis

inline constexpr double pi = 3.14159265358979323846;

enum class Errc {
  validation,
  argument,
  degenerate_lattice,
  empty_basis,
  empty_level_set,
  numerical,
  no_convergence,
  out_of_range,
  divergence,
  inconsistency,
  refused,
  budget_exhausted,
  coordinate_choice,
  certification,
};

inline const char* to_string(Errc c) {
  switch (c) {
    case Errc::validation: return "validation";
    case Errc::argument: return "argument";
    case Errc::degenerate_lattice: return "degenerate_lattice";
    case Errc::empty_basis: return "empty_basis";
    case Errc::empty_level_set: return "empty_level_set";
    case Errc::numerical: return "numerical";
    case Errc::no_convergence: return "no_convergence";
    case Errc::out_of_range: return "out_of_range";
    case Errc::divergence: return "divergence";
    case Errc::inconsistency: return "inconsistency";
    case Errc::refused: return "refused";
    case Errc::budget_exhausted: return "budget_exhausted";
    case Errc::coordinate_choice: return "coordinate_choice";
    case Errc::certification: return "certification";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message, std::string field = {})
      : std::runtime_error(message), code_(code), field_(std::move(field)) {}
  Errc code() const noexcept { return code_; }
  const std::string& field() const noexcept { return field_; }

 private:
  Errc code_;
  std::string field_;
};

// CLI exit codes: 2 validation, 3 certification/assertion, 4 numerical.
inline int exit_code(Errc c) {
  switch (c) {
    case Errc::validation:
    case Errc::argument:
    case Errc::degenerate_lattice:
    case Errc::refused:
      return 2;
    case Errc::certification:
    case Errc::inconsistency:
      return 3;
    default:
      return 4;
  }
}

struct LabelLess {
  bool operator()(const Label& a, const Label& b) const {
    if (a.size() != b.size()) return a.size() < b.size();
    for (Eigen::Index i = 0; i < a.size(); ++i)
      if (a[i] != b[i]) return a[i] < b[i];
    return false;
  }
};

inline Label make_label(std::initializer_list<int> v) {
  Label l(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (int x : v) l[i++] = x;
  return l;
}

inline Vec make_vec(std::initializer_list<double> v) {
  Vec x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double s : v) x[i++] = s;
  return x;
}

template <class V>
std::string format_vector(const V& v) {
  std::ostringstream os;
  os.precision(10);
  os << '(';
  for (Eigen::Index i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  os << ')';
  return os.str();
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double width() const { return hi - lo; }
  double mid() const { return 0.5 * (lo + hi); }
  bool contains(double x) const { return x >= lo && x <= hi; }
};

// ---- dense Hermitian eigensolvers -------------------------------------

inline bool is_real(const CMat& a) {
  return a.imag().cwiseAbs().maxCoeff() == 0.0;
}

// Eigenvalues (ascending). With a window only the values in (lo, hi] come back.
inline Vec hermitian_eigenvalues(const CMat& a, std::optional<Interval> window = std::nullopt,
                                 std::optional<bool> real_hint = std::nullopt) {
  const lapack_int n = static_cast<lapack_int>(a.rows());
  if (n == 0) return Vec();
  const bool real = real_hint ? *real_hint : is_real(a);
  // all values then a filter: LAPACK's range='V' path bisects and is several times slower
  const char range = 'A';
  const double vl = 0.0, vu = 0.0;
  const double abstol = 2.0 * LAPACKE_dlamch('S');
  std::vector<double> w(static_cast<std::size_t>(n));
  std::vector<lapack_int> isuppz(2 * static_cast<std::size_t>(n));
  lapack_int m = 0;
  lapack_int info = 0;
  if (real) {
    Mat work = a.real();
    double z = 0.0;
    info = LAPACKE_dsyevr(LAPACK_COL_MAJOR, 'N', range, 'U', n, work.data(), n, vl, vu, 1, 1,
                          abstol, &m, w.data(), &z, 1, isuppz.data());
  } else {
    CMat work = a;
    cplx z = 0.0;
    info = LAPACKE_zheevr(LAPACK_COL_MAJOR, 'N', range, 'U', n, work.data(), n, vl, vu, 1, 1,
                          abstol, &m, w.data(), &z, 1, isuppz.data());
  }
  if (info != 0) {
    std::ostringstream os;
    os << "Hermitian eigensolver failed (info=" << info << ", n=" << n
       << ", max|a|=" << a.cwiseAbs().maxCoeff() << ")";
    throw Error(Errc::numerical, os.str());
  }
  std::vector<double> kept;
  kept.reserve(static_cast<std::size_t>(m));
  for (lapack_int i = 0; i < m; ++i) {
    const double v = w[static_cast<std::size_t>(i)];
    if (!window || (v > window->lo && v <= window->hi)) kept.push_back(v);
  }
  return Eigen::Map<Vec>(kept.data(), static_cast<Eigen::Index>(kept.size()));
}

struct EigenPairs {
  Vec values;
  CMat vectors;
};

inline EigenPairs hermitian_eigenpairs(const CMat& a) {
  Eigen::SelfAdjointEigenSolver<CMat> es(a);
  if (es.info() != Eigen::Success)
    throw Error(Errc::numerical, "Hermitian eigendecomposition did not converge");
  return {es.eigenvalues(), es.eigenvectors()};
}

// ---- small linear algebra -----------------------------------------------

// Orthonormal basis of the complement of g (d x (d-1)), deterministic.
inline Mat orthonormal_complement(const Vec& g) {
  const Eigen::Index d = g.size();
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ() * Mat::Identity(d, d);
  return q.rightCols(d - 1);
}

// Thin orthonormal frame for span(cols); empty optional when rank-deficient.
inline std::optional<Mat> orthonormal_frame(const Mat& cols, double tol = 1e-10) {
  Eigen::ColPivHouseholderQR<Mat> qr(cols);
  qr.setThreshold(tol);
  if (qr.rank() < cols.cols()) return std::nullopt;
  Eigen::HouseholderQR<Mat> plain(cols);
  Mat q = plain.householderQ() * Mat::Identity(cols.rows(), cols.cols());
  return q;
}

// Sign convention for directions that are only defined up to sign.
inline Vec lexicographic_positive(Vec v, double tol = 1e-12) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::abs(v[i]) > tol) {
      if (v[i] < 0) v = -v;
      break;
    }
  }
  return v;
}

// ---- scalar root finding -------------------------------------------------

template <class F>
double bracket_root(F&& f, double a, double b, double xtol = 1e-15, int max_iter = 200) {
  double fa = f(a), fb = f(b);
  if (fa == 0.0) return a;
  if (fb == 0.0) return b;
  if ((fa > 0) == (fb > 0)) throw Error(Errc::out_of_range, "root not bracketed");
  std::uintmax_t iters = static_cast<std::uintmax_t>(max_iter);
  auto tol = [xtol](double x, double y) { return std::abs(x - y) <= xtol * (1.0 + std::abs(x)); };
  auto r = boost::math::tools::toms748_solve(f, a, b, fa, fb, tol, iters);
  if (iters >= static_cast<std::uintmax_t>(max_iter))
    throw Error(Errc::no_convergence, "bracketed root finder hit its iteration cap");
  return 0.5 * (r.first + r.second);
}

// ---- interval utilities ----------------------------------------------------

inline std::vector<Interval> merge_intervals(std::vector<Interval> v) {
  std::sort(v.begin(), v.end(), [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
  std::vector<Interval> out;
  for (const auto& iv : v) {
    if (!out.empty() && iv.lo <= out.back().hi)
      out.back().hi = std::max(out.back().hi, iv.hi);
    else
      out.push_back(iv);
  }
  return out;
}

inline std::vector<Interval> complement_within(const std::vector<Interval>& merged, Interval range) {
  std::vector<Interval> free;
  double cursor = range.lo;
  for (const auto& iv : merged) {
    if (iv.hi < range.lo || iv.lo > range.hi) continue;
    if (iv.lo > cursor) free.push_back({cursor, std::min(iv.lo, range.hi)});
    cursor = std::max(cursor, iv.hi);
  }
  if (cursor < range.hi) free.push_back({cursor, range.hi});
  return free;
}

// ---- deterministic parallel map ------------------------------------------------

inline unsigned resolve_workers(unsigned requested) {
  if (requested > 0) return requested;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1u : hw;
}

// Runs f(i) for i in [0, n); index i always lands in slot i, so the result
// does not depend on the worker count.
template <class F>
void parallel_for(std::size_t n, unsigned workers, F&& f) {
  workers = std::max(1u, std::min<unsigned>(resolve_workers(workers), static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) f(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace bsgap
