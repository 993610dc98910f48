#include <gtest/gtest.h>

#include "bsgap/xisearch.hpp"

using namespace bsgap;

namespace {

FloquetProblem square(double h, double eps) {
  const auto lat = LatticePair::cubic(2, 2 * pi);
  return {lat, SymbolModel::power(2, 2), Perturbation::cosine_sum(lat, {make_label({1, 0}), make_label({0, 1})}), h,
          eps};
}

FloquetProblem cube(double h, double eps) {
  const auto lat = LatticePair::cubic(3, 2 * pi);
  return {lat, SymbolModel::power(3, 2),
          Perturbation::cosine_sum(lat, {make_label({1, 0, 0}), make_label({0, 1, 0}), make_label({0, 0, 1})}), h, eps};
}

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::validation;  // unreachable in the tests below
}

}  // namespace

TEST(Upsilon, PlanarHandValue) {
  const double v = compute_upsilon(2, 0.01, 0.01, 0.01, UpsilonFormula::standard, 1.0);
  EXPECT_NEAR(v, 0.01 / std::log(100.0), 1e-12);
  EXPECT_NEAR(v, 0.002171, 5e-7);
}

TEST(Upsilon, PlanarBranchSwitch) {
  // log branch for small eps, eps^(-3/2) h^sigma once that drops below 1/|log h|
  const double h = 0.5, s = 0.01;
  for (double eps : {0.05, 0.5, 2.0, 4.0}) {
    const double a = 1 / std::abs(std::log(h)), b = std::pow(eps, -1.5) * std::pow(h, s);
    EXPECT_NEAR(compute_upsilon(2, h, eps, s, UpsilonFormula::standard, 1.0), h * (a < b ? a : b), 1e-14);
  }
  EXPECT_GT(std::pow(0.05, -1.5) * std::pow(h, s), 1 / std::abs(std::log(h)));
  EXPECT_LT(std::pow(4.0, -1.5) * std::pow(h, s), 1 / std::abs(std::log(h)));
}

TEST(Upsilon, SpatialHandValue) {
  EXPECT_NEAR(compute_upsilon(3, 0.1, 0.1, 0.01, UpsilonFormula::standard, 0.1), 0.1 * 1e-4, 1e-16);
  // the second branch: min(1, 1000 * 0.1^2.01) = 1
  EXPECT_GT(1000 * std::pow(0.1, 2.01), 1.0);
}

TEST(Upsilon, ImprovedFormulaWindow) {
  EXPECT_EQ(code_of([] { compute_upsilon(2, 0.1, 0.1, 0.01, UpsilonFormula::improved); }), Errc::refused);
  EXPECT_EQ(code_of([] { compute_upsilon(3, 0.1, 0.05, 0.01, UpsilonFormula::improved); }), Errc::refused);
  EXPECT_EQ(code_of([] { compute_upsilon(3, 0.1, 0.5, 0.01, UpsilonFormula::improved); }), Errc::refused);
  const double h = 0.1, eps = 0.15, s = 0.01;
  EXPECT_NEAR(compute_upsilon(3, h, eps, s, UpsilonFormula::improved, 1.0),
              std::pow(eps, -1.5) * std::pow(h, 9 - 3 - 1 - s), 1e-15);
  EXPECT_EQ(code_of([] { compute_upsilon(4, 0.1, 0.1, 0.01, UpsilonFormula::standard); }), Errc::argument);
}

TEST(BasePoint, UnperturbedCircleWithinHundredDraws) {
  const auto p = square(0.1, 0.0);
  XiSearchConfig xc;
  xc.rho_star = 0.1;
  const auto s = select_xistar(p, ResonanceConfig{}, xc);
  EXPECT_LE(s.stats.draws, 100u);
  EXPECT_NEAR(s.xi.norm(), 1.0, 1e-12);
  EXPECT_TRUE(s.nonres.nonresonant);
  EXPECT_GE(s.nonres.worst_value, 0.1);
  // folded representation reproduces the point
  EXPECT_LT((p.h * (p.lattice.point(s.gamma) + s.xi_frac) - s.xi).norm(), 1e-12);
  for (int i = 0; i < 2; ++i) {
    EXPECT_GE(s.xi_frac[i], xc.boundary_margin);
    EXPECT_LE(s.xi_frac[i], 1 - xc.boundary_margin);
  }
  // the circle has exactly one antipodal point, with form gap 2
  ASSERT_EQ(s.antipodal.size(), 1u);
  EXPECT_NEAR((s.antipodal[0].location + s.xi).norm(), 0.0, 1e-9);
}

TEST(BasePoint, ImpossibleThresholdExhaustsBudget) {
  const auto p = square(0.1, 0.0);
  XiSearchConfig xc;
  xc.rho_star = 3.0;
  xc.max_rejection = 300;
  try {
    select_xistar(p, ResonanceConfig{}, xc);
    FAIL() << "expected budget exhaustion";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::budget_exhausted);
    // every draw fails either the cell margin or the impossible threshold
    const std::string msg = e.what();
    EXPECT_NE(msg.find("draws 300, no root 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("separation 0, form 0, spiral 0"), std::string::npos) << msg;
  }
}

TEST(BasePoint, SeedDeterminism) {
  const auto p = square(0.1, std::pow(0.1, 1.5));
  XiSearchConfig xc;
  xc.seed = 7;
  const auto a = select_xistar(p, ResonanceConfig{}, xc);
  const auto b = select_xistar(p, ResonanceConfig{}, xc);
  EXPECT_EQ((a.xi - b.xi).norm(), 0.0);
  xc.seed = 8;
  const auto c = select_xistar(p, ResonanceConfig{}, xc);
  EXPECT_GT((a.xi - c.xi).norm(), 0.0);
}

TEST(BasePoint, ProjectionMovesByOrderEps) {
  const auto lat = LatticePair::cubic(2, 2 * pi);
  const double h = 0.1, eps = h * h;
  const Coefficient one = Coefficient::constant(1.0, 2);
  // 2 cos x1: no mean, the effective surface is Sigma itself
  FloquetProblem p{lat, SymbolModel::power(2, 2), Perturbation::cosine_sum(lat, {make_label({1, 0})}), h, eps};
  XiSearchConfig xc;
  xc.rho_star = 0.05;
  auto s = select_xistar(p, ResonanceConfig{}, xc);
  EXPECT_LE(s.projection_shift, 1e-12);
  // with a constant mode 3 the level moves inward by 3 eps / |grad| = 1.5 eps
  p.perturbation = Perturbation(lat, {{make_label({1, 0}), one}, {make_label({-1, 0}), one},
                                      {make_label({0, 0}), Coefficient::constant(3.0, 2)}});
  s = select_xistar(p, ResonanceConfig{}, xc);
  EXPECT_LE(s.projection_shift, 2.0 * eps);
  EXPECT_NEAR(s.projection_shift, 1.0 - std::sqrt(1.0 - 3 * eps), 1e-12);
  const auto eff = effective_symbol(p.symbol, p.perturbation, eps);
  EXPECT_NEAR(eff(s.xi), 1.0, 1e-12);
}

TEST(TangentFrame, CircleLexicographicSign) {
  const auto s = SymbolModel::power(2, 2);
  const Vec xi = make_vec({1.0, 0.0});
  const auto ap = antipodal_points(s, 1.0, xi);
  const auto f = tangent_frame(s, xi, ap);
  EXPECT_NEAR((f.eta.col(0) - make_vec({0.0, 1.0})).norm(), 0.0, 1e-14);
}

TEST(TangentFrame, SphereFormGapIsTwo) {
  const auto s = SymbolModel::power(2, 2);
  for (double phi : {0.3, 1.1, 2.5}) {
    const Vec xi = make_vec({std::cos(phi), std::sin(phi)});
    const auto ap = antipodal_points(s, 1.0, xi);
    ASSERT_EQ(ap.size(), 1u);
    const Vec n = xi;
    const Vec eta = make_vec({-std::sin(phi), std::cos(phi)});
    EXPECT_NEAR(std::abs(form_value(s, xi, n, eta) - form_value(s, ap[0].location, n, eta)), 2.0, 1e-9);
    EXPECT_NEAR(tangent_frame(s, xi, ap).separation, 2.0, 1e-9);
  }
  const auto s3 = SymbolModel::power(3, 2);
  const Vec xi = make_vec({0.48, 0.6, 0.64});
  const auto f = tangent_frame(s3, xi, antipodal_points(s3, 1.0, xi));
  EXPECT_NEAR(f.separation, 2.0, 1e-9);
}

TEST(TangentFrame, SpatialQuadraticOrthonormal) {
  Mat M(3, 3);
  M << 2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 1.5;
  const auto s = SymbolModel::quadratic(M);
  // a point on the level set along a ray
  Vec u = make_vec({0.3, -0.5, 0.8}).normalized();
  const Vec xi = u / std::sqrt(u.dot(M * u));
  ASSERT_NEAR(s(xi), 1.0, 1e-13);
  const auto f = tangent_frame(s, xi, antipodal_points(s, 1.0, xi));
  const Mat G = f.eta.transpose() * f.eta;
  EXPECT_LT((G - Mat::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((f.eta.transpose() * s.gradient(xi)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(TangentFrame, IdenticalFormsRefused) {
  // a parallel point with the same curvature as xi
  const auto base = SymbolModel::power(2, 2);
  const Vec xi = make_vec({1.0, 0.0});
  AntipodalPoint twin;
  twin.location = make_vec({1.0, 0.0});
  twin.nu = 1.0;
  EXPECT_EQ(code_of([&] { tangent_frame(base, xi, {twin}); }), Errc::refused);
}

TEST(TrackCurve, CircleClosedForm) {
  const auto s = SymbolModel::power(2, 2);
  const Vec xi = make_vec({1.0, 0.0}), eta = make_vec({0.0, 1.0});
  const Vec d = track_curve(s, xi, eta, 0.1);
  EXPECT_NEAR(d[0], std::sqrt(1 - 0.01) - 1, 1e-12);
  EXPECT_NEAR(d[0], -0.00501256, 1e-8);
  EXPECT_NEAR(d[1], 0.1, 1e-15);
  EXPECT_EQ(track_curve(s, xi, eta, 0.0).norm(), 0.0);
  EXPECT_EQ(code_of([&] { track_curve(s, xi, eta, 1.5); }), Errc::out_of_range);
}

TEST(TrackCurve, StaysOnSurfaceAndSecondOrder) {
  Mat M(2, 2);
  M << 1.0, 0.0, 0.0, 4.0;
  const auto s = SymbolModel::quadratic(M);  // ellipse with semi-axes 1 and 1/2
  const double kmax = 1.0 / 0.25;            // a / b^2
  for (const Vec& xi : {make_vec({1.0, 0.0}), make_vec({0.0, 0.5}), make_vec({0.6, 0.4})}) {
    const double level = s(xi);
    const Vec n = s.gradient(xi).normalized();
    const Vec eta = make_vec({-n[1], n[0]});
    for (int k = 0; k < 50; ++k) {
      const double t = -0.2 + 0.4 * k / 49.0;
      const Vec d = track_curve(s, xi, eta, t);
      EXPECT_LE(std::abs(s(xi + d) - level), 1e-12);
      EXPECT_LE((d - t * eta).norm(), 2 * kmax * t * t + 1e-15);
    }
  }
}

TEST(Exclusion, LinearCrossing) {
  const double tau = 1.0, h = 0.1, ups = 0.01;
  for (double c : {0.5, 1.5, 3.0}) {
    auto value = [&](std::size_t, double t) { return tau + c * h * (t - 0.05); };
    const auto r = exclusion_set(1, value, {c}, tau, ups * h, {-0.3, 0.3}, 601);
    ASSERT_EQ(r.excluded.size(), 1u);
    EXPECT_NEAR(r.excluded_length, 2 * ups / c, 0.2 * 2 * ups / c);
    EXPECT_NEAR(r.excluded[0].mid(), 0.05, 1e-9);
    EXPECT_NEAR(r.R_hat, 1 / c, 1e-15);
  }
}

TEST(Exclusion, NoCandidates) {
  auto value = [](std::size_t, double) { return 0.0; };
  const auto r = exclusion_set(0, value, {}, 1.0, 0.01, {-0.3, 0.3}, 101);
  EXPECT_TRUE(r.excluded.empty());
  EXPECT_EQ(r.R_hat, 0.0);
  ASSERT_EQ(r.free.size(), 1u);
  EXPECT_NEAR(r.free[0].width(), 0.6, 1e-15);
}

TEST(Exclusion, ModelCandidatesMatchDiagonalValues) {
  // unperturbed: model values are |h(gamma + xi_frac(t))|^2
  const auto p = square(0.1, 0.0);
  XiSearchConfig xc;
  xc.rho_star = 0.1;
  const auto s = select_xistar(p, ResonanceConfig{}, xc);
  const auto f = tangent_frame(p.symbol, s.xi, s.antipodal);
  const Vec eta = f.eta.col(0);
  const auto c = shell_candidates(p.symbol, p.lattice, p.h, 1.0, 1.0, 0.05, s.xi, s.antipodal, eta);
  ASSERT_FALSE(c.empty());
  for (const auto& k : c) {
    EXPECT_LE(std::abs(k.point.squaredNorm() - 1.0), 0.2 + 1e-12);
    EXPECT_GT((k.point - s.xi).norm(), std::pow(0.1, 0.95));
    EXPECT_NEAR(k.derivative, 2 * k.point.dot(eta), 1e-12);
  }
  const auto r = bad_intervals(p.symbol, c, s.xi_frac, s.xi, eta, p.h, 1.0, 0.004, {-0.3, 0.3}, 301);
  // brute-force check of membership on a few grid values
  for (double t : {-0.25, -0.1, 0.0, 0.12, 0.27}) {
    const Vec xf = s.xi_frac + track_curve(p.symbol, s.xi, eta, p.h * t) / p.h;
    bool hit = false;
    for (const auto& k : c) hit = hit || std::abs((k.point + p.h * xf).squaredNorm() - 1.0) <= 0.004 * p.h;
    bool in = false;
    for (const auto& iv : r.excluded) in = in || iv.contains(t);
    EXPECT_EQ(hit, in) << "t = " << t;
  }
}

TEST(Exclusion, RhatLogScalingBand) {
  std::vector<double> v;
  for (double h : {0.2, 0.1, 0.05}) {
    const auto p = square(h, std::pow(h, 1.5));
    const auto s = select_xistar(p, ResonanceConfig{}, XiSearchConfig{});
    const auto eff = effective_symbol(p.symbol, p.perturbation, p.eps);
    const auto f = tangent_frame(eff, s.xi, s.antipodal);
    const auto c = shell_candidates(eff, p.lattice, h, 1.0, 1.0, 0.05, s.xi, s.antipodal, f.eta.col(0));
    double R = 0;
    for (const auto& k : c) R += 1 / std::abs(k.derivative);
    v.push_back(R * h / std::abs(std::log(h)));
  }
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  EXPECT_LE(*hi / *lo, 4.0) << v[0] << " " << v[1] << " " << v[2];
}

TEST(Search, PlanarRunCertifies) {
  const double h = 0.2;
  const auto p = square(h, std::pow(h, 1.5));
  XiSearchConfig xc;
  const auto r = run_xi_search(p, ResonanceConfig{}, xc);
  ASSERT_TRUE(r.success) << r.failure;
  ASSERT_EQ(r.steps.size(), 1u);
  EXPECT_LE(r.center_residual, 1e-9);
  EXPECT_GE(r.upsilon, r.upsilon_formula / 4);
  EXPECT_LE(r.upsilon, r.upsilon_formula);
  EXPECT_GE(r.band_index, 1u);
  const auto c = certify(p, r, xc.tau);
  EXPECT_TRUE(c.pass) << c.failure;
  EXPECT_GE(c.margin_lo, 0.0);
  EXPECT_GE(c.margin_hi, 0.0);
  EXPECT_GE(c.ratio, 1.0);
  // same seed, same answer
  const auto again = run_xi_search(p, ResonanceConfig{}, xc);
  EXPECT_EQ((again.xi_frac_star - r.xi_frac_star).norm(), 0.0);
  EXPECT_EQ(again.upsilon, r.upsilon);
  // inflating the ball tenfold must expose a competitor
  const auto bad = certify(p, r.xi_frac_star, xc.tau, 10 * r.upsilon);
  EXPECT_FALSE(bad.pass);
  EXPECT_FALSE(bad.separation_ok);
  EXPECT_LT(bad.min_competitor, bad.required);
}

TEST(Search, UnperturbedRunUsesDiagonalValues) {
  const double h = 0.2;
  const auto p = square(h, 0.0);
  XiSearchConfig xc;
  xc.rho_star = 0.1;
  const auto r = run_xi_search(p, ResonanceConfig{}, xc);
  ASSERT_TRUE(r.success) << r.failure;
  const auto c = certify(p, r, xc.tau);
  EXPECT_TRUE(c.pass) << c.failure;
  // the nearest competitor is a plane wave |h(gamma + xi_frac)|^2
  double best = std::numeric_limits<double>::infinity();
  const Vec at = c.witness;
  for (const auto& q : enumerate_ball(p.lattice, 2.0 / h)) {
    const double v = (h * (q.xi + at)).squaredNorm();
    best = std::min(best, std::abs(v - c.witness_value));
  }
  EXPECT_LT(best, 1e-12);
}

TEST(Search, SpatialTwoStepShrink) {
  const double h = 0.4;
  const auto p = cube(h, h * h);
  // eps^(1/2) h^(-delta) against the default 3-D neighbour set leaves no
  // admissible base point at this h
  ResonanceConfig rc;
  rc.K = 1.0;
  XiSearchConfig xc;
  xc.rho_star = 0.1;
  xc.t_points = 101;
  xc.snap_knots = 5;
  const auto r = run_xi_search(p, rc, xc);
  ASSERT_TRUE(r.success) << r.failure;
  ASSERT_EQ(r.steps.size(), 2u);
  const auto& s1 = r.steps[0];
  const auto& s2 = r.steps[1];
  EXPECT_EQ(s1.guard, "model");
  EXPECT_EQ(s2.guard, "spectral");
  EXPECT_GT(s1.upsilon, s2.upsilon);
  const double ratio = s2.upsilon / s1.upsilon;
  EXPECT_NEAR(ratio * std::pow(2.0, s2.halvings), xc.front / s2.R_hat, 1e-12 * ratio);
  EXPECT_LT(std::abs(s1.eta.dot(s2.eta)), 0.05);
  EXPECT_LE(r.center_residual, 1e-9);
  CertifyConfig cc;
  cc.grid_per_axis = 3;
  cc.random_points = 4;
  const auto c = certify(p, r, xc.tau, cc);
  EXPECT_TRUE(c.pass) << c.failure;
}

TEST(Certify, DegenerateBallChecksCentreOnly) {
  const auto p = square(0.2, 0.0);
  XiSearchConfig xc;
  xc.rho_star = 0.1;
  const auto s = select_xistar(p, ResonanceConfig{}, xc);
  // on the unperturbed circle the folded point is an exact eigenvalue
  const auto ok = certify(p, s.xi_frac, 1.0, 0.0);
  EXPECT_TRUE(ok.pass) << ok.failure;
  EXPECT_EQ(ok.samples, 1u);
  const auto off = certify(p, s.xi_frac + make_vec({1e-3, 0.0}), 1.0, 0.0);
  EXPECT_FALSE(off.pass);
}
