#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <sstream>
#include <vector>

#include "embedflow/embed_data.hpp"
#include "embedflow/linalg.hpp"
#include "embedflow/linear_model.hpp"
#include "embedflow/lnn_flow.hpp"
#include "embedflow/rng.hpp"
#include "embedflow/stats.hpp"

using namespace embedflow;

namespace {

EmpiricalMoments random_moments(int dx, int dy, Rng& rng) {
  EmpiricalMoments m;
  Matrix gx_raw(dx, dx), gy_raw(dy, dy);
  for (int i = 0; i < dx; ++i)
    for (int j = 0; j < dx; ++j) gx_raw(i, j) = rng.normal();
  for (int i = 0; i < dy; ++i)
    for (int j = 0; j < dy; ++j) gy_raw(i, j) = rng.normal();
  m.sxx = matmul(transpose(gx_raw), gx_raw) + (0.2 * Matrix::identity(dx));
  m.syy = matmul(transpose(gy_raw), gy_raw) + (0.2 * Matrix::identity(dy));
  m.sxy = Matrix(dx, dy);
  for (int i = 0; i < dx; ++i)
    for (int j = 0; j < dy; ++j) m.sxy(i, j) = 0.3 * rng.normal();
  m.gx = Vec(static_cast<std::size_t>(dx));
  m.gy = Vec(static_cast<std::size_t>(dy));
  for (double& v : m.gx) v = rng.normal();
  for (double& v : m.gy) v = 0.3 * rng.normal();
  m.g2 = 10.0;
  m.n = 1000;
  return m;
}

// moments of a sampled near-linear dataset in one intrinsic dimension
EmpiricalMoments scalar_moments(double sigma, std::uint64_t seed, int n = 4000) {
  const auto spec = EmbeddingSpec::identity(1, 1, sigma);
  const TargetFunction g = parse_target("x1 + 0.3*sin(pi*x1)", 1);
  return compute_moments(sample_dataset(spec, g, n, XDist::Uniform, seed));
}

Vec wx_star_of(const EmpiricalMoments& m) { return solve_linear(m.sxx, m.gx); }

// the product form of the field used as an independent oracle
Vec field_oracle(const FlowSystem& sys, const Vec& w) {
  const double s2 = norm2_sq(w);
  if (s2 == 0.0) return Vec(w.size(), 0.0);
  const Vec g = sys.grad(w);
  Vec out = vec_scale(s2, g);
  axpy((sys.depth() - 1.0) * dot(w, g), w, out);
  return vec_scale(-std::pow(s2, -1.0 / sys.depth()), out);
}

Matrix rotation2(double angle) {
  return Matrix{{std::cos(angle), -std::sin(angle)}, {std::sin(angle), std::cos(angle)}};
}

}  // namespace

TEST_CASE("the two write-ups of the flow field agree") {
  Rng rng(101);
  for (int trial = 0; trial < 1000; ++trial) {
    const int dx = 1 + static_cast<int>(rng.next_below(3));
    const int dy = 1 + static_cast<int>(rng.next_below(3));
    const int depth = 2 + static_cast<int>(rng.next_below(5));
    const double sigma = std::exp(rng.uniform(-3.0, 0.4));
    const EmpiricalMoments m = random_moments(dx, dy, rng);
    const FlowSystem sys(m, sigma, depth);

    Vec w(static_cast<std::size_t>(dx + dy));
    const double scale_w = std::exp(rng.uniform(-2.0, 2.0));
    for (double& v : w) v = scale_w * rng.normal();

    const Vec f = vector_field(sys, w);
    const Vec oracle = field_oracle(sys, w);
    const double scale = std::max(1.0, norm2(oracle));
    CHECK(norm2(vec_sub(f, oracle)) <= 1e-12 * scale);
  }
}

TEST_CASE("the field transports equivariantly under block rotations") {
  Rng rng(102);
  for (int trial = 0; trial < 50; ++trial) {
    const EmpiricalMoments m = random_moments(2, 2, rng);
    const double sigma = 0.4;
    const int depth = 3;
    const FlowSystem sys(m, sigma, depth);

    const Matrix rx = rotation2(rng.uniform(0.0, 6.28));
    const Matrix ry = rotation2(rng.uniform(0.0, 6.28));
    EmpiricalMoments mr = m;
    mr.sxx = matmul(transpose(rx), matmul(m.sxx, rx));
    mr.sxy = matmul(transpose(rx), matmul(m.sxy, ry));
    mr.syy = matmul(transpose(ry), matmul(m.syy, ry));
    mr.gx = matvec_t(rx, m.gx);
    mr.gy = matvec_t(ry, m.gy);
    const FlowSystem sys_r(mr, sigma, depth);

    Matrix r(4, 4);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        r(i, j) = rx(i, j);
        r(2 + i, 2 + j) = ry(i, j);
      }

    Vec w{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    const Vec lhs = vector_field(sys_r, matvec_t(r, w));
    const Vec rhs = matvec_t(r, vector_field(sys, w));
    CHECK(norm2(vec_sub(lhs, rhs)) <= 1e-10 * std::max(1.0, norm2(rhs)));
  }
}

TEST_CASE("the field vanishes exactly on the stationary set and nowhere else") {
  Rng rng(103);
  for (int trial = 0; trial < 30; ++trial) {
    const EmpiricalMoments m = random_moments(2, 1, rng);
    const double sigma = 0.1 + 0.9 * rng.uniform01();
    const int depth = 2 + static_cast<int>(rng.next_below(4));
    const FlowSystem sys(m, sigma, depth);
    const double scale = std::max(1.0, max_abs(sys.rhs()));

    // generic point: neither the field nor the gradient is small
    Vec w{rng.normal(), rng.normal(), rng.normal()};
    w[0] += 3.0;
    CHECK(norm2(vector_field(sys, w)) > 1e-10 * scale);
    CHECK(norm2(sys.grad(w)) > 1e-10 * scale);

    // the critical point of the quadratic
    const Vec w_star = stationary_point(m, sigma).w.concat();
    CHECK(norm2(vector_field(sys, w_star)) <= 1e-10 * scale);
    CHECK(norm2(sys.grad(w_star)) <= 1e-10 * scale);

    // the origin kills the field even though the gradient survives
    const Vec zero(3, 0.0);
    CHECK(norm2(vector_field(sys, zero)) == 0.0);
    CHECK(norm2(sys.grad(zero)) > 1e-10 * scale);
  }
}

TEST_CASE("sigma zero leaves the whole on-manifold critical line flat") {
  const EmpiricalMoments m = scalar_moments(0.0, 7);
  const FlowSystem sys(m, 0.0, 4);
  const Vec wxs = wx_star_of(m);
  for (double wy : {-2.0, 0.0, 0.5, 3.0}) {
    const Vec w{wxs[0], wy};
    CHECK(norm2(vector_field(sys, w)) <= 1e-10);
  }
}

TEST_CASE("depths above two flatten the field at the origin") {
  Rng rng(104);
  const EmpiricalMoments m = random_moments(2, 1, rng);
  for (int depth : {3, 4, 5}) {
    CHECK(field_differentiable_at_origin(depth));
    const FlowSystem sys(m, 0.3, depth);
    const Matrix j = finite_diff_jacobian(
        [&](const Vec& w) { return vector_field(sys, w); }, Vec(3, 0.0));
    CHECK(max_abs(j) <= 1e-5);
  }
  CHECK(!field_differentiable_at_origin(2));
}

TEST_CASE("jacobian_F_at_stationary matches finite differences and its closed form") {
  const EmpiricalMoments m = scalar_moments(0.25, 9);
  const double sigma = 0.25;
  const int depth = 3;
  const FlowSystem sys(m, sigma, depth);
  const Vec w_star = stationary_point(m, sigma).w.concat();

  const Matrix j = jacobian_F_at_stationary(sys, w_star);
  const Matrix fd = finite_diff_jacobian(
      [&](const Vec& w) { return vector_field(sys, w); }, w_star);
  CHECK(max_abs(j - fd) <= 1e-5 * std::max(1.0, max_abs(j)));

  // closed form: -|w*|^(-2/L) (|w*|^2 A + (L-1) w* (A w*)^T)
  const double s2 = norm2_sq(w_star);
  const Matrix b = (s2 * sys.quadratic()) + ((depth - 1.0) * outer(w_star, matvec(sys.quadratic(), w_star)));
  const Matrix oracle = -std::pow(s2, -1.0 / depth) * b;
  CHECK(max_abs(j - oracle) <= 1e-12 * std::max(1.0, max_abs(oracle)));

  // non-stationary points are rejected
  Vec off = w_star;
  off[0] += 1.0;
  CHECK_THROWS_AS(jacobian_F_at_stationary(sys, off), std::invalid_argument);
}

TEST_CASE("linearization at the critical point is stable across random problems") {
  Rng rng(105);
  for (int trial = 0; trial < 100; ++trial) {
    const int dx = 1 + static_cast<int>(rng.next_below(2));
    const int dy = 1 + static_cast<int>(rng.next_below(2));
    const EmpiricalMoments m = random_moments(dx, dy, rng);
    const double sigma = 0.1 + 0.9 * rng.uniform01();
    const int depth = 2 + static_cast<int>(rng.next_below(4));
    const FlowSystem sys(m, sigma, depth);
    const Vec w_star = stationary_point(m, sigma).w.concat();
    if (norm2(w_star) < 1e-8) continue;
    const auto eigs = eig_small(jacobian_F_at_stationary(sys, w_star));
    double scale = 0.0;
    for (const auto& ev : eigs) scale = std::max(scale, std::abs(ev));
    for (const auto& ev : eigs) CHECK(ev.real() <= 1e-9 * std::max(1.0, scale));
  }
}

TEST_CASE("sigma zero linearization has a normal-space kernel") {
  const auto spec = EmbeddingSpec::identity(2, 2, 0.0);
  const TargetFunction g = parse_target("x1 + 0.2*sin(pi*x2)", 2);
  const EmpiricalMoments m = compute_moments(sample_dataset(spec, g, 5000, XDist::Uniform, 12));
  const FlowSystem sys(m, 0.0, 3);

  Vec w_star = wx_star_of(m);
  w_star.push_back(0.4);  // any normal offset stays stationary at sigma = 0
  w_star.push_back(-0.9);

  const Matrix j = jacobian_F_at_stationary(sys, w_star);
  const auto eigs = eig_small(j);
  double scale = 0.0;
  for (const auto& ev : eigs) scale = std::max(scale, std::abs(ev));
  int zeros = 0;
  for (const auto& ev : eigs)
    if (std::abs(ev) <= 1e-9 * scale) ++zeros;
  CHECK(zeros == 2);

  const auto kernel = null_space(j);
  REQUIRE(kernel.size() == 2);
  for (const Vec& v : kernel) {
    CHECK(std::abs(v[0]) <= 1e-6);
    CHECK(std::abs(v[1]) <= 1e-6);
  }
}

TEST_CASE("positive sigma pushes every eigenvalue strictly left") {
  const auto spec = EmbeddingSpec::identity(2, 1, 0.1);
  const TargetFunction g = parse_target("pi*sin(pi*x1) + pi*sin(pi*x2)", 2);
  const EmpiricalMoments m = compute_moments(sample_dataset(spec, g, 100000, XDist::Uniform, 13));
  const FlowSystem sys(m, 0.1, 5);
  const Vec w_star = stationary_point(m, 0.1).w.concat();
  const auto eigs = eig_small(jacobian_F_at_stationary(sys, w_star));
  double scale = 0.0;
  for (const auto& ev : eigs) scale = std::max(scale, std::abs(ev));
  for (const auto& ev : eigs) {
    CHECK(ev.real() < 0.0);
    CHECK(std::abs(ev.imag()) <= 1e-9 * scale);
  }
}

TEST_CASE("finite differences of the field pass a Richardson consistency check") {
  Rng rng(106);
  const EmpiricalMoments m = random_moments(2, 1, rng);
  const FlowSystem sys(m, 0.5, 3);
  const Vec w{0.8, -0.3, 0.6};
  const auto f = [&](const Vec& x) { return vector_field(sys, x); };
  const Matrix coarse = finite_diff_jacobian(f, w, 1e-5);
  const Matrix fine = finite_diff_jacobian(f, w, 1e-6);
  CHECK(max_abs(coarse - fine) <= 1e-4 * std::max(1.0, max_abs(fine)));
}

TEST_CASE("eigen_gap_scan recovers the quadratic collapse rate") {
  const auto spec = EmbeddingSpec::identity(2, 1, 0.5);
  const TargetFunction g = parse_target("pi*sin(pi*x1) + pi*sin(pi*x2)", 2);
  const EigenGapScan scan =
      eigen_gap_scan(spec, g, 5, {0.5, 0.25, 0.125}, 6400, {1, 2, 3});
  REQUIRE(scan.fit.has_value());
  CHECK(scan.fit->slope == doctest::Approx(2.0).epsilon(0.1));
  CHECK(scan.rows.size() == 9);
  for (const EigenGapRow& r : scan.rows) CHECK(r.zero_count == 0);
}

TEST_CASE("eigen_gap_scan counts the flat directions at sigma zero") {
  const auto spec = EmbeddingSpec::identity(2, 2, 0.0);
  const TargetFunction g = parse_target("x1 + 0.1*sin(pi*x1)", 2);
  const EigenGapScan scan = eigen_gap_scan(spec, g, 4, {0.0}, 2000, {5});
  CHECK(!scan.fit.has_value());
  REQUIRE(scan.rows.size() == 1);
  CHECK(scan.rows[0].zero_count == 2);

  CHECK_THROWS_AS(eigen_gap_scan(spec, g, 4, {0.5, 0.25}, 100, {1}), std::invalid_argument);
  CHECK_THROWS_AS(eigen_gap_scan(spec, g, 4, {}, 2000, {1}), std::invalid_argument);
}

TEST_CASE("gershgorin_blocks partitions the scaled jacobian") {
  const auto spec = EmbeddingSpec::identity(2, 1, 0.3);
  const TargetFunction g = parse_target("pi*sin(pi*x1) + pi*sin(pi*x2)", 2);
  const EmpiricalMoments m = compute_moments(sample_dataset(spec, g, 20000, XDist::Uniform, 14));
  const int depth = 3;
  const FlowSystem sys(m, 0.3, depth);
  const Vec w_star = stationary_point(m, 0.3).w.concat();

  const GershgorinBlocks gb = gershgorin_blocks(sys, w_star);
  CHECK(gb.eigen_membership);
  REQUIRE(gb.block_eigs.size() == 3);
  CHECK(gb.in_g1.size() == gb.block_eigs.size());

  const Matrix j = jacobian_F_at_stationary(sys, w_star);
  const Matrix b = -std::pow(norm2_sq(w_star), 1.0 / depth) * j;
  const double tol = 1e-10 * std::max(1.0, max_abs(b));
  for (int i = 0; i < 2; ++i) {
    for (int jj = 0; jj < 2; ++jj) CHECK(std::abs(gb.f11(i, jj) - b(i, jj)) <= tol);
    CHECK(std::abs(gb.f12(i, 0) - b(i, 2)) <= tol);
    CHECK(std::abs(gb.f21(0, i) - b(2, i)) <= tol);
  }
  CHECK(std::abs(gb.f22(0, 0) - b(2, 2)) <= tol);
  CHECK(gb.norm_f12 == doctest::Approx(spectral_norm(gb.f12)).epsilon(1e-12));
}

TEST_CASE("small sigma leaves one near-flat direction in the block spectrum") {
  const EmpiricalMoments m = scalar_moments(1e-3, 15, 50);
  const FlowSystem sys(m, 1e-3, 2);
  const Vec w_star = stationary_point(m, 1e-3).w.concat();
  const auto eigs = eig_small(jacobian_F_at_stationary(sys, w_star));
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const auto& ev : eigs) {
    lo = std::min(lo, std::abs(ev));
    hi = std::max(hi, std::abs(ev));
  }
  CHECK(lo <= 10.0 * 1e-3 * hi);

  const GershgorinBlocks gb = gershgorin_blocks(sys, w_star);
  CHECK(gb.eigen_membership);
}

TEST_CASE("gershgorin_blocks needs positive sigma") {
  const EmpiricalMoments m = scalar_moments(0.0, 16);
  const FlowSystem sys(m, 0.0, 2);
  Vec w_star = wx_star_of(m);
  w_star.push_back(0.0);
  CHECK_THROWS_AS(gershgorin_blocks(sys, w_star), std::invalid_argument);
}

TEST_CASE("simulate holds the critical point fixed") {
  const EmpiricalMoments m = scalar_moments(0.4, 17);
  const FlowSystem sys(m, 0.4, 3);
  const Vec w_star = stationary_point(m, 0.4).w.concat();
  const OdeSolution sol = simulate(sys, w_star, 10.0);
  CHECK(sol.status == OdeStatus::completed);
  for (const Vec& s : sol.states)
    CHECK(norm2(vec_sub(s, w_star)) <= 1e-7 * std::max(1.0, norm2(w_star)));
}

TEST_CASE("on-manifold energy is monotone by starting region at sigma zero") {
  const EmpiricalMoments m = scalar_moments(0.0, 18);
  const FlowSystem sys(m, 0.0, 5);
  const double wxs = wx_star_of(m)[0];

  const Vec upper{2.0 * wxs, 0.8};
  REQUIRE(classify_region(sys, upper).region == Region::InUPlus);
  const OdeSolution su = simulate(sys, upper, 30.0);
  const MonotonicityCheck cu = monotonicity_check(sys, su);
  CHECK(cu.wx_monotone);
  CHECK(cu.ratio_monotone);

  const Vec inner{0.5 * wxs, 0.8};
  REQUIRE(classify_region(sys, inner).region == Region::InEMinus);
  const OdeSolution si = simulate(sys, inner, 30.0);
  const MonotonicityCheck ci = monotonicity_check(sys, si);
  CHECK(ci.wx_monotone);
  CHECK(ci.ratio_monotone);

  const Vec line{wxs, 0.8};
  const OdeSolution sl = simulate(sys, line, 5.0);
  const MonotonicityCheck cl = monotonicity_check(sys, sl);
  CHECK(cl.wx_monotone);
  CHECK(cl.ratio_monotone);
}

TEST_CASE("classify_region fixed points of the geometry") {
  const EmpiricalMoments m = scalar_moments(0.0, 19);
  const FlowSystem sys(m, 0.0, 2);
  const double wxs = wx_star_of(m)[0];

  CHECK(classify_region(sys, Vec{wxs, 1.3}).region == Region::OnGamma0);
  CHECK(classify_region(sys, Vec{wxs, 0.0}).region == Region::OnGamma0);

  const RegionLabel origin = classify_region(sys, Vec{0.0, 0.7});
  CHECK(origin.region == Region::OnE);
  CHECK(origin.ellipsoid_value == 0.0);

  CHECK(classify_region(sys, Vec{0.5 * wxs, 1.0}).region == Region::InEMinus);
  CHECK(classify_region(sys, Vec{-wxs, 0.2}).region == Region::InUMinus);
  CHECK(classify_region(sys, Vec{3.0 * wxs, 0.2}).region == Region::InUPlus);

  CHECK(region_name(Region::OnGamma0) == "ON_GAMMA0");
  CHECK(region_name(Region::InEMinus) == "IN_E_MINUS");
}

TEST_CASE("classify_region resolves the tangent hyperplane in two dimensions") {
  const auto spec = EmbeddingSpec::identity(2, 1, 0.0);
  const TargetFunction g = parse_target("x1 + 2*x2 + 0.2*sin(pi*x1)", 2);
  const EmpiricalMoments m = compute_moments(sample_dataset(spec, g, 3000, XDist::Uniform, 20));
  const FlowSystem sys(m, 0.0, 2);

  const Vec wxs = wx_star_of(m);
  const Vec normal = matvec(m.sxx, wxs);
  const Vec perp{-normal[1], normal[0]};
  const Vec w{wxs[0] + 0.4 * perp[0], wxs[1] + 0.4 * perp[1], 0.5};
  const RegionLabel lab = classify_region(sys, w);
  CHECK(lab.region == Region::OnH);
  CHECK(std::abs(lab.hyperplane_value) <= 1e-10);
}

TEST_CASE("depth_effect_check certifies both inequality families") {
  const EmpiricalMoments m = scalar_moments(0.0, 21);
  const FlowSystem sys(m, 0.0, 5);
  const double wxs = wx_star_of(m)[0];

  const DepthEffectCheck up = depth_effect_check(sys, Vec{2.0 * wxs, 0.8}, 50.0);
  CHECK(up.start_region == Region::InUPlus);
  CHECK(up.applicable_upper);
  CHECK(up.assumption_ok);
  CHECK(up.holds_upper);
  CHECK(up.holds_apriori);
  CHECK(up.wyT_sq <= up.wy0_sq + 1e-10);

  const DepthEffectCheck in = depth_effect_check(sys, Vec{0.5 * wxs, 0.8}, 50.0);
  CHECK(in.start_region == Region::InEMinus);
  CHECK(in.applicable_inner);
  CHECK(in.assumption_ok);
  CHECK(in.holds_inner);
  CHECK(in.wyT_sq >= in.wy0_sq - 1e-10);
}

TEST_CASE("greater depth weakens the off-manifold drift cap") {
  const EmpiricalMoments m = scalar_moments(0.0, 22);
  const FlowSystem shallow(m, 0.0, 5);
  const FlowSystem deep(m, 0.0, 100);
  const double wxs = wx_star_of(m)[0];
  const Vec w0{2.0 * wxs, 0.8};

  const DepthEffectCheck c5 = depth_effect_check(shallow, w0, 50.0);
  const DepthEffectCheck c100 = depth_effect_check(deep, w0, 50.0);
  CHECK(c100.h_of_depth < c5.h_of_depth);
  CHECK(c100.h_term < c5.h_term);
  CHECK(c5.holds_apriori);
  CHECK(c100.holds_apriori);
}

TEST_CASE("trajectories started inside the shell stay trapped") {
  const auto spec = EmbeddingSpec::identity(2, 1, 0.0);
  const TargetFunction g = parse_target("pi*sin(pi*x1) + pi*sin(pi*x2)", 2);

  const TrappingResult deep = trapping_check(spec, g, 100000, Vec{1.5, 1.5, 0.5}, 100.0, 4, 23);
  CHECK(deep.applicable);
  CHECK(deep.ok);
  CHECK(deep.radius > 0.0);
  CHECK(deep.radius < 1.0);

  const TrappingResult outside = trapping_check(spec, g, 100000, Vec{6.0, 6.0, 0.5}, 50.0, 4, 23);
  CHECK(!outside.applicable);
  CHECK(outside.ok);

  const TrappingResult coarse = trapping_check(spec, g, 100, Vec{1.5, 1.5, 0.5}, 50.0, 4, 24);
  CHECK(coarse.ok);
}

TEST_CASE("hit_times resolves coordinates in stiffness order") {
  const EmpiricalMoments m = scalar_moments(0.1, 25, 20000);
  const double sigma = 0.1;
  const FlowSystem sys(m, sigma, 2);
  const Vec w_star = stationary_point(m, sigma).w.concat();

  Vec w0 = w_star;
  w0[0] += 0.1;
  w0[1] += 0.1;
  const TimingResult t = hit_times(sys, w0, w_star);
  REQUIRE(t.hit_reached[0]);
  REQUIRE(t.hit_reached[1]);
  CHECK(t.hit_times[0] < t.hit_times[1]);
  CHECK(t.eigen_min_abs > 0.0);
  CHECK(t.budget == doctest::Approx(1e4));

  const TimingResult zero = hit_times(sys, w_star, w_star);
  CHECK(zero.hit_reached[0]);
  CHECK(zero.hit_reached[1]);
  CHECK(zero.hit_times[0] <= 0.01);
  CHECK(zero.hit_times[1] <= 0.01);

  const FlowSystem flat(m, 0.0, 2);
  CHECK_THROWS_AS(hit_times(flat, w0, w_star), std::invalid_argument);
}

TEST_CASE("escape from the origin is slow but happens") {
  const EmpiricalMoments m = scalar_moments(0.25, 26);
  const FlowSystem sys(m, 0.25, 2);
  const Vec dir{1.0, 1.0};
  const TimingResult t = escape_time(sys, 0.1, dir);
  CHECK(t.escape_reached);
  CHECK(t.escape_time > 0.0);
  CHECK(t.escape_floor > 0.0);
  CHECK(t.escape_time >= t.escape_floor);

  CHECK_THROWS_AS(escape_time(sys, 0.2, dir), std::invalid_argument);
  CHECK_THROWS_AS(escape_time(sys, 0.1, Vec{0.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(escape_time(sys, 0.1, dir, -1.0), std::invalid_argument);
}

TEST_CASE("trajectory export carries the region annotations") {
  const EmpiricalMoments m = scalar_moments(0.3, 27);
  const FlowSystem sys(m, 0.3, 3);
  const OdeSolution sol = simulate(sys, Vec{0.9, 0.4}, 5.0);
  std::ostringstream out;
  export_trajectory_csv(sys, sol, out);
  const std::string text = out.str();
  CHECK(text.rfind("t,w_1,w_2,region_label,ellipsoid_value,hyperplane_value\n", 0) == 0);
  std::size_t lines = 0;
  for (char c : text)
    if (c == '\n') ++lines;
  CHECK(lines == sol.states.size() + 1);
}

TEST_CASE("phase_portrait integrates short arcs from a planar grid") {
  const EmpiricalMoments m = scalar_moments(0.25, 28);
  const FlowSystem sys(m, 0.25, 4);
  const auto segs = phase_portrait(sys, -1.0, 1.0, -1.0, 1.0, 3, 3, 0.5);
  REQUIRE(segs.size() == 9);
  for (const PortraitSegment& s : segs) {
    CHECK(!s.states.empty());
    CHECK(s.field_norm >= 0.0);
    CHECK(s.start.size() == 2);
  }
  CHECK(segs.front().start[0] == doctest::Approx(-1.0));
  CHECK(segs.back().start[0] == doctest::Approx(1.0));

  CHECK_THROWS_AS(phase_portrait(sys, -1.0, 1.0, -1.0, 1.0, 1, 3, 0.5), std::invalid_argument);

  Rng rng(107);
  const EmpiricalMoments big = random_moments(2, 1, rng);
  const FlowSystem sys3(big, 0.25, 4);
  CHECK_THROWS_AS(phase_portrait(sys3, -1.0, 1.0, -1.0, 1.0, 3, 3, 0.5), std::invalid_argument);
}
