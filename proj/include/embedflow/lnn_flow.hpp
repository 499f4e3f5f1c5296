#pragma once

#include <complex>
#include <cstdint>
#include <iosfwd>
#include <optional>

#include "embedflow/embed_data.hpp"
#include "embedflow/linear_model.hpp"
#include "embedflow/ode.hpp"
#include "embedflow/stats.hpp"

namespace embedflow {

// Continuous-time limit of full-batch gradient descent on a depth-L linear
// network, written on the end-to-end weight w:
//   dw/dt = -|w|^(2-2/L) (grad J + (L-1) (w_hat.grad J) w_hat),  F(0) = 0.
// Immutable once built, so concurrent simulations may share one instance.
class FlowSystem {
 public:
  FlowSystem(EmpiricalMoments moments, double sigma, int depth);

  const EmpiricalMoments& moments() const { return moments_; }
  double sigma() const { return sigma_; }
  int depth() const { return depth_; }
  int dx() const { return moments_.sxx.rows(); }
  int dy() const { return moments_.syy.rows(); }
  int dim() const { return dx() + dy(); }

  const Matrix& quadratic() const { return sys_.a; }
  const Vec& rhs() const { return sys_.rhs; }
  Vec grad(const Vec& w) const;  // quadratic() * w - rhs()

 private:
  EmpiricalMoments moments_;
  double sigma_ = 0.0;
  int depth_ = 2;
  ASigma sys_;
};

Vec vector_field(const FlowSystem& sys, const Vec& w);
// the field extends continuously by 0 at the origin for every depth, but only
// depths above 2 are differentiable there
inline bool field_differentiable_at_origin(int depth) { return depth > 2; }

// -|w*|^(-2/L) (|w*|^2 I + (L-1) w* w*^T) quadratic(); the dropped terms vanish
// only where grad J does, so non-stationary points are rejected.
Matrix jacobian_F_at_stationary(const FlowSystem& sys, const Vec& w_star);

struct EigenGapRow {
  double sigma = 0.0;
  std::uint64_t seed = 0;
  double min_abs = 0.0;  // smallest |lambda| of the Jacobian at the critical point
  int zero_count = 0;    // eigenvalues with |lambda| <= 1e-9 * scale
};

struct EigenGapScan {
  std::vector<EigenGapRow> rows;
  std::optional<LogLogFit> fit;  // mean min-|lambda| vs sigma over positive sigmas
};

// Requires n >= 100 / min(sigma)^2 so the sample fluctuation sits well below
// the sigma^2 eigenvalue scale being measured.
EigenGapScan eigen_gap_scan(const EmbeddingSpec& spec, const TargetFunction& target, int depth,
                            const std::vector<double>& sigmas, int n,
                            const std::vector<std::uint64_t>& seeds,
                            XDist x_dist = XDist::Uniform);

struct GershgorinBlocks {
  Matrix f11, f12, f21, f22;
  double norm_f12 = 0.0;
  double norm_f21 = 0.0;
  // eigenvalues of the assembled block matrix (the Jacobian times -|w*|^(2/L))
  std::vector<std::complex<double>> block_eigs;
  std::vector<bool> in_g1, in_g2;
  bool eigen_membership = false;
};

GershgorinBlocks gershgorin_blocks(const FlowSystem& sys, const Vec& w_star);

// integrate_ode on the flow field; starting exactly at the origin is refused by
// a 1e-12 nudge with a warning, since the origin is itself an equilibrium
OdeSolution simulate(const FlowSystem& sys, const Vec& w0, double t_end,
                     const OdeOptions& opts = {}, const std::vector<OdePredicate>& events = {});

struct TimingResult {
  Vec hit_times;                  // per coordinate; -1 when not reached in budget
  std::vector<bool> hit_reached;
  double budget = 0.0;
  double eigen_min_abs = 0.0;     // smallest |lambda| at w*, for the slow-scale comparison
  double escape_time = -1.0;
  bool escape_reached = false;
  double escape_floor = 0.0;      // guaranteed lower bound from the field-speed estimate
};

// First time each coordinate of w(t) comes within tol of w_star, by event
// detection with the step capped at 5e-3 (kept fixed so step-count comparisons
// across sigma stay meaningful). Default budget: min(1e7, max(1e4, 100/sigma^2)).
TimingResult hit_times(const FlowSystem& sys, const Vec& w0, const Vec& w_star,
                       double tol = 1e-6, double t_budget = 0.0);

// First time |w(t) - w(0)| >= eps/2 from w(0) = eps * direction. The reported
// floor is (eps/2) divided by the largest field speed attainable inside the
// 1.5 eps ball, which scales like eps^(2/L - 1).
TimingResult escape_time(const FlowSystem& sys, double epsilon, const Vec& direction,
                         double t_budget = 1e5);

enum class Region { OnE, InEMinus, OnH, InUMinus, InUPlus, OnGamma0 };
std::string region_name(Region r);  // "ON_E", "IN_E_MINUS", ...

struct RegionLabel {
  Region region = Region::OnE;
  double ellipsoid_value = 0.0;   // wx.(sxx wx - gx): zero on E, negative inside
  double hyperplane_value = 0.0;  // unit-normal offset from the tangent plane at (wx*, 0)
};

// Geometry of the on-manifold reduction (it only involves sxx and gx): the
// ellipsoid cylinder E, its interior E-, the tangent hyperplane H at (wx*, 0)
// and the half-spaces U- (origin side) / U+. Boundaries resolve within 1e-10.
RegionLabel classify_region(const FlowSystem& sys, const Vec& w);

struct MonotonicityCheck {
  bool wx_monotone = false;     // |wx|^2 monotone in the direction the start region implies
  bool ratio_monotone = false;  // same for |wx|^2 / |wy|^2
};

// Per-step check over the accepted states of a trajectory, slack 1e-9 per step.
// U+ starts expect nonincreasing, E- starts nondecreasing; anything else passes
// with either direction.
MonotonicityCheck monotonicity_check(const FlowSystem& sys, const OdeSolution& sol);

struct DepthEffectCheck {
  Region start_region = Region::OnE;
  bool assumption_ok = false;   // the trajectory never touched E (sign of V held)
  bool applicable_upper = false;  // started in U+
  bool applicable_inner = false;  // started in E-
  bool holds_upper = false;     // two-sided inequality for U+ starts
  bool holds_inner = false;     // two-sided inequality for E- starts
  bool holds_apriori = false;   // closed-form cap on |wy(T)|^2 for U+ starts
  double h_of_depth = 0.0;      // the depth-dependent coefficient in the cap
  double h_term = 0.0;          // h * (|wx(0)|^2 - |wx*|^2)
  double wx0_sq = 0.0, wy0_sq = 0.0, wxT_sq = 0.0, wyT_sq = 0.0;
};

// Integrates the sigma = 0 flow from w0 and evaluates the depth-effect
// inequalities at the final state, with -1e-8 slack for roundoff.
DepthEffectCheck depth_effect_check(const FlowSystem& sys, const Vec& w0, double t_end);

struct TrappingResult {
  bool ok = false;
  bool applicable = false;  // start was inside E-
  double radius = 0.0;      // (2 sqrt(3)/c) |wx*| |c I - sxx|
};

// For isotropic X (covariance c I): a trajectory started in E- must stay in
// closure(E-) until wx comes within the sampling-error radius of wx*.
TrappingResult trapping_check(const EmbeddingSpec& spec, const TargetFunction& target, int n,
                              const Vec& w0, double t_end, int depth, std::uint64_t seed,
                              XDist x_dist = XDist::Uniform);

// columns t, w_1..w_d, region_label, ellipsoid_value, hyperplane_value
void export_trajectory_csv(const FlowSystem& sys, const OdeSolution& sol, std::ostream& out);

struct PortraitSegment {
  Vec start;
  std::vector<double> ts;
  std::vector<Vec> states;
  double field_norm = 0.0;  // |F| at the grid point
};

// Short integrations from a grid on the wx-wy plane (dim() must be 2).
std::vector<PortraitSegment> phase_portrait(const FlowSystem& sys, double x_lo, double x_hi,
                                            double y_lo, double y_hi, int nx, int ny,
                                            double t_short);

}  // namespace embedflow
