#include "embedflow/lnn_flow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <utility>

#include "embedflow/linalg.hpp"
#include "embedflow/rng.hpp"

namespace embedflow {
namespace {

double wx_sq_of(const Vec& w, int dx) {
  double s = 0.0;
  for (int i = 0; i < dx; ++i) s += w[i] * w[i];
  return s;
}

double wy_sq_of(const Vec& w, int dx) {
  double s = 0.0;
  for (std::size_t i = static_cast<std::size_t>(dx); i < w.size(); ++i) s += w[i] * w[i];
  return s;
}

void require_dim(const FlowSystem& sys, const Vec& w, const char* who) {
  if (static_cast<int>(w.size()) != sys.dim())
    throw std::invalid_argument(std::string(who) + ": state has the wrong dimension");
}

// shared precondition for the closed-form linearization
void require_stationary(const FlowSystem& sys, const Vec& w_star, const char* who) {
  const double scale =
      std::max(norm2(sys.rhs()) + max_abs(sys.quadratic()) * norm2(w_star), 1e-300);
  if (norm2(sys.grad(w_star)) > 1e-8 * scale)
    throw std::invalid_argument(std::string(who) +
                                ": the closed form only holds where the loss gradient vanishes");
}

Vec solve_wx_star(const EmpiricalMoments& m) { return solve_linear(m.sxx, m.gx); }

}  // namespace

FlowSystem::FlowSystem(EmpiricalMoments moments, double sigma, int depth)
    : moments_(std::move(moments)), sigma_(sigma), depth_(depth) {
  if (depth_ < 2) throw std::invalid_argument("FlowSystem: depth must be at least 2");
  if (!std::isfinite(sigma_) || sigma_ < 0.0)
    throw std::invalid_argument("FlowSystem: sigma must be finite and nonnegative");
  const int dx = moments_.sxx.rows();
  const int dy = moments_.syy.rows();
  if (moments_.sxx.cols() != dx || moments_.syy.cols() != dy || moments_.sxy.rows() != dx ||
      moments_.sxy.cols() != dy || static_cast<int>(moments_.gx.size()) != dx ||
      static_cast<int>(moments_.gy.size()) != dy)
    throw std::invalid_argument("FlowSystem: inconsistent moment shapes");
  sys_ = assemble_A_sigma(moments_, sigma_);
}

Vec FlowSystem::grad(const Vec& w) const {
  require_dim(*this, w, "FlowSystem::grad");
  return vec_sub(matvec(sys_.a, w), sys_.rhs);
}

Vec vector_field(const FlowSystem& sys, const Vec& w) {
  require_dim(sys, w, "vector_field");
  const double s2 = norm2_sq(w);
  if (s2 == 0.0) return Vec(w.size(), 0.0);
  // -|w|^(2-2/L) (g + (L-1)(what.g) what), with the radial part written through
  // w/|w| so nothing blows up as |w| -> 0
  const double l = sys.depth();
  const double coef = std::pow(s2, (1.0 - 1.0 / l));  // |w|^(2-2/L)
  Vec g = sys.grad(w);
  const double proj = (l - 1.0) * dot(w, g) / s2;
  Vec f(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) f[i] = -coef * (g[i] + proj * w[i]);
  return f;
}

Matrix jacobian_F_at_stationary(const FlowSystem& sys, const Vec& w_star) {
  require_dim(sys, w_star, "jacobian_F_at_stationary");
  require_stationary(sys, w_star, "jacobian_F_at_stationary");
  const double s2 = norm2_sq(w_star);
  if (s2 == 0.0)
    throw std::invalid_argument(
        "jacobian_F_at_stationary: the origin needs a finite-difference treatment");
  const double l = sys.depth();
  Vec aw = matvec(sys.quadratic(), w_star);
  Matrix b = (s2 * sys.quadratic()) + ((l - 1.0) * outer(w_star, aw));
  return -std::pow(s2, -1.0 / l) * b;
}

EigenGapScan eigen_gap_scan(const EmbeddingSpec& spec, const TargetFunction& target, int depth,
                            const std::vector<double>& sigmas, int n,
                            const std::vector<std::uint64_t>& seeds, XDist x_dist) {
  if (sigmas.empty() || seeds.empty())
    throw std::invalid_argument("eigen_gap_scan: empty sigma or seed axis");
  double sig_min = std::numeric_limits<double>::infinity();
  for (double s : sigmas) {
    if (!std::isfinite(s) || s < 0.0)
      throw std::invalid_argument("eigen_gap_scan: sigma must be finite and nonnegative");
    if (s > 0.0) sig_min = std::min(sig_min, s);
  }
  if (std::isfinite(sig_min) && static_cast<double>(n) < 100.0 / (sig_min * sig_min))
    throw std::invalid_argument(
        "eigen_gap_scan: sample too small to resolve the sigma^2 eigenvalue scale "
        "(need n >= 100/sigma^2)");

  EigenGapScan out;
  std::vector<double> fit_sigmas;
  std::vector<double> fit_means;
  for (std::size_t si = 0; si < sigmas.size(); ++si) {
    const double sigma = sigmas[si];
    double acc = 0.0;
    for (std::uint64_t seed : seeds) {
      const std::uint64_t cell_seed =
          Rng(seed).substream("eigen_cell").substream(static_cast<std::uint64_t>(si)).next_u64();
      EmbeddingSpec espec = spec;
      espec.sigma = sigma;
      EmbeddedDataset ds = sample_dataset(espec, target, n, x_dist, cell_seed);
      EmpiricalMoments m = compute_moments(ds);
      FlowSystem fs(m, sigma, depth);
      Vec w;
      if (sigma == 0.0) {
        Vec wxs = solve_wx_star(m);
        w.assign(static_cast<std::size_t>(fs.dim()), 0.0);
        std::copy(wxs.begin(), wxs.end(), w.begin());
      } else {
        w = stationary_point(m, sigma).w.concat();
      }
      Matrix jac = jacobian_F_at_stationary(fs, w);
      auto eigs = eig_small(jac);
      double lo = std::numeric_limits<double>::infinity();
      double hi = 0.0;
      for (const auto& ev : eigs) {
        const double a = std::abs(ev);
        lo = std::min(lo, a);
        hi = std::max(hi, a);
      }
      int zeros = 0;
      for (const auto& ev : eigs)
        if (std::abs(ev) <= 1e-9 * hi) ++zeros;
      out.rows.push_back({sigma, seed, lo, zeros});
      acc += lo;
    }
    if (sigma > 0.0) {
      fit_sigmas.push_back(sigma);
      fit_means.push_back(acc / static_cast<double>(seeds.size()));
    }
  }
  if (fit_sigmas.size() >= 2) out.fit = fit_loglog(fit_sigmas, fit_means);
  return out;
}

GershgorinBlocks gershgorin_blocks(const FlowSystem& sys, const Vec& w_star) {
  if (sys.sigma() <= 0.0)
    throw std::invalid_argument("gershgorin_blocks: the block partition needs positive sigma");
  require_dim(sys, w_star, "gershgorin_blocks");
  require_stationary(sys, w_star, "gershgorin_blocks");
  const int dx = sys.dx();
  const int dy = sys.dy();
  const double s2 = norm2_sq(w_star);
  const double l = sys.depth();
  const double sigma = sys.sigma();
  const EmpiricalMoments& m = sys.moments();
  Vec wx(w_star.begin(), w_star.begin() + dx);
  Vec wy(w_star.begin() + dx, w_star.end());

  GershgorinBlocks out;
  out.f11 = (s2 * m.sxx) + ((l - 1.0) * outer(wx, m.gx));
  out.f12 = sigma * ((s2 * m.sxy) + ((l - 1.0) * outer(wx, m.gy)));
  out.f21 = ((l - 1.0) * outer(wy, m.gx)) + ((sigma * s2) * transpose(m.sxy));
  out.f22 = ((s2 * sigma * sigma) * m.syy) + ((sigma * (l - 1.0)) * outer(wy, m.gy));
  out.norm_f12 = spectral_norm(out.f12);
  out.norm_f21 = spectral_norm(out.f21);

  const int d = dx + dy;
  Matrix b(d, d);
  for (int i = 0; i < dx; ++i) {
    for (int j = 0; j < dx; ++j) b(i, j) = out.f11(i, j);
    for (int j = 0; j < dy; ++j) b(i, dx + j) = out.f12(i, j);
  }
  for (int i = 0; i < dy; ++i) {
    for (int j = 0; j < dx; ++j) b(dx + i, j) = out.f21(i, j);
    for (int j = 0; j < dy; ++j) b(dx + i, dx + j) = out.f22(i, j);
  }
  out.block_eigs = eig_small(b);
  const auto eig11 = eig_small(out.f11);
  const auto eig22 = eig_small(out.f22);

  auto member = [](const std::vector<std::complex<double>>& diag_eigs, const Matrix& diag,
                   std::complex<double> lam, double coupling) {
    for (const auto& mu : diag_eigs)
      if (std::abs(lam - mu) <= 1e-8) return true;
    return smallest_singular_shifted(diag, lam) <= coupling + 1e-10;
  };

  out.eigen_membership = true;
  for (const auto& lam : out.block_eigs) {
    const bool g1 = member(eig11, out.f11, lam, out.norm_f21);
    const bool g2 = member(eig22, out.f22, lam, out.norm_f12);
    out.in_g1.push_back(g1);
    out.in_g2.push_back(g2);
    if (!g1 && !g2) out.eigen_membership = false;
  }
  return out;
}

OdeSolution simulate(const FlowSystem& sys, const Vec& w0, double t_end, const OdeOptions& opts,
                     const std::vector<OdePredicate>& events) {
  require_dim(sys, w0, "simulate");
  Vec start = w0;
  if (norm2(start) == 0.0) {
    std::fprintf(stderr,
                 "simulate: start is the equilibrium at the origin; "
                 "nudging the first coordinate by 1e-12\n");
    start[0] = 1e-12;
  }
  OdeField f = [&sys](const Vec& w) { return vector_field(sys, w); };
  try {
    return integrate_ode(f, start, t_end, opts, events);
  } catch (const StiffnessError& e) {
    if (sys.depth() == 2)
      throw StiffnessError(std::string(e.what()) +
                           " (the depth-2 field is not differentiable at the origin; "
                           "trajectories brushing w = 0 stall the step controller)");
    throw;
  }
}

TimingResult hit_times(const FlowSystem& sys, const Vec& w0, const Vec& w_star, double tol,
                       double t_budget) {
  if (sys.sigma() <= 0.0)
    throw std::invalid_argument("hit_times: needs the isolated critical point of positive sigma");
  require_dim(sys, w0, "hit_times");
  require_dim(sys, w_star, "hit_times");
  if (!(tol > 0.0)) throw std::invalid_argument("hit_times: tolerance must be positive");
  const int d = sys.dim();

  TimingResult res;
  res.hit_times.assign(static_cast<std::size_t>(d), -1.0);
  res.hit_reached.assign(static_cast<std::size_t>(d), false);
  const double sig2 = sys.sigma() * sys.sigma();
  res.budget = t_budget > 0.0 ? t_budget : std::min(1e7, std::max(1e4, 100.0 / sig2));
  try {
    auto eigs = eig_small(jacobian_F_at_stationary(sys, w_star));
    double lo = std::numeric_limits<double>::infinity();
    for (const auto& ev : eigs) lo = std::min(lo, std::abs(ev));
    res.eigen_min_abs = lo;
  } catch (const std::exception&) {
    res.eigen_min_abs = 0.0;
  }

  // the step cap keeps iteration counts comparable across sigma
  OdeOptions opts;
  opts.initial_step = 5e-3;
  opts.max_step = 5e-3;
  opts.max_steps = static_cast<long>(res.budget / 5e-3) + 1'000'000;

  OdeField f = [&sys](const Vec& w) { return vector_field(sys, w); };
  std::vector<int> remaining(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) remaining[static_cast<std::size_t>(i)] = i;

  // restart at every first passage so each coordinate gets its own event
  double t_base = 0.0;
  Vec w = w0;
  while (!remaining.empty() && t_base < res.budget) {
    std::vector<OdePredicate> events;
    events.reserve(remaining.size());
    for (int idx : remaining)
      events.push_back([idx, tol, &w_star](double, const Vec& x) {
        return std::abs(x[static_cast<std::size_t>(idx)] -
                        w_star[static_cast<std::size_t>(idx)]) <= tol;
      });
    OdeSolution sol = integrate_ode(f, w, res.budget - t_base, opts, events);
    if (sol.status != OdeStatus::event_stopped) break;
    const int coord = remaining[static_cast<std::size_t>(sol.event_index)];
    res.hit_times[static_cast<std::size_t>(coord)] = t_base + sol.event_time;
    res.hit_reached[static_cast<std::size_t>(coord)] = true;
    t_base += sol.event_time;
    w = sol.final_state();
    remaining.erase(remaining.begin() + sol.event_index);
  }
  return res;
}

TimingResult escape_time(const FlowSystem& sys, double epsilon, const Vec& direction,
                         double t_budget) {
  if (!(epsilon > 0.0) || epsilon > 0.1)
    throw std::invalid_argument("escape_time: epsilon must lie in (0, 0.1]");
  require_dim(sys, direction, "escape_time");
  const double nrm = norm2(direction);
  if (nrm == 0.0) throw std::invalid_argument("escape_time: direction must be nonzero");
  if (!(t_budget > 0.0)) throw std::invalid_argument("escape_time: budget must be positive");

  Vec w0 = vec_scale(epsilon / nrm, direction);
  TimingResult res;
  res.budget = t_budget;
  // until the event, |w| <= 1.5 eps, which caps the field speed
  const double l = sys.depth();
  const double drive = spectral_norm(sys.quadratic()) * 1.5 * epsilon + norm2(sys.rhs());
  res.escape_floor = (epsilon / 2.0) / (l * std::pow(1.5 * epsilon, 2.0 - 2.0 / l) * drive);

  OdeField f = [&sys](const Vec& w) { return vector_field(sys, w); };
  std::vector<OdePredicate> events{[&w0, epsilon](double, const Vec& x) {
    return norm2(vec_sub(x, w0)) >= 0.5 * epsilon;
  }};
  OdeOptions opts;
  opts.max_steps = 20'000'000;
  OdeSolution sol = integrate_ode(f, w0, t_budget, opts, events);
  if (sol.status == OdeStatus::event_stopped) {
    res.escape_time = sol.event_time;
    res.escape_reached = true;
  }
  return res;
}

std::string region_name(Region r) {
  switch (r) {
    case Region::OnE: return "ON_E";
    case Region::InEMinus: return "IN_E_MINUS";
    case Region::OnH: return "ON_H";
    case Region::InUMinus: return "IN_U_MINUS";
    case Region::InUPlus: return "IN_U_PLUS";
    case Region::OnGamma0: return "ON_GAMMA0";
  }
  return "ON_E";
}

RegionLabel classify_region(const FlowSystem& sys, const Vec& w) {
  require_dim(sys, w, "classify_region");
  const EmpiricalMoments& m = sys.moments();
  const int dx = sys.dx();
  Vec wx(w.begin(), w.begin() + dx);

  RegionLabel lab;
  lab.ellipsoid_value = dot(wx, vec_sub(matvec(m.sxx, wx), m.gx));

  Vec wxs = solve_wx_star(m);
  Vec normal = matvec(m.sxx, wxs);
  const double nn = norm2(normal);
  Vec off = vec_sub(wx, wxs);
  lab.hyperplane_value = nn > 0.0 ? dot(normal, off) / nn : 0.0;

  const double tol = 1e-10;
  if (norm2(off) <= tol)
    lab.region = Region::OnGamma0;
  else if (std::abs(lab.ellipsoid_value) <= tol)
    lab.region = Region::OnE;
  else if (std::abs(lab.hyperplane_value) <= tol)
    lab.region = Region::OnH;
  else if (lab.ellipsoid_value < 0.0)
    lab.region = Region::InEMinus;
  else
    lab.region = lab.hyperplane_value < 0.0 ? Region::InUMinus : Region::InUPlus;
  return lab;
}

MonotonicityCheck monotonicity_check(const FlowSystem& sys, const OdeSolution& sol) {
  if (sol.states.empty()) throw std::invalid_argument("monotonicity_check: empty trajectory");
  const int dx = sys.dx();
  const Region start = classify_region(sys, sol.states.front()).region;
  const double slack = 1e-9;

  bool noninc_x = true, nondec_x = true, noninc_r = true, nondec_r = true;
  double prev_x = wx_sq_of(sol.states.front(), dx);
  double prev_r = 0.0;
  bool have_r = false;
  {
    const double wy0 = wy_sq_of(sol.states.front(), dx);
    if (wy0 > 0.0) {
      prev_r = prev_x / wy0;
      have_r = true;
    }
  }
  for (std::size_t k = 1; k < sol.states.size(); ++k) {
    const double cx = wx_sq_of(sol.states[k], dx);
    const double cy = wy_sq_of(sol.states[k], dx);
    const double dxs = cx - prev_x;
    if (dxs > slack) noninc_x = false;
    if (dxs < -slack) nondec_x = false;
    prev_x = cx;
    if (cy > 0.0) {
      const double r = cx / cy;
      if (have_r) {
        const double dr = r - prev_r;
        if (dr > slack) noninc_r = false;
        if (dr < -slack) nondec_r = false;
      }
      prev_r = r;
      have_r = true;
    } else {
      have_r = false;
    }
  }

  MonotonicityCheck out;
  if (start == Region::InUPlus) {
    out.wx_monotone = noninc_x;
    out.ratio_monotone = noninc_r;
  } else if (start == Region::InEMinus) {
    out.wx_monotone = nondec_x;
    out.ratio_monotone = nondec_r;
  } else {
    out.wx_monotone = noninc_x || nondec_x;
    out.ratio_monotone = noninc_r || nondec_r;
  }
  return out;
}

DepthEffectCheck depth_effect_check(const FlowSystem& sys, const Vec& w0, double t_end) {
  if (sys.sigma() != 0.0)
    throw std::invalid_argument(
        "depth_effect_check: these are statements about the sigma = 0 flow");
  require_dim(sys, w0, "depth_effect_check");
  const int dx = sys.dx();
  DepthEffectCheck out;
  out.wx0_sq = wx_sq_of(w0, dx);
  out.wy0_sq = wy_sq_of(w0, dx);
  if (out.wy0_sq == 0.0 || out.wx0_sq == 0.0)
    throw std::invalid_argument(
        "depth_effect_check: needs nonzero on- and off-manifold start coordinates");

  const RegionLabel start = classify_region(sys, w0);
  out.start_region = start.region;
  out.applicable_upper = start.region == Region::InUPlus;
  out.applicable_inner = start.region == Region::InEMinus;

  OdeOptions opts;
  opts.rel_tol = 1e-10;
  opts.abs_tol = 1e-12;
  OdeSolution sol = simulate(sys, w0, t_end, opts);

  // the inequalities assume the trajectory never crosses the ellipsoid shell,
  // so track the sign of the shell value along the way
  const double v0 = start.ellipsoid_value;
  bool ok = v0 != 0.0;
  if (ok)
    for (const Vec& s : sol.states)
      if (classify_region(sys, s).ellipsoid_value * v0 <= 0.0) {
        ok = false;
        break;
      }
  out.assumption_ok = ok;

  const Vec& wt = sol.final_state();
  out.wxT_sq = wx_sq_of(wt, dx);
  out.wyT_sq = wy_sq_of(wt, dx);

  const double l = sys.depth();
  const double slack = 1e-8;
  const double dxs = out.wxT_sq - out.wx0_sq;
  const double dys = out.wyT_sq - out.wy0_sq;

  const double k0 = (l - 1.0) * out.wy0_sq / (l * out.wx0_sq + out.wy0_sq);
  const bool upper = dys <= k0 * dxs + slack && k0 * dxs <= slack;

  const double kt = (l - 1.0) * out.wyT_sq / (l * out.wxT_sq + out.wyT_sq);
  const bool inner = dys >= kt * dxs - slack && kt * dxs >= -slack;

  const Vec wxs = solve_wx_star(sys.moments());
  const double wxs_sq = norm2_sq(wxs);
  out.h_of_depth = (1.0 + out.wy0_sq / out.wx0_sq) / (l * (out.wx0_sq / out.wy0_sq) + 1.0);
  out.h_term = out.h_of_depth * (out.wx0_sq - wxs_sq);
  const bool apriori = out.wyT_sq <= out.h_term + (wxs_sq / out.wx0_sq) * out.wy0_sq + slack;

  out.holds_upper = out.applicable_upper && out.assumption_ok && upper;
  out.holds_inner = out.applicable_inner && out.assumption_ok && inner;
  out.holds_apriori = out.applicable_upper && out.assumption_ok && apriori;
  return out;
}

TrappingResult trapping_check(const EmbeddingSpec& spec, const TargetFunction& target, int n,
                              const Vec& w0, double t_end, int depth, std::uint64_t seed,
                              XDist x_dist) {
  EmbeddingSpec espec = spec;
  espec.sigma = 0.0;
  EmbeddedDataset ds = sample_dataset(espec, target, n, x_dist, seed);
  EmpiricalMoments m = compute_moments(ds);
  FlowSystem sys(m, 0.0, depth);

  TrappingResult res;
  const double c = x_dist == XDist::Uniform ? 1.0 / 3.0 : 1.0;
  Matrix dev = (c * Matrix::identity(sys.dx())) - m.sxx;
  Vec wxs = solve_wx_star(m);
  res.radius = (2.0 * std::sqrt(3.0) / c) * norm2(wxs) * spectral_norm(dev);

  if (classify_region(sys, w0).region != Region::InEMinus) {
    res.ok = true;
    res.applicable = false;
    return res;
  }
  res.applicable = true;

  const int dx = sys.dx();
  std::vector<OdePredicate> events{[&wxs, dx, &res](double, const Vec& x) {
    double s = 0.0;
    for (int i = 0; i < dx; ++i) {
      const double d = x[static_cast<std::size_t>(i)] - wxs[static_cast<std::size_t>(i)];
      s += d * d;
    }
    return std::sqrt(s) <= res.radius;
  }};
  OdeSolution sol = simulate(sys, w0, t_end, {}, events);

  res.ok = true;
  for (const Vec& s : sol.states)
    if (classify_region(sys, s).ellipsoid_value > 1e-8) {
      res.ok = false;
      break;
    }
  return res;
}

void export_trajectory_csv(const FlowSystem& sys, const OdeSolution& sol, std::ostream& out) {
  const int d = sys.dim();
  out << "t";
  for (int i = 1; i <= d; ++i) out << ",w_" << i;
  out << ",region_label,ellipsoid_value,hyperplane_value\n";
  char buf[40];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf;
  };
  for (std::size_t k = 0; k < sol.states.size(); ++k) {
    put(sol.times[k]);
    for (double v : sol.states[k]) {
      out << ',';
      put(v);
    }
    const RegionLabel lab = classify_region(sys, sol.states[k]);
    out << ',' << region_name(lab.region) << ',';
    put(lab.ellipsoid_value);
    out << ',';
    put(lab.hyperplane_value);
    out << '\n';
  }
}

std::vector<PortraitSegment> phase_portrait(const FlowSystem& sys, double x_lo, double x_hi,
                                            double y_lo, double y_hi, int nx, int ny,
                                            double t_short) {
  if (sys.dim() != 2)
    throw std::invalid_argument("phase_portrait: needs a two-dimensional system");
  if (nx < 2 || ny < 2) throw std::invalid_argument("phase_portrait: grid needs >= 2 per axis");
  if (!(t_short > 0.0)) throw std::invalid_argument("phase_portrait: horizon must be positive");

  std::vector<PortraitSegment> segs;
  segs.reserve(static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny));
  for (int ix = 0; ix < nx; ++ix) {
    const double x = x_lo + (x_hi - x_lo) * ix / (nx - 1);
    for (int iy = 0; iy < ny; ++iy) {
      const double y = y_lo + (y_hi - y_lo) * iy / (ny - 1);
      PortraitSegment seg;
      seg.start = {x, y};
      seg.field_norm = norm2(vector_field(sys, seg.start));
      if (seg.field_norm == 0.0) {
        seg.ts = {0.0, t_short};
        seg.states = {seg.start, seg.start};
      } else {
        try {
          OdeSolution sol = simulate(sys, seg.start, t_short);
          seg.ts = std::move(sol.times);
          seg.states = std::move(sol.states);
        } catch (const StiffnessError&) {
          // a depth-2 arrow stalling on the origin still contributes its start
          seg.ts = {0.0};
          seg.states = {seg.start};
        }
      }
      segs.push_back(std::move(seg));
    }
  }
  return segs;
}

}  // namespace embedflow
