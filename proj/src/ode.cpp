#include "embedflow/ode.hpp"

#include <algorithm>
#include <cmath>

#include "embedflow/linalg.hpp"

namespace embedflow {
namespace {

// Dormand-Prince 5(4) tableau
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
// fifth-order minus embedded fourth-order weights
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

double error_norm(const Vec& y0, const Vec& y1, const Vec& err, double rel, double abs) {
  double s = 0.0;
  for (std::size_t i = 0; i < err.size(); ++i) {
    double sc = abs + rel * std::max(std::fabs(y0[i]), std::fabs(y1[i]));
    double e = err[i] / sc;
    s += e * e;
  }
  return std::sqrt(s / static_cast<double>(err.size()));
}

double initial_step_guess(const OdeField& f, const Vec& y0, const Vec& f0, double t_end,
                          double rel, double abs) {
  double dn = 0.0, yn = 0.0;
  for (std::size_t i = 0; i < y0.size(); ++i) {
    double sc = abs + rel * std::fabs(y0[i]);
    double d = f0[i] / sc;
    dn += d * d;
    double y = y0[i] / sc;
    yn += y * y;
  }
  double h0 = (dn <= 1e-30 || yn <= 1e-30) ? 1e-6 : 0.01 * std::sqrt(yn / dn);
  h0 = std::min(h0, 0.1 * t_end);
  // one Euler probe to bound the second derivative
  Vec y1 = y0;
  axpy(h0, f0, y1);
  Vec f1 = f(y1);
  double d2 = 0.0;
  for (std::size_t i = 0; i < y0.size(); ++i) {
    double sc = abs + rel * std::fabs(y0[i]);
    double d = (f1[i] - f0[i]) / sc;
    d2 += d * d;
  }
  d2 = std::sqrt(d2) / h0;
  double h1 = d2 > 1e-15 ? std::pow(0.01 / d2, 0.2) : std::max(1e-6, h0 * 1e-3);
  return std::min({100 * h0, h1, t_end});
}

}  // namespace

Vec hermite_interp(double t0, const Vec& y0, const Vec& f0, double t1, const Vec& y1,
                   const Vec& f1, double t) {
  double h = t1 - t0;
  double s = (t - t0) / h;
  double h00 = (1 + 2 * s) * (1 - s) * (1 - s);
  double h10 = s * (1 - s) * (1 - s);
  double h01 = s * s * (3 - 2 * s);
  double h11 = s * s * (s - 1);
  Vec y(y0.size());
  for (std::size_t i = 0; i < y.size(); ++i)
    y[i] = h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i];
  return y;
}

OdeSolution integrate_ode(const OdeField& f, const Vec& w0, double t_end, const OdeOptions& opts,
                          const std::vector<OdePredicate>& events) {
  if (t_end < 0.0) throw std::invalid_argument("integrate_ode: negative horizon");
  if (w0.empty()) throw std::invalid_argument("integrate_ode: empty state");
  if (!all_finite(w0)) throw std::invalid_argument("integrate_ode: non-finite initial state");

  OdeSolution sol;
  sol.times.push_back(0.0);
  sol.states.push_back(w0);

  for (std::size_t e = 0; e < events.size(); ++e) {
    if (events[e](0.0, w0)) {
      sol.status = OdeStatus::event_stopped;
      sol.event_index = static_cast<int>(e);
      sol.event_time = 0.0;
      return sol;
    }
  }
  if (t_end == 0.0) return sol;

  double t = 0.0;
  Vec y = w0;
  Vec k1 = f(y);
  double h = opts.initial_step > 0.0 ? opts.initial_step
                                     : initial_step_guess(f, y, k1, t_end, opts.rel_tol,
                                                          opts.abs_tol);
  if (opts.max_step > 0.0) h = std::min(h, opts.max_step);

  const std::size_t n = y.size();
  Vec k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ytmp(n), ynew(n), errv(n);

  while (t < t_end) {
    if (sol.step_count >= opts.max_steps) {
      sol.status = OdeStatus::max_steps;
      return sol;
    }
    h = std::min(h, t_end - t);
    if (h < 1e-14 * std::max(1.0, std::fabs(t)))
      throw StiffnessError("integrate_ode: step size underflow");

    for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + h * a21 * k1[i];
    k2 = f(ytmp);
    for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + h * (a31 * k1[i] + a32 * k2[i]);
    k3 = f(ytmp);
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
    k4 = f(ytmp);
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
    k5 = f(ytmp);
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
    k6 = f(ytmp);
    for (std::size_t i = 0; i < n; ++i)
      ynew[i] = y[i] + h * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] + b6 * k6[i]);
    k7 = f(ynew);
    for (std::size_t i = 0; i < n; ++i)
      errv[i] = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);

    double err = error_norm(y, ynew, errv, opts.rel_tol, opts.abs_tol);
    if (!std::isfinite(err)) {
      h *= 0.25;
      continue;
    }
    if (err <= 1.0) {
      double t_new = t + h;
      bool fired = false;
      std::size_t which = 0;
      for (std::size_t e = 0; e < events.size(); ++e) {
        if (events[e](t_new, ynew)) {
          fired = true;
          which = e;
          break;
        }
      }
      if (fired) {
        // bisect the switch point on the Hermite interpolant
        double lo = t, hi = t_new;
        while (hi - lo > 1e-10) {
          double mid = 0.5 * (lo + hi);
          Vec ymid = hermite_interp(t, y, k1, t_new, ynew, k7, mid);
          if (events[which](mid, ymid))
            hi = mid;
          else
            lo = mid;
        }
        Vec yev = hermite_interp(t, y, k1, t_new, ynew, k7, hi);
        ++sol.step_count;
        sol.times.push_back(hi);
        sol.states.push_back(yev);
        sol.status = OdeStatus::event_stopped;
        sol.event_index = static_cast<int>(which);
        sol.event_time = hi;
        return sol;
      }
      t = t_new;
      y = ynew;
      k1 = k7;  // first-same-as-last
      ++sol.step_count;
      sol.times.push_back(t);
      sol.states.push_back(y);
      double grow = err <= 1e-30 ? 5.0 : 0.9 * std::pow(err, -0.2);
      h *= std::clamp(grow, 0.2, 5.0);
    } else {
      h *= std::max(0.2, 0.9 * std::pow(err, -0.2));
    }
    if (opts.max_step > 0.0) h = std::min(h, opts.max_step);
  }
  sol.status = OdeStatus::completed;
  return sol;
}

}  // namespace embedflow
