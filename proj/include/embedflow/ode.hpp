#pragma once

#include <functional>
#include <vector>

#include "embedflow/matrix.hpp"

namespace embedflow {

using OdeField = std::function<Vec(const Vec&)>;
// Event fires when the predicate first becomes true along the trajectory.
using OdePredicate = std::function<bool(double, const Vec&)>;

struct OdeOptions {
  double rel_tol = 1e-8;
  double abs_tol = 1e-10;
  // 0 means "choose automatically"
  double initial_step = 0.0;
  double max_step = 0.0;
  long max_steps = 10'000'000;
};

enum class OdeStatus { completed, event_stopped, max_steps };

struct OdeSolution {
  std::vector<double> times;
  std::vector<Vec> states;
  long step_count = 0;
  OdeStatus status = OdeStatus::completed;
  int event_index = -1;
  double event_time = 0.0;

  const Vec& final_state() const { return states.back(); }
  double final_time() const { return times.back(); }
};

// Embedded Dormand-Prince 4(5) pair with PI step control. States are recorded
// at every accepted step. Event boundaries are refined by bisection on a cubic
// Hermite interpolant to 1e-10 (absolute, in t). Throws StiffnessError when the
// step size underflows.
OdeSolution integrate_ode(const OdeField& f, const Vec& w0, double t_end,
                          const OdeOptions& opts = {},
                          const std::vector<OdePredicate>& events = {});

// Cubic Hermite interpolation on one accepted step; used for event refinement
// and first-passage post-processing.
Vec hermite_interp(double t0, const Vec& y0, const Vec& f0, double t1, const Vec& y1,
                   const Vec& f1, double t);

}  // namespace embedflow
