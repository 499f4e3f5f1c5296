#pragma once

#include <functional>

#include "embedflow/matrix.hpp"
#include "embedflow/rng.hpp"

namespace embedflow {

// Central differences, step h scaled by max(1, |w_i|) per coordinate when h <= 0.
Matrix finite_diff_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& w,
                            double h = 0.0);

struct McResult {
  double estimate = 0.0;
  double std_error = 0.0;
};

enum class McDomain { hypercube, gaussian };

// Mean of f under U([-1,1]^dim) or N(0, gamma^2 I_dim), with the standard error
// of the mean. Draws come from the provided stream, so shards recombine
// deterministically.
McResult mc_integrate(const std::function<double(const Vec&)>& f, McDomain domain, int dim,
                      double gamma, long m, Rng rng);

struct LogLogFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

// Ordinary least squares on (log2 x, log2 y). All inputs must be positive.
LogLogFit fit_loglog(const Vec& xs, const Vec& ys);

}  // namespace embedflow
