#include "embedflow/stats.hpp"

#include <cmath>
#include <stdexcept>

namespace embedflow {

Matrix finite_diff_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& w, double h) {
  int n = static_cast<int>(w.size());
  Vec wp = w, wm = w;
  Matrix j;
  for (int c = 0; c < n; ++c) {
    double step = h > 0.0 ? h : 1e-6 * std::max(1.0, std::fabs(w[c]));
    wp[c] = w[c] + step;
    wm[c] = w[c] - step;
    Vec fp = f(wp);
    Vec fm = f(wm);
    if (c == 0) j = Matrix(static_cast<int>(fp.size()), n);
    for (int r = 0; r < j.rows(); ++r) j(r, c) = (fp[r] - fm[r]) / (2.0 * step);
    wp[c] = w[c];
    wm[c] = w[c];
  }
  return j;
}

McResult mc_integrate(const std::function<double(const Vec&)>& f, McDomain domain, int dim,
                      double gamma, long m, Rng rng) {
  if (m <= 1) throw std::invalid_argument("mc_integrate: need at least 2 samples");
  if (dim <= 0) throw std::invalid_argument("mc_integrate: dimension must be positive");
  Vec x(dim);
  double sum = 0.0, sum_sq = 0.0;
  for (long i = 0; i < m; ++i) {
    for (int d = 0; d < dim; ++d)
      x[d] = domain == McDomain::hypercube ? rng.uniform(-1.0, 1.0) : gamma * rng.normal();
    double v = f(x);
    sum += v;
    sum_sq += v * v;
  }
  double mean = sum / static_cast<double>(m);
  double var = (sum_sq - static_cast<double>(m) * mean * mean) / static_cast<double>(m - 1);
  return {mean, std::sqrt(std::max(var, 0.0) / static_cast<double>(m))};
}

LogLogFit fit_loglog(const Vec& xs, const Vec& ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw std::invalid_argument("fit_loglog: need matching lists with >= 2 points");
  std::size_t n = xs.size();
  Vec lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(xs[i] > 0.0) || !(ys[i] > 0.0))
      throw std::invalid_argument("fit_loglog: inputs must be positive");
    lx[i] = std::log2(xs[i]);
    ly[i] = std::log2(ys[i]);
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("fit_loglog: degenerate abscissa");
  LogLogFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r_squared = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return fit;
}

}  // namespace embedflow
