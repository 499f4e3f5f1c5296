#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>

#include "embedflow/embed_data.hpp"
#include "embedflow/stats.hpp"

namespace embedflow {

struct EndToEndWeight {
  Vec wx;
  Vec wy;

  int dim() const { return static_cast<int>(wx.size() + wy.size()); }
  Vec concat() const;
  static EndToEndWeight split(const Vec& w, int dx);
};

// The unique critical point of the ambient quadratic loss for sigma > 0.
// alpha = wx and beta = sigma * wy do not depend on sigma for a fixed sample.
struct StationaryPoint {
  EndToEndWeight w;
  double sigma = 0.0;
  Matrix schur_s;  // syy - syx sxx^-1 sxy
  Vec alpha_star;
  Vec beta_star;
};

// J(w) = 0.5 w^T a_sigma w - rhs.w + 0.5 <g^2>, the mean-square ambient loss.
double loss_Je(const EndToEndWeight& w, const EmpiricalMoments& m, double sigma);
// a_sigma w - rhs, exactly; the y block is an exact zero at sigma = 0
Vec grad_Je(const EndToEndWeight& w, const EmpiricalMoments& m, double sigma);
Vec grad_Je(const Vec& w, const EmpiricalMoments& m, int dx, double sigma);

StationaryPoint stationary_point(const EmpiricalMoments& m, double sigma);

struct ScalingRow {
  double sigma = 0.0;
  int n = 0;
  std::uint64_t seed = 0;
  double wy_norm = 0.0;
  double wx_err = 0.0;
};

struct ScalingTable {
  std::vector<ScalingRow> rows;
  // mean |wy*| vs sigma at the largest n; needs >= 2 sigmas and nonvanishing norms
  std::optional<LogLogFit> fit_vs_sigma;
  // mean |wy*| vs n at the first sigma in the list
  std::optional<LogLogFit> fit_vs_n;
};

ScalingTable scaling_wy(const EmbeddingSpec& spec, const TargetFunction& target,
                        const std::vector<double>& sigmas, const std::vector<int>& ns,
                        const std::vector<std::uint64_t>& seeds, XDist x_dist = XDist::Uniform);

// columns sigma, n, seed, wy_norm, wx_err
void export_scaling_csv(const ScalingTable& table, std::ostream& out);

struct PerturbedLinearCheck {
  double wx_err = 0.0;   // |wx* - mu|
  double wy_norm = 0.0;  // |wy*|
  double delta = 0.0;    // sum |amp|
  bool within_linear_bound = false;  // wx_err <= b * delta
  bool within_normal_bound = false;  // wy_norm <= c * delta / (sigma * sqrt(n))
  double b_used = 0.0;
  double c_used = 0.0;
};

// Defaults calibrated on a pilot grid with x ~ U[-1,1]^dx, y ~ N(0,I).
PerturbedLinearCheck perturbed_linear_check(const EmpiricalMoments& m, double sigma,
                                            const TargetFunction& target, double b = 2.0,
                                            double c = 25.0);

}  // namespace embedflow
