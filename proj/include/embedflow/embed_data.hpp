#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <numbers>
#include <optional>
#include <string>

#include "embedflow/matrix.hpp"

namespace embedflow {

// Orthogonal chart for data living on a dx-dimensional subspace of R^(dx+dy):
// an ambient sample is q * (x ; sigma*y), so sigma scales only the normal part.
struct EmbeddingSpec {
  int dx = 0;
  int dy = 0;
  double sigma = 0.0;
  Matrix q;  // (dx+dy) x (dx+dy), orthogonal

  int dim() const { return dx + dy; }
  void validate() const;

  static EmbeddingSpec identity(int dx, int dy, double sigma);
  static EmbeddingSpec random_rotation(int dx, int dy, double sigma, std::uint64_t seed);
};

// g(x) = mu.x + sum_j amp[j] * sin(freq * x[j])
struct TargetFunction {
  Vec mu;
  Vec amp;
  double freq = std::numbers::pi;

  double operator()(const Vec& x) const;
  // sum |amp[j]|, so |g(x) - mu.x| <= delta() everywhere
  double delta() const;
};

// Parses the family above from text: numbers, pi, x or x<k>, sin(...), + - *,
// parentheses and implicit multiplication. Anything outside the family (products
// of non-constants, constant offsets, mixed sine frequencies) is rejected.
// dx_hint pads the coefficient vectors up to a known input dimension.
TargetFunction parse_target(const std::string& text, int dx_hint = 0);

enum class XDist { Uniform, Normal };
enum class YDist { Normal, Uniform };

std::string to_string(XDist d);
std::string to_string(YDist d);
XDist x_dist_from_string(const std::string& s);
YDist y_dist_from_string(const std::string& s);

struct EmbeddedDataset {
  EmbeddingSpec spec;
  Matrix xs;   // n x dx, intrinsic coordinates
  Matrix ys;   // n x dy, normal coordinates before sigma scaling
  Vec labels;  // g at the intrinsic coordinates (pre-noise ones, see below)
  TargetFunction target;
  std::uint64_t seed = 0;
  XDist x_dist = XDist::Uniform;
  YDist y_dist = YDist::Normal;
  // smallest singular value of <xx^T> exceeds 1e-10 of the largest
  bool rank_ok = false;

  // set by add_ambient_noise: labels stay attached to the pre-noise coordinates
  std::optional<Matrix> xs_original;
  std::optional<double> noise_sigma_x;
  std::optional<double> noise_sigma_y;
  std::optional<std::uint64_t> noise_seed;

  int n() const { return xs.rows(); }
  Vec x_row(int i) const;
  Vec y_row(int i) const;
  // q * (x_i ; sigma*y_i)
  Vec ambient(int i) const;
};

EmbeddedDataset sample_dataset(const EmbeddingSpec& spec, const TargetFunction& target, int n,
                               XDist x_dist, std::uint64_t seed, YDist y_dist = YDist::Normal);

struct EmpiricalMoments {
  Matrix sxx;  // <x x^T>
  Matrix sxy;  // <x y^T>
  Matrix syy;  // <y y^T>
  Vec gx;      // <g x>
  Vec gy;      // <g y>
  double g2 = 0.0;
  int n = 0;
};

EmpiricalMoments compute_moments(const EmbeddedDataset& ds);

// Quadratic data of the ambient least-squares problem at noise level sigma:
// J(w) = 0.5 w^T a w - rhs.w + 0.5 g2, with a the sigma-conjugated moment matrix.
struct ASigma {
  Matrix a;
  Vec rhs;
};

ASigma assemble_A_sigma(const EmpiricalMoments& m, double sigma);

// Perturbs intrinsic coordinates by sigma_x * eps and redraws the normal part at
// scale sigma_y, keeping the labels of the original points. The single-sigma
// overload uses the same scale for both.
EmbeddedDataset add_ambient_noise(const EmbeddedDataset& ds, double sigma_x, double sigma_y,
                                  std::uint64_t seed);
EmbeddedDataset add_ambient_noise(const EmbeddedDataset& ds, double sigma, std::uint64_t seed);

// Evaluates a model of the ambient point at the projection q * (x ; 0).
double evaluate_on_manifold(const std::function<double(const Vec&)>& model, const Vec& x,
                            const EmbeddingSpec& spec);

// Serialization keeps the recipe (spec, target, seed, dists, noise record), not
// the samples; deserializing regenerates them bit-for-bit.
std::string dataset_to_json(const EmbeddedDataset& ds);
EmbeddedDataset dataset_from_json(const std::string& text);

// columns x_1..x_dx, y_1..y_dy, g
void export_csv(const EmbeddedDataset& ds, std::ostream& out);

}  // namespace embedflow
