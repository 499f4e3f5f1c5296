#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "embedflow/embed_data.hpp"
#include "embedflow/matrix.hpp"
#include "embedflow/optimizer.hpp"
#include "embedflow/rng.hpp"

namespace embedflow {

// Scalar-output ReLU MLP on ambient inputs. weights[l] maps width n_l to
// n_{l+1} with n_0 = input dim and n_depth = 1; every layer but the last is
// followed by the rectifier. The first layer's columns are split: columns
// [0, split) read the tangential input block, the rest read the normal block.
struct ReluParams {
  std::vector<Matrix> weights;
  std::vector<Vec> biases;
  int split = 0;

  int depth() const { return static_cast<int>(weights.size()); }
  int input_dim() const { return weights.empty() ? 0 : weights.front().cols(); }
  int normal_dim() const { return input_dim() - split; }
  std::vector<int> widths() const;
  void validate() const;
};

// First-layer normal-block fill; every other entry is He-initialized.
enum class NormalInit {
  Constant,  // every entry equal to scale
  Gaussian,  // i.i.d. N(0, scale^2)
};

ReluParams init_relu(int input_dim, int split, const std::vector<int>& hidden, NormalInit scheme,
                     double scale, Rng& rng);

struct ReluForward {
  std::vector<Vec> pre;   // affine output of every layer
  std::vector<Vec> post;  // rectified output of every hidden layer
  double output = 0.0;
};

ReluForward forward(const ReluParams& p, const Vec& input);
double forward_value(const ReluParams& p, const Vec& input);

struct ReluGradients {
  std::vector<Matrix> dw;
  std::vector<Vec> db;
};

// 1/(2N) sum (f(x_i) - g_i)^2 over the batch (all rows when batch is null),
// and its reverse-mode gradient. The rectifier's subgradient at 0 is taken
// to be 0, so inputs whose normal block is exactly zero produce an exactly
// zero gradient block for the normal columns of the first layer.
double relu_loss(const ReluParams& p, const std::vector<Vec>& inputs, const Vec& labels,
                 const std::vector<int>* batch = nullptr);
ReluGradients relu_gradients(const ReluParams& p, const std::vector<Vec>& inputs,
                             const Vec& labels, const std::vector<int>* batch = nullptr);

struct ReluHistoryRow {
  int epoch = 0;
  double loss = 0.0;
  double w1y_norm = 0.0;  // Frobenius norm of the first layer's normal block
};

struct ReluTrainResult {
  ReluParams params;
  std::vector<ReluHistoryRow> history;
};

// Gradient descent on weights and biases; weight decay couples into both.
// Throws DivergenceError once the loss passes 1e12.
ReluTrainResult train_relu(const EmbeddedDataset& ds, ReluParams params,
                           const OptimizerConfig& cfg);

void export_relu_history_csv(const std::vector<ReluHistoryRow>& rows, std::ostream& out);

struct StabilityEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  int samples = 0;
};

// Mean of (f(x,y) - f(x,0))^2 over x ~ U[-1,1]^split, y ~ N(0, gamma^2 I).
// Samples are sharded into fixed substreams and reduced in shard order, so
// the value is identical for every thread count.
StabilityEstimate stability_metric(const ReluParams& p, double gamma, int m, std::uint64_t seed,
                                   int threads = 1);

struct NeuronTerm {
  int i = 0;  // second-layer row
  int j = 0;  // first-layer row
  double quad = 0.0;
  double cubic = 0.0;
  bool degenerate = false;  // first-layer row with no tangential component
};

struct StabilityReport {
  double mc_estimate = 0.0;   // squared L2(Omega_x) deviation at the fixed y
  double mc_std_error = 0.0;
  double bound_shallow = 0.0;  // two-layer bound; 0 when depth > 2
  double bound_deep = 0.0;     // layer-recursion bound, any depth
  double spectral_product = 1.0;  // product of squared operator norms above layer 2
  std::vector<NeuronTerm> per_neuron_terms;
  double c_dx = 0.0;  // largest cross-section of the tangential cube
  bool recursion_ok = false;
  bool has_degenerate_rows = false;
};

// A-posteriori deviation bounds at a fixed normal offset y, next to a Monte
// Carlo measurement of the true deviation (m = 1e5 tangential draws). The
// shallow form requires depth 2; the deep form covers any depth and equals
// the shallow one there.
StabilityReport shallow_bound(const ReluParams& p, const Vec& y, std::uint64_t seed);
StabilityReport deep_bound(const ReluParams& p, const Vec& y, std::uint64_t seed);

struct CorollaryDetail {
  double leading = 0.0;
  double d_of_y = 0.0;           // the parameter sup D(y)
  double correction_unit = 0.0;  // spectral product * sqrt(n2 n1 dy) * D(y)
  double d_tilde_fit = 0.0;      // deviation constant implied by the exact bound
};

// Leading term of the high-probability form of the deep bound, valid when the
// first layer's normal block was drawn i.i.d. N(0, nu^2).
double corollary_bound(const ReluParams& p, const Vec& y, double nu,
                       CorollaryDetail* detail = nullptr);

std::string relu_params_to_json(const ReluParams& p);
ReluParams relu_params_from_json(const std::string& text);
std::string stability_report_to_json(const StabilityReport& r);

}  // namespace embedflow
