#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "embedflow/embed_data.hpp"
#include "embedflow/optimizer.hpp"
#include "embedflow/rng.hpp"
#include "embedflow/stats.hpp"

namespace embedflow {

// Fully linear network acting on ambient inputs: layers[0] maps the ambient
// space to the hidden width, layers[depth-1] reads out a scalar.
struct LnnParams {
  std::vector<Matrix> layers;

  int depth() const { return static_cast<int>(layers.size()); }
  int width() const { return layers.empty() ? 0 : layers.front().rows(); }
  int input_dim() const { return layers.empty() ? 0 : layers.front().cols(); }
};

// All-constant layers chosen so the end-to-end weight has the requested norm
// and every adjacent pair satisfies the balancedness identity
// (W^{l+1})^T W^{l+1} = W^l (W^l)^T.
LnnParams init_balanced_constant(int depth, int width, int input_dim, double target_norm);
// entries ~ N(0, 2/fan_in)
LnnParams init_kaiming(int depth, int width, int input_dim, Rng& rng);

// product W^L ... W^1 as a row vector, multiplied right to left
Vec end_to_end(const LnnParams& p);
// largest entry of any balancedness defect, 0 for perfectly balanced stacks
double balance_residual(const LnnParams& p);

double lnn_loss(const LnnParams& p, const std::vector<Vec>& inputs, const Vec& labels);

// Mean-squared-loss gradient of every layer over the given batch (all rows when
// batch is null), assembled from prefix/suffix products of the layer stack.
std::vector<Matrix> lnn_gradients(const LnnParams& p, const std::vector<Vec>& inputs,
                                  const Vec& labels, const std::vector<int>* batch = nullptr);

struct LnnHistoryRow {
  int epoch = 0;
  double loss = 0.0;
  double wx_err = 0.0;  // |w_x - w_x*| of the end-to-end weight
  double wy_err = 0.0;
  double w_norm = 0.0;
};

struct LnnTrainResult {
  LnnParams params;
  std::vector<LnnHistoryRow> history;
  Vec w_star;  // reference the error columns were measured against
};

// Gradient descent on the layer stack. The reference for the error columns is
// the closed-form critical point (computed from the data when not supplied).
// Throws DivergenceError once the loss passes 1e12.
LnnTrainResult train_lnn(const EmbeddedDataset& ds, LnnParams params, const OptimizerConfig& cfg,
                         const Vec* w_star = nullptr);

void export_history_csv(const std::vector<LnnHistoryRow>& rows, std::ostream& out);

std::string lnn_params_to_json(const LnnParams& p);
LnnParams lnn_params_from_json(const std::string& text);

struct LnnSweepRow {
  double sigma = 0.0;
  int n = 0;
  std::uint64_t seed = 0;
  double wy_norm = 0.0;  // trained end-to-end off-manifold norm
  double wx_err = 0.0;
};

struct LnnSweepResult {
  std::vector<LnnSweepRow> rows;
  std::optional<LogLogFit> fit_vs_sigma;  // at the largest sample size
  std::optional<LogLogFit> fit_vs_n;      // at the first sigma
};

// Trains one network per (sigma, n, repeat) cell and fits how the trained
// off-manifold weight scales. Sigmas below 2^-5 are rejected: the off-manifold
// curvature shrinks like sigma^2 and the training horizon explodes with it.
LnnSweepResult noise_sweep_lnn(const EmbeddingSpec& spec, const TargetFunction& target, int depth,
                               int width, const std::vector<double>& sigmas,
                               const std::vector<int>& ns, int repeats, std::uint64_t seed,
                               const OptimizerConfig& cfg);

void export_lnn_sweep_csv(const LnnSweepResult& table, std::ostream& out);

}  // namespace embedflow
