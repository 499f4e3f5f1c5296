#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "embedflow/embed_data.hpp"
#include "embedflow/optimizer.hpp"
#include "embedflow/relu_net.hpp"
#include "embedflow/stats.hpp"

namespace embedflow {

// One reproduction recipe plus its parameter grid. `grid` overrides a recipe's
// default numeric axes by name ("sigma", "n", "depth", ...); each entry of
// `seeds` is the master seed of one repeat, and grid cells derive their own
// substreams from (master seed, cell index, repeat index).
struct ExperimentConfig {
  std::string recipe;
  std::map<std::string, std::vector<double>> grid;
  std::vector<std::uint64_t> seeds = {1};
  std::string output_dir = ".";
  bool emit_svg = false;
  int threads = 1;
  std::string target_text;  // optional g override in the parse_target grammar
};

const std::vector<std::string>& recipe_names();

ExperimentConfig experiment_config_from_json(const std::string& text);
std::string experiment_config_to_json(const ExperimentConfig& cfg);

struct RecipeReport {
  std::vector<std::string> files;         // paths written, manifest last
  std::map<std::string, double> scalars;  // headline numbers (fitted slopes etc.)
};

// Runs one recipe and writes self-describing CSVs, a manifest JSON, and
// optional SVG plots into cfg.output_dir. Identical configs rewrite
// byte-identical files.
RecipeReport run_recipe(const ExperimentConfig& cfg);

// ---- scaling-exponent fit ----------------------------------------------

struct BetaInput {
  int depth = 0;
  int dy = 0;
  std::vector<double> ns;       // at least four sample sizes
  std::vector<double> metrics;  // positive deviation metrics, one per size
};

struct BetaCell {
  int depth = 0;
  int dy = 0;
  double beta = 0.0;
  double r_squared = 0.0;
};

struct BetaTable {
  std::vector<BetaCell> cells;
  // provenance of the metric grid the fit ran on
  double gamma = 0.0;
  double sigma = 0.0;
  double eta = 0.0;
  int width = 0;
  int epochs = 0;
};

// beta is minus the log-log slope of the metric against the sample size
BetaTable fit_beta(const std::vector<BetaInput>& cells);
void export_beta_csv(const BetaTable& table, std::ostream& out);

// ---- ReLU training helpers shared by recipes and tests ------------------

// Samples a dataset at the embedding's own noise level, initializes a network
// with the given hidden widths (normal block per scheme/scale), and trains it.
// The seed drives sampling, initialization, and shuffling.
ReluParams train_embedded_net(const EmbeddingSpec& spec, const TargetFunction& target, int n,
                              const std::vector<int>& hidden, NormalInit scheme, double scale,
                              const OptimizerConfig& cfg, std::uint64_t seed);

// the shared training recipe: 100-epoch minibatch SGD, batches of 50,
// cosine rate 1e-2 -> 1e-4
OptimizerConfig cosine_sgd_config();

struct ReluNoiseSetup {
  int dx = 3;
  std::vector<int> dys = {2};
  std::vector<int> depths = {2};
  int width = 30;
  std::vector<double> sigmas = {0.5};
  std::vector<int> ns = {512, 1024, 2048, 4096, 8192};
  double eta = 1.0;       // constant fill of the first layer's normal block
  double gamma = 0.25;    // offset scale of the deviation metric
  int metric_samples = 40000;
  int repeats = 3;
  OptimizerConfig optim = cosine_sgd_config();
};

struct ReluNoiseRow {
  int depth = 0;
  int dy = 0;
  double sigma = 0.0;
  int n = 0;
  std::uint64_t seed = 0;
  double metric = 0.0;
};

// Trains one network per (depth, dy, sigma, n, repeat) cell on noisy ambient
// data and measures the deviation metric on the result.
std::vector<ReluNoiseRow> relu_noise_sweep(const TargetFunction& target,
                                           const ReluNoiseSetup& setup, std::uint64_t master_seed,
                                           int threads = 1);
void export_relu_noise_csv(const std::vector<ReluNoiseRow>& rows, std::ostream& out);

// Repeat-averaged metric against n at one sigma, grouped per (depth, dy).
std::vector<BetaInput> beta_inputs_from_rows(const std::vector<ReluNoiseRow>& rows, double sigma);

// ---- accuracy/stability trade-off ---------------------------------------

struct TradeoffSetup {
  std::vector<int> hidden = {100};
  double eta = 1.0;
  double gamma = 0.5;
  int metric_samples = 5000;
  int test_n = 2000;  // held-out on-manifold sample
  int repeats = 1;
};

struct TradeoffRow {
  double sigma = 0.0;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  double train_loss = 0.0;  // loss of the trained net at the zero normal offset
  double test_loss = 0.0;   // loss on fresh on-manifold samples
  double stability = 0.0;
};

// One trained network per (sigma, weight decay, repeat) cell, reporting the
// on-manifold interpolation error, a held-out test loss, and the deviation
// metric side by side.
std::vector<TradeoffRow> tradeoff_report(const EmbeddingSpec& spec, const TargetFunction& target,
                                         const std::vector<double>& sigmas,
                                         const std::vector<double>& decays, int n,
                                         const OptimizerConfig& cfg, const TradeoffSetup& setup,
                                         std::uint64_t master_seed, int threads = 1);
void export_tradeoff_csv(const std::vector<TradeoffRow>& rows, std::ostream& out);

}  // namespace embedflow
