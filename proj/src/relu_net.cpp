#include "embedflow/relu_net.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <thread>
#include <utility>

#include <json.hpp>

#include "embedflow/linalg.hpp"

namespace embedflow {
namespace {

constexpr double kDegenerateRow = 1e-12;
constexpr int kVolumeSamples = 100000;
constexpr int kDeviationSamples = 100000;

double relu(double v) { return v > 0.0 ? v : 0.0; }

void check_shape(const ReluParams& p, const char* who) {
  const int l = p.depth();
  if (l < 2) throw std::invalid_argument(std::string(who) + ": depth must be at least 2");
  if (static_cast<int>(p.biases.size()) != l)
    throw std::invalid_argument(std::string(who) + ": bias count does not match depth");
  for (int k = 0; k < l; ++k) {
    const Matrix& w = p.weights[static_cast<std::size_t>(k)];
    if (w.rows() < 1 || w.cols() < 1)
      throw std::invalid_argument(std::string(who) + ": empty layer " + std::to_string(k + 1));
    if (k > 0 && w.cols() != p.weights[static_cast<std::size_t>(k - 1)].rows())
      throw std::invalid_argument(std::string(who) + ": width chain breaks at layer " +
                                  std::to_string(k + 1));
    if (static_cast<int>(p.biases[static_cast<std::size_t>(k)].size()) != w.rows())
      throw std::invalid_argument(std::string(who) + ": bias length mismatch at layer " +
                                  std::to_string(k + 1));
  }
  if (p.weights.back().rows() != 1)
    throw std::invalid_argument(std::string(who) + ": output layer must have one row");
  if (p.split < 0 || p.split > p.input_dim())
    throw std::invalid_argument(std::string(who) + ": column split out of range");
}

std::vector<Vec> ambient_rows(const EmbeddedDataset& ds) {
  std::vector<Vec> rows;
  rows.reserve(static_cast<std::size_t>(ds.n()));
  for (int i = 0; i < ds.n(); ++i) rows.push_back(ds.ambient(i));
  return rows;
}

double normal_block_norm(const ReluParams& p) {
  const Matrix& w1 = p.weights.front();
  double s = 0.0;
  for (int i = 0; i < w1.rows(); ++i)
    for (int j = p.split; j < w1.cols(); ++j) s += w1(i, j) * w1(i, j);
  return std::sqrt(s);
}

ReluHistoryRow history_row(int epoch, const ReluParams& p, const std::vector<Vec>& inputs,
                           const Vec& labels) {
  ReluHistoryRow row;
  row.epoch = epoch;
  row.loss = relu_loss(p, inputs, labels);
  row.w1y_norm = normal_block_norm(p);
  return row;
}

double cross_section(int dx) {
  // widest slice of the side-2 cube: a point for an interval, otherwise the
  // diagonal cross-section sqrt(2) * 2^(dx-1)
  return dx == 1 ? 1.0 : std::sqrt(2.0) * std::ldexp(1.0, dx - 1);
}

// Per-row geometry of the first layer against a fixed normal offset y:
// tangential norms, normal-block responses, and the volume of each active
// half-space inside the tangential cube (exact for an interval, otherwise one
// sample of 1e5 points shared across rows).
struct RowData {
  std::vector<double> vol;
  std::vector<double> xnorm;
  std::vector<double> u;
};

RowData first_layer_rows(const ReluParams& p, const Vec& y, std::uint64_t seed) {
  const Matrix& w1 = p.weights.front();
  const Vec& b1 = p.biases.front();
  const int n1 = w1.rows();
  const int dx = p.split;
  const int dy = p.normal_dim();

  RowData rd;
  rd.vol.assign(static_cast<std::size_t>(n1), 0.0);
  rd.xnorm.resize(static_cast<std::size_t>(n1));
  rd.u.resize(static_cast<std::size_t>(n1));
  for (int j = 0; j < n1; ++j) {
    double s = 0.0;
    for (int c = 0; c < dx; ++c) s += w1(j, c) * w1(j, c);
    rd.xnorm[static_cast<std::size_t>(j)] = std::sqrt(s);
    double uj = 0.0;
    for (int k = 0; k < dy; ++k) uj += w1(j, dx + k) * y[static_cast<std::size_t>(k)];
    rd.u[static_cast<std::size_t>(j)] = uj;
  }

  if (dx == 1) {
    for (int j = 0; j < n1; ++j) {
      const double w = w1(j, 0);
      const double b = b1[static_cast<std::size_t>(j)];
      if (w == 0.0) {
        rd.vol[static_cast<std::size_t>(j)] = b >= 0.0 ? 2.0 : 0.0;
      } else {
        const double cut = std::clamp(-b / w, -1.0, 1.0);
        rd.vol[static_cast<std::size_t>(j)] = w > 0.0 ? 1.0 - cut : cut + 1.0;
      }
    }
    return rd;
  }

  Rng rng = Rng(seed).substream("volume");
  std::vector<long> hits(static_cast<std::size_t>(n1), 0);
  Vec x(static_cast<std::size_t>(dx));
  for (int t = 0; t < kVolumeSamples; ++t) {
    for (int c = 0; c < dx; ++c) x[static_cast<std::size_t>(c)] = rng.uniform(-1.0, 1.0);
    for (int j = 0; j < n1; ++j) {
      double z = b1[static_cast<std::size_t>(j)];
      for (int c = 0; c < dx; ++c) z += w1(j, c) * x[static_cast<std::size_t>(c)];
      if (z >= 0.0) ++hits[static_cast<std::size_t>(j)];
    }
  }
  const double cube = std::ldexp(1.0, dx);
  for (int j = 0; j < n1; ++j)
    rd.vol[static_cast<std::size_t>(j)] =
        cube * static_cast<double>(hits[static_cast<std::size_t>(j)]) / kVolumeSamples;
  return rd;
}

struct BoundCore {
  double sum = 0.0;  // per-pair terms before the spectral product
  double spectral_product = 1.0;
  double c = 0.0;
  std::vector<NeuronTerm> terms;
  bool has_degenerate = false;
  RowData rows;
};

BoundCore assemble_core(const ReluParams& p, const Vec& y, std::uint64_t seed, const char* who) {
  check_shape(p, who);
  if (p.split < 1)
    throw std::invalid_argument(std::string(who) + ": network has no tangential block");
  if (static_cast<int>(y.size()) != p.normal_dim())
    throw std::invalid_argument(std::string(who) + ": offset length does not match normal block");

  BoundCore bc;
  bc.rows = first_layer_rows(p, y, seed);
  bc.c = cross_section(p.split);
  const Matrix& w2 = p.weights[1];
  const double cube = std::ldexp(1.0, p.split);
  bc.terms.reserve(static_cast<std::size_t>(w2.rows()) * w2.cols());
  for (int i = 0; i < w2.rows(); ++i) {
    for (int j = 0; j < w2.cols(); ++j) {
      const double a2 = w2(i, j) * w2(i, j);
      const double uj = bc.rows.u[static_cast<std::size_t>(j)];
      NeuronTerm t;
      t.i = i;
      t.j = j;
      if (bc.rows.xnorm[static_cast<std::size_t>(j)] <= kDegenerateRow) {
        // a row with no tangential part is constant in x, so its deviation is
        // bounded by the rectifier's Lipschitz constant over the whole cube
        t.degenerate = true;
        bc.has_degenerate = true;
        t.quad = a2 * uj * uj * cube;
      } else {
        t.quad = a2 * uj * uj * bc.rows.vol[static_cast<std::size_t>(j)];
        t.cubic = bc.c * a2 * std::abs(uj) * uj * uj /
                  (3.0 * bc.rows.xnorm[static_cast<std::size_t>(j)]);
      }
      bc.sum += t.quad + t.cubic;
      bc.terms.push_back(t);
    }
  }
  for (int k = 2; k < p.depth(); ++k) {
    const double s = spectral_norm(p.weights[static_cast<std::size_t>(k)]);
    bc.spectral_product *= s * s;
  }
  return bc;
}

// squared L2 deviation over the tangential cube at a fixed offset y
void deviation_mc(const ReluParams& p, const Vec& y, std::uint64_t seed, double& estimate,
                  double& std_error) {
  const int dx = p.split;
  const int dy = p.normal_dim();
  Rng rng = Rng(seed).substream("deviation_mc");
  Vec in(static_cast<std::size_t>(p.input_dim()), 0.0);
  Vec in0(static_cast<std::size_t>(p.input_dim()), 0.0);
  for (int k = 0; k < dy; ++k) in[static_cast<std::size_t>(dx + k)] = y[static_cast<std::size_t>(k)];
  double s2 = 0.0;
  double s4 = 0.0;
  for (int t = 0; t < kDeviationSamples; ++t) {
    for (int c = 0; c < dx; ++c) {
      const double v = rng.uniform(-1.0, 1.0);
      in[static_cast<std::size_t>(c)] = v;
      in0[static_cast<std::size_t>(c)] = v;
    }
    const double d = forward_value(p, in) - forward_value(p, in0);
    const double d2 = d * d;
    s2 += d2;
    s4 += d2 * d2;
  }
  const double cube = std::ldexp(1.0, dx);
  const double mean = s2 / kDeviationSamples;
  const double var = std::max(0.0, s4 / kDeviationSamples - mean * mean);
  estimate = cube * mean;
  std_error = cube * std::sqrt(var / kDeviationSamples);
}

bool recursion_check(const ReluParams& p, std::uint64_t seed) {
  const int l = p.depth();
  std::vector<double> opnorm(static_cast<std::size_t>(l));
  for (int k = 1; k < l; ++k)
    // power iteration can sit a hair under the true operator norm
    opnorm[static_cast<std::size_t>(k)] =
        spectral_norm(p.weights[static_cast<std::size_t>(k)]) * (1.0 + 2e-8);

  Rng rng = Rng(seed).substream("recursion");
  const int dx = p.split;
  const int dy = p.normal_dim();
  Vec in(static_cast<std::size_t>(p.input_dim()), 0.0);
  Vec in0(static_cast<std::size_t>(p.input_dim()), 0.0);
  for (int t = 0; t < 1000; ++t) {
    for (int c = 0; c < dx; ++c) {
      const double v = rng.uniform(-1.0, 1.0);
      in[static_cast<std::size_t>(c)] = v;
      in0[static_cast<std::size_t>(c)] = v;
    }
    for (int k = 0; k < dy; ++k) in[static_cast<std::size_t>(dx + k)] = rng.normal();
    const ReluForward fy = forward(p, in);
    const ReluForward f0 = forward(p, in0);
    for (int k = 1; k < l; ++k) {
      const double cur = norm2(vec_sub(fy.pre[static_cast<std::size_t>(k)],
                                       f0.pre[static_cast<std::size_t>(k)]));
      const double prev = norm2(vec_sub(fy.pre[static_cast<std::size_t>(k - 1)],
                                        f0.pre[static_cast<std::size_t>(k - 1)]));
      if (cur > opnorm[static_cast<std::size_t>(k)] * prev + 1e-10) return false;
    }
  }
  return true;
}

}  // namespace

std::vector<int> ReluParams::widths() const {
  std::vector<int> w;
  w.reserve(weights.size() + 1);
  w.push_back(input_dim());
  for (const Matrix& m : weights) w.push_back(m.rows());
  return w;
}

void ReluParams::validate() const { check_shape(*this, "ReluParams"); }

ReluParams init_relu(int input_dim, int split, const std::vector<int>& hidden, NormalInit scheme,
                     double scale, Rng& rng) {
  if (input_dim < 1) throw std::invalid_argument("init_relu: input dimension must be positive");
  if (split < 0 || split > input_dim)
    throw std::invalid_argument("init_relu: column split out of range");
  if (hidden.empty()) throw std::invalid_argument("init_relu: need at least one hidden layer");
  for (int n : hidden)
    if (n < 1) throw std::invalid_argument("init_relu: hidden widths must be positive");
  if (!std::isfinite(scale) || scale < 0.0)
    throw std::invalid_argument("init_relu: scale must be finite and nonnegative");

  const int l = static_cast<int>(hidden.size()) + 1;
  ReluParams p;
  p.split = split;
  p.weights.reserve(static_cast<std::size_t>(l));
  p.biases.reserve(static_cast<std::size_t>(l));
  for (int k = 0; k < l; ++k) {
    const int rows = k < l - 1 ? hidden[static_cast<std::size_t>(k)] : 1;
    const int cols = k == 0 ? input_dim : hidden[static_cast<std::size_t>(k - 1)];
    Matrix w(rows, cols);
    const double sd = std::sqrt(2.0 / cols);
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) {
        if (k == 0 && j >= split)
          w(i, j) = scheme == NormalInit::Constant ? scale : scale * rng.normal();
        else
          w(i, j) = sd * rng.normal();
      }
    }
    p.weights.push_back(std::move(w));
    p.biases.emplace_back(static_cast<std::size_t>(rows), 0.0);
  }
  return p;
}

ReluForward forward(const ReluParams& p, const Vec& input) {
  check_shape(p, "forward");
  if (static_cast<int>(input.size()) != p.input_dim())
    throw std::invalid_argument("forward: input length does not match the first layer");
  const int l = p.depth();
  ReluForward out;
  out.pre.reserve(static_cast<std::size_t>(l));
  out.post.reserve(static_cast<std::size_t>(l - 1));
  Vec cur = input;
  for (int k = 0; k < l; ++k) {
    Vec z = matvec(p.weights[static_cast<std::size_t>(k)], cur);
    const Vec& b = p.biases[static_cast<std::size_t>(k)];
    for (std::size_t t = 0; t < z.size(); ++t) z[t] += b[t];
    out.pre.push_back(z);
    if (k + 1 < l) {
      for (double& v : z) v = relu(v);
      out.post.push_back(z);
      cur = std::move(z);
    }
  }
  out.output = out.pre.back()[0];
  return out;
}

double forward_value(const ReluParams& p, const Vec& input) {
  const int l = p.depth();
  Vec cur = input;
  for (int k = 0; k < l; ++k) {
    Vec z = matvec(p.weights[static_cast<std::size_t>(k)], cur);
    const Vec& b = p.biases[static_cast<std::size_t>(k)];
    for (std::size_t t = 0; t < z.size(); ++t) z[t] += b[t];
    if (k + 1 < l)
      for (double& v : z) v = relu(v);
    cur = std::move(z);
  }
  return cur[0];
}

double relu_loss(const ReluParams& p, const std::vector<Vec>& inputs, const Vec& labels,
                 const std::vector<int>* batch) {
  check_shape(p, "relu_loss");
  if (inputs.size() != labels.size())
    throw std::invalid_argument("relu_loss: label count does not match inputs");
  const std::size_t count = batch ? batch->size() : inputs.size();
  if (count == 0) throw std::invalid_argument("relu_loss: empty batch");
  double s = 0.0;
  for (std::size_t t = 0; t < count; ++t) {
    const std::size_t idx = batch ? static_cast<std::size_t>((*batch)[t]) : t;
    const double r = forward_value(p, inputs[idx]) - labels[idx];
    s += r * r;
  }
  return 0.5 * s / static_cast<double>(count);
}

ReluGradients relu_gradients(const ReluParams& p, const std::vector<Vec>& inputs,
                             const Vec& labels, const std::vector<int>* batch) {
  check_shape(p, "relu_gradients");
  if (inputs.size() != labels.size())
    throw std::invalid_argument("relu_gradients: label count does not match inputs");
  const std::size_t count = batch ? batch->size() : inputs.size();
  if (count == 0) throw std::invalid_argument("relu_gradients: empty batch");

  const int l = p.depth();
  ReluGradients g;
  g.dw.reserve(static_cast<std::size_t>(l));
  g.db.reserve(static_cast<std::size_t>(l));
  for (int k = 0; k < l; ++k) {
    const Matrix& w = p.weights[static_cast<std::size_t>(k)];
    g.dw.emplace_back(w.rows(), w.cols());
    g.db.emplace_back(static_cast<std::size_t>(w.rows()), 0.0);
  }

  for (std::size_t t = 0; t < count; ++t) {
    const std::size_t idx = batch ? static_cast<std::size_t>((*batch)[t]) : t;
    const Vec& in = inputs[idx];
    const ReluForward f = forward(p, in);
    Vec delta(1, f.output - labels[idx]);
    for (int k = l - 1; k >= 0; --k) {
      const Vec& act = k == 0 ? in : f.post[static_cast<std::size_t>(k - 1)];
      Matrix& dw = g.dw[static_cast<std::size_t>(k)];
      Vec& db = g.db[static_cast<std::size_t>(k)];
      for (int i = 0; i < dw.rows(); ++i) {
        db[static_cast<std::size_t>(i)] += delta[static_cast<std::size_t>(i)];
        for (int j = 0; j < dw.cols(); ++j)
          dw(i, j) += delta[static_cast<std::size_t>(i)] * act[static_cast<std::size_t>(j)];
      }
      if (k > 0) {
        Vec prev = matvec_t(p.weights[static_cast<std::size_t>(k)], delta);
        const Vec& pre = f.pre[static_cast<std::size_t>(k - 1)];
        // rectifier subgradient at 0 taken as 0
        for (std::size_t s = 0; s < prev.size(); ++s)
          if (!(pre[s] > 0.0)) prev[s] = 0.0;
        delta = std::move(prev);
      }
    }
  }

  const double inv = 1.0 / static_cast<double>(count);
  for (int k = 0; k < l; ++k) {
    Matrix& dw = g.dw[static_cast<std::size_t>(k)];
    Vec& db = g.db[static_cast<std::size_t>(k)];
    for (int i = 0; i < dw.rows(); ++i) {
      db[static_cast<std::size_t>(i)] *= inv;
      for (int j = 0; j < dw.cols(); ++j) dw(i, j) *= inv;
    }
  }
  return g;
}

ReluTrainResult train_relu(const EmbeddedDataset& ds, ReluParams params,
                           const OptimizerConfig& cfg) {
  check_shape(params, "train_relu");
  if (params.input_dim() != ds.spec.dim())
    throw std::invalid_argument("train_relu: network input does not match the ambient dimension");
  if (params.split != ds.spec.dx)
    throw std::invalid_argument("train_relu: column split does not match the tangential dimension");
  if (cfg.epochs < 0) throw std::invalid_argument("train_relu: negative epoch count");
  if (cfg.batch_size < 1) throw std::invalid_argument("train_relu: batch size must be positive");
  if (cfg.mode == OptimizerMode::Minibatch && cfg.batch_size > ds.n())
    throw std::invalid_argument("train_relu: batch size exceeds the sample count");
  if (!(cfg.lr_start >= 0.0) || !(cfg.lr_end >= 0.0) || !(cfg.weight_decay >= 0.0))
    throw std::invalid_argument("train_relu: rates must be nonnegative");
  if (cfg.lr_end > cfg.lr_start)
    throw std::invalid_argument("train_relu: final rate must not exceed the starting rate");

  const std::vector<Vec> inputs = ambient_rows(ds);
  const Vec& labels = ds.labels;
  const int n = ds.n();
  const long steps_per_epoch =
      cfg.mode == OptimizerMode::FullBatch ? 1 : (n + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = steps_per_epoch * cfg.epochs;

  ReluTrainResult out;
  out.history.push_back(history_row(0, params, inputs, labels));

  Rng shuffle_rng = Rng(cfg.shuffle_seed).substream("epoch_shuffle");
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  auto apply = [&](const ReluGradients& g, double lr) {
    for (int k = 0; k < params.depth(); ++k) {
      Matrix& w = params.weights[static_cast<std::size_t>(k)];
      Vec& b = params.biases[static_cast<std::size_t>(k)];
      const Matrix& dw = g.dw[static_cast<std::size_t>(k)];
      const Vec& db = g.db[static_cast<std::size_t>(k)];
      for (int i = 0; i < w.rows(); ++i) {
        b[static_cast<std::size_t>(i)] -=
            lr * (db[static_cast<std::size_t>(i)] + cfg.weight_decay * b[static_cast<std::size_t>(i)]);
        for (int j = 0; j < w.cols(); ++j) w(i, j) -= lr * (dw(i, j) + cfg.weight_decay * w(i, j));
      }
    }
  };

  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.mode == OptimizerMode::FullBatch) {
      const double lr = schedule_lr(cfg, step, total_steps);
      apply(relu_gradients(params, inputs, labels), lr);
      ++step;
    } else {
      shuffle_indices(order, shuffle_rng);
      for (int lo = 0; lo < n; lo += cfg.batch_size) {
        const int hi = std::min(n, lo + cfg.batch_size);
        std::vector<int> batch(order.begin() + lo, order.begin() + hi);
        const double lr = schedule_lr(cfg, step, total_steps);
        apply(relu_gradients(params, inputs, labels, &batch), lr);
        ++step;
      }
    }
    ReluHistoryRow row = history_row(epoch, params, inputs, labels);
    if (!std::isfinite(row.loss) || row.loss > 1e12)
      throw DivergenceError("train_relu: loss diverged at epoch " + std::to_string(epoch));
    out.history.push_back(row);
  }
  out.params = std::move(params);
  return out;
}

void export_relu_history_csv(const std::vector<ReluHistoryRow>& rows, std::ostream& out) {
  out << "epoch,loss,w1y_norm\n";
  char buf[40];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf;
  };
  for (const auto& r : rows) {
    out << r.epoch << ',';
    put(r.loss);
    out << ',';
    put(r.w1y_norm);
    out << '\n';
  }
}

StabilityEstimate stability_metric(const ReluParams& p, double gamma, int m, std::uint64_t seed,
                                   int threads) {
  check_shape(p, "stability_metric");
  if (m < 100) throw std::invalid_argument("stability_metric: need at least 100 samples");
  if (!std::isfinite(gamma) || gamma < 0.0)
    throw std::invalid_argument("stability_metric: offset scale must be finite and nonnegative");

  const int dx = p.split;
  const int dy = p.normal_dim();
  constexpr int kShards = 64;
  struct ShardSum {
    double s2 = 0.0;
    double s4 = 0.0;
  };
  std::vector<ShardSum> sums(kShards);

  auto run_shard = [&](int s) {
    const int lo = static_cast<int>(static_cast<long long>(m) * s / kShards);
    const int hi = static_cast<int>(static_cast<long long>(m) * (s + 1) / kShards);
    Rng rng = Rng(seed).substream("stability").substream(static_cast<std::uint64_t>(s));
    Vec in(static_cast<std::size_t>(p.input_dim()), 0.0);
    Vec in0(static_cast<std::size_t>(p.input_dim()), 0.0);
    for (int t = lo; t < hi; ++t) {
      for (int c = 0; c < dx; ++c) {
        const double v = rng.uniform(-1.0, 1.0);
        in[static_cast<std::size_t>(c)] = v;
        in0[static_cast<std::size_t>(c)] = v;
      }
      for (int k = 0; k < dy; ++k) in[static_cast<std::size_t>(dx + k)] = gamma * rng.normal();
      const double d = forward_value(p, in) - forward_value(p, in0);
      const double d2 = d * d;
      sums[static_cast<std::size_t>(s)].s2 += d2;
      sums[static_cast<std::size_t>(s)].s4 += d2 * d2;
    }
  };

  const int workers = std::clamp(threads, 1, kShards);
  if (workers == 1) {
    for (int s = 0; s < kShards; ++s) run_shard(s);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (int s = next.fetch_add(1); s < kShards; s = next.fetch_add(1)) run_shard(s);
      });
    for (std::thread& th : pool) th.join();
  }

  double s2 = 0.0;
  double s4 = 0.0;
  for (const ShardSum& sh : sums) {
    s2 += sh.s2;
    s4 += sh.s4;
  }
  StabilityEstimate est;
  est.samples = m;
  est.estimate = s2 / m;
  const double var = std::max(0.0, s4 / m - est.estimate * est.estimate);
  est.std_error = std::sqrt(var / m);
  return est;
}

StabilityReport deep_bound(const ReluParams& p, const Vec& y, std::uint64_t seed) {
  BoundCore bc = assemble_core(p, y, seed, "deep_bound");
  StabilityReport r;
  r.c_dx = bc.c;
  r.spectral_product = bc.spectral_product;
  r.per_neuron_terms = std::move(bc.terms);
  r.has_degenerate_rows = bc.has_degenerate;
  r.bound_deep = bc.spectral_product * bc.sum;
  r.bound_shallow = p.depth() == 2 ? r.bound_deep : 0.0;
  deviation_mc(p, y, seed, r.mc_estimate, r.mc_std_error);
  r.recursion_ok = recursion_check(p, seed);
  return r;
}

StabilityReport shallow_bound(const ReluParams& p, const Vec& y, std::uint64_t seed) {
  if (p.depth() != 2)
    throw std::invalid_argument("shallow_bound: network must have exactly one hidden layer");
  return deep_bound(p, y, seed);
}

double corollary_bound(const ReluParams& p, const Vec& y, double nu, CorollaryDetail* detail) {
  if (!std::isfinite(nu) || nu < 0.0)
    throw std::invalid_argument("corollary_bound: scale must be finite and nonnegative");
  // the half-space volumes get a fixed internal sample; the bound takes no seed
  BoundCore bc = assemble_core(p, y, 0x6f666673u, "corollary_bound");

  const Matrix& w2 = p.weights[1];
  const int dy = p.normal_dim();
  double dmax = 0.0;
  for (int i = 0; i < w2.rows(); ++i) {
    for (int j = 0; j < w2.cols(); ++j) {
      const double a2 = w2(i, j) * w2(i, j);
      const double xn = bc.rows.xnorm[static_cast<std::size_t>(j)];
      for (int k = 0; k < dy; ++k) {
        const double yk = std::abs(y[static_cast<std::size_t>(k)]);
        // the row norms cancel out of the gradient entry
        dmax = std::max(dmax, yk * yk * a2 * bc.rows.vol[static_cast<std::size_t>(j)]);
        if (xn > kDegenerateRow)
          dmax = std::max(dmax, bc.c * yk * yk * yk * a2 / (3.0 * xn * xn));
      }
    }
  }

  const double pairs = static_cast<double>(w2.rows()) * w2.cols() * dy;
  const double lead =
      (nu * nu + 2.0 * std::sqrt(2.0 / std::numbers::pi) * nu * nu * nu) * pairs;
  const double leading = bc.spectral_product * lead * dmax;
  if (detail) {
    detail->leading = leading;
    detail->d_of_y = dmax;
    detail->correction_unit = bc.spectral_product * std::sqrt(pairs) * dmax;
    const double exact = bc.spectral_product * bc.sum;
    detail->d_tilde_fit = detail->correction_unit > 0.0
                              ? std::max(0.0, (exact - leading) / detail->correction_unit)
                              : 0.0;
  }
  return leading;
}

std::string relu_params_to_json(const ReluParams& p) {
  check_shape(p, "relu_params_to_json");
  nlohmann::json j;
  j["widths"] = p.widths();
  j["split"] = p.split;
  j["layers"] = nlohmann::json::array();
  for (std::size_t k = 0; k < p.weights.size(); ++k) {
    const Matrix& w = p.weights[k];
    nlohmann::json flat = nlohmann::json::array();
    for (int i = 0; i < w.rows(); ++i)
      for (int c = 0; c < w.cols(); ++c) flat.push_back(w(i, c));
    j["layers"].push_back({{"weights", std::move(flat)}, {"biases", p.biases[k]}});
  }
  return j.dump(2);
}

ReluParams relu_params_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  const std::vector<int> widths = j.at("widths").get<std::vector<int>>();
  if (widths.size() < 3)
    throw std::invalid_argument("relu_params_from_json: need at least two layers");
  ReluParams p;
  p.split = j.at("split").get<int>();
  const auto& layers = j.at("layers");
  if (layers.size() + 1 != widths.size())
    throw std::invalid_argument("relu_params_from_json: layer count does not match widths");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const int rows = widths[k + 1];
    const int cols = widths[k];
    const std::vector<double> flat = layers[k].at("weights").get<std::vector<double>>();
    if (static_cast<int>(flat.size()) != rows * cols)
      throw std::invalid_argument("relu_params_from_json: weight size mismatch at layer " +
                                  std::to_string(k + 1));
    Matrix w(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int c = 0; c < cols; ++c) w(i, c) = flat[static_cast<std::size_t>(i * cols + c)];
    p.weights.push_back(std::move(w));
    Vec b = layers[k].at("biases").get<Vec>();
    if (static_cast<int>(b.size()) != rows)
      throw std::invalid_argument("relu_params_from_json: bias size mismatch at layer " +
                                  std::to_string(k + 1));
    p.biases.push_back(std::move(b));
  }
  check_shape(p, "relu_params_from_json");
  return p;
}

std::string stability_report_to_json(const StabilityReport& r) {
  nlohmann::json j;
  j["mc_estimate"] = r.mc_estimate;
  j["mc_std_error"] = r.mc_std_error;
  j["bound_shallow"] = r.bound_shallow;
  j["bound_deep"] = r.bound_deep;
  j["spectral_product"] = r.spectral_product;
  j["c_dx"] = r.c_dx;
  j["recursion_ok"] = r.recursion_ok;
  j["has_degenerate_rows"] = r.has_degenerate_rows;
  j["per_neuron_terms"] = nlohmann::json::array();
  for (const NeuronTerm& t : r.per_neuron_terms)
    j["per_neuron_terms"].push_back({{"i", t.i},
                                     {"j", t.j},
                                     {"quad", t.quad},
                                     {"cubic", t.cubic},
                                     {"degenerate", t.degenerate}});
  return j.dump(2);
}

}  // namespace embedflow
