#include "embedflow/lnn_train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <utility>

#include <json.hpp>

#include "embedflow/linalg.hpp"
#include "embedflow/linear_model.hpp"

namespace embedflow {
namespace {

void check_shape(const LnnParams& p, const char* who) {
  const int l = p.depth();
  if (l < 2) throw std::invalid_argument(std::string(who) + ": depth must be at least 2");
  const int n = p.width();
  const int d = p.input_dim();
  if (n < 1 || d < 1) throw std::invalid_argument(std::string(who) + ": empty layer");
  for (int k = 0; k < l; ++k) {
    const int rows = k == l - 1 ? 1 : n;
    const int cols = k == 0 ? d : n;
    if (p.layers[static_cast<std::size_t>(k)].rows() != rows ||
        p.layers[static_cast<std::size_t>(k)].cols() != cols)
      throw std::invalid_argument(std::string(who) + ": layer shapes are not a valid stack");
  }
}

Matrix constant_matrix(int rows, int cols, double v) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = v;
  return m;
}

std::vector<Vec> ambient_rows(const EmbeddedDataset& ds) {
  std::vector<Vec> rows;
  rows.reserve(static_cast<std::size_t>(ds.n()));
  for (int i = 0; i < ds.n(); ++i) rows.push_back(ds.ambient(i));
  return rows;
}

Vec reference_point(const EmbeddedDataset& ds) {
  const EmpiricalMoments m = compute_moments(ds);
  const int d = ds.spec.dim();
  Vec ref(static_cast<std::size_t>(d), 0.0);
  try {
    if (ds.spec.sigma > 0.0) {
      ref = stationary_point(m, ds.spec.sigma).w.concat();
    } else {
      Vec wxs = solve_linear(m.sxx, m.gx);
      std::copy(wxs.begin(), wxs.end(), ref.begin());
    }
  } catch (const NumericError&) {
    // degenerate sample: report errors against the origin rather than failing
  }
  return ref;
}

LnnHistoryRow history_row(int epoch, const LnnParams& p, const std::vector<Vec>& inputs,
                          const Vec& labels, const Vec& ref, int dx) {
  LnnHistoryRow row;
  row.epoch = epoch;
  row.loss = lnn_loss(p, inputs, labels);
  const Vec w = end_to_end(p);
  row.w_norm = norm2(w);
  double ex = 0.0, ey = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d = w[i] - ref[i];
    if (static_cast<int>(i) < dx)
      ex += d * d;
    else
      ey += d * d;
  }
  row.wx_err = std::sqrt(ex);
  row.wy_err = std::sqrt(ey);
  return row;
}

}  // namespace

LnnParams init_balanced_constant(int depth, int width, int input_dim, double target_norm) {
  if (depth < 2) throw std::invalid_argument("init_balanced_constant: depth must be at least 2");
  if (width < 1 || input_dim < 1)
    throw std::invalid_argument("init_balanced_constant: dimensions must be positive");
  if (!(target_norm > 0.0))
    throw std::invalid_argument("init_balanced_constant: target norm must be positive");
  const double n = width;
  const double c = std::pow(target_norm, 1.0 / depth) / n;
  LnnParams p;
  p.layers.push_back(constant_matrix(width, input_dim, c * std::sqrt(n / input_dim)));
  for (int k = 1; k < depth - 1; ++k) p.layers.push_back(constant_matrix(width, width, c));
  p.layers.push_back(constant_matrix(1, width, c * std::sqrt(n)));
  return p;
}

LnnParams init_kaiming(int depth, int width, int input_dim, Rng& rng) {
  if (depth < 2) throw std::invalid_argument("init_kaiming: depth must be at least 2");
  if (width < 1 || input_dim < 1)
    throw std::invalid_argument("init_kaiming: dimensions must be positive");
  LnnParams p;
  for (int k = 0; k < depth; ++k) {
    const int rows = k == depth - 1 ? 1 : width;
    const int cols = k == 0 ? input_dim : width;
    const double sd = std::sqrt(2.0 / cols);
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = sd * rng.normal();
    p.layers.push_back(std::move(m));
  }
  return p;
}

Vec end_to_end(const LnnParams& p) {
  check_shape(p, "end_to_end");
  const Matrix& top = p.layers.back();
  Vec row(static_cast<std::size_t>(top.cols()));
  for (int j = 0; j < top.cols(); ++j) row[static_cast<std::size_t>(j)] = top(0, j);
  for (int k = p.depth() - 2; k >= 0; --k) row = matvec_t(p.layers[static_cast<std::size_t>(k)], row);
  return row;
}

double balance_residual(const LnnParams& p) {
  check_shape(p, "balance_residual");
  double worst = 0.0;
  for (int k = 0; k + 1 < p.depth(); ++k) {
    const Matrix& lo = p.layers[static_cast<std::size_t>(k)];
    const Matrix& hi = p.layers[static_cast<std::size_t>(k) + 1];
    const Matrix defect = matmul(transpose(hi), hi) - matmul(lo, transpose(lo));
    worst = std::max(worst, max_abs(defect));
  }
  return worst;
}

double lnn_loss(const LnnParams& p, const std::vector<Vec>& inputs, const Vec& labels) {
  if (inputs.empty() || inputs.size() != labels.size())
    throw std::invalid_argument("lnn_loss: inputs and labels must align");
  const Vec w = end_to_end(p);
  double acc = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const double r = dot(w, inputs[i]) - labels[i];
    acc += r * r;
  }
  return 0.5 * acc / static_cast<double>(inputs.size());
}

std::vector<Matrix> lnn_gradients(const LnnParams& p, const std::vector<Vec>& inputs,
                                  const Vec& labels, const std::vector<int>* batch) {
  check_shape(p, "lnn_gradients");
  if (inputs.empty() || inputs.size() != labels.size())
    throw std::invalid_argument("lnn_gradients: inputs and labels must align");
  const int l = p.depth();
  const int d = p.input_dim();
  const Vec w = end_to_end(p);

  // scalar residuals collapse the batch into one mean residual-weighted input
  Vec rbar(static_cast<std::size_t>(d), 0.0);
  std::size_t count = 0;
  auto accumulate = [&](int i) {
    const Vec& x = inputs[static_cast<std::size_t>(i)];
    const double r = dot(w, x) - labels[static_cast<std::size_t>(i)];
    axpy(r, x, rbar);
    ++count;
  };
  if (batch) {
    for (int i : *batch) accumulate(i);
  } else {
    for (std::size_t i = 0; i < inputs.size(); ++i) accumulate(static_cast<int>(i));
  }
  if (count == 0) throw std::invalid_argument("lnn_gradients: empty batch");
  for (double& v : rbar) v /= static_cast<double>(count);

  // prefix[k] = W^k ... W^1 applied to the input space (identity for k = 0)
  std::vector<Matrix> prefix;
  prefix.push_back(Matrix::identity(d));
  for (int k = 0; k + 1 < l; ++k)
    prefix.push_back(matmul(p.layers[static_cast<std::size_t>(k)], prefix.back()));

  // suffix rows W^L ... W^(k+2) walking down from the scalar output
  std::vector<Matrix> grads(static_cast<std::size_t>(l));
  Vec srow{1.0};
  for (int k = l - 1; k >= 0; --k) {
    grads[static_cast<std::size_t>(k)] =
        outer(srow, matvec(prefix[static_cast<std::size_t>(k)], rbar));
    srow = matvec_t(p.layers[static_cast<std::size_t>(k)], srow);
  }
  return grads;
}

LnnTrainResult train_lnn(const EmbeddedDataset& ds, LnnParams params, const OptimizerConfig& cfg,
                         const Vec* w_star) {
  check_shape(params, "train_lnn");
  if (params.input_dim() != ds.spec.dim())
    throw std::invalid_argument("train_lnn: network input does not match the ambient dimension");
  if (cfg.epochs < 0) throw std::invalid_argument("train_lnn: negative epoch count");
  if (cfg.batch_size < 1) throw std::invalid_argument("train_lnn: batch size must be positive");
  if (cfg.mode == OptimizerMode::Minibatch && cfg.batch_size > ds.n())
    throw std::invalid_argument("train_lnn: batch size exceeds the sample count");
  if (!(cfg.lr_start >= 0.0) || !(cfg.lr_end >= 0.0) || !(cfg.weight_decay >= 0.0))
    throw std::invalid_argument("train_lnn: rates must be nonnegative");
  if (cfg.lr_end > cfg.lr_start)
    throw std::invalid_argument("train_lnn: final rate must not exceed the starting rate");

  const std::vector<Vec> inputs = ambient_rows(ds);
  const Vec& labels = ds.labels;
  const int dx = ds.spec.dx;

  LnnTrainResult out;
  out.w_star = w_star ? *w_star : reference_point(ds);
  if (static_cast<int>(out.w_star.size()) != ds.spec.dim())
    throw std::invalid_argument("train_lnn: reference point has the wrong dimension");

  const int n = ds.n();
  const long steps_per_epoch =
      cfg.mode == OptimizerMode::FullBatch ? 1 : (n + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = steps_per_epoch * cfg.epochs;

  if (cfg.epochs == 0) {
    out.params = std::move(params);
    return out;
  }
  out.history.push_back(history_row(0, params, inputs, labels, out.w_star, dx));

  Rng shuffle_rng = Rng(cfg.shuffle_seed).substream("epoch_shuffle");
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.mode == OptimizerMode::FullBatch) {
      const double lr = schedule_lr(cfg, step, total_steps);
      std::vector<Matrix> grads = lnn_gradients(params, inputs, labels);
      for (int k = 0; k < params.depth(); ++k) {
        Matrix& wl = params.layers[static_cast<std::size_t>(k)];
        const Matrix& g = grads[static_cast<std::size_t>(k)];
        for (int i = 0; i < wl.rows(); ++i)
          for (int j = 0; j < wl.cols(); ++j)
            wl(i, j) -= lr * (g(i, j) + cfg.weight_decay * wl(i, j));
      }
      ++step;
    } else {
      shuffle_indices(order, shuffle_rng);
      for (int lo = 0; lo < n; lo += cfg.batch_size) {
        const int hi = std::min(n, lo + cfg.batch_size);
        std::vector<int> batch(order.begin() + lo, order.begin() + hi);
        const double lr = schedule_lr(cfg, step, total_steps);
        std::vector<Matrix> grads = lnn_gradients(params, inputs, labels, &batch);
        for (int k = 0; k < params.depth(); ++k) {
          Matrix& wl = params.layers[static_cast<std::size_t>(k)];
          const Matrix& g = grads[static_cast<std::size_t>(k)];
          for (int i = 0; i < wl.rows(); ++i)
            for (int j = 0; j < wl.cols(); ++j)
              wl(i, j) -= lr * (g(i, j) + cfg.weight_decay * wl(i, j));
        }
        ++step;
      }
    }
    LnnHistoryRow row = history_row(epoch, params, inputs, labels, out.w_star, dx);
    if (!std::isfinite(row.loss) || row.loss > 1e12)
      throw DivergenceError("train_lnn: loss diverged at epoch " + std::to_string(epoch));
    out.history.push_back(row);
  }
  out.params = std::move(params);
  return out;
}

void export_history_csv(const std::vector<LnnHistoryRow>& rows, std::ostream& out) {
  out << "epoch,loss,wx_err,wy_err,w_norm\n";
  char buf[40];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf;
  };
  for (const auto& r : rows) {
    out << r.epoch << ',';
    put(r.loss);
    out << ',';
    put(r.wx_err);
    out << ',';
    put(r.wy_err);
    out << ',';
    put(r.w_norm);
    out << '\n';
  }
}

std::string lnn_params_to_json(const LnnParams& p) {
  check_shape(p, "lnn_params_to_json");
  nlohmann::json j;
  j["depth"] = p.depth();
  j["width"] = p.width();
  j["input_dim"] = p.input_dim();
  j["layers"] = nlohmann::json::array();
  for (const Matrix& m : p.layers) {
    nlohmann::json layer = nlohmann::json::array();
    for (int i = 0; i < m.rows(); ++i)
      for (int jj = 0; jj < m.cols(); ++jj) layer.push_back(m(i, jj));
    j["layers"].push_back(std::move(layer));
  }
  return j.dump(2);
}

LnnParams lnn_params_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  const int depth = j.at("depth").get<int>();
  const int width = j.at("width").get<int>();
  const int input_dim = j.at("input_dim").get<int>();
  const auto& layers = j.at("layers");
  if (static_cast<int>(layers.size()) != depth)
    throw std::invalid_argument("lnn_params_from_json: layer count does not match depth");
  LnnParams p;
  for (int k = 0; k < depth; ++k) {
    const int rows = k == depth - 1 ? 1 : width;
    const int cols = k == 0 ? input_dim : width;
    const auto& flat = layers[static_cast<std::size_t>(k)];
    if (static_cast<int>(flat.size()) != rows * cols)
      throw std::invalid_argument("lnn_params_from_json: layer size mismatch");
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int jj = 0; jj < cols; ++jj)
        m(i, jj) = flat[static_cast<std::size_t>(i * cols + jj)].get<double>();
    p.layers.push_back(std::move(m));
  }
  check_shape(p, "lnn_params_from_json");
  return p;
}

LnnSweepResult noise_sweep_lnn(const EmbeddingSpec& spec, const TargetFunction& target, int depth,
                               int width, const std::vector<double>& sigmas,
                               const std::vector<int>& ns, int repeats, std::uint64_t seed,
                               const OptimizerConfig& cfg) {
  if (sigmas.empty() || ns.empty() || repeats < 1)
    throw std::invalid_argument("noise_sweep_lnn: empty sweep axis");
  if (cfg.epochs < 1) throw std::invalid_argument("noise_sweep_lnn: needs at least one epoch");
  for (double s : sigmas)
    if (!(s >= 0.03125))
      throw std::invalid_argument(
          "noise_sweep_lnn: sigma below 2^-5 rejected; the off-manifold curvature scales like "
          "sigma^2 and training would need a hopeless horizon");
  for (int n : ns)
    if (n < spec.dim())
      throw std::invalid_argument("noise_sweep_lnn: sample smaller than the ambient dimension");

  LnnSweepResult out;
  const Rng root = Rng(seed).substream("lnn_sweep");
  for (std::size_t si = 0; si < sigmas.size(); ++si) {
    for (std::size_t ni = 0; ni < ns.size(); ++ni) {
      for (int rep = 0; rep < repeats; ++rep) {
        const std::uint64_t cell_seed = root.substream(si * 8192 + ni)
                                            .substream(static_cast<std::uint64_t>(rep))
                                            .next_u64();
        EmbeddingSpec espec = spec;
        espec.sigma = sigmas[si];
        EmbeddedDataset ds =
            sample_dataset(espec, target, ns[ni], XDist::Uniform, cell_seed);

        OptimizerConfig cell_cfg = cfg;
        cell_cfg.shuffle_seed = cell_seed;
        // the slow mode relaxes at a rate ~ sigma^2, so stretch the horizon as
        // sigma shrinks (calibrated to the caller's epoch count at sigma = 1/2)
        const double stretch = std::min(1024.0, std::max(1.0, 0.25 / (sigmas[si] * sigmas[si])));
        cell_cfg.epochs = static_cast<int>(
            std::min(1e7, std::ceil(static_cast<double>(cfg.epochs) * stretch)));

        LnnParams init = init_balanced_constant(depth, width, espec.dim(), 1.0);
        LnnTrainResult res = train_lnn(ds, std::move(init), cell_cfg);

        const Vec w = end_to_end(res.params);
        double wy = 0.0;
        for (int i = espec.dx; i < espec.dim(); ++i)
          wy += w[static_cast<std::size_t>(i)] * w[static_cast<std::size_t>(i)];
        out.rows.push_back(
            {sigmas[si], ns[ni], cell_seed, std::sqrt(wy), res.history.back().wx_err});
      }
    }
  }

  // slope of mean |w_y| vs sigma at the largest n
  {
    const int n_ref = *std::max_element(ns.begin(), ns.end());
    std::vector<double> xs, ys;
    for (double s : sigmas) {
      double acc = 0.0;
      int cnt = 0;
      for (const auto& r : out.rows)
        if (r.n == n_ref && r.sigma == s) {
          acc += r.wy_norm;
          ++cnt;
        }
      if (cnt > 0 && acc / cnt > 1e-300) {
        xs.push_back(s);
        ys.push_back(acc / cnt);
      }
    }
    if (xs.size() >= 2) out.fit_vs_sigma = fit_loglog(xs, ys);
  }
  // slope of mean |w_y| vs n at the first sigma
  {
    const double s_ref = sigmas.front();
    std::vector<double> xs, ys;
    for (int n : ns) {
      double acc = 0.0;
      int cnt = 0;
      for (const auto& r : out.rows)
        if (r.n == n && r.sigma == s_ref) {
          acc += r.wy_norm;
          ++cnt;
        }
      if (cnt > 0 && acc / cnt > 1e-300) {
        xs.push_back(static_cast<double>(n));
        ys.push_back(acc / cnt);
      }
    }
    if (xs.size() >= 2) out.fit_vs_n = fit_loglog(xs, ys);
  }
  return out;
}

void export_lnn_sweep_csv(const LnnSweepResult& table, std::ostream& out) {
  out << "sigma,n,seed,wy_norm,wx_err\n";
  char buf[40];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf;
  };
  for (const auto& r : table.rows) {
    put(r.sigma);
    out << ',' << r.n << ',' << r.seed << ',';
    put(r.wy_norm);
    out << ',';
    put(r.wx_err);
    out << '\n';
  }
}

}  // namespace embedflow
