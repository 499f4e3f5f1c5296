// command-line front end: every library capability as a subcommand with
// reproducible seeding. Exit codes: 0 ok, 1 usage, 2 numeric failure, 3 I/O.
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "embedflow/embed_data.hpp"
#include "embedflow/experiments.hpp"
#include "embedflow/linalg.hpp"
#include "embedflow/linear_model.hpp"
#include "embedflow/lnn_flow.hpp"
#include "embedflow/lnn_train.hpp"
#include "embedflow/relu_net.hpp"

using namespace embedflow;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GlobalFlags {
  std::uint64_t seed = 1;
  std::string out = ".";
  bool machine = false;
  int threads = 0;
};

int default_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n ? static_cast<int>(n) : 1;
}

std::vector<double> parse_doubles(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t pos = 0;
      const double v = std::stod(tok, &pos);
      while (pos < tok.size() && std::isspace(static_cast<unsigned char>(tok[pos]))) ++pos;
      if (pos != tok.size()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw std::invalid_argument(what + ": cannot parse '" + tok + "' as a number");
    }
  }
  if (out.empty()) throw std::invalid_argument(what + ": empty list");
  return out;
}

std::vector<int> parse_ints(const std::string& text, const std::string& what) {
  std::vector<int> out;
  for (double v : parse_doubles(text, what)) {
    if (v != static_cast<int>(v))
      throw std::invalid_argument(what + ": expected integers");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  out << body;
  if (!out) throw std::runtime_error("short write on '" + p.string() + "'");
}

fs::path out_path(const GlobalFlags& g, const std::string& name) {
  const fs::path dir = g.out.empty() ? fs::path(".") : fs::path(g.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw std::runtime_error("cannot create output directory '" + dir.string() +
                             "': " + ec.message());
  return dir / name;
}

void emit(const GlobalFlags& g, const json& config, const json& result) {
  if (g.machine) {
    std::cout << json{{"config", config}, {"result", result}}.dump(2) << "\n";
  } else {
    std::cout << "config: " << config.dump() << "\n";
    for (const auto& item : result.items())
      std::cout << item.key() << ": " << item.value().dump() << "\n";
  }
}

std::string default_target(int dx) {
  std::string s;
  for (int j = 1; j <= dx; ++j) {
    if (!s.empty()) s += " + ";
    s += "pi*sin(pi*x" + std::to_string(j) + ")";
  }
  return s;
}

json matrix_rows(const Matrix& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    Vec row(static_cast<std::size_t>(m.cols()));
    for (int j = 0; j < m.cols(); ++j) row[static_cast<std::size_t>(j)] = m(i, j);
    rows.push_back(row);
  }
  return rows;
}

const char* status_name(OdeStatus s) {
  switch (s) {
    case OdeStatus::completed: return "completed";
    case OdeStatus::event_stopped: return "event_stopped";
    default: return "max_steps";
  }
}

// flags shared by every subcommand that samples a dataset
struct DataFlags {
  int dx = 1;
  int dy = 1;
  double sigma = 0.1;
  int n = 10000;
  std::string g_text;
  std::string x_dist = "uniform";
  std::string y_dist = "normal";
  bool rotate = false;
};

void add_data_flags(CLI::App* cmd, DataFlags& d) {
  cmd->add_option("--dx", d.dx, "manifold dimension")->capture_default_str();
  cmd->add_option("--dy", d.dy, "normal dimension")->capture_default_str();
  cmd->add_option("--sigma", d.sigma, "normal noise scale")->capture_default_str();
  cmd->add_option("--n", d.n, "sample size")->capture_default_str();
  cmd->add_option("--g", d.g_text,
                  "target function (linear + sine grammar; default: pi*sin(pi*xj) summed)");
  cmd->add_option("--x-dist", d.x_dist, "uniform | normal")->capture_default_str();
  cmd->add_option("--y-dist", d.y_dist, "normal | uniform")->capture_default_str();
  cmd->add_flag("--rotate", d.rotate, "embed through a random rotation instead of the identity");
}

struct MadeData {
  EmbeddingSpec spec;
  TargetFunction target;
  EmbeddedDataset ds;
  std::string g_used;
};

MadeData make_dataset(const DataFlags& d, const GlobalFlags& g) {
  if (d.dx < 1 || d.dy < 1) throw std::invalid_argument("--dx and --dy must be positive");
  if (d.n < 1) throw std::invalid_argument("--n must be positive");
  if (!(d.sigma >= 0.0)) throw std::invalid_argument("--sigma must be nonnegative");
  const Rng root(g.seed);
  const EmbeddingSpec spec =
      d.rotate ? EmbeddingSpec::random_rotation(d.dx, d.dy, d.sigma,
                                                root.substream("rotation").next_u64())
               : EmbeddingSpec::identity(d.dx, d.dy, d.sigma);
  const std::string g_used = d.g_text.empty() ? default_target(d.dx) : d.g_text;
  const TargetFunction target = parse_target(g_used, d.dx);
  EmbeddedDataset ds = sample_dataset(spec, target, d.n, x_dist_from_string(d.x_dist),
                                      root.substream("data").next_u64(),
                                      y_dist_from_string(d.y_dist));
  return {spec, target, std::move(ds), g_used};
}

json data_config(const DataFlags& d, const std::string& g_used, const GlobalFlags& g) {
  return json{{"dx", d.dx},       {"dy", d.dy},           {"sigma", d.sigma},
              {"n", d.n},         {"g", g_used},          {"x_dist", d.x_dist},
              {"y_dist", d.y_dist}, {"rotate", d.rotate}, {"seed", g.seed},
              {"out", g.out},     {"threads", g.threads}};
}

void error_json(const char* kind, int code, const std::string& message) {
  std::cerr << json{{"error", {{"kind", kind}, {"code", code}, {"message", message}}}}.dump()
            << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"numerical laboratory for networks trained on subspace-confined data"};
  app.require_subcommand(1);

  GlobalFlags g;
  g.threads = default_threads();
  app.add_option("--seed", g.seed, "master seed")->envname("EMBEDFLOW_SEED")
      ->capture_default_str();
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.add_flag("--json", g.machine, "machine-readable stdout");
  app.add_option("--threads", g.threads, "work pool size (default: available cores)");

  // ---- sample -------------------------------------------------------------
  auto* sample_cmd = app.add_subcommand("sample", "draw an embedded dataset and write it out");
  sample_cmd->fallthrough();
  DataFlags sample_d;
  sample_d.n = 1000;
  std::string sample_format = "json";
  std::string sample_name;
  sample_cmd->add_option("--format", sample_format, "json | csv")->capture_default_str();
  sample_cmd->add_option("--name", sample_name, "output file name (default dataset.<format>)");
  add_data_flags(sample_cmd, sample_d);
  sample_cmd->callback([&] {
    if (sample_format != "json" && sample_format != "csv")
      throw std::invalid_argument("--format must be json or csv");
    MadeData md = make_dataset(sample_d, g);
    const std::string name =
        sample_name.empty() ? ("dataset." + sample_format) : sample_name;
    const fs::path path = out_path(g, name);
    if (sample_format == "json") {
      write_file(path, dataset_to_json(md.ds));
    } else {
      std::ofstream out(path, std::ios::binary);
      if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
      export_csv(md.ds, out);
    }
    json cfg = data_config(sample_d, md.g_used, g);
    cfg["format"] = sample_format;
    emit(g, cfg,
         json{{"file", path.string()},
              {"n", md.ds.n()},
              {"dim", md.spec.dim()},
              {"rank_ok", md.ds.rank_ok}});
  });

  // ---- stationary -----------------------------------------------------------
  auto* stat_cmd = app.add_subcommand("stationary", "closed-form end-to-end critical point");
  stat_cmd->fallthrough();
  DataFlags stat_d;
  add_data_flags(stat_cmd, stat_d);
  stat_cmd->callback([&] {
    if (!(stat_d.sigma > 0.0))
      throw NumericError(
          "stationary requires sigma > 0: at sigma = 0 the normal block of the quadratic loss "
          "degenerates and every normal weight is stationary");
    MadeData md = make_dataset(stat_d, g);
    const EmpiricalMoments m = compute_moments(md.ds);
    const StationaryPoint sp = stationary_point(m, stat_d.sigma);
    emit(g, data_config(stat_d, md.g_used, g),
         json{{"wx_star", sp.w.wx},
              {"wy_star", sp.w.wy},
              {"alpha_star", sp.alpha_star},
              {"beta_star", sp.beta_star},
              {"schur_s", matrix_rows(sp.schur_s)},
              {"loss", loss_Je(sp.w, m, stat_d.sigma)}});
  });

  // ---- flow ---------------------------------------------------------------
  auto* flow_cmd = app.add_subcommand("flow", "integrate the end-to-end gradient flow");
  flow_cmd->fallthrough();
  DataFlags flow_d;
  flow_d.dx = 1;
  flow_d.dy = 1;
  int flow_depth = 5;
  double flow_t_end = 100.0, flow_max_step = 0.0;
  std::string flow_w0, flow_name = "trajectory.csv";
  add_data_flags(flow_cmd, flow_d);
  flow_cmd->add_option("--depth", flow_depth, "number of layers")->capture_default_str();
  flow_cmd->add_option("--t-end", flow_t_end, "integration horizon")->capture_default_str();
  flow_cmd->add_option("--max-step", flow_max_step, "step cap (0: automatic)")
      ->capture_default_str();
  flow_cmd->add_option("--w0", flow_w0, "start point, comma-separated (default 0.5 everywhere)");
  flow_cmd->add_option("--name", flow_name, "trajectory CSV name")->capture_default_str();
  flow_cmd->callback([&] {
    MadeData md = make_dataset(flow_d, g);
    const EmpiricalMoments m = compute_moments(md.ds);
    const FlowSystem sys(m, flow_d.sigma, flow_depth);
    Vec w0(static_cast<std::size_t>(sys.dim()), 0.5);
    if (!flow_w0.empty()) {
      const std::vector<double> vals = parse_doubles(flow_w0, "--w0");
      if (static_cast<int>(vals.size()) != sys.dim())
        throw std::invalid_argument("--w0 needs exactly " + std::to_string(sys.dim()) +
                                    " coordinates");
      w0 = vals;
    }
    OdeOptions opts;
    opts.max_step = flow_max_step;
    const OdeSolution sol = simulate(sys, w0, flow_t_end, opts);
    const fs::path path = out_path(g, flow_name);
    {
      std::ofstream out(path, std::ios::binary);
      if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
      export_trajectory_csv(sys, sol, out);
    }
    const MonotonicityCheck mono = monotonicity_check(sys, sol);
    const RegionLabel fin = classify_region(sys, sol.final_state());
    json cfg = data_config(flow_d, md.g_used, g);
    cfg["depth"] = flow_depth;
    cfg["t_end"] = flow_t_end;
    cfg["max_step"] = flow_max_step;
    cfg["w0"] = w0;
    emit(g, cfg,
         json{{"file", path.string()},
              {"steps", sol.step_count},
              {"status", status_name(sol.status)},
              {"final_time", sol.final_time()},
              {"final_state", sol.final_state()},
              {"final_region", region_name(fin.region)},
              {"wx_monotone", mono.wx_monotone},
              {"ratio_monotone", mono.ratio_monotone}});
  });

  // ---- eigen ----------------------------------------------------------------
  auto* eigen_cmd =
      app.add_subcommand("eigen", "slow-eigenvalue scan of the flow Jacobian at the critical point");
  eigen_cmd->fallthrough();
  DataFlags eigen_d;
  eigen_d.dx = 2;
  eigen_d.dy = 1;
  eigen_d.n = 102400;
  int eigen_depth = 5;
  std::string eigen_sigmas = "0,0.5,0.25,0.125,0.0625,0.03125";
  std::string eigen_name = "eigen_gap.csv";
  add_data_flags(eigen_cmd, eigen_d);
  eigen_cmd->add_option("--depth", eigen_depth, "number of layers")->capture_default_str();
  eigen_cmd->add_option("--sigmas", eigen_sigmas, "comma-separated noise grid")
      ->capture_default_str();
  eigen_cmd->add_option("--name", eigen_name, "CSV name")->capture_default_str();
  eigen_cmd->callback([&] {
    const std::vector<double> sigmas = parse_doubles(eigen_sigmas, "--sigmas");
    const EmbeddingSpec spec = EmbeddingSpec::identity(eigen_d.dx, eigen_d.dy, eigen_d.sigma);
    const std::string g_used =
        eigen_d.g_text.empty() ? default_target(eigen_d.dx) : eigen_d.g_text;
    const TargetFunction target = parse_target(g_used, eigen_d.dx);
    const EigenGapScan scan = eigen_gap_scan(spec, target, eigen_depth, sigmas, eigen_d.n,
                                             {g.seed}, x_dist_from_string(eigen_d.x_dist));
    const fs::path path = out_path(g, eigen_name);
    {
      std::ofstream out(path, std::ios::binary);
      if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
      out << "sigma,seed,min_abs,zero_count\n";
      for (const auto& r : scan.rows)
        out << r.sigma << ',' << r.seed << ',' << r.min_abs << ',' << r.zero_count << '\n';
    }
    json cfg = data_config(eigen_d, g_used, g);
    cfg["depth"] = eigen_depth;
    cfg["sigmas"] = sigmas;
    json result{{"file", path.string()}, {"rows", scan.rows.size()}};
    if (scan.fit) {
      result["slope"] = scan.fit->slope;
      result["r_squared"] = scan.fit->r_squared;
    }
    for (const auto& r : scan.rows)
      if (r.sigma == 0.0) result["zero_count_at_sigma0"] = r.zero_count;
    emit(g, cfg, result);
  });

  // ---- escape ---------------------------------------------------------------
  auto* escape_cmd =
      app.add_subcommand("escape", "time to leave a small ball around the origin equilibrium");
  escape_cmd->fallthrough();
  DataFlags escape_d;
  escape_d.dx = 1;
  escape_d.dy = 1;
  escape_d.sigma = 0.25;
  int escape_depth = 5;
  double escape_eps = 1e-3, escape_budget = 1e5;
  std::string escape_dir;
  add_data_flags(escape_cmd, escape_d);
  escape_cmd->add_option("--depth", escape_depth, "number of layers")->capture_default_str();
  escape_cmd->add_option("--epsilon", escape_eps, "start radius")->capture_default_str();
  escape_cmd->add_option("--t-budget", escape_budget, "integration budget")->capture_default_str();
  escape_cmd->add_option("--direction", escape_dir,
                         "start direction, comma-separated (default: diagonal)");
  escape_cmd->callback([&] {
    MadeData md = make_dataset(escape_d, g);
    const FlowSystem sys(compute_moments(md.ds), escape_d.sigma, escape_depth);
    Vec dir(static_cast<std::size_t>(sys.dim()),
            1.0 / std::sqrt(static_cast<double>(sys.dim())));
    if (!escape_dir.empty()) {
      const std::vector<double> vals = parse_doubles(escape_dir, "--direction");
      if (static_cast<int>(vals.size()) != sys.dim())
        throw std::invalid_argument("--direction needs exactly " + std::to_string(sys.dim()) +
                                    " coordinates");
      dir = vals;
    }
    const TimingResult tr = escape_time(sys, escape_eps, dir, escape_budget);
    json cfg = data_config(escape_d, md.g_used, g);
    cfg["depth"] = escape_depth;
    cfg["epsilon"] = escape_eps;
    cfg["t_budget"] = escape_budget;
    cfg["direction"] = dir;
    emit(g, cfg,
         json{{"escape_time", tr.escape_time},
              {"reached", tr.escape_reached},
              {"floor", tr.escape_floor},
              {"budget", tr.budget}});
  });

  // ---- train-lnn -----------------------------------------------------------
  auto* lnn_cmd = app.add_subcommand("train-lnn", "gradient descent on a deep linear stack");
  lnn_cmd->fallthrough();
  DataFlags lnn_d;
  lnn_d.dx = 1;
  lnn_d.dy = 1;
  int lnn_depth = 5, lnn_width = 10, lnn_epochs = 1000, lnn_batch = 50;
  double lnn_lr = 2.5e-3, lnn_lr_end = 0.0, lnn_decay = 0.0, lnn_norm0 = 0.015625;
  std::string lnn_mode = "full", lnn_schedule = "constant", lnn_init = "balanced";
  std::string lnn_name = "lnn_history.csv";
  add_data_flags(lnn_cmd, lnn_d);
  lnn_cmd->add_option("--depth", lnn_depth, "number of layers")->capture_default_str();
  lnn_cmd->add_option("--width", lnn_width, "hidden width")->capture_default_str();
  lnn_cmd->add_option("--epochs", lnn_epochs, "epochs")->capture_default_str();
  lnn_cmd->add_option("--mode", lnn_mode, "full | minibatch")->capture_default_str();
  lnn_cmd->add_option("--batch", lnn_batch, "minibatch size")->capture_default_str();
  lnn_cmd->add_option("--lr", lnn_lr, "learning rate")->capture_default_str();
  lnn_cmd->add_option("--lr-end", lnn_lr_end, "final rate of the cosine schedule")
      ->capture_default_str();
  lnn_cmd->add_option("--schedule", lnn_schedule, "constant | cosine")->capture_default_str();
  lnn_cmd->add_option("--decay", lnn_decay, "weight decay")->capture_default_str();
  lnn_cmd->add_option("--init", lnn_init, "balanced | kaiming")->capture_default_str();
  lnn_cmd->add_option("--norm0", lnn_norm0, "end-to-end norm of the balanced start")
      ->capture_default_str();
  lnn_cmd->add_option("--name", lnn_name, "history CSV name")->capture_default_str();
  lnn_cmd->callback([&] {
    MadeData md = make_dataset(lnn_d, g);
    OptimizerConfig cfg0;
    if (lnn_mode == "full")
      cfg0.mode = OptimizerMode::FullBatch;
    else if (lnn_mode == "minibatch")
      cfg0.mode = OptimizerMode::Minibatch;
    else
      throw std::invalid_argument("--mode must be full or minibatch");
    if (lnn_schedule == "cosine")
      cfg0.schedule = LrSchedule::Cosine;
    else if (lnn_schedule != "constant")
      throw std::invalid_argument("--schedule must be constant or cosine");
    cfg0.epochs = lnn_epochs;
    cfg0.batch_size = lnn_batch;
    cfg0.lr_start = lnn_lr;
    cfg0.lr_end = lnn_lr_end;
    cfg0.weight_decay = lnn_decay;
    const Rng root(g.seed);
    cfg0.shuffle_seed = root.substream("shuffle").next_u64();
    LnnParams params;
    if (lnn_init == "balanced") {
      params = init_balanced_constant(lnn_depth, lnn_width, md.spec.dim(), lnn_norm0);
    } else if (lnn_init == "kaiming") {
      Rng init_rng = root.substream("init");
      params = init_kaiming(lnn_depth, lnn_width, md.spec.dim(), init_rng);
    } else {
      throw std::invalid_argument("--init must be balanced or kaiming");
    }
    const LnnTrainResult res = train_lnn(md.ds, std::move(params), cfg0);
    const fs::path path = out_path(g, lnn_name);
    {
      std::ofstream out(path, std::ios::binary);
      if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
      export_history_csv(res.history, out);
    }
    json cfg = data_config(lnn_d, md.g_used, g);
    cfg["depth"] = lnn_depth;
    cfg["width"] = lnn_width;
    cfg["epochs"] = lnn_epochs;
    cfg["mode"] = lnn_mode;
    cfg["batch"] = lnn_batch;
    cfg["lr"] = lnn_lr;
    cfg["lr_end"] = lnn_lr_end;
    cfg["schedule"] = lnn_schedule;
    cfg["decay"] = lnn_decay;
    cfg["init"] = lnn_init;
    cfg["norm0"] = lnn_norm0;
    json result{{"file", path.string()},
                {"w_star", res.w_star},
                {"end_to_end", end_to_end(res.params)}};
    if (!res.history.empty()) {
      result["final_loss"] = res.history.back().loss;
      result["final_wx_err"] = res.history.back().wx_err;
      result["final_wy_err"] = res.history.back().wy_err;
    }
    emit(g, cfg, result);
  });

  // ---- train-relu -----------------------------------------------------------
  auto* relu_cmd = app.add_subcommand("train-relu", "SGD on a ReLU network over ambient inputs");
  relu_cmd->fallthrough();
  DataFlags relu_d;
  relu_d.dx = 3;
  relu_d.dy = 2;
  relu_d.sigma = 0.0;
  relu_d.n = 5000;
  int relu_epochs = 100, relu_batch = 50;
  double relu_lr = 1e-2, relu_lr_end = 1e-4, relu_decay = 0.0, relu_eta = 1.0;
  std::string relu_hidden = "100", relu_mode = "minibatch", relu_schedule = "cosine";
  std::string relu_normal_init = "constant", relu_name = "relu_history.csv", relu_save;
  add_data_flags(relu_cmd, relu_d);
  relu_cmd->add_option("--hidden", relu_hidden, "hidden widths, comma-separated")
      ->capture_default_str();
  relu_cmd->add_option("--epochs", relu_epochs, "epochs")->capture_default_str();
  relu_cmd->add_option("--mode", relu_mode, "full | minibatch")->capture_default_str();
  relu_cmd->add_option("--batch", relu_batch, "minibatch size")->capture_default_str();
  relu_cmd->add_option("--lr", relu_lr, "learning rate")->capture_default_str();
  relu_cmd->add_option("--lr-end", relu_lr_end, "final rate of the cosine schedule")
      ->capture_default_str();
  relu_cmd->add_option("--schedule", relu_schedule, "constant | cosine")->capture_default_str();
  relu_cmd->add_option("--decay", relu_decay, "weight decay")->capture_default_str();
  relu_cmd->add_option("--eta", relu_eta, "first-layer normal-block fill")->capture_default_str();
  relu_cmd->add_option("--normal-init", relu_normal_init, "constant | gaussian")
      ->capture_default_str();
  relu_cmd->add_option("--name", relu_name, "history CSV name")->capture_default_str();
  relu_cmd->add_option("--save", relu_save, "also write the trained weights to this JSON file");
  relu_cmd->callback([&] {
    MadeData md = make_dataset(relu_d, g);
    const std::vector<int> hidden = parse_ints(relu_hidden, "--hidden");
    NormalInit scheme;
    if (relu_normal_init == "constant")
      scheme = NormalInit::Constant;
    else if (relu_normal_init == "gaussian")
      scheme = NormalInit::Gaussian;
    else
      throw std::invalid_argument("--normal-init must be constant or gaussian");
    OptimizerConfig cfg0;
    if (relu_mode == "full")
      cfg0.mode = OptimizerMode::FullBatch;
    else if (relu_mode == "minibatch")
      cfg0.mode = OptimizerMode::Minibatch;
    else
      throw std::invalid_argument("--mode must be full or minibatch");
    if (relu_schedule == "cosine")
      cfg0.schedule = LrSchedule::Cosine;
    else if (relu_schedule != "constant")
      throw std::invalid_argument("--schedule must be constant or cosine");
    cfg0.epochs = relu_epochs;
    cfg0.batch_size = relu_batch;
    cfg0.lr_start = relu_lr;
    cfg0.lr_end = relu_lr_end;
    cfg0.weight_decay = relu_decay;
    const Rng root(g.seed);
    cfg0.shuffle_seed = root.substream("shuffle").next_u64();
    Rng init_rng = root.substream("init");
    ReluParams params = init_relu(md.spec.dim(), md.spec.dx, hidden, scheme, relu_eta, init_rng);
    const ReluTrainResult res = train_relu(md.ds, std::move(params), cfg0);
    const fs::path path = out_path(g, relu_name);
    {
      std::ofstream out(path, std::ios::binary);
      if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
      export_relu_history_csv(res.history, out);
    }
    json result{{"file", path.string()},
                {"final_loss", res.history.back().loss},
                {"final_w1y_norm", res.history.back().w1y_norm}};
    if (!relu_save.empty()) {
      const fs::path ppath = out_path(g, relu_save);
      write_file(ppath, relu_params_to_json(res.params));
      result["params_file"] = ppath.string();
    }
    json cfg = data_config(relu_d, md.g_used, g);
    cfg["hidden"] = hidden;
    cfg["epochs"] = relu_epochs;
    cfg["mode"] = relu_mode;
    cfg["batch"] = relu_batch;
    cfg["lr"] = relu_lr;
    cfg["lr_end"] = relu_lr_end;
    cfg["schedule"] = relu_schedule;
    cfg["decay"] = relu_decay;
    cfg["eta"] = relu_eta;
    cfg["normal_init"] = relu_normal_init;
    emit(g, cfg, result);
  });

  // ---- stability ------------------------------------------------------------
  auto* stab_cmd =
      app.add_subcommand("stability", "Monte Carlo deviation metric of a saved network");
  stab_cmd->fallthrough();
  std::string stab_params;
  double stab_gamma = 0.5;
  int stab_m = 5000;
  stab_cmd->add_option("--params", stab_params, "weights JSON from train-relu --save")
      ->required();
  stab_cmd->add_option("--gamma", stab_gamma, "normal offset scale")->capture_default_str();
  stab_cmd->add_option("--m", stab_m, "sample count")->capture_default_str();
  stab_cmd->callback([&] {
    const ReluParams p = relu_params_from_json(slurp(stab_params));
    const StabilityEstimate est =
        stability_metric(p, stab_gamma, stab_m,
                         Rng(g.seed).substream("stability_cli").next_u64(), g.threads);
    emit(g,
         json{{"params", stab_params},
              {"gamma", stab_gamma},
              {"m", stab_m},
              {"seed", g.seed},
              {"threads", g.threads}},
         json{{"estimate", est.estimate},
              {"std_error", est.std_error},
              {"samples", est.samples}});
  });

  // ---- bound ---------------------------------------------------------------
  auto* bound_cmd =
      app.add_subcommand("bound", "a-posteriori deviation bound of a saved network at one offset");
  bound_cmd->fallthrough();
  std::string bound_params, bound_y;
  double bound_nu = 0.0;
  bound_cmd->add_option("--params", bound_params, "weights JSON from train-relu --save")
      ->required();
  bound_cmd->add_option("--y", bound_y, "normal offset, comma-separated")->required();
  bound_cmd->add_option("--nu", bound_nu,
                        "offset magnitude for the width-scaling form (0: skip)")
      ->capture_default_str();
  bound_cmd->callback([&] {
    const ReluParams p = relu_params_from_json(slurp(bound_params));
    const Vec y = parse_doubles(bound_y, "--y");
    if (static_cast<int>(y.size()) != p.normal_dim())
      throw std::invalid_argument("--y needs exactly " + std::to_string(p.normal_dim()) +
                                  " coordinates");
    const StabilityReport rpt =
        deep_bound(p, y, Rng(g.seed).substream("bound").next_u64());
    json result = json::parse(stability_report_to_json(rpt));
    if (bound_nu > 0.0) {
      CorollaryDetail det;
      const double cb = corollary_bound(p, y, bound_nu, &det);
      result["corollary"] = json{{"bound", cb},
                                 {"leading", det.leading},
                                 {"d_of_y", det.d_of_y},
                                 {"correction_unit", det.correction_unit},
                                 {"d_tilde_fit", det.d_tilde_fit}};
    }
    emit(g,
         json{{"params", bound_params}, {"y", y}, {"nu", bound_nu}, {"seed", g.seed}},
         result);
  });

  // ---- sweep ---------------------------------------------------------------
  auto* sweep_cmd = app.add_subcommand("sweep", "run a figure/table recipe from a JSON config");
  sweep_cmd->fallthrough();
  std::string sweep_config, sweep_recipe, sweep_target;
  std::vector<std::string> sweep_grid;
  bool sweep_svg = false;
  sweep_cmd->add_option("--config", sweep_config, "JSON config file");
  sweep_cmd->add_option("--recipe", sweep_recipe, "recipe name (overrides the config)");
  sweep_cmd->add_option("--grid", sweep_grid,
                        "axis override as name=v1,v2,... (repeatable)");
  sweep_cmd->add_option("--target", sweep_target, "target function override");
  sweep_cmd->add_flag("--svg", sweep_svg, "emit SVG plots");
  sweep_cmd->callback([&] {
    ExperimentConfig ec;
    if (!sweep_config.empty()) ec = experiment_config_from_json(slurp(sweep_config));
    if (!sweep_recipe.empty()) ec.recipe = sweep_recipe;
    if (ec.recipe.empty())
      throw std::invalid_argument("sweep needs --recipe or a config with one");
    for (const std::string& ov : sweep_grid) {
      const std::size_t eq = ov.find('=');
      if (eq == std::string::npos || eq == 0)
        throw std::invalid_argument("--grid expects name=v1,v2,... (got '" + ov + "')");
      ec.grid[ov.substr(0, eq)] = parse_doubles(ov.substr(eq + 1), "--grid " + ov.substr(0, eq));
    }
    if (!sweep_target.empty()) ec.target_text = sweep_target;
    if (app.count("--seed") > 0) ec.seeds = {g.seed};
    if (app.count("--out") > 0 || ec.output_dir.empty()) ec.output_dir = g.out;
    if (app.count("--threads") > 0 || ec.threads < 1) ec.threads = g.threads;
    if (sweep_svg) ec.emit_svg = true;
    const RecipeReport rep = run_recipe(ec);
    emit(g, json::parse(experiment_config_to_json(ec)),
         json{{"files", rep.files}, {"scalars", rep.scalars}});
  });

  // ---- fit-beta ---------------------------------------------------------------
  auto* beta_cmd =
      app.add_subcommand("fit-beta", "scaling exponents from a sweep CSV (metric vs sample size)");
  beta_cmd->fallthrough();
  std::string beta_csv, beta_name;
  double beta_sigma = 0.5;
  beta_cmd->add_option("--csv", beta_csv, "rows written by the noise sweep")->required();
  beta_cmd->add_option("--sigma", beta_sigma, "noise level to fit at")->capture_default_str();
  beta_cmd->add_option("--name", beta_name, "also write the fitted table to this CSV");
  beta_cmd->callback([&] {
    std::ifstream in(beta_csv, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read '" + beta_csv + "'");
    std::string line;
    if (!std::getline(in, line) || line != "depth,dy,sigma,n,seed,metric")
      throw std::invalid_argument("--csv: expected header depth,dy,sigma,n,seed,metric");
    std::vector<ReluNoiseRow> rows;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string tok;
      std::vector<std::string> cells;
      while (std::getline(ss, tok, ',')) cells.push_back(tok);
      if (cells.size() != 6)
        throw std::invalid_argument("--csv: malformed row '" + line + "'");
      try {
        ReluNoiseRow r;
        r.depth = std::stoi(cells[0]);
        r.dy = std::stoi(cells[1]);
        r.sigma = std::stod(cells[2]);
        r.n = std::stoi(cells[3]);
        r.seed = std::stoull(cells[4]);
        r.metric = std::stod(cells[5]);
        rows.push_back(r);
      } catch (const std::exception&) {
        throw std::invalid_argument("--csv: malformed row '" + line + "'");
      }
    }
    const BetaTable table = fit_beta(beta_inputs_from_rows(rows, beta_sigma));
    json cells = json::array();
    for (const auto& c : table.cells)
      cells.push_back(json{{"depth", c.depth},
                           {"dy", c.dy},
                           {"beta", c.beta},
                           {"r_squared", c.r_squared}});
    json result{{"cells", cells}};
    if (!beta_name.empty()) {
      const fs::path path = out_path(g, beta_name);
      std::ofstream out(path, std::ios::binary);
      if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
      export_beta_csv(table, out);
      result["file"] = path.string();
    }
    emit(g, json{{"csv", beta_csv}, {"sigma", beta_sigma}}, result);
  });

  // ---- portrait ---------------------------------------------------------------
  auto* port_cmd = app.add_subcommand("portrait", "short flows on the scalar (w_x, w_y) plane");
  port_cmd->fallthrough();
  double port_sigma = 0.25, port_t = 3.0;
  double port_xlo = -2.0, port_xhi = 2.0, port_ylo = -2.0, port_yhi = 2.0;
  int port_depth = 4, port_n = 10000, port_nx = 13, port_ny = 13;
  std::string port_g;
  bool port_svg = false;
  port_cmd->add_option("--sigma", port_sigma, "normal noise scale")->capture_default_str();
  port_cmd->add_option("--depth", port_depth, "number of layers")->capture_default_str();
  port_cmd->add_option("--n", port_n, "sample size")->capture_default_str();
  port_cmd->add_option("--x-lo", port_xlo, "grid lower x")->capture_default_str();
  port_cmd->add_option("--x-hi", port_xhi, "grid upper x")->capture_default_str();
  port_cmd->add_option("--y-lo", port_ylo, "grid lower y")->capture_default_str();
  port_cmd->add_option("--y-hi", port_yhi, "grid upper y")->capture_default_str();
  port_cmd->add_option("--nx", port_nx, "grid points in x")->capture_default_str();
  port_cmd->add_option("--ny", port_ny, "grid points in y")->capture_default_str();
  port_cmd->add_option("--t-short", port_t, "integration time per segment")->capture_default_str();
  port_cmd->add_option("--g", port_g, "target function");
  port_cmd->add_flag("--svg", port_svg, "emit an SVG plot");
  port_cmd->callback([&] {
    ExperimentConfig ec;
    ec.recipe = "phase_portrait";
    ec.grid["sigma"] = {port_sigma};
    ec.grid["depth"] = {static_cast<double>(port_depth)};
    ec.grid["n"] = {static_cast<double>(port_n)};
    ec.grid["x_lo"] = {port_xlo};
    ec.grid["x_hi"] = {port_xhi};
    ec.grid["y_lo"] = {port_ylo};
    ec.grid["y_hi"] = {port_yhi};
    ec.grid["nx"] = {static_cast<double>(port_nx)};
    ec.grid["ny"] = {static_cast<double>(port_ny)};
    ec.grid["t_short"] = {port_t};
    ec.seeds = {g.seed};
    ec.output_dir = g.out;
    ec.emit_svg = port_svg;
    ec.threads = g.threads;
    ec.target_text = port_g;
    const RecipeReport rep = run_recipe(ec);
    emit(g, json::parse(experiment_config_to_json(ec)),
         json{{"files", rep.files}, {"scalars", rep.scalars}});
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code == 0) return 0;  // --help
    error_json("usage", 1, e.what());
    return 1;
  } catch (const NumericError& e) {
    error_json("numeric", 2, e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    error_json("usage", 1, e.what());
    return 1;
  } catch (const std::exception& e) {
    error_json("io", 3, e.what());
    return 3;
  }
  return 0;
}
