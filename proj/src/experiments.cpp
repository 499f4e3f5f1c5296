#include "embedflow/experiments.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <utility>

#include <json.hpp>

#include "embedflow/linalg.hpp"
#include "embedflow/linear_model.hpp"
#include "embedflow/lnn_flow.hpp"
#include "embedflow/lnn_train.hpp"

namespace embedflow {
namespace {

constexpr const char* kVersion = "0.1.0";

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmtg(double v, const char* spec = "%.4g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// ---- grid resolution -----------------------------------------------------

// Serves a recipe's axes from cfg.grid with per-axis fallbacks and records
// every value actually used, so the manifest reflects the resolved grid.
struct AxisBag {
  const ExperimentConfig* cfg = nullptr;
  std::map<std::string, std::vector<double>> used;

  void expect(std::initializer_list<const char*> names) const {
    for (const auto& entry : cfg->grid) {
      bool known = false;
      for (const char* n : names)
        if (entry.first == n) {
          known = true;
          break;
        }
      if (!known) {
        std::string all;
        for (const char* n : names) {
          if (!all.empty()) all += ", ";
          all += n;
        }
        throw std::invalid_argument("recipe '" + cfg->recipe + "' has no grid axis '" +
                                    entry.first + "' (available: " + all + ")");
      }
    }
  }

  std::vector<double> axis(const std::string& name, std::vector<double> fallback) {
    auto it = cfg->grid.find(name);
    std::vector<double> vals = it == cfg->grid.end() ? std::move(fallback) : it->second;
    if (vals.empty())
      throw std::invalid_argument("grid axis '" + name + "' must not be empty");
    for (double v : vals)
      if (!std::isfinite(v))
        throw std::invalid_argument("grid axis '" + name + "' has a non-finite entry");
    used[name] = vals;
    return vals;
  }

  double knob(const std::string& name, double fallback) {
    auto it = cfg->grid.find(name);
    if (it != cfg->grid.end() && it->second.size() != 1)
      throw std::invalid_argument("grid axis '" + name + "' expects exactly one value");
    const double v = it == cfg->grid.end() ? fallback : it->second.front();
    if (!std::isfinite(v))
      throw std::invalid_argument("grid axis '" + name + "' has a non-finite entry");
    used[name] = {v};
    return v;
  }

  int iknob(const std::string& name, int fallback) {
    const double v = knob(name, fallback);
    if (v != std::floor(v) || std::abs(v) > 2.0e9)
      throw std::invalid_argument("grid axis '" + name + "' expects an integer");
    return static_cast<int>(v);
  }

  std::vector<int> iaxis(const std::string& name, std::vector<double> fallback) {
    std::vector<double> vals = axis(name, std::move(fallback));
    std::vector<int> out;
    out.reserve(vals.size());
    for (double v : vals) {
      if (v != std::floor(v) || v < 1.0 || v > 2.0e9)
        throw std::invalid_argument("grid axis '" + name + "' expects positive integers");
      out.push_back(static_cast<int>(v));
    }
    return out;
  }
};

// ---- output plumbing -----------------------------------------------------

std::ofstream open_out(const std::filesystem::path& dir, const std::string& name,
                       RecipeReport& rep) {
  const std::filesystem::path p = dir / name;
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  rep.files.push_back(p.string());
  return out;
}

void write_text_file(const std::filesystem::path& dir, const std::string& name,
                     const std::string& body, RecipeReport& rep) {
  std::ofstream out = open_out(dir, name, rep);
  out << body;
  if (!out) throw std::runtime_error("short write on '" + (dir / name).string() + "'");
}

// ---- tiny SVG line plots ---------------------------------------------------

struct PlotSeries {
  std::string label;
  std::vector<std::array<double, 2>> pts;
};

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&')
      out += "&amp;";
    else if (c == '<')
      out += "&lt;";
    else if (c == '>')
      out += "&gt;";
    else
      out += c;
  }
  return out;
}

std::vector<std::pair<double, std::string>> make_ticks(double lo, double hi, bool log2_axis) {
  std::vector<std::pair<double, std::string>> ticks;
  if (log2_axis) {
    const int k0 = static_cast<int>(std::ceil(lo - 1e-9));
    const int k1 = static_cast<int>(std::floor(hi + 1e-9));
    if (k1 >= k0) {
      const int step = std::max(1, (k1 - k0 + 5) / 6);
      for (int k = k0; k <= k1; k += step)
        ticks.emplace_back(static_cast<double>(k), "2^" + std::to_string(k));
      return ticks;
    }
  }
  for (int i = 0; i <= 4; ++i) {
    const double t = lo + (hi - lo) * i / 4.0;
    ticks.emplace_back(t, fmtg(log2_axis ? std::exp2(t) : t, "%.3g"));
  }
  return ticks;
}

std::string render_plot(const std::string& title, const std::string& xlabel,
                        const std::string& ylabel, const std::vector<PlotSeries>& series,
                        bool log_x, bool log_y) {
  static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  constexpr int kColors = 8;
  constexpr double W = 720.0, H = 480.0, ML = 76.0, MR = 22.0, MT = 42.0, MB = 58.0;

  std::vector<std::vector<std::array<double, 2>>> tr(series.size());
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (std::size_t s = 0; s < series.size(); ++s) {
    for (const auto& p : series[s].pts) {
      double tx = p[0], ty = p[1];
      if (log_x) {
        if (!(tx > 0.0)) continue;
        tx = std::log2(tx);
      }
      if (log_y) {
        if (!(ty > 0.0)) continue;
        ty = std::log2(ty);
      }
      if (!std::isfinite(tx) || !std::isfinite(ty)) continue;
      tr[s].push_back({tx, ty});
      xmin = std::min(xmin, tx);
      xmax = std::max(xmax, tx);
      ymin = std::min(ymin, ty);
      ymax = std::max(ymax, ty);
    }
  }
  if (!(xmin <= xmax)) {
    xmin = 0.0;
    xmax = 1.0;
    ymin = 0.0;
    ymax = 1.0;
  }
  const double xpad = (xmax - xmin) > 0.0 ? 0.05 * (xmax - xmin) : 0.5;
  const double ypad = (ymax - ymin) > 0.0 ? 0.05 * (ymax - ymin) : 0.5;
  const double x0 = xmin - xpad, x1 = xmax + xpad;
  const double y0 = ymin - ypad, y1 = ymax + ypad;
  const auto sx = [&](double v) { return ML + (v - x0) / (x1 - x0) * (W - ML - MR); };
  const auto sy = [&](double v) { return H - MB - (v - y0) / (y1 - y0) * (H - MT - MB); };
  const auto f2 = [](double v) { return fmtg(v, "%.2f"); };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + f2(W) + "\" height=\"" + f2(H) +
         "\" viewBox=\"0 0 " + f2(W) + " " + f2(H) + "\">\n";
  svg += "<rect width=\"" + f2(W) + "\" height=\"" + f2(H) + "\" fill=\"#ffffff\"/>\n";
  svg += "<text x=\"" + f2(W / 2) + "\" y=\"24\" font-family=\"monospace\" font-size=\"15\" "
         "text-anchor=\"middle\">" + xml_escape(title) + "</text>\n";

  for (const auto& [tv, label] : make_ticks(xmin, xmax, log_x)) {
    const double px = sx(tv);
    svg += "<line x1=\"" + f2(px) + "\" y1=\"" + f2(MT) + "\" x2=\"" + f2(px) + "\" y2=\"" +
           f2(H - MB) + "\" stroke=\"#e0e0e0\"/>\n";
    svg += "<text x=\"" + f2(px) + "\" y=\"" + f2(H - MB + 16) +
           "\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">" +
           xml_escape(label) + "</text>\n";
  }
  for (const auto& [tv, label] : make_ticks(ymin, ymax, log_y)) {
    const double py = sy(tv);
    svg += "<line x1=\"" + f2(ML) + "\" y1=\"" + f2(py) + "\" x2=\"" + f2(W - MR) + "\" y2=\"" +
           f2(py) + "\" stroke=\"#e0e0e0\"/>\n";
    svg += "<text x=\"" + f2(ML - 8) + "\" y=\"" + f2(py + 4) +
           "\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\">" +
           xml_escape(label) + "</text>\n";
  }
  svg += "<rect x=\"" + f2(ML) + "\" y=\"" + f2(MT) + "\" width=\"" + f2(W - ML - MR) +
         "\" height=\"" + f2(H - MT - MB) + "\" fill=\"none\" stroke=\"#333333\"/>\n";
  svg += "<text x=\"" + f2((ML + W - MR) / 2) + "\" y=\"" + f2(H - 14) +
         "\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"middle\">" +
         xml_escape(xlabel) + "</text>\n";
  svg += "<text x=\"18\" y=\"" + f2((MT + H - MB) / 2) +
         "\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"middle\" "
         "transform=\"rotate(-90 18 " + f2((MT + H - MB) / 2) + ")\">" + xml_escape(ylabel) +
         "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % kColors];
    if (tr[s].size() > 1) {
      std::string pts;
      for (const auto& p : tr[s]) pts += f2(sx(p[0])) + "," + f2(sy(p[1])) + " ";
      svg += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + color +
             "\" stroke-width=\"1.6\"/>\n";
    }
    for (const auto& p : tr[s])
      svg += "<circle cx=\"" + f2(sx(p[0])) + "\" cy=\"" + f2(sy(p[1])) + "\" r=\"2.4\" fill=\"" +
             std::string(color) + "\"/>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % kColors];
    const double ly = MT + 14 + 16.0 * static_cast<double>(s);
    const double lx = W - MR - 170.0;
    svg += "<line x1=\"" + f2(lx) + "\" y1=\"" + f2(ly - 4) + "\" x2=\"" + f2(lx + 22) +
           "\" y2=\"" + f2(ly - 4) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + f2(lx + 28) + "\" y=\"" + f2(ly) +
           "\" font-family=\"monospace\" font-size=\"11\">" + xml_escape(series[s].label) +
           "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

// ---- shared small utilities ------------------------------------------------

void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex mu;
  std::exception_ptr err;
  const auto body = [&] {
    while (true) {
      const int i = next.fetch_add(1);
      if (i >= count) break;
      {
        std::lock_guard<std::mutex> lk(mu);
        if (err) break;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(mu);
        if (!err) err = std::current_exception();
        break;
      }
    }
  };
  std::vector<std::thread> pool;
  const int workers = std::min(threads, count);
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

std::string sum_of_sines(int dx, const std::string& coef) {
  std::string s;
  for (int j = 1; j <= dx; ++j) {
    if (!s.empty()) s += " + ";
    if (!coef.empty()) s += coef + "*";
    s += "sin(pi*x" + std::to_string(j) + ")";
  }
  return s;
}

TargetFunction resolve_target(const ExperimentConfig& cfg, const std::string& fallback, int dx,
                              std::string& used) {
  used = cfg.target_text.empty() ? fallback : cfg.target_text;
  return parse_target(used, dx);
}

// linear interpolation of the time where `v` crosses `level` between samples
double cross_time(double t0, double v0, double t1, double v1, double level) {
  const double d = v1 - v0;
  if (d == 0.0) return t0;
  return t0 + (level - v0) / d * (t1 - t0);
}

// repeat-mean of `val` grouped by exact key, keys kept in first-seen order
std::vector<std::pair<double, double>> mean_by_key(const std::vector<double>& keys,
                                                   const std::vector<double>& vals) {
  std::vector<std::pair<double, double>> out;
  std::vector<int> counts;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    std::size_t at = out.size();
    for (std::size_t k = 0; k < out.size(); ++k)
      if (out[k].first == keys[i]) {
        at = k;
        break;
      }
    if (at == out.size()) {
      out.emplace_back(keys[i], 0.0);
      counts.push_back(0);
    }
    out[at].second += vals[i];
    counts[at] += 1;
  }
  for (std::size_t k = 0; k < out.size(); ++k) out[k].second /= counts[k];
  return out;
}

// ---- recipes ---------------------------------------------------------------

void recipe_wy_scaling(const ExperimentConfig& cfg, AxisBag& bag,
                       const std::filesystem::path& dir, RecipeReport& rep,
                       std::string& target_used) {
  bag.expect({"sigma", "n", "dx", "dy"});
  const int dx = bag.iknob("dx", 2);
  const int dy = bag.iknob("dy", 1);
  // the first sigma anchors the fit against n, the largest n the fit against sigma
  const std::vector<double> sigmas = bag.axis("sigma", {0.25, 1.0, 0.5, 0.125, 0.0625});
  const std::vector<int> ns = bag.iaxis("n", {1000.0, 10000.0, 100000.0});
  const TargetFunction target = resolve_target(cfg, sum_of_sines(dx, "pi"), dx, target_used);

  const EmbeddingSpec spec = EmbeddingSpec::identity(dx, dy, sigmas.front());
  const ScalingTable table = scaling_wy(spec, target, sigmas, ns, cfg.seeds);
  {
    std::ofstream out = open_out(dir, "wy_scaling.csv", rep);
    export_scaling_csv(table, out);
  }
  if (table.fit_vs_sigma) {
    rep.scalars["slope_vs_sigma"] = table.fit_vs_sigma->slope;
    rep.scalars["r2_vs_sigma"] = table.fit_vs_sigma->r_squared;
  }
  if (table.fit_vs_n) {
    rep.scalars["slope_vs_n"] = table.fit_vs_n->slope;
    rep.scalars["r2_vs_n"] = table.fit_vs_n->r_squared;
  }

  if (cfg.emit_svg) {
    std::vector<PlotSeries> series;
    for (int n : ns) {
      std::vector<double> ks, vs;
      for (const auto& r : table.rows)
        if (r.n == n) {
          ks.push_back(r.sigma);
          vs.push_back(r.wy_norm);
        }
      PlotSeries s{"n=" + std::to_string(n), {}};
      for (const auto& [k, v] : mean_by_key(ks, vs)) s.pts.push_back({k, v});
      std::sort(s.pts.begin(), s.pts.end());
      series.push_back(std::move(s));
    }
    write_text_file(dir, "wy_scaling.svg",
                    render_plot("off-manifold weight vs noise", "sigma", "|wy*|", series, true,
                                true),
                    rep);
  }
}

void recipe_eigen_hit(const ExperimentConfig& cfg, AxisBag& bag, const std::filesystem::path& dir,
                      RecipeReport& rep, std::string& target_used) {
  bag.expect({"sigma", "sigma_hit", "n", "n_hit", "depth", "dx", "dy", "offset"});
  const int dx = bag.iknob("dx", 2);
  const int dy = bag.iknob("dy", 1);
  const int depth = bag.iknob("depth", 5);
  const std::vector<double> sig_eigen =
      bag.axis("sigma", {0.0, 0.5, 0.25, 0.125, 0.0625, 0.03125});
  const int n_eigen = bag.iknob("n", 102400);
  const std::vector<double> sig_hit = bag.axis("sigma_hit", {0.5, 0.25, 0.125, 0.0625});
  const int n_hit = bag.iknob("n_hit", 100000);
  const double offset = bag.knob("offset", 0.1);
  const TargetFunction target = resolve_target(cfg, sum_of_sines(dx, "pi"), dx, target_used);
  const EmbeddingSpec spec = EmbeddingSpec::identity(dx, dy, 0.5);

  const EigenGapScan scan = eigen_gap_scan(spec, target, depth, sig_eigen, n_eigen, cfg.seeds);
  {
    std::ofstream out = open_out(dir, "eigen_gap.csv", rep);
    out << "sigma,seed,min_abs,zero_count\n";
    for (const auto& r : scan.rows)
      out << fmt17(r.sigma) << ',' << r.seed << ',' << fmt17(r.min_abs) << ',' << r.zero_count
          << '\n';
  }
  if (scan.fit) {
    rep.scalars["eigen_slope"] = scan.fit->slope;
    rep.scalars["eigen_r2"] = scan.fit->r_squared;
  }
  {
    double zeros = 0.0;
    int cnt = 0;
    for (const auto& r : scan.rows)
      if (r.sigma == 0.0) {
        zeros += r.zero_count;
        ++cnt;
      }
    if (cnt > 0) rep.scalars["sigma0_zero_count_mean"] = zeros / cnt;
  }

  // first-passage times from a point displaced off the critical point
  struct HitRow {
    double sigma;
    std::uint64_t seed;
    int coordinate;
    double hit_time;
    bool reached;
    double eigen_min_abs;
    double budget;
  };
  std::vector<HitRow> hit_rows;
  std::vector<double> fit_sig, fit_t;
  int unreached = 0;
  for (std::size_t si = 0; si < sig_hit.size(); ++si) {
    double acc = 0.0;
    int cnt = 0;
    for (std::size_t ri = 0; ri < cfg.seeds.size(); ++ri) {
      const std::uint64_t cell_seed =
          Rng(cfg.seeds[ri]).substream("eigen_hit").substream(si).next_u64();
      EmbeddingSpec espec = spec;
      espec.sigma = sig_hit[si];
      const EmbeddedDataset ds = sample_dataset(espec, target, n_hit, XDist::Uniform, cell_seed);
      const EmpiricalMoments m = compute_moments(ds);
      const FlowSystem sys(m, espec.sigma, depth);
      const Vec w_star = stationary_point(m, espec.sigma).w.concat();
      Vec w0 = w_star;
      for (double& c : w0) c += offset;
      const TimingResult tr = hit_times(sys, w0, w_star);
      for (int c = 0; c < static_cast<int>(tr.hit_times.size()); ++c) {
        hit_rows.push_back({espec.sigma, cell_seed, c + 1, tr.hit_times[c], tr.hit_reached[c],
                            tr.eigen_min_abs, tr.budget});
        if (c >= dx) {
          if (tr.hit_reached[c]) {
            acc += tr.hit_times[c];
            ++cnt;
          } else {
            ++unreached;
          }
        }
      }
    }
    if (cnt > 0 && acc > 0.0) {
      fit_sig.push_back(sig_hit[si]);
      fit_t.push_back(acc / cnt);
    }
  }
  {
    std::ofstream out = open_out(dir, "hit_times.csv", rep);
    out << "sigma,seed,coordinate,hit_time,reached,eigen_min_abs,budget\n";
    for (const auto& r : hit_rows)
      out << fmt17(r.sigma) << ',' << r.seed << ',' << r.coordinate << ',' << fmt17(r.hit_time)
          << ',' << (r.reached ? 1 : 0) << ',' << fmt17(r.eigen_min_abs) << ',' << fmt17(r.budget)
          << '\n';
  }
  rep.scalars["hit_unreached"] = unreached;
  if (fit_sig.size() >= 2) {
    const LogLogFit f = fit_loglog(fit_sig, fit_t);
    rep.scalars["hit_slope"] = f.slope;
    rep.scalars["hit_r2"] = f.r_squared;
  }

  if (cfg.emit_svg) {
    PlotSeries gap{"min |lambda|", {}};
    std::vector<double> ks, vs;
    for (const auto& r : scan.rows)
      if (r.sigma > 0.0) {
        ks.push_back(r.sigma);
        vs.push_back(r.min_abs);
      }
    for (const auto& [k, v] : mean_by_key(ks, vs)) gap.pts.push_back({k, v});
    std::sort(gap.pts.begin(), gap.pts.end());
    write_text_file(dir, "eigen_gap.svg",
                    render_plot("slow eigenvalue vs noise", "sigma", "min |lambda|", {gap}, true,
                                true),
                    rep);
    PlotSeries hit{"normal coordinate", {}};
    for (std::size_t i = 0; i < fit_sig.size(); ++i) hit.pts.push_back({fit_sig[i], fit_t[i]});
    std::sort(hit.pts.begin(), hit.pts.end());
    write_text_file(dir, "hit_times.svg",
                    render_plot("first-passage time vs noise", "sigma", "T", {hit}, true, true),
                    rep);
  }
}

void recipe_origin_trap(const ExperimentConfig& cfg, AxisBag& bag,
                        const std::filesystem::path& dir, RecipeReport& rep,
                        std::string& target_used) {
  bag.expect({"depth", "sigma", "n", "t_end", "w0", "max_step", "ball"});
  const int depth = bag.iknob("depth", 10);
  const double sigma = bag.knob("sigma", 0.05);
  const int n = bag.iknob("n", 10000);
  const double t_end = bag.knob("t_end", 2000.0);
  const double ball = bag.knob("ball", 0.1);
  const std::vector<double> w0v = bag.axis("w0", {-2.0, 1.0});
  if (w0v.size() != 2)
    throw std::invalid_argument("origin-trap runs on the plane: w0 needs exactly two entries");
  const TargetFunction target = resolve_target(cfg, "pi*sin(pi*x1)", 1, target_used);
  const EmbeddingSpec spec = EmbeddingSpec::identity(1, 1, sigma);

  OdeOptions opts;
  opts.max_step = bag.knob("max_step", 0.5);

  double ratio_min = std::numeric_limits<double>::infinity();
  for (std::size_t ri = 0; ri < cfg.seeds.size(); ++ri) {
    const std::uint64_t seed = Rng(cfg.seeds[ri]).substream("origin_trap").next_u64();
    const EmbeddedDataset ds = sample_dataset(spec, target, n, XDist::Uniform, seed);
    const EmpiricalMoments m = compute_moments(ds);
    const FlowSystem sys(m, sigma, depth);
    const StationaryPoint sp = stationary_point(m, sigma);
    const double wx_star = sp.w.wx[0];
    const double wy_star = sp.w.wy[0];

    const OdeSolution sol = simulate(sys, {w0v[0], w0v[1]}, t_end, opts);
    {
      const std::string name =
          ri == 0 ? "trajectory.csv" : "trajectory_" + std::to_string(ri + 1) + ".csv";
      std::ofstream out = open_out(dir, name, rep);
      export_trajectory_csv(sys, sol, out);
    }

    // first-passage bookkeeping on the recorded states
    double t_app = -1.0, t_exit = -1.0, t_wx = -1.0, wy_gap = -1.0;
    std::vector<double> norms(sol.states.size());
    for (std::size_t i = 0; i < sol.states.size(); ++i) norms[i] = norm2(sol.states[i]);
    for (std::size_t i = 1; i < norms.size(); ++i) {
      if (t_app < 0.0 && norms[i] < ball) {
        t_app = norms[i - 1] >= ball
                    ? cross_time(sol.times[i - 1], norms[i - 1], sol.times[i], norms[i], ball)
                    : sol.times[i - 1];
        continue;
      }
      if (t_app >= 0.0 && t_exit < 0.0 && norms[i] > ball) {
        t_exit = cross_time(sol.times[i - 1], norms[i - 1], sol.times[i], norms[i], ball);
        break;
      }
    }
    for (std::size_t i = 1; i < sol.states.size(); ++i) {
      if (t_exit >= 0.0 && sol.times[i] < t_exit) continue;
      if (std::abs(sol.states[i][0] - wx_star) <= 1e-3) {
        t_wx = sol.times[i];
        wy_gap = std::abs(sol.states[i][1] - wy_star);
        break;
      }
    }
    const double dwell = (t_app >= 0.0 && t_exit >= 0.0) ? t_exit - t_app : -1.0;
    if (t_app > 0.0 && dwell > 0.0) ratio_min = std::min(ratio_min, dwell / t_app);
    if (ri == 0) {
      rep.scalars["approach_time"] = t_app;
      rep.scalars["exit_time"] = t_exit;
      rep.scalars["dwell_time"] = dwell;
      rep.scalars["dwell_over_approach"] = (t_app > 0.0 && dwell > 0.0) ? dwell / t_app : -1.0;
      rep.scalars["wx_hit_time"] = t_wx;
      rep.scalars["wy_gap_at_wx_hit"] = wy_gap;
      rep.scalars["wx_star"] = wx_star;
      rep.scalars["wy_star"] = wy_star;

      if (cfg.emit_svg) {
        PlotSeries path{"w(t)", {}};
        for (const auto& st : sol.states) path.pts.push_back({st[0], st[1]});
        write_text_file(dir, "origin_trap.svg",
                        render_plot("trajectory through the origin", "w_x", "w_y", {path}, false,
                                    false),
                        rep);
      }
    }
  }
  if (std::isfinite(ratio_min)) rep.scalars["dwell_over_approach_min"] = ratio_min;
}

void recipe_lnn_train(const ExperimentConfig& cfg, AxisBag& bag, const std::filesystem::path& dir,
                      RecipeReport& rep, std::string& target_used) {
  bag.expect({"depth", "width", "n", "sigma", "epochs_full", "epochs_sgd", "lr_start", "lr_end",
              "norm0", "batch"});
  const int depth = bag.iknob("depth", 6);
  const int width = bag.iknob("width", 10);
  const int n = bag.iknob("n", 4000);
  const double sigma = bag.knob("sigma", 0.05);
  const int epochs_full = bag.iknob("epochs_full", 20000);
  const int epochs_sgd = bag.iknob("epochs_sgd", 100);
  const double lr_start = bag.knob("lr_start", 2.5e-3);
  const double lr_end = bag.knob("lr_end", 2.5e-5);
  const double norm0 = bag.knob("norm0", std::exp2(-6.0));
  const int batch = bag.iknob("batch", 50);
  const int dx = 3, dy = 2;
  const TargetFunction target = resolve_target(
      cfg, "2*x1 + 2*x2 + 2*x3 + " + sum_of_sines(dx, "0.1"), dx, target_used);

  const EmbeddingSpec spec = EmbeddingSpec::identity(dx, dy, sigma);
  const Rng root = Rng(cfg.seeds.front()).substream("lnn_train");
  const EmbeddedDataset ds =
      sample_dataset(spec, target, n, XDist::Uniform, root.substream("data").next_u64());

  OptimizerConfig full;
  full.mode = OptimizerMode::FullBatch;
  full.epochs = epochs_full;
  full.lr_start = lr_start;
  full.lr_end = lr_end;
  full.schedule = LrSchedule::Cosine;
  const LnnTrainResult fgd =
      train_lnn(ds, init_balanced_constant(depth, width, spec.dim(), norm0), full);
  {
    std::ofstream out = open_out(dir, "lnn_fgd.csv", rep);
    export_history_csv(fgd.history, out);
  }
  rep.scalars["fgd_final_loss"] = fgd.history.back().loss;
  rep.scalars["fgd_final_wx_err"] = fgd.history.back().wx_err;
  rep.scalars["fgd_final_wy_err"] = fgd.history.back().wy_err;

  OptimizerConfig sgd = full;
  sgd.mode = OptimizerMode::Minibatch;
  sgd.epochs = epochs_sgd;
  sgd.batch_size = batch;
  sgd.shuffle_seed = root.substream("shuffle").next_u64();
  Rng init_rng = root.substream("init");
  const LnnTrainResult sgd_res = train_lnn(ds, init_kaiming(depth, width, spec.dim(), init_rng), sgd);
  {
    std::ofstream out = open_out(dir, "lnn_sgd.csv", rep);
    export_history_csv(sgd_res.history, out);
  }
  rep.scalars["sgd_final_loss"] = sgd_res.history.back().loss;
  rep.scalars["sgd_final_wx_err"] = sgd_res.history.back().wx_err;
  rep.scalars["sgd_final_wy_err"] = sgd_res.history.back().wy_err;

  if (cfg.emit_svg) {
    PlotSeries a{"full-batch", {}}, b{"minibatch", {}};
    for (const auto& h : fgd.history) a.pts.push_back({static_cast<double>(h.epoch), h.loss});
    for (const auto& h : sgd_res.history) b.pts.push_back({static_cast<double>(h.epoch), h.loss});
    write_text_file(dir, "lnn_train.svg",
                    render_plot("deep linear training loss", "epoch", "loss", {a, b}, false, true),
                    rep);
  }
}

void recipe_lnn_noise(const ExperimentConfig& cfg, AxisBag& bag, const std::filesystem::path& dir,
                      RecipeReport& rep, std::string& target_used) {
  bag.expect({"sigma", "n", "depth", "width", "repeats", "epochs", "lr"});
  const std::vector<double> sigmas = bag.axis("sigma", {0.5, 0.25, 0.125, 0.0625});
  const std::vector<int> ns = bag.iaxis("n", {1000.0, 4000.0});
  const int depth = bag.iknob("depth", 3);
  const int width = bag.iknob("width", 6);
  const int repeats = bag.iknob("repeats", 2);
  const int epochs = bag.iknob("epochs", 400);
  const double lr = bag.knob("lr", 5e-3);
  const TargetFunction target = resolve_target(cfg, "pi*sin(pi*x1)", 1, target_used);
  const EmbeddingSpec spec = EmbeddingSpec::identity(1, 1, sigmas.front());

  OptimizerConfig opt;
  opt.mode = OptimizerMode::FullBatch;
  opt.epochs = epochs;
  opt.lr_start = lr;
  const LnnSweepResult table =
      noise_sweep_lnn(spec, target, depth, width, sigmas, ns, repeats, cfg.seeds.front(), opt);
  {
    std::ofstream out = open_out(dir, "lnn_noise.csv", rep);
    export_lnn_sweep_csv(table, out);
  }
  if (table.fit_vs_sigma) {
    rep.scalars["slope_vs_sigma"] = table.fit_vs_sigma->slope;
    rep.scalars["r2_vs_sigma"] = table.fit_vs_sigma->r_squared;
  }
  if (table.fit_vs_n) {
    rep.scalars["slope_vs_n"] = table.fit_vs_n->slope;
    rep.scalars["r2_vs_n"] = table.fit_vs_n->r_squared;
  }

  if (cfg.emit_svg) {
    std::vector<PlotSeries> series;
    for (int n : ns) {
      std::vector<double> ks, vs;
      for (const auto& r : table.rows)
        if (r.n == n) {
          ks.push_back(r.sigma);
          vs.push_back(r.wy_norm);
        }
      PlotSeries s{"n=" + std::to_string(n), {}};
      for (const auto& [k, v] : mean_by_key(ks, vs)) s.pts.push_back({k, v});
      std::sort(s.pts.begin(), s.pts.end());
      series.push_back(std::move(s));
    }
    write_text_file(dir, "lnn_noise.svg",
                    render_plot("trained off-manifold weight vs noise", "sigma", "|w_y|", series,
                                true, true),
                    rep);
  }
}

// At zero training noise the ambient normal coordinates are identically zero,
// so the first layer's normal columns receive zero gradient and stay at their
// initial fill for the whole run (weight decay off). One trained stack
// therefore serves every eta: rewrite the untouched columns instead of
// retraining.
ReluParams with_normal_fill(ReluParams p, double eta) {
  Matrix& w1 = p.weights.front();
  for (int i = 0; i < w1.rows(); ++i)
    for (int j = p.split; j < w1.cols(); ++j) w1(i, j) = eta;
  return p;
}

void recipe_relu_scaling(const ExperimentConfig& cfg, AxisBag& bag,
                         const std::filesystem::path& dir, RecipeReport& rep,
                         std::string& target_used) {
  bag.expect({"gamma", "eta", "depth", "n", "width", "metric_samples", "fixed_eta",
              "fixed_gamma"});
  const std::vector<double> gammas =
      bag.axis("gamma", {0.03125, 0.0625, 0.125, 0.25, 0.5});
  const std::vector<double> etas = bag.axis("eta", {0.03125, 0.0625, 0.125, 0.25, 0.5});
  const std::vector<int> depths = bag.iaxis("depth", {2.0, 6.0});
  const int n = bag.iknob("n", 5000);
  const int width = bag.iknob("width", 100);
  const int metric_samples = bag.iknob("metric_samples", 50000);
  const double fixed_eta = bag.knob("fixed_eta", 1.0);
  const double fixed_gamma = bag.knob("fixed_gamma", 1.0);
  for (double g : gammas)
    if (!(g > 0.0)) throw std::invalid_argument("gamma axis must be positive");
  const int dx = 3, dy = 2;
  const TargetFunction target = resolve_target(cfg, sum_of_sines(dx, ""), dx, target_used);
  const EmbeddingSpec spec = EmbeddingSpec::identity(dx, dy, 0.0);

  struct Row {
    int depth;
    std::string sweep;
    double gamma;
    double eta;
    std::uint64_t seed;
    double metric;
  };
  std::vector<Row> rows;
  for (std::size_t di = 0; di < depths.size(); ++di) {
    const int depth = depths[di];
    const std::vector<int> hidden(static_cast<std::size_t>(depth - 1), width);
    for (std::size_t rep_i = 0; rep_i < cfg.seeds.size(); ++rep_i) {
      const Rng net_rng = Rng(cfg.seeds[rep_i])
                              .substream("relu_scaling")
                              .substream(static_cast<std::uint64_t>(depth));
      const std::uint64_t train_seed = net_rng.substream("train").next_u64();
      const ReluParams base = train_embedded_net(spec, target, n, hidden, NormalInit::Constant,
                                                 fixed_eta, cosine_sgd_config(), train_seed);
      for (std::size_t gi = 0; gi < gammas.size(); ++gi) {
        const std::uint64_t ms = net_rng.substream("metric_gamma").substream(gi).next_u64();
        const double m =
            stability_metric(base, gammas[gi], metric_samples, ms, cfg.threads).estimate;
        rows.push_back({depth, "gamma", gammas[gi], fixed_eta, train_seed, m});
      }
      for (std::size_t ei = 0; ei < etas.size(); ++ei) {
        const ReluParams net = with_normal_fill(base, etas[ei]);
        const std::uint64_t ms = net_rng.substream("metric_eta").substream(ei).next_u64();
        const double m =
            stability_metric(net, fixed_gamma, metric_samples, ms, cfg.threads).estimate;
        rows.push_back({depth, "eta", fixed_gamma, etas[ei], train_seed, m});
      }
    }
  }
  {
    std::ofstream out = open_out(dir, "relu_scaling.csv", rep);
    out << "depth,sweep,gamma,eta,seed,metric\n";
    for (const auto& r : rows)
      out << r.depth << ',' << r.sweep << ',' << fmt17(r.gamma) << ',' << fmt17(r.eta) << ','
          << r.seed << ',' << fmt17(r.metric) << '\n';
  }

  // per-depth slopes plus the shallow-vs-deep gap, both sweeps
  std::vector<PlotSeries> svg_gamma, svg_eta;
  std::map<int, std::vector<std::pair<double, double>>> gap_gamma, gap_eta;
  for (int depth : depths) {
    for (const char* sweep : {"gamma", "eta"}) {
      std::vector<double> ks, vs;
      for (const auto& r : rows)
        if (r.depth == depth && r.sweep == sweep) {
          ks.push_back(sweep == std::string("gamma") ? r.gamma : r.eta);
          vs.push_back(r.metric);
        }
      auto means = mean_by_key(ks, vs);
      std::sort(means.begin(), means.end());
      (sweep == std::string("gamma") ? gap_gamma : gap_eta)[depth] = means;
      std::vector<double> xs, ys;
      for (const auto& [k, v] : means)
        if (v > 0.0) {
          xs.push_back(k);
          ys.push_back(v);
        }
      if (xs.size() >= 2) {
        const LogLogFit f = fit_loglog(xs, ys);
        const std::string tag = std::string(sweep) + "_L" + std::to_string(depth);
        rep.scalars["slope_" + tag] = f.slope;
        rep.scalars["r2_" + tag] = f.r_squared;
      }
      PlotSeries s{"L=" + std::to_string(depth), {}};
      for (const auto& [k, v] : means) s.pts.push_back({k, v});
      (sweep == std::string("gamma") ? svg_gamma : svg_eta).push_back(std::move(s));
    }
  }
  const auto count_below = [&](const std::map<int, std::vector<std::pair<double, double>>>& gap) {
    if (gap.size() < 2) return -1;
    const auto& shallow = gap.begin()->second;
    const auto& deep = gap.rbegin()->second;
    int below = 0;
    for (const auto& [k, v] : shallow)
      for (const auto& [k2, v2] : deep)
        if (k2 == k && v < v2) {
          ++below;
          break;
        }
    return below;
  };
  if (const int c = count_below(gap_gamma); c >= 0) rep.scalars["shallow_below_deep_gamma"] = c;
  if (const int c = count_below(gap_eta); c >= 0) rep.scalars["shallow_below_deep_eta"] = c;

  if (cfg.emit_svg) {
    write_text_file(dir, "relu_scaling_gamma.svg",
                    render_plot("deviation metric vs offset scale", "gamma", "metric", svg_gamma,
                                true, true),
                    rep);
    write_text_file(dir, "relu_scaling_eta.svg",
                    render_plot("deviation metric vs normal fill", "eta", "metric", svg_eta, true,
                                true),
                    rep);
  }
}

void recipe_relu_noise(const ExperimentConfig& cfg, AxisBag& bag, const std::filesystem::path& dir,
                       RecipeReport& rep, std::string& target_used) {
  bag.expect({"sigma", "n", "sigma_fixed", "n_fixed", "depth", "dy", "width", "repeats", "gamma",
              "eta", "metric_sigma", "metric_n"});
  ReluNoiseSetup base;
  base.dx = 3;
  base.dys = {bag.iknob("dy", 2)};
  base.depths = {bag.iknob("depth", 2)};
  base.width = bag.iknob("width", 30);
  base.eta = bag.knob("eta", 1.0);
  base.gamma = bag.knob("gamma", 0.25);
  base.repeats = bag.iknob("repeats", 5);
  const TargetFunction target = resolve_target(cfg, sum_of_sines(base.dx, ""), base.dx,
                                               target_used);

  ReluNoiseSetup by_sigma = base;
  by_sigma.sigmas = bag.axis("sigma", {0.25, 0.5, 1.0});
  by_sigma.ns = {bag.iknob("n_fixed", 4096)};
  by_sigma.metric_samples = bag.iknob("metric_sigma", 8000);
  const std::vector<ReluNoiseRow> rows_sigma = relu_noise_sweep(
      target, by_sigma, Rng(cfg.seeds.front()).substream("sigma_dir").next_u64(), cfg.threads);
  {
    std::ofstream out = open_out(dir, "relu_noise_sigma.csv", rep);
    export_relu_noise_csv(rows_sigma, out);
  }

  ReluNoiseSetup by_n = base;
  by_n.sigmas = {bag.knob("sigma_fixed", 0.5)};
  by_n.ns = bag.iaxis("n", {512.0, 1024.0, 2048.0, 4096.0, 8192.0});
  by_n.metric_samples = bag.iknob("metric_n", 40000);
  const std::vector<ReluNoiseRow> rows_n = relu_noise_sweep(
      target, by_n, Rng(cfg.seeds.front()).substream("n_dir").next_u64(), cfg.threads);
  {
    std::ofstream out = open_out(dir, "relu_noise_n.csv", rep);
    export_relu_noise_csv(rows_n, out);
  }

  // repeat-means along each direction
  std::vector<double> sk, sv;
  for (const auto& r : rows_sigma) {
    sk.push_back(r.sigma);
    sv.push_back(r.metric);
  }
  auto sigma_means = mean_by_key(sk, sv);
  std::sort(sigma_means.begin(), sigma_means.end());
  bool sigma_monotone = sigma_means.size() >= 2;
  for (std::size_t i = 1; i < sigma_means.size(); ++i)
    if (!(sigma_means[i].second < sigma_means[i - 1].second)) sigma_monotone = false;
  rep.scalars["sigma_monotone"] = sigma_monotone ? 1.0 : 0.0;
  {
    std::vector<double> xs, ys;
    for (const auto& [k, v] : sigma_means)
      if (v > 0.0 && k > 0.0) {
        xs.push_back(k);
        ys.push_back(v);
      }
    if (xs.size() >= 2) rep.scalars["slope_vs_sigma"] = fit_loglog(xs, ys).slope;
  }

  std::vector<double> nk, nv;
  for (const auto& r : rows_n) {
    nk.push_back(static_cast<double>(r.n));
    nv.push_back(r.metric);
  }
  auto n_means = mean_by_key(nk, nv);
  std::sort(n_means.begin(), n_means.end());
  bool n_monotone = n_means.size() >= 2;
  for (std::size_t i = 1; i < n_means.size(); ++i)
    if (!(n_means[i].second < n_means[i - 1].second)) n_monotone = false;
  rep.scalars["n_monotone"] = n_monotone ? 1.0 : 0.0;
  {
    std::vector<double> xs, ys;
    for (const auto& [k, v] : n_means)
      if (v > 0.0) {
        xs.push_back(k);
        ys.push_back(v);
      }
    if (xs.size() >= 2) {
      const LogLogFit f = fit_loglog(xs, ys);
      rep.scalars["slope_vs_n"] = f.slope;
      rep.scalars["beta_vs_n"] = -f.slope;
    }
  }

  if (cfg.emit_svg) {
    PlotSeries a{"metric", {}};
    for (const auto& [k, v] : sigma_means) a.pts.push_back({k, v});
    write_text_file(dir, "relu_noise_sigma.svg",
                    render_plot("deviation metric vs training noise", "sigma", "metric", {a},
                                true, true),
                    rep);
    PlotSeries b{"metric", {}};
    for (const auto& [k, v] : n_means) b.pts.push_back({k, v});
    write_text_file(dir, "relu_noise_n.svg",
                    render_plot("deviation metric vs sample size", "n", "metric", {b}, true,
                                true),
                    rep);
  }
}

void recipe_weight_decay(const ExperimentConfig& cfg, AxisBag& bag,
                         const std::filesystem::path& dir, RecipeReport& rep,
                         std::string& target_used) {
  bag.expect({"sigma", "weight_decay", "n", "width", "repeats", "gamma", "metric_samples",
              "epochs", "test_n"});
  const std::vector<double> sigmas = bag.axis("sigma", {0.0});
  const std::vector<double> decays = bag.axis("weight_decay", {0.0, 5e-3, 1e-2});
  const int n = bag.iknob("n", 5000);
  const int width = bag.iknob("width", 100);
  const int dx = 3, dy = 2;
  const TargetFunction target = resolve_target(cfg, sum_of_sines(dx, ""), dx, target_used);

  TradeoffSetup setup;
  setup.hidden = {width};
  setup.gamma = bag.knob("gamma", 0.5);
  setup.metric_samples = bag.iknob("metric_samples", 5000);
  setup.test_n = bag.iknob("test_n", 2000);
  setup.repeats = bag.iknob("repeats", 5);

  OptimizerConfig opt = cosine_sgd_config();
  opt.epochs = bag.iknob("epochs", 100);

  const EmbeddingSpec spec = EmbeddingSpec::identity(dx, dy, sigmas.front());
  const std::vector<TradeoffRow> rows = tradeoff_report(
      spec, target, sigmas, decays, n, opt, setup, cfg.seeds.front(), cfg.threads);
  {
    std::ofstream out = open_out(dir, "tradeoff.csv", rep);
    export_tradeoff_csv(rows, out);
  }

  // per repeat at the first sigma: is stability decreasing and train loss
  // increasing along the decay axis? rows come back in (sigma, decay, repeat)
  // nesting, so the first-sigma block is directly indexable
  int stab_ok = 0, loss_ok = 0;
  const std::size_t reps = static_cast<std::size_t>(setup.repeats);
  for (std::size_t r = 0; r < reps; ++r) {
    bool s_mono = true, l_mono = true;
    for (std::size_t di = 1; di < decays.size(); ++di) {
      const TradeoffRow& prev = rows[(di - 1) * reps + r];
      const TradeoffRow& curr = rows[di * reps + r];
      if (!(curr.stability < prev.stability)) s_mono = false;
      if (!(curr.train_loss > prev.train_loss)) l_mono = false;
    }
    stab_ok += s_mono ? 1 : 0;
    loss_ok += l_mono ? 1 : 0;
  }
  rep.scalars["stability_monotone_reps"] = stab_ok;
  rep.scalars["loss_monotone_reps"] = loss_ok;
  rep.scalars["reps_total"] = setup.repeats;
}

void recipe_table_beta(const ExperimentConfig& cfg, AxisBag& bag,
                       const std::filesystem::path& dir, RecipeReport& rep,
                       std::string& target_used) {
  bag.expect({"depth", "dy", "sigma", "n", "width", "repeats", "gamma", "metric_samples"});
  ReluNoiseSetup setup;
  setup.dx = 3;
  {
    const std::vector<int> depths = bag.iaxis("depth", {2.0, 4.0, 6.0});
    const std::vector<int> dys = bag.iaxis("dy", {1.0, 2.0, 5.0});
    setup.depths = depths;
    setup.dys = dys;
  }
  setup.width = bag.iknob("width", 30);
  setup.sigmas = {bag.knob("sigma", 0.5)};
  setup.ns = bag.iaxis("n", {512.0, 1024.0, 2048.0, 4096.0, 8192.0});
  setup.gamma = bag.knob("gamma", 0.25);
  setup.metric_samples = bag.iknob("metric_samples", 40000);
  setup.repeats = bag.iknob("repeats", 3);
  const TargetFunction target = resolve_target(cfg, sum_of_sines(setup.dx, ""), setup.dx,
                                               target_used);

  const std::vector<ReluNoiseRow> rows =
      relu_noise_sweep(target, setup, cfg.seeds.front(), cfg.threads);
  {
    std::ofstream out = open_out(dir, "relu_noise_rows.csv", rep);
    export_relu_noise_csv(rows, out);
  }
  BetaTable table = fit_beta(beta_inputs_from_rows(rows, setup.sigmas.front()));
  table.gamma = setup.gamma;
  table.sigma = setup.sigmas.front();
  table.eta = setup.eta;
  table.width = setup.width;
  table.epochs = setup.optim.epochs;
  {
    std::ofstream out = open_out(dir, "beta_table.csv", rep);
    export_beta_csv(table, out);
  }

  std::map<int, std::pair<double, int>> depth_means;
  double bmin = std::numeric_limits<double>::infinity(), bmax = -bmin;
  for (const auto& c : table.cells) {
    rep.scalars["beta_d" + std::to_string(c.depth) + "_dy" + std::to_string(c.dy)] = c.beta;
    depth_means[c.depth].first += c.beta;
    depth_means[c.depth].second += 1;
    bmin = std::min(bmin, c.beta);
    bmax = std::max(bmax, c.beta);
  }
  for (const auto& [d, acc] : depth_means)
    rep.scalars["beta_mean_d" + std::to_string(d)] = acc.first / acc.second;
  rep.scalars["beta_min"] = bmin;
  rep.scalars["beta_max"] = bmax;

  if (cfg.emit_svg) {
    std::vector<PlotSeries> series;
    for (int d : setup.depths)
      for (int dy : setup.dys) {
        std::vector<double> ks, vs;
        for (const auto& r : rows)
          if (r.depth == d && r.dy == dy) {
            ks.push_back(static_cast<double>(r.n));
            vs.push_back(r.metric);
          }
        PlotSeries s{"L=" + std::to_string(d) + " dy=" + std::to_string(dy), {}};
        for (const auto& [k, v] : mean_by_key(ks, vs)) s.pts.push_back({k, v});
        std::sort(s.pts.begin(), s.pts.end());
        series.push_back(std::move(s));
      }
    write_text_file(dir, "beta_table.svg",
                    render_plot("deviation metric vs sample size", "n", "metric", series, true,
                                true),
                    rep);
  }
}

void recipe_phase_portrait(const ExperimentConfig& cfg, AxisBag& bag,
                           const std::filesystem::path& dir, RecipeReport& rep,
                           std::string& target_used) {
  bag.expect({"sigma", "depth", "n", "x_lo", "x_hi", "y_lo", "y_hi", "nx", "ny", "t_short"});
  const double sigma = bag.knob("sigma", 0.25);
  const int depth = bag.iknob("depth", 4);
  const int n = bag.iknob("n", 10000);
  const double x_lo = bag.knob("x_lo", -2.0), x_hi = bag.knob("x_hi", 2.0);
  const double y_lo = bag.knob("y_lo", -2.0), y_hi = bag.knob("y_hi", 2.0);
  const int nx = bag.iknob("nx", 13), ny = bag.iknob("ny", 13);
  const double t_short = bag.knob("t_short", 3.0);
  const TargetFunction target = resolve_target(cfg, "pi*sin(pi*x1)", 1, target_used);
  const EmbeddingSpec spec = EmbeddingSpec::identity(1, 1, sigma);

  const std::uint64_t seed = Rng(cfg.seeds.front()).substream("portrait").next_u64();
  const EmbeddedDataset ds = sample_dataset(spec, target, n, XDist::Uniform, seed);
  const FlowSystem sys(compute_moments(ds), sigma, depth);
  const std::vector<PortraitSegment> segs =
      phase_portrait(sys, x_lo, x_hi, y_lo, y_hi, nx, ny, t_short);
  {
    std::ofstream out = open_out(dir, "portrait.csv", rep);
    out << "segment,start_x,start_y,field_norm,t,w_x,w_y\n";
    for (std::size_t s = 0; s < segs.size(); ++s)
      for (std::size_t i = 0; i < segs[s].ts.size(); ++i)
        out << s << ',' << fmt17(segs[s].start[0]) << ',' << fmt17(segs[s].start[1]) << ','
            << fmt17(segs[s].field_norm) << ',' << fmt17(segs[s].ts[i]) << ','
            << fmt17(segs[s].states[i][0]) << ',' << fmt17(segs[s].states[i][1]) << '\n';
  }
  rep.scalars["segments"] = static_cast<double>(segs.size());

  if (cfg.emit_svg) {
    std::vector<PlotSeries> series;
    for (const auto& seg : segs) {
      PlotSeries s{"", {}};
      for (const auto& st : seg.states) s.pts.push_back({st[0], st[1]});
      series.push_back(std::move(s));
    }
    write_text_file(dir, "portrait.svg",
                    render_plot("short flows on the (w_x, w_y) plane", "w_x", "w_y", series,
                                false, false),
                    rep);
  }
}

}  // namespace

// ---- public surface --------------------------------------------------------

const std::vector<std::string>& recipe_names() {
  static const std::vector<std::string> names = {
      "fig_wy_scaling", "fig_eigen_hit",  "fig_origin_trap", "fig_lnn_train",
      "fig_lnn_noise",  "fig_relu_scaling", "fig_relu_noise", "fig_weight_decay",
      "table_beta",     "phase_portrait"};
  return names;
}

ExperimentConfig experiment_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("experiment config: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("experiment config: expected a JSON object");
  static const char* known[] = {"recipe", "grid", "seeds", "output_dir", "emit_svg", "threads",
                                "target"};
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : known)
      if (item.key() == k) {
        ok = true;
        break;
      }
    if (!ok)
      throw std::invalid_argument("experiment config: unknown key '" + item.key() + "'");
  }
  ExperimentConfig cfg;
  try {
    if (!j.contains("recipe"))
      throw std::invalid_argument("experiment config: 'recipe' is required");
    cfg.recipe = j.at("recipe").get<std::string>();
    if (j.contains("grid")) {
      if (!j["grid"].is_object())
        throw std::invalid_argument("experiment config: 'grid' must be an object of arrays");
      for (const auto& item : j["grid"].items()) {
        std::vector<double> vals;
        for (const auto& v : item.value()) vals.push_back(v.get<double>());
        cfg.grid[item.key()] = std::move(vals);
      }
    }
    if (j.contains("seeds")) {
      cfg.seeds.clear();
      for (const auto& v : j["seeds"]) cfg.seeds.push_back(v.get<std::uint64_t>());
    }
    if (j.contains("output_dir")) cfg.output_dir = j["output_dir"].get<std::string>();
    if (j.contains("emit_svg")) cfg.emit_svg = j["emit_svg"].get<bool>();
    if (j.contains("threads")) cfg.threads = j["threads"].get<int>();
    if (j.contains("target")) cfg.target_text = j["target"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("experiment config: ") + e.what());
  }
  return cfg;
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["recipe"] = cfg.recipe;
  nlohmann::json grid = nlohmann::json::object();
  for (const auto& [k, v] : cfg.grid) grid[k] = v;
  j["grid"] = grid;
  j["seeds"] = cfg.seeds;
  j["output_dir"] = cfg.output_dir;
  j["emit_svg"] = cfg.emit_svg;
  j["threads"] = cfg.threads;
  j["target"] = cfg.target_text;
  return j.dump(2) + "\n";
}

RecipeReport run_recipe(const ExperimentConfig& cfg) {
  const std::vector<std::string>& names = recipe_names();
  if (std::find(names.begin(), names.end(), cfg.recipe) == names.end()) {
    std::string all;
    for (const auto& n : names) {
      if (!all.empty()) all += ", ";
      all += n;
    }
    throw std::invalid_argument("unknown recipe '" + cfg.recipe + "' (known: " + all + ")");
  }
  if (cfg.seeds.empty())
    throw std::invalid_argument("at least one master seed is required");
  if (cfg.threads < 1) throw std::invalid_argument("threads must be at least 1");

  const std::filesystem::path dir =
      cfg.output_dir.empty() ? std::filesystem::path(".") : std::filesystem::path(cfg.output_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec)
    throw std::runtime_error("cannot create output directory '" + dir.string() +
                             "': " + ec.message());

  AxisBag bag;
  bag.cfg = &cfg;
  RecipeReport rep;
  std::string target_used;
  if (cfg.recipe == "fig_wy_scaling")
    recipe_wy_scaling(cfg, bag, dir, rep, target_used);
  else if (cfg.recipe == "fig_eigen_hit")
    recipe_eigen_hit(cfg, bag, dir, rep, target_used);
  else if (cfg.recipe == "fig_origin_trap")
    recipe_origin_trap(cfg, bag, dir, rep, target_used);
  else if (cfg.recipe == "fig_lnn_train")
    recipe_lnn_train(cfg, bag, dir, rep, target_used);
  else if (cfg.recipe == "fig_lnn_noise")
    recipe_lnn_noise(cfg, bag, dir, rep, target_used);
  else if (cfg.recipe == "fig_relu_scaling")
    recipe_relu_scaling(cfg, bag, dir, rep, target_used);
  else if (cfg.recipe == "fig_relu_noise")
    recipe_relu_noise(cfg, bag, dir, rep, target_used);
  else if (cfg.recipe == "fig_weight_decay")
    recipe_weight_decay(cfg, bag, dir, rep, target_used);
  else if (cfg.recipe == "table_beta")
    recipe_table_beta(cfg, bag, dir, rep, target_used);
  else
    recipe_phase_portrait(cfg, bag, dir, rep, target_used);

  // self-describing manifest; omits output_dir and threads so the same run
  // relocated elsewhere produces byte-identical files
  nlohmann::json man;
  man["recipe"] = cfg.recipe;
  man["version"] = kVersion;
  man["target"] = target_used;
  man["seeds"] = cfg.seeds;
  man["emit_svg"] = cfg.emit_svg;
  nlohmann::json grid = nlohmann::json::object();
  for (const auto& [k, v] : bag.used) grid[k] = v;
  man["grid"] = grid;
  nlohmann::json outs = nlohmann::json::array();
  for (const auto& f : rep.files) outs.push_back(std::filesystem::path(f).filename().string());
  man["outputs"] = outs;
  nlohmann::json scalars = nlohmann::json::object();
  for (const auto& [k, v] : rep.scalars) scalars[k] = v;
  man["scalars"] = scalars;
  write_text_file(dir, "manifest.json", man.dump(2) + "\n", rep);
  return rep;
}

// ---- scaling-exponent fit ---------------------------------------------------

BetaTable fit_beta(const std::vector<BetaInput>& cells) {
  if (cells.empty()) throw std::invalid_argument("fit_beta: no cells");
  BetaTable table;
  for (const BetaInput& c : cells) {
    if (c.ns.size() != c.metrics.size())
      throw std::invalid_argument("fit_beta: sizes and metrics must pair up");
    if (c.ns.size() < 4)
      throw std::invalid_argument("fit_beta: at least four sample sizes per cell");
    for (double n : c.ns)
      if (!(n > 0.0)) throw std::invalid_argument("fit_beta: sample sizes must be positive");
    for (double m : c.metrics)
      if (!(m > 0.0))
        throw std::invalid_argument("fit_beta: nonpositive metric cannot enter a log fit");
    const LogLogFit f = fit_loglog(c.ns, c.metrics);
    if (!std::isfinite(f.slope)) throw NumericError("fit_beta: degenerate fit");
    table.cells.push_back({c.depth, c.dy, -f.slope, f.r_squared});
  }
  return table;
}

void export_beta_csv(const BetaTable& table, std::ostream& out) {
  out << "depth,dy,beta,r_squared,gamma,sigma,eta,width,epochs\n";
  for (const auto& c : table.cells)
    out << c.depth << ',' << c.dy << ',' << fmt17(c.beta) << ',' << fmt17(c.r_squared) << ','
        << fmt17(table.gamma) << ',' << fmt17(table.sigma) << ',' << fmt17(table.eta) << ','
        << table.width << ',' << table.epochs << '\n';
}

// ---- ReLU training helpers ---------------------------------------------------

OptimizerConfig cosine_sgd_config() {
  OptimizerConfig cfg;
  cfg.mode = OptimizerMode::Minibatch;
  cfg.epochs = 100;
  cfg.batch_size = 50;
  cfg.lr_start = 1e-2;
  cfg.lr_end = 1e-4;
  cfg.schedule = LrSchedule::Cosine;
  return cfg;
}

ReluParams train_embedded_net(const EmbeddingSpec& spec, const TargetFunction& target, int n,
                              const std::vector<int>& hidden, NormalInit scheme, double scale,
                              const OptimizerConfig& cfg, std::uint64_t seed) {
  const Rng root(seed);
  const EmbeddedDataset ds =
      sample_dataset(spec, target, n, XDist::Uniform, root.substream("data").next_u64());
  Rng init_rng = root.substream("init");
  ReluParams params = init_relu(spec.dim(), spec.dx, hidden, scheme, scale, init_rng);
  OptimizerConfig run = cfg;
  run.shuffle_seed = root.substream("shuffle").next_u64();
  return train_relu(ds, std::move(params), run).params;
}

std::vector<ReluNoiseRow> relu_noise_sweep(const TargetFunction& target,
                                           const ReluNoiseSetup& setup, std::uint64_t master_seed,
                                           int threads) {
  if (setup.dx < 1) throw std::invalid_argument("relu_noise_sweep: dx must be positive");
  if (setup.dys.empty() || setup.depths.empty() || setup.sigmas.empty() || setup.ns.empty())
    throw std::invalid_argument("relu_noise_sweep: empty sweep axis");
  for (int d : setup.depths)
    if (d < 2) throw std::invalid_argument("relu_noise_sweep: depth must be at least 2");
  for (int dy : setup.dys)
    if (dy < 1) throw std::invalid_argument("relu_noise_sweep: dy must be positive");
  for (double s : setup.sigmas)
    if (!(s >= 0.0)) throw std::invalid_argument("relu_noise_sweep: sigma must be nonnegative");
  for (int n : setup.ns)
    if (n < 1) throw std::invalid_argument("relu_noise_sweep: sample size must be positive");
  if (setup.width < 1 || setup.metric_samples < 1 || setup.repeats < 1)
    throw std::invalid_argument("relu_noise_sweep: width, samples and repeats must be positive");

  struct Job {
    int depth, dy, n;
    double sigma;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  const Rng root = Rng(master_seed).substream("relu_noise");
  std::uint64_t cell = 0;
  for (int depth : setup.depths)
    for (int dy : setup.dys)
      for (double sigma : setup.sigmas)
        for (int n : setup.ns) {
          for (int rep = 0; rep < setup.repeats; ++rep) {
            const std::uint64_t seed =
                root.substream(cell).substream(static_cast<std::uint64_t>(rep)).next_u64();
            jobs.push_back({depth, dy, n, sigma, seed});
          }
          ++cell;
        }

  std::vector<ReluNoiseRow> rows(jobs.size());
  parallel_for(static_cast<int>(jobs.size()), threads, [&](int i) {
    const Job& job = jobs[static_cast<std::size_t>(i)];
    const EmbeddingSpec spec = EmbeddingSpec::identity(setup.dx, job.dy, job.sigma);
    const std::vector<int> hidden(static_cast<std::size_t>(job.depth - 1), setup.width);
    const ReluParams params = train_embedded_net(spec, target, job.n, hidden,
                                                 NormalInit::Constant, setup.eta, setup.optim,
                                                 job.seed);
    const double metric =
        stability_metric(params, setup.gamma, setup.metric_samples,
                         Rng(job.seed).substream("metric").next_u64())
            .estimate;
    rows[static_cast<std::size_t>(i)] = {job.depth, job.dy, job.sigma, job.n, job.seed, metric};
  });
  return rows;
}

void export_relu_noise_csv(const std::vector<ReluNoiseRow>& rows, std::ostream& out) {
  out << "depth,dy,sigma,n,seed,metric\n";
  for (const auto& r : rows)
    out << r.depth << ',' << r.dy << ',' << fmt17(r.sigma) << ',' << r.n << ',' << r.seed << ','
        << fmt17(r.metric) << '\n';
}

std::vector<BetaInput> beta_inputs_from_rows(const std::vector<ReluNoiseRow>& rows, double sigma) {
  std::map<std::pair<int, int>, std::map<int, std::pair<double, int>>> acc;
  for (const auto& r : rows) {
    if (r.sigma != sigma) continue;
    auto& slot = acc[{r.depth, r.dy}][r.n];
    slot.first += r.metric;
    slot.second += 1;
  }
  std::vector<BetaInput> out;
  for (const auto& [key, by_n] : acc) {
    BetaInput cell;
    cell.depth = key.first;
    cell.dy = key.second;
    for (const auto& [n, sum] : by_n) {
      cell.ns.push_back(static_cast<double>(n));
      cell.metrics.push_back(sum.first / sum.second);
    }
    out.push_back(std::move(cell));
  }
  return out;
}

// ---- accuracy/stability trade-off --------------------------------------------

std::vector<TradeoffRow> tradeoff_report(const EmbeddingSpec& spec, const TargetFunction& target,
                                         const std::vector<double>& sigmas,
                                         const std::vector<double>& decays, int n,
                                         const OptimizerConfig& cfg, const TradeoffSetup& setup,
                                         std::uint64_t master_seed, int threads) {
  if (sigmas.empty() || decays.empty())
    throw std::invalid_argument("tradeoff_report: empty sweep axis");
  for (double s : sigmas)
    if (!(s >= 0.0)) throw std::invalid_argument("tradeoff_report: sigma must be nonnegative");
  if (n < 1 || setup.test_n < 1 || setup.metric_samples < 1 || setup.repeats < 1)
    throw std::invalid_argument("tradeoff_report: sizes must be positive");
  if (setup.hidden.empty())
    throw std::invalid_argument("tradeoff_report: at least one hidden layer");

  struct Job {
    std::size_t si, di;
    int rep;
  };
  std::vector<Job> jobs;
  for (std::size_t si = 0; si < sigmas.size(); ++si)
    for (std::size_t di = 0; di < decays.size(); ++di)
      for (int rep = 0; rep < setup.repeats; ++rep) jobs.push_back({si, di, rep});

  std::vector<TradeoffRow> rows(jobs.size());
  parallel_for(static_cast<int>(jobs.size()), threads, [&](int i) {
    const Job& job = jobs[static_cast<std::size_t>(i)];
    // the decay comparison is paired: data, initialization, shuffling, the
    // held-out sample, and the metric draws all depend on (sigma, repeat) only
    const Rng base = Rng(master_seed)
                         .substream("tradeoff")
                         .substream(job.si * 8192 + static_cast<std::uint64_t>(job.rep));
    EmbeddingSpec cell = spec;
    cell.sigma = sigmas[job.si];
    cell.validate();
    const std::uint64_t data_seed = base.substream("data").next_u64();
    const EmbeddedDataset ds = sample_dataset(cell, target, n, XDist::Uniform, data_seed);

    Rng init_rng = base.substream("init");
    ReluParams params =
        init_relu(cell.dim(), cell.dx, setup.hidden, NormalInit::Constant, setup.eta, init_rng);
    OptimizerConfig run = cfg;
    run.weight_decay = decays[job.di];
    run.shuffle_seed = base.substream("shuffle").next_u64();
    const ReluParams trained = train_relu(ds, std::move(params), run).params;

    // interpolation error: the training points pushed back onto the manifold
    EmbeddedDataset flat = ds;
    flat.spec.sigma = 0.0;
    std::vector<Vec> inputs(static_cast<std::size_t>(flat.n()));
    for (int k = 0; k < flat.n(); ++k) inputs[static_cast<std::size_t>(k)] = flat.ambient(k);
    const double train_loss = relu_loss(trained, inputs, flat.labels);

    EmbeddingSpec test_spec = cell;
    test_spec.sigma = 0.0;
    const EmbeddedDataset held = sample_dataset(test_spec, target, setup.test_n, XDist::Uniform,
                                                base.substream("test").next_u64());
    std::vector<Vec> test_inputs(static_cast<std::size_t>(held.n()));
    for (int k = 0; k < held.n(); ++k) test_inputs[static_cast<std::size_t>(k)] = held.ambient(k);
    const double test_loss = relu_loss(trained, test_inputs, held.labels);

    const double stability = stability_metric(trained, setup.gamma, setup.metric_samples,
                                              base.substream("metric").next_u64())
                                 .estimate;
    rows[static_cast<std::size_t>(i)] = {cell.sigma, decays[job.di], data_seed,
                                         train_loss,  test_loss,     stability};
  });
  return rows;
}

void export_tradeoff_csv(const std::vector<TradeoffRow>& rows, std::ostream& out) {
  out << "sigma,weight_decay,seed,train_loss_on_manifold,test_loss,stability_metric\n";
  for (const auto& r : rows)
    out << fmt17(r.sigma) << ',' << fmt17(r.weight_decay) << ',' << r.seed << ','
        << fmt17(r.train_loss) << ',' << fmt17(r.test_loss) << ',' << fmt17(r.stability) << '\n';
}

}  // namespace embedflow
