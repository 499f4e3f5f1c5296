#include "embedflow/embed_data.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <ostream>
#include <stdexcept>
#include <utility>

#include <json.hpp>

#include "embedflow/linalg.hpp"
#include "embedflow/rng.hpp"

namespace embedflow {

void EmbeddingSpec::validate() const {
  if (dx < 1 || dy < 1) throw std::invalid_argument("EmbeddingSpec: dx and dy must be positive");
  if (sigma < 0.0 || !std::isfinite(sigma))
    throw std::invalid_argument("EmbeddingSpec: sigma must be a finite nonnegative real");
  const int d = dim();
  if (q.rows() != d || q.cols() != d)
    throw std::invalid_argument("EmbeddingSpec: q must be (dx+dy) x (dx+dy)");
  if (!q.all_finite()) throw std::invalid_argument("EmbeddingSpec: q has non-finite entries");
  const Matrix gram = matmul(transpose(q), q);
  if (max_abs(gram - Matrix::identity(d)) > 1e-12)
    throw std::invalid_argument("EmbeddingSpec: q is not orthogonal to 1e-12");
}

EmbeddingSpec EmbeddingSpec::identity(int dx, int dy, double sigma) {
  EmbeddingSpec spec;
  spec.dx = dx;
  spec.dy = dy;
  spec.sigma = sigma;
  spec.q = Matrix::identity(dx + dy);
  spec.validate();
  return spec;
}

EmbeddingSpec EmbeddingSpec::random_rotation(int dx, int dy, double sigma, std::uint64_t seed) {
  if (dx < 1 || dy < 1) throw std::invalid_argument("random_rotation: dx and dy must be positive");
  const int d = dx + dy;
  Rng rng = Rng(seed).substream("rotation");
  Matrix gauss(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) gauss(i, j) = rng.normal();
  Matrix q, r;
  qr_decompose(gauss, q, r);
  // fix the gauge so the factorization (and hence q) is unique for the draw
  for (int j = 0; j < d; ++j)
    if (r(j, j) < 0.0)
      for (int i = 0; i < d; ++i) q(i, j) = -q(i, j);

  EmbeddingSpec spec;
  spec.dx = dx;
  spec.dy = dy;
  spec.sigma = sigma;
  spec.q = std::move(q);
  spec.validate();
  return spec;
}

double TargetFunction::operator()(const Vec& x) const {
  if (mu.size() != amp.size())
    throw std::invalid_argument("TargetFunction: mu and amp lengths differ");
  if (x.size() != mu.size())
    throw std::invalid_argument("TargetFunction: input length does not match coefficients");
  double v = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    v += mu[j] * x[j];
    if (amp[j] != 0.0) v += amp[j] * std::sin(freq * x[j]);
  }
  return v;
}

double TargetFunction::delta() const {
  double s = 0.0;
  for (double a : amp) s += std::fabs(a);
  return s;
}

namespace {

// Symbolic value for the target mini-grammar: a constant, linear coefficients
// per coordinate, and a list of amp*sin(freq*x_j) terms.
struct SymValue {
  double c = 0.0;
  std::map<int, double> lin;
  struct Sine {
    double amp;
    double freq;
    int coord;
  };
  std::vector<Sine> sines;

  bool is_const() const { return lin.empty() && sines.empty(); }
};

SymValue sym_scale(SymValue v, double k) {
  v.c *= k;
  for (auto& [j, coeff] : v.lin) coeff *= k;
  for (auto& s : v.sines) s.amp *= k;
  return v;
}

SymValue sym_add(SymValue a, const SymValue& b) {
  a.c += b.c;
  for (const auto& [j, coeff] : b.lin) a.lin[j] += coeff;
  a.sines.insert(a.sines.end(), b.sines.begin(), b.sines.end());
  return a;
}

class TargetParser {
 public:
  explicit TargetParser(const std::string& text) : text_(text) {}

  SymValue parse() {
    SymValue v = parse_expr();
    skip_ws();
    if (pos_ != text_.size()) fail("unexpected trailing input");
    return v;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw std::invalid_argument("parse_target: " + what + " at position " + std::to_string(pos_) +
                                " in \"" + text_ + "\"");
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  char peek() {
    skip_ws();
    return pos_ < text_.size() ? text_[pos_] : '\0';
  }

  bool starts_factor() {
    const char ch = peek();
    return std::isdigit(static_cast<unsigned char>(ch)) || ch == '.' || ch == '(' ||
           std::isalpha(static_cast<unsigned char>(ch));
  }

  SymValue parse_expr() {
    double sign = 1.0;
    for (char ch = peek(); ch == '+' || ch == '-'; ch = peek()) {
      if (ch == '-') sign = -sign;
      ++pos_;
    }
    SymValue v = sym_scale(parse_term(), sign);
    for (;;) {
      const char ch = peek();
      if (ch != '+' && ch != '-') break;
      ++pos_;
      double s = ch == '-' ? -1.0 : 1.0;
      for (char c2 = peek(); c2 == '+' || c2 == '-'; c2 = peek()) {
        if (c2 == '-') s = -s;
        ++pos_;
      }
      v = sym_add(v, sym_scale(parse_term(), s));
    }
    return v;
  }

  SymValue parse_term() {
    SymValue v = parse_factor();
    for (;;) {
      const char ch = peek();
      if (ch == '*') {
        ++pos_;
        v = multiply(v, parse_factor());
      } else if (starts_factor()) {
        v = multiply(v, parse_factor());
      } else {
        break;
      }
    }
    return v;
  }

  SymValue multiply(const SymValue& a, const SymValue& b) {
    if (a.is_const()) return sym_scale(b, a.c);
    if (b.is_const()) return sym_scale(a, b.c);
    fail("products of non-constant subexpressions are outside the target family");
  }

  SymValue parse_factor() {
    const char ch = peek();
    if (ch == '(') {
      ++pos_;
      SymValue v = parse_expr();
      if (peek() != ')') fail("expected ')'");
      ++pos_;
      return v;
    }
    if (std::isdigit(static_cast<unsigned char>(ch)) || ch == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(ch))) return parse_ident();
    fail("expected a number, name or '('");
  }

  SymValue parse_number() {
    const char* begin = text_.c_str() + pos_;
    char* end = nullptr;
    const double value = std::strtod(begin, &end);
    if (end == begin) fail("malformed number");
    pos_ += static_cast<std::size_t>(end - begin);
    SymValue v;
    v.c = value;
    return v;
  }

  SymValue parse_ident() {
    std::size_t start = pos_;
    while (pos_ < text_.size() && std::isalpha(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    const std::string name = text_.substr(start, pos_ - start);
    if (name == "pi") {
      SymValue v;
      v.c = std::numbers::pi;
      return v;
    }
    if (name == "x") {
      int coord = 0;  // bare x means x1
      std::size_t digits = pos_;
      while (digits < text_.size() && std::isdigit(static_cast<unsigned char>(text_[digits])))
        ++digits;
      if (digits > pos_) {
        coord = std::stoi(text_.substr(pos_, digits - pos_)) - 1;
        if (coord < 0) fail("coordinate indices start at 1");
        pos_ = digits;
      }
      SymValue v;
      v.lin[coord] = 1.0;
      return v;
    }
    if (name == "sin") {
      if (peek() != '(') fail("sin needs parentheses");
      ++pos_;
      SymValue arg = parse_expr();
      if (peek() != ')') fail("expected ')'");
      ++pos_;
      if (arg.c != 0.0 || !arg.sines.empty() || arg.lin.size() != 1)
        fail("sin argument must be a multiple of a single coordinate");
      const auto& [coord, coeff] = *arg.lin.begin();
      SymValue v;
      v.sines.push_back({1.0, coeff, coord});
      return v;
    }
    fail("unknown name \"" + name + "\"");
  }

  const std::string& text_;
  std::size_t pos_ = 0;
};

}  // namespace

TargetFunction parse_target(const std::string& text, int dx_hint) {
  SymValue v = TargetParser(text).parse();
  if (v.c != 0.0)
    throw std::invalid_argument("parse_target: constant offsets are outside the target family");

  // sin(-k x) = -sin(k x); sin(0 x) contributes nothing
  std::vector<SymValue::Sine> sines;
  for (auto s : v.sines) {
    if (s.freq == 0.0 || s.amp == 0.0) continue;
    if (s.freq < 0.0) {
      s.freq = -s.freq;
      s.amp = -s.amp;
    }
    sines.push_back(s);
  }

  double freq = std::numbers::pi;
  if (!sines.empty()) {
    freq = sines.front().freq;
    for (const auto& s : sines)
      if (std::fabs(s.freq - freq) > 1e-12 * std::fabs(freq))
        throw std::invalid_argument("parse_target: sine terms must share one frequency");
  }

  int dims = dx_hint;
  for (const auto& [j, coeff] : v.lin) dims = std::max(dims, j + 1);
  for (const auto& s : sines) dims = std::max(dims, s.coord + 1);
  if (dx_hint > 0 && dims > dx_hint)
    throw std::invalid_argument("parse_target: expression uses coordinate x" +
                                std::to_string(dims) + " beyond dimension " +
                                std::to_string(dx_hint));
  if (dims == 0) throw std::invalid_argument("parse_target: expression uses no coordinates");

  TargetFunction g;
  g.mu.assign(dims, 0.0);
  g.amp.assign(dims, 0.0);
  g.freq = freq;
  for (const auto& [j, coeff] : v.lin) g.mu[j] = coeff;
  for (const auto& s : sines) g.amp[s.coord] += s.amp;
  return g;
}

std::string to_string(XDist d) { return d == XDist::Uniform ? "uniform" : "normal"; }
std::string to_string(YDist d) { return d == YDist::Normal ? "normal" : "uniform"; }

XDist x_dist_from_string(const std::string& s) {
  if (s == "uniform") return XDist::Uniform;
  if (s == "normal") return XDist::Normal;
  throw std::invalid_argument("unknown x distribution \"" + s + "\"");
}

YDist y_dist_from_string(const std::string& s) {
  if (s == "normal") return YDist::Normal;
  if (s == "uniform") return YDist::Uniform;
  throw std::invalid_argument("unknown y distribution \"" + s + "\"");
}

Vec EmbeddedDataset::x_row(int i) const {
  Vec x(spec.dx);
  for (int j = 0; j < spec.dx; ++j) x[j] = xs(i, j);
  return x;
}

Vec EmbeddedDataset::y_row(int i) const {
  Vec y(spec.dy);
  for (int j = 0; j < spec.dy; ++j) y[j] = ys(i, j);
  return y;
}

Vec EmbeddedDataset::ambient(int i) const {
  Vec z(spec.dim());
  for (int j = 0; j < spec.dx; ++j) z[j] = xs(i, j);
  for (int j = 0; j < spec.dy; ++j) z[spec.dx + j] = spec.sigma * ys(i, j);
  return matvec(spec.q, z);
}

namespace {

bool x_moments_full_rank(const Matrix& xs) {
  const int n = xs.rows(), dx = xs.cols();
  if (n < dx) return false;
  Matrix sxx(dx, dx);
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < dx; ++a)
      for (int b = 0; b < dx; ++b) sxx(a, b) += xs(i, a) * xs(i, b);
  // symmetric PSD, so the eigenvalues are the singular values
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (const auto& lambda : eig_small(sxx)) {
    const double mag = std::abs(lambda);
    lo = first ? mag : std::min(lo, mag);
    hi = first ? mag : std::max(hi, mag);
    first = false;
  }
  return hi > 0.0 && lo > 1e-10 * hi;
}

}  // namespace

EmbeddedDataset sample_dataset(const EmbeddingSpec& spec, const TargetFunction& target, int n,
                               XDist x_dist, std::uint64_t seed, YDist y_dist) {
  spec.validate();
  if (n < 1) throw std::invalid_argument("sample_dataset: n must be >= 1");
  if (static_cast<int>(target.mu.size()) != spec.dx)
    throw std::invalid_argument("sample_dataset: target dimension does not match dx");

  EmbeddedDataset ds;
  ds.spec = spec;
  ds.target = target;
  ds.seed = seed;
  ds.x_dist = x_dist;
  ds.y_dist = y_dist;
  ds.xs = Matrix(n, spec.dx);
  ds.ys = Matrix(n, spec.dy);
  ds.labels.resize(n);

  Rng root(seed);
  Rng xr = root.substream("data.x");
  Rng yr = root.substream("data.y");
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < spec.dx; ++j)
      ds.xs(i, j) = x_dist == XDist::Uniform ? xr.uniform(-1.0, 1.0) : xr.normal();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < spec.dy; ++j)
      ds.ys(i, j) = y_dist == YDist::Normal ? yr.normal() : yr.uniform(-1.0, 1.0);
  for (int i = 0; i < n; ++i) ds.labels[i] = target(ds.x_row(i));

  ds.rank_ok = x_moments_full_rank(ds.xs);
  return ds;
}

EmpiricalMoments compute_moments(const EmbeddedDataset& ds) {
  const int n = ds.n(), dx = ds.spec.dx, dy = ds.spec.dy;
  if (n < 1) throw std::invalid_argument("compute_moments: empty dataset");

  EmpiricalMoments m;
  m.n = n;
  m.sxx = Matrix(dx, dx);
  m.sxy = Matrix(dx, dy);
  m.syy = Matrix(dy, dy);
  m.gx.assign(dx, 0.0);
  m.gy.assign(dy, 0.0);

  for (int i = 0; i < n; ++i) {
    const double g = ds.labels[i];
    for (int a = 0; a < dx; ++a) {
      const double xa = ds.xs(i, a);
      for (int b = 0; b < dx; ++b) m.sxx(a, b) += xa * ds.xs(i, b);
      for (int b = 0; b < dy; ++b) m.sxy(a, b) += xa * ds.ys(i, b);
      m.gx[a] += g * xa;
    }
    for (int a = 0; a < dy; ++a) {
      const double ya = ds.ys(i, a);
      for (int b = 0; b < dy; ++b) m.syy(a, b) += ya * ds.ys(i, b);
      m.gy[a] += g * ya;
    }
    m.g2 += g * g;
  }

  const double inv = 1.0 / n;
  m.sxx = inv * m.sxx;
  m.sxy = inv * m.sxy;
  m.syy = inv * m.syy;
  for (double& v : m.gx) v *= inv;
  for (double& v : m.gy) v *= inv;
  m.g2 *= inv;
  return m;
}

ASigma assemble_A_sigma(const EmpiricalMoments& m, double sigma) {
  if (sigma < 0.0) throw std::invalid_argument("assemble_A_sigma: sigma must be nonnegative");
  const int dx = m.sxx.rows(), dy = m.syy.rows(), d = dx + dy;

  ASigma out;
  out.a = Matrix(d, d);
  for (int i = 0; i < dx; ++i) {
    for (int j = 0; j < dx; ++j) out.a(i, j) = m.sxx(i, j);
    for (int j = 0; j < dy; ++j) {
      out.a(i, dx + j) = m.sxy(i, j);
      out.a(dx + j, i) = m.sxy(i, j);
    }
  }
  for (int i = 0; i < dy; ++i)
    for (int j = 0; j < dy; ++j) out.a(dx + i, dx + j) = m.syy(i, j);

  // conjugate by diag(I, sigma I); the association si * (a * sj) matches the
  // explicit diagonal product, so the identity with it is exact
  for (int i = 0; i < d; ++i) {
    const double si = i < dx ? 1.0 : sigma;
    for (int j = 0; j < d; ++j) {
      const double sj = j < dx ? 1.0 : sigma;
      out.a(i, j) = si * (out.a(i, j) * sj);
    }
  }

  out.rhs.resize(d);
  for (int i = 0; i < dx; ++i) out.rhs[i] = m.gx[i];
  for (int i = 0; i < dy; ++i) out.rhs[dx + i] = sigma * m.gy[i];
  return out;
}

EmbeddedDataset add_ambient_noise(const EmbeddedDataset& ds, double sigma_x, double sigma_y,
                                  std::uint64_t seed) {
  if (sigma_x < 0.0 || sigma_y < 0.0)
    throw std::invalid_argument("add_ambient_noise: noise scales must be nonnegative");

  EmbeddedDataset out = ds;
  out.noise_sigma_x = sigma_x;
  out.noise_sigma_y = sigma_y;
  out.noise_seed = seed;
  if (sigma_x == 0.0 && sigma_y == 0.0) return out;

  out.xs_original = ds.xs;
  Rng er = Rng(seed).substream("ambient_noise");
  for (int i = 0; i < ds.n(); ++i) {
    for (int j = 0; j < ds.spec.dx; ++j) out.xs(i, j) += sigma_x * er.normal();
    for (int j = 0; j < ds.spec.dy; ++j) out.ys(i, j) = er.normal();
  }
  out.spec.sigma = sigma_y;
  out.rank_ok = x_moments_full_rank(out.xs);
  return out;
}

EmbeddedDataset add_ambient_noise(const EmbeddedDataset& ds, double sigma, std::uint64_t seed) {
  return add_ambient_noise(ds, sigma, sigma, seed);
}

double evaluate_on_manifold(const std::function<double(const Vec&)>& model, const Vec& x,
                            const EmbeddingSpec& spec) {
  if (static_cast<int>(x.size()) != spec.dx)
    throw std::invalid_argument("evaluate_on_manifold: x must have length dx");
  Vec z(spec.dim(), 0.0);
  for (int j = 0; j < spec.dx; ++j) z[j] = x[j];
  return model(matvec(spec.q, z));
}

std::string dataset_to_json(const EmbeddedDataset& ds) {
  nlohmann::json j;
  j["spec"]["dx"] = ds.spec.dx;
  j["spec"]["dy"] = ds.spec.dy;
  j["spec"]["sigma"] = ds.spec.sigma;
  std::vector<double> q(ds.spec.q.data(), ds.spec.q.data() + ds.spec.dim() * ds.spec.dim());
  j["spec"]["q"] = q;
  j["seed"] = ds.seed;
  j["n"] = ds.n();
  j["x_dist"] = to_string(ds.x_dist);
  j["y_dist"] = to_string(ds.y_dist);
  j["target"]["mu"] = ds.target.mu;
  j["target"]["amp"] = ds.target.amp;
  j["target"]["freq"] = ds.target.freq;
  if (ds.noise_seed) {
    j["ambient_noise"]["sigma_x"] = *ds.noise_sigma_x;
    j["ambient_noise"]["sigma_y"] = *ds.noise_sigma_y;
    j["ambient_noise"]["seed"] = *ds.noise_seed;
  }
  return j.dump(2);
}

EmbeddedDataset dataset_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);

  EmbeddingSpec spec;
  spec.dx = j.at("spec").at("dx").get<int>();
  spec.dy = j.at("spec").at("dy").get<int>();
  double sigma = j.at("spec").at("sigma").get<double>();
  const auto q = j.at("spec").at("q").get<std::vector<double>>();
  const int d = spec.dx + spec.dy;
  if (static_cast<int>(q.size()) != d * d)
    throw std::invalid_argument("dataset_from_json: q has wrong size");
  spec.q = Matrix(d, d);
  for (int i = 0; i < d * d; ++i) spec.q.data()[i] = q[i];

  TargetFunction target;
  target.mu = j.at("target").at("mu").get<Vec>();
  target.amp = j.at("target").at("amp").get<Vec>();
  target.freq = j.at("target").at("freq").get<double>();

  // the draws never depend on sigma, so regenerating with the stored (possibly
  // post-noise) value reproduces the serialized object exactly
  const bool noised = j.contains("ambient_noise");
  spec.sigma = sigma;
  EmbeddedDataset ds = sample_dataset(spec, target, j.at("n").get<int>(),
                                      x_dist_from_string(j.at("x_dist").get<std::string>()),
                                      j.at("seed").get<std::uint64_t>(),
                                      y_dist_from_string(j.at("y_dist").get<std::string>()));
  if (noised)
    ds = add_ambient_noise(ds, j.at("ambient_noise").at("sigma_x").get<double>(),
                           j.at("ambient_noise").at("sigma_y").get<double>(),
                           j.at("ambient_noise").at("seed").get<std::uint64_t>());
  return ds;
}

void export_csv(const EmbeddedDataset& ds, std::ostream& out) {
  for (int j = 0; j < ds.spec.dx; ++j) out << "x_" << (j + 1) << ",";
  for (int j = 0; j < ds.spec.dy; ++j) out << "y_" << (j + 1) << ",";
  out << "g\n";
  char buf[32];
  for (int i = 0; i < ds.n(); ++i) {
    for (int j = 0; j < ds.spec.dx; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", ds.xs(i, j));
      out << buf << ",";
    }
    for (int j = 0; j < ds.spec.dy; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", ds.ys(i, j));
      out << buf << ",";
    }
    std::snprintf(buf, sizeof buf, "%.17g", ds.labels[i]);
    out << buf << "\n";
  }
}

}  // namespace embedflow
