#include "embedflow/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "embedflow/rng.hpp"

namespace embedflow {
namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

template <typename T>
double mag(const T& v) {
  return std::abs(v);
}

// In-place LU with partial pivoting on a flat n*n buffer. Pivot threshold is
// relative to the largest input entry.
template <typename T>
void lu_factor(std::vector<T>& a, int n, std::vector<int>& piv) {
  double amax = 0.0;
  for (const T& v : a) amax = std::max(amax, mag(v));
  double tol = 1e-14 * (amax == 0.0 ? 1.0 : amax);
  piv.resize(n);
  for (int k = 0; k < n; ++k) {
    int p = k;
    double best = mag(a[static_cast<std::size_t>(k) * n + k]);
    for (int i = k + 1; i < n; ++i) {
      double m = mag(a[static_cast<std::size_t>(i) * n + k]);
      if (m > best) {
        best = m;
        p = i;
      }
    }
    if (best <= tol) throw SingularMatrixError("pivot below threshold in linear solve");
    piv[k] = p;
    if (p != k)
      for (int j = 0; j < n; ++j)
        std::swap(a[static_cast<std::size_t>(p) * n + j], a[static_cast<std::size_t>(k) * n + j]);
    T pivv = a[static_cast<std::size_t>(k) * n + k];
    for (int i = k + 1; i < n; ++i) {
      T m = a[static_cast<std::size_t>(i) * n + k] / pivv;
      a[static_cast<std::size_t>(i) * n + k] = m;
      if (m != T(0))
        for (int j = k + 1; j < n; ++j)
          a[static_cast<std::size_t>(i) * n + j] -= m * a[static_cast<std::size_t>(k) * n + j];
    }
  }
}

template <typename T>
void lu_solve_factored(const std::vector<T>& lu, int n, const std::vector<int>& piv,
                       std::vector<T>& b) {
  // permute fully before eliminating: the stored multipliers live in the
  // final row order, so partial sums must never be swapped mid-sweep
  for (int k = 0; k < n; ++k)
    if (piv[k] != k) std::swap(b[piv[k]], b[k]);
  for (int k = 0; k < n; ++k)
    for (int i = k + 1; i < n; ++i) b[i] -= lu[static_cast<std::size_t>(i) * n + k] * b[k];
  for (int i = n - 1; i >= 0; --i) {
    T s = b[i];
    for (int j = i + 1; j < n; ++j) s -= lu[static_cast<std::size_t>(i) * n + j] * b[j];
    b[i] = s / lu[static_cast<std::size_t>(i) * n + i];
  }
}

void check_square(const Matrix& a, const char* who) {
  if (a.rows() != a.cols()) throw std::invalid_argument(std::string(who) + ": matrix not square");
  if (a.rows() > kMaxDenseDim)
    throw std::invalid_argument(std::string(who) + ": dimension exceeds dense kernel limit");
}

// Householder reduction to upper Hessenberg form, in place.
void hessenberg_reduce(Matrix& a) {
  int n = a.rows();
  for (int k = 0; k + 2 < n; ++k) {
    double scale = 0.0;
    for (int i = k + 1; i < n; ++i) scale += std::fabs(a(i, k));
    if (scale == 0.0) continue;
    int m = n - k - 1;
    Vec v(m);
    double h = 0.0;
    for (int i = 0; i < m; ++i) {
      v[i] = a(k + 1 + i, k) / scale;
      h += v[i] * v[i];
    }
    double f = v[0];
    double g = f >= 0.0 ? -std::sqrt(h) : std::sqrt(h);
    h -= f * g;
    v[0] = f - g;
    if (h == 0.0) continue;
    // A <- A (I - vv^T/h) on columns k+1..n-1
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < m; ++j) s += a(i, k + 1 + j) * v[j];
      s /= h;
      for (int j = 0; j < m; ++j) a(i, k + 1 + j) -= s * v[j];
    }
    // A <- (I - vv^T/h) A on rows k+1..n-1
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int i = 0; i < m; ++i) s += v[i] * a(k + 1 + i, j);
      s /= h;
      for (int i = 0; i < m; ++i) a(k + 1 + i, j) -= s * v[i];
    }
    a(k + 1, k) = scale * g;
    for (int i = k + 2; i < n; ++i) a(i, k) = 0.0;
  }
}

double sign_like(double a, double b) { return b >= 0.0 ? std::fabs(a) : -std::fabs(a); }

// Francis double-shift QR on an upper Hessenberg matrix (EISPACK hqr lineage).
std::vector<std::complex<double>> hqr_eigenvalues(Matrix& a) {
  int n = a.rows();
  std::vector<std::complex<double>> wri(n);
  double anorm = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = std::max(i - 1, 0); j < n; ++j) anorm += std::fabs(a(i, j));
  if (anorm == 0.0) return wri;

  long iters = 0;
  const long max_iters = 100L * n * n;
  int nn = n - 1;
  double t = 0.0;
  while (nn >= 0) {
    int its = 0;
    int l;
    do {
      for (l = nn; l > 0; --l) {
        double s = std::fabs(a(l - 1, l - 1)) + std::fabs(a(l, l));
        if (s == 0.0) s = anorm;
        if (std::fabs(a(l, l - 1)) <= kEps * s) {
          a(l, l - 1) = 0.0;
          break;
        }
      }
      double x = a(nn, nn);
      if (l == nn) {
        wri[nn--] = x + t;
      } else {
        double y = a(nn - 1, nn - 1);
        double w = a(nn, nn - 1) * a(nn - 1, nn);
        if (l == nn - 1) {
          double p = 0.5 * (y - x);
          double q = p * p + w;
          double z = std::sqrt(std::fabs(q));
          x += t;
          if (q >= 0.0) {
            z = p + sign_like(z, p);
            wri[nn - 1] = wri[nn] = x + z;
            if (z != 0.0) wri[nn] = x - w / z;
          } else {
            wri[nn] = std::complex<double>(x + p, -z);
            wri[nn - 1] = std::conj(wri[nn]);
          }
          nn -= 2;
        } else {
          if (++iters > max_iters)
            throw ConvergenceError("eigenvalue iteration exceeded 100 n^2 QR steps");
          if (its != 0 && its % 10 == 0) {
            // exceptional shift to break stagnation
            t += x;
            for (int i = 0; i <= nn; ++i) a(i, i) -= x;
            double s = std::fabs(a(nn, nn - 1)) + std::fabs(a(nn - 1, nn - 2));
            y = x = 0.75 * s;
            w = -0.4375 * s * s;
          }
          ++its;
          int m;
          double p = 0.0, q = 0.0, r = 0.0, z = 0.0;
          for (m = nn - 2; m >= l; --m) {
            z = a(m, m);
            double rr = x - z;
            double ss = y - z;
            p = (rr * ss - w) / a(m + 1, m) + a(m, m + 1);
            q = a(m + 1, m + 1) - z - rr - ss;
            r = a(m + 2, m + 1);
            double s = std::fabs(p) + std::fabs(q) + std::fabs(r);
            p /= s;
            q /= s;
            r /= s;
            if (m == l) break;
            double u = std::fabs(a(m, m - 1)) * (std::fabs(q) + std::fabs(r));
            double v = std::fabs(p) * (std::fabs(a(m - 1, m - 1)) + std::fabs(z) +
                                       std::fabs(a(m + 1, m + 1)));
            if (u <= kEps * v) break;
          }
          for (int i = m; i < nn - 1; ++i) {
            a(i + 2, i) = 0.0;
            if (i != m) a(i + 2, i - 1) = 0.0;
          }
          for (int k = m; k < nn; ++k) {
            if (k != m) {
              p = a(k, k - 1);
              q = a(k + 1, k - 1);
              r = k + 1 != nn ? a(k + 2, k - 1) : 0.0;
              x = std::fabs(p) + std::fabs(q) + std::fabs(r);
              if (x != 0.0) {
                p /= x;
                q /= x;
                r /= x;
              }
            }
            double s = sign_like(std::sqrt(p * p + q * q + r * r), p);
            if (s == 0.0) continue;
            if (k == m) {
              if (l != m) a(k, k - 1) = -a(k, k - 1);
            } else {
              a(k, k - 1) = -s * x;
            }
            p += s;
            x = p / s;
            y = q / s;
            z = r / s;
            q /= p;
            r /= p;
            for (int j = k; j <= nn; ++j) {
              double pp = a(k, j) + q * a(k + 1, j);
              if (k + 1 != nn) {
                pp += r * a(k + 2, j);
                a(k + 2, j) -= pp * z;
              }
              a(k + 1, j) -= pp * y;
              a(k, j) -= pp * x;
            }
            int mmin = nn < k + 3 ? nn : k + 3;
            for (int i = l; i <= mmin; ++i) {
              double pp = x * a(i, k) + y * a(i, k + 1);
              if (k + 1 != nn) {
                pp += z * a(i, k + 2);
                a(i, k + 2) -= pp * r;
              }
              a(i, k + 1) -= pp * q;
              a(i, k) -= pp;
            }
          }
        }
      }
    } while (l + 1 < nn);
  }
  return wri;
}

}  // namespace

Vec solve_linear(const Matrix& a, const Vec& b) {
  check_square(a, "solve_linear");
  int n = a.rows();
  if (static_cast<int>(b.size()) != n) throw std::invalid_argument("solve_linear: rhs size");
  std::vector<double> lu(a.data(), a.data() + static_cast<std::size_t>(n) * n);
  std::vector<int> piv;
  lu_factor(lu, n, piv);
  Vec x = b;
  lu_solve_factored(lu, n, piv, x);
  return x;
}

std::vector<std::complex<double>> eig_small(const Matrix& a) {
  check_square(a, "eig_small");
  if (!a.all_finite()) throw std::invalid_argument("eig_small: non-finite entries");
  Matrix h = a;
  hessenberg_reduce(h);
  return hqr_eigenvalues(h);
}

double spectral_norm(const Matrix& a) {
  if (a.rows() == 0 || a.cols() == 0) return 0.0;
  bool use_ata = a.cols() <= a.rows();
  int n = use_ata ? a.cols() : a.rows();
  Rng rng = Rng(0x517EC7A11ull).substream("spectral_norm");
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.normal();
  double nv = norm2(v);
  for (int i = 0; i < n; ++i) v[i] /= nv;

  double sigma = 0.0, prev = -1.0;
  int streak = 0;
  for (int it = 0; it < 10000; ++it) {
    Vec w = use_ata ? matvec_t(a, matvec(a, v)) : matvec(a, matvec_t(a, v));
    double nw = norm2(w);
    if (nw == 0.0) {
      // v landed in the kernel; perturb and retry
      for (int i = 0; i < n; ++i) v[i] = rng.normal();
      nv = norm2(v);
      for (int i = 0; i < n; ++i) v[i] /= nv;
      if (max_abs(a) == 0.0) return 0.0;
      continue;
    }
    sigma = std::sqrt(nw);
    for (int i = 0; i < n; ++i) v[i] = w[i] / nw;
    if (prev >= 0.0 && std::fabs(sigma - prev) <= 1e-10 * std::max(sigma, 1e-300)) {
      if (++streak >= 2) break;
    } else {
      streak = 0;
    }
    prev = sigma;
  }
  return sigma * (1.0 + 1e-9);
}

std::vector<Vec> null_space(const Matrix& a, double tol) {
  int rows = a.rows(), cols = a.cols();
  Matrix u = a;
  double amax = max_abs(a);
  double thr = tol * (amax == 0.0 ? 1.0 : amax);
  std::vector<int> pivot_col;
  int r = 0;
  for (int c = 0; c < cols && r < rows; ++c) {
    int p = r;
    double best = std::fabs(u(r, c));
    for (int i = r + 1; i < rows; ++i)
      if (std::fabs(u(i, c)) > best) {
        best = std::fabs(u(i, c));
        p = i;
      }
    if (best <= thr) continue;
    if (p != r)
      for (int j = 0; j < cols; ++j) std::swap(u(p, j), u(r, j));
    for (int i = 0; i < rows; ++i) {
      if (i == r) continue;
      double m = u(i, c) / u(r, c);
      if (m == 0.0) continue;
      for (int j = 0; j < cols; ++j) u(i, j) -= m * u(r, j);
    }
    pivot_col.push_back(c);
    ++r;
  }
  std::vector<Vec> basis;
  std::vector<bool> is_pivot(cols, false);
  for (int c : pivot_col) is_pivot[c] = true;
  for (int c = 0; c < cols; ++c) {
    if (is_pivot[c]) continue;
    Vec x(cols, 0.0);
    x[c] = 1.0;
    for (int k = 0; k < static_cast<int>(pivot_col.size()); ++k)
      x[pivot_col[k]] = -u(k, c) / u(k, pivot_col[k]);
    // modified Gram-Schmidt against what we already have
    for (const Vec& b : basis) axpy(-dot(b, x), b, x);
    double nx = norm2(x);
    if (nx > 1e-12) basis.push_back(vec_scale(1.0 / nx, x));
  }
  return basis;
}

double smallest_singular_shifted(const Matrix& a, std::complex<double> lambda) {
  check_square(a, "smallest_singular_shifted");
  int n = a.rows();
  using C = std::complex<double>;
  std::vector<C> m(static_cast<std::size_t>(n) * n), mh(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      C v = C(a(i, j)) - (i == j ? lambda : C(0));
      m[static_cast<std::size_t>(i) * n + j] = v;
      mh[static_cast<std::size_t>(j) * n + i] = std::conj(v);
    }
  std::vector<int> piv_m, piv_mh;
  try {
    lu_factor(m, n, piv_m);
    lu_factor(mh, n, piv_mh);
  } catch (const SingularMatrixError&) {
    return 0.0;
  }
  Rng rng = Rng(0x5151E57ull).substream("sigma_min");
  std::vector<C> v(n);
  for (int i = 0; i < n; ++i) v[i] = C(rng.normal(), rng.normal());
  double nv = 0.0;
  for (const C& z : v) nv += std::norm(z);
  nv = std::sqrt(nv);
  for (C& z : v) z /= nv;

  double mu = 0.0, prev = -1.0;
  int streak = 0;
  for (int it = 0; it < 500; ++it) {
    std::vector<C> u = v;
    lu_solve_factored(m, n, piv_m, u);
    lu_solve_factored(mh, n, piv_mh, u);
    double nu = 0.0;
    for (const C& z : u) nu += std::norm(z);
    nu = std::sqrt(nu);
    if (!std::isfinite(nu) || nu == 0.0) return 0.0;
    mu = nu;
    for (int i = 0; i < n; ++i) v[i] = u[i] / nu;
    if (prev >= 0.0 && std::fabs(mu - prev) <= 1e-12 * mu) {
      if (++streak >= 2) break;
    } else {
      streak = 0;
    }
    prev = mu;
  }
  return 1.0 / std::sqrt(mu);
}

void qr_decompose(const Matrix& a, Matrix& q, Matrix& r) {
  int rows = a.rows(), cols = a.cols();
  if (rows < cols) throw std::invalid_argument("qr_decompose: rows < cols");
  Matrix work = a;
  Matrix qq = Matrix::identity(rows);
  for (int k = 0; k < cols && k < rows - 1; ++k) {
    double scale = 0.0;
    for (int i = k; i < rows; ++i) scale += std::fabs(work(i, k));
    if (scale == 0.0) continue;
    int m = rows - k;
    Vec v(m);
    double h = 0.0;
    for (int i = 0; i < m; ++i) {
      v[i] = work(k + i, k) / scale;
      h += v[i] * v[i];
    }
    double f = v[0];
    double g = f >= 0.0 ? -std::sqrt(h) : std::sqrt(h);
    h -= f * g;
    v[0] = f - g;
    if (h == 0.0) continue;
    for (int j = k; j < cols; ++j) {
      double s = 0.0;
      for (int i = 0; i < m; ++i) s += v[i] * work(k + i, j);
      s /= h;
      for (int i = 0; i < m; ++i) work(k + i, j) -= s * v[i];
    }
    for (int i = 0; i < rows; ++i) {
      double s = 0.0;
      for (int j = 0; j < m; ++j) s += qq(i, k + j) * v[j];
      s /= h;
      for (int j = 0; j < m; ++j) qq(i, k + j) -= s * v[j];
    }
  }
  q = Matrix(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) q(i, j) = qq(i, j);
  r = Matrix(cols, cols);
  for (int i = 0; i < cols; ++i)
    for (int j = i; j < cols; ++j) r(i, j) = work(i, j);
}

}  // namespace embedflow
