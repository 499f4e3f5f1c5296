#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace embedflow {

using Vec = std::vector<double>;

// Row-major dense matrix sized for the small systems this project works with
// (ambient dimensions and layer widths up to a few hundred).
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), a_(static_cast<std::size_t>(rows) * cols, fill) {}
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(int n);

  int rows() const { return rows_; }
  int cols() const { return cols_; }

  double& operator()(int i, int j) { return a_[static_cast<std::size_t>(i) * cols_ + j]; }
  double operator()(int i, int j) const { return a_[static_cast<std::size_t>(i) * cols_ + j]; }

  double* data() { return a_.data(); }
  const double* data() const { return a_.data(); }

  bool all_finite() const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> a_;
};

Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Vec matvec(const Matrix& a, const Vec& x);
// y = A^T x
Vec matvec_t(const Matrix& a, const Vec& x);
Matrix outer(const Vec& u, const Vec& v);

double dot(const Vec& a, const Vec& b);
double norm2(const Vec& a);
double norm2_sq(const Vec& a);
double max_abs(const Vec& a);
double max_abs(const Matrix& a);
Vec vec_add(const Vec& a, const Vec& b);
Vec vec_sub(const Vec& a, const Vec& b);
Vec vec_scale(double s, const Vec& a);
// a += s*b
void axpy(double s, const Vec& b, Vec& a);
bool all_finite(const Vec& a);

}  // namespace embedflow
