#pragma once

#include <complex>
#include <stdexcept>
#include <vector>

#include "embedflow/matrix.hpp"

namespace embedflow {

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SingularMatrixError : NumericError {
  using NumericError::NumericError;
};
struct ConvergenceError : NumericError {
  using NumericError::NumericError;
};
struct StiffnessError : NumericError {
  using NumericError::NumericError;
};
struct DivergenceError : NumericError {
  using NumericError::NumericError;
};

inline constexpr int kMaxDenseDim = 64;

// Gaussian elimination with partial pivoting. Throws SingularMatrixError when a
// pivot falls below 1e-14 * max|A|.
Vec solve_linear(const Matrix& a, const Vec& b);

// All eigenvalues of a real square matrix (n <= kMaxDenseDim): Householder
// reduction to Hessenberg form followed by shifted QR. Throws ConvergenceError
// after 100*n^2 QR iterations.
std::vector<std::complex<double>> eig_small(const Matrix& a);

// Largest singular value by power iteration on A^T A (relative tolerance 1e-10,
// at most 1e4 iterations). The returned value is nudged up so it never sits more
// than 1e-8 (relative) below the true norm.
double spectral_norm(const Matrix& a);

// Orthonormal basis of {x : Ax = 0}; entries below tol * max|A| are treated as zero.
std::vector<Vec> null_space(const Matrix& a, double tol = 1e-10);

// Smallest singular value of (A - lambda I) for real A and complex lambda,
// via inverse power iteration on the shifted matrix. Returns 0 when the shift
// makes the matrix numerically singular.
double smallest_singular_shifted(const Matrix& a, std::complex<double> lambda);

// Thin QR by Householder reflections; q is rows x cols with orthonormal columns,
// r upper triangular. Requires rows >= cols.
void qr_decompose(const Matrix& a, Matrix& q, Matrix& r);

}  // namespace embedflow
