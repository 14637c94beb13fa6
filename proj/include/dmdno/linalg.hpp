#pragma once

#include <complex>

#include <Eigen/Dense>

namespace dmdno {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

namespace linalg {

/// Thin SVD M = U diag(sigma) V^T with k = min(rows, cols).
///
/// Singular values are non-increasing. Column signs are fixed so that the
/// largest-magnitude entry of every U column is non-negative (V follows).
struct SvdFactors {
  Matrix u;
  Vector sigma;
  Matrix v;
};

/// Eigenpairs of a real square matrix; each eigenvector column has unit
/// 2-norm and complex-conjugate pairs occupy adjacent slots.
struct ComplexEigenpairs {
  CVector values;
  CMatrix vectors;
};

/// Largest side accepted by eig(). The projected DMD operator is r x r with
/// r small; larger inputs indicate a caller error.
inline constexpr Eigen::Index kMaxEigSide = 64;

/// Throws InvalidInput on empty or non-finite input.
SvdFactors svd(const Matrix& m);

/// Throws InvalidInput for non-square or oversized input and NumericalError
/// when the QR iteration does not converge.
ComplexEigenpairs eig(const Matrix& a);

/// Minimum-norm least-squares solution of a * b = y through the SVD
/// pseudo-inverse. Singular values below 1e-12 * sigma_1 are treated as zero.
CVector lstsq_complex(const CMatrix& a, const CVector& y);

bool all_finite(const Matrix& m);

}  // namespace linalg
}  // namespace dmdno
