#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "dmdno/error.hpp"
#include "dmdno/linalg.hpp"
#include "oracles.hpp"

using namespace dmdno;
using dmdno::linalg::eig;
using dmdno::linalg::lstsq_complex;
using dmdno::linalg::svd;

namespace {

double orthonormality_error(const Matrix& q) {
  return (q.transpose() * q - Matrix::Identity(q.cols(), q.cols())).cwiseAbs().maxCoeff();
}

// Sorted by (real, imag) so eigenvalue multisets can be compared.
std::vector<Complex> sorted(const CVector& v) {
  std::vector<Complex> out(v.data(), v.data() + v.size());
  std::sort(out.begin(), out.end(), [](Complex a, Complex b) {
    return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
  });
  return out;
}

}  // namespace

TEST_CASE("svd of the 2x2 identity") {
  const auto f = svd(Matrix::Identity(2, 2));
  CHECK(f.sigma(0) == doctest::Approx(1.0));
  CHECK(f.sigma(1) == doctest::Approx(1.0));
  CHECK((f.u - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((f.v - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("svd of diag(3, 1)") {
  Matrix m(2, 2);
  m << 3, 0, 0, 1;
  const auto f = svd(m);
  CHECK(f.sigma(0) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(f.sigma(1) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("svd of a rank-1 matrix has sigma (5, 0)") {
  // M^T M = [[5,10],[10,20]] has eigenvalues 25 and 0.
  Matrix m(2, 2);
  m << 1, 2, 2, 4;
  const auto f = svd(m);
  CHECK(f.sigma(0) == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(std::abs(f.sigma(1)) < 1e-14);
}

TEST_CASE("svd rejects non-finite and empty input") {
  Matrix m = Matrix::Ones(2, 2);
  m(1, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(svd(m), InvalidInput);
  CHECK_THROWS_AS(svd(Matrix(0, 3)), InvalidInput);
}

TEST_CASE("svd factors satisfy the invariants on 200 random matrices") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto rows = static_cast<Eigen::Index>(1 + rng.below(12));
    const auto cols = static_cast<Eigen::Index>(1 + rng.below(12));
    const Matrix m = oracle::random_matrix(rng, rows, cols);
    const auto f = svd(m);
    const auto k = std::min(rows, cols);
    REQUIRE(f.u.rows() == rows);
    REQUIRE(f.u.cols() == k);
    REQUIRE(f.v.rows() == cols);
    REQUIRE(f.v.cols() == k);
    for (Eigen::Index i = 0; i < k; ++i) {
      CHECK(f.sigma(i) >= 0.0);
      if (i > 0) CHECK(f.sigma(i) <= f.sigma(i - 1));
      Eigen::Index arg = 0;
      f.u.col(i).cwiseAbs().maxCoeff(&arg);
      CHECK(f.u(arg, i) >= 0.0);
    }
    CHECK(orthonormality_error(f.u) <= 1e-10);
    CHECK(orthonormality_error(f.v) <= 1e-10);
    CHECK((f.u * f.sigma.asDiagonal() * f.v.transpose() - m).norm() <= 1e-9 * m.norm());
  }
}

TEST_CASE("svd is bit-reproducible") {
  Rng rng(5);
  const Matrix m = oracle::random_matrix(rng, 9, 7);
  const auto a = svd(m);
  const auto b = svd(m);
  CHECK(a.u == b.u);
  CHECK(a.sigma == b.sigma);
  CHECK(a.v == b.v);
}

TEST_CASE("Eckart-Young: truncation error equals the discarded singular mass") {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix m = oracle::random_matrix(rng, 8, 6);
    const auto f = svd(m);
    for (Eigen::Index s = 0; s <= f.sigma.size(); ++s) {
      const Matrix approx = f.u.leftCols(s) * f.sigma.head(s).asDiagonal() * f.v.leftCols(s).transpose();
      const double err2 = (m - approx).squaredNorm();
      const double tail2 = f.sigma.tail(f.sigma.size() - s).squaredNorm();
      // Absolute slack: the residual of an exact reconstruction is round-off of size eps * ||m||.
      CHECK(std::abs(err2 - tail2) <= 1e-10 * tail2 + 1e-24 * m.squaredNorm());
    }
  }
}

TEST_CASE("eig of a rotation gives +i and -i as an adjacent pair") {
  Matrix a(2, 2);
  a << 0, -1, 1, 0;
  const auto e = eig(a);
  const auto v = sorted(e.values);
  CHECK(std::abs(v[0] - Complex(0, -1)) < 1e-12);
  CHECK(std::abs(v[1] - Complex(0, 1)) < 1e-12);
  CHECK(std::abs(e.values(0) - std::conj(e.values(1))) < 1e-12);
}

TEST_CASE("eig of diag(2, 3) returns the standard basis") {
  Matrix a(2, 2);
  a << 2, 0, 0, 3;
  const auto e = eig(a);
  for (int k = 0; k < 2; ++k) {
    const Complex lam = e.values(k);
    CHECK(std::abs(lam.imag()) < 1e-15);
    const int axis = std::abs(lam.real() - 2.0) < 1e-12 ? 0 : 1;
    CHECK(std::abs(lam.real() - (axis == 0 ? 2.0 : 3.0)) < 1e-12);
    CHECK(std::abs(std::abs(e.vectors(axis, k)) - 1.0) < 1e-12);
    CHECK(std::abs(e.vectors(1 - axis, k)) < 1e-12);
  }
}

TEST_CASE("eig of an upper-triangular matrix") {
  // det(A - lambda I) = (2 - lambda)(2.5 - lambda).
  Matrix a(2, 2);
  a << 2, 1, 0, 2.5;
  const auto v = sorted(eig(a).values);
  CHECK(std::abs(v[0] - Complex(2.0, 0)) < 1e-12);
  CHECK(std::abs(v[1] - Complex(2.5, 0)) < 1e-12);
}

TEST_CASE("eig rejects non-square and oversized input") {
  CHECK_THROWS_AS(eig(Matrix::Zero(2, 3)), InvalidInput);
  CHECK_THROWS_AS(eig(Matrix::Identity(linalg::kMaxEigSide + 1, linalg::kMaxEigSide + 1)), InvalidInput);
}

TEST_CASE("eig residuals and unit-norm vectors on random matrices") {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = static_cast<Eigen::Index>(1 + rng.below(10));
    const Matrix a = oracle::random_matrix(rng, n, n);
    const auto e = eig(a);
    const CMatrix ac = a.cast<Complex>();
    for (Eigen::Index i = 0; i < n; ++i) {
      CHECK(std::abs(e.vectors.col(i).norm() - 1.0) < 1e-12);
      CHECK((ac * e.vectors.col(i) - e.values(i) * e.vectors.col(i)).norm() <= 1e-8 * a.norm());
      if (e.values(i).imag() > 1e-12) {
        REQUIRE(i + 1 < n);
        CHECK(std::abs(e.values(i + 1) - std::conj(e.values(i))) <= 1e-10 * (1.0 + std::abs(e.values(i))));
      }
    }
  }
}

TEST_CASE("eig recovers eigenvalues of A = W diag(lambda) W^-1") {
  Rng rng(14);
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = static_cast<Eigen::Index>(2 + rng.below(7));
    // Well-conditioned W: identity plus a small perturbation.
    const Matrix w = Matrix::Identity(n, n) + 0.2 * oracle::random_matrix(rng, n, n);
    Vector lam(n);
    for (Eigen::Index i = 0; i < n; ++i) lam(i) = -2.0 + 4.0 * (static_cast<double>(i) + 0.5 * rng.uniform01()) / n;
    const Matrix a = w * lam.asDiagonal() * w.inverse();
    const auto got = sorted(eig(a).values);
    std::vector<double> want(lam.data(), lam.data() + n);
    std::sort(want.begin(), want.end());
    for (Eigen::Index i = 0; i < n; ++i) CHECK(std::abs(got[i] - Complex(want[i], 0.0)) <= 1e-7);
  }
}

TEST_CASE("lstsq_complex examples") {
  SUBCASE("identity system") {
    CVector y(2);
    y << Complex(1, 1), Complex(2, 0);
    const CVector b = lstsq_complex(CMatrix::Identity(2, 2), y);
    CHECK(std::abs(b(0) - Complex(1, 1)) < 1e-15);
    CHECK(std::abs(b(1) - Complex(2, 0)) < 1e-15);
  }
  SUBCASE("one column: the mean of the observations") {
    CMatrix a(2, 1);
    a << 1, 1;
    CVector y(2);
    y << 1, 3;
    CHECK(std::abs(lstsq_complex(a, y)(0) - Complex(2, 0)) < 1e-14);
  }
  SUBCASE("zero column gets a zero coefficient") {
    CMatrix a = CMatrix::Zero(3, 2);
    a(0, 0) = 1;
    a(1, 0) = 2;
    CVector y(3);
    y << 1, 2, 5;
    const CVector b = lstsq_complex(a, y);
    CHECK(std::abs(b(1)) == 0.0);
    CHECK(std::abs(b(0) - Complex(1, 0)) < 1e-14);
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(lstsq_complex(CMatrix::Identity(2, 2), CVector::Zero(3)), InvalidInput);
  }
}

TEST_CASE("lstsq_complex matches the normal equations on full-rank systems") {
  Rng rng(15);
  for (int trial = 0; trial < 50; ++trial) {
    CMatrix a(8, 3);
    CVector y(8);
    for (Eigen::Index i = 0; i < 8; ++i) {
      for (Eigen::Index j = 0; j < 3; ++j) a(i, j) = Complex(rng.uniform(-1, 1), rng.uniform(-1, 1));
      y(i) = Complex(rng.uniform(-1, 1), rng.uniform(-1, 1));
    }
    const CVector want = (a.adjoint() * a).lu().solve(a.adjoint() * y);
    CHECK((lstsq_complex(a, y) - want).norm() <= 1e-10 * want.norm());
  }
}
