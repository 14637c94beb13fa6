#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "dmdno/dmd.hpp"
#include "dmdno/error.hpp"
#include "oracles.hpp"

using namespace dmdno;
using dmd::DmdConfig;

namespace {

Matrix trajectory(const Matrix& a, const Vector& x0, int columns) {
  Matrix s(x0.size(), columns);
  s.col(0) = x0;
  for (int k = 1; k < columns; ++k) s.col(k) = a * s.col(k - 1);
  return s;
}

DmdConfig preset(int r) {
  DmdConfig c;
  c.rank = r;
  return c;
}

DmdConfig by_energy(double threshold) {
  DmdConfig c;
  c.rank.reset();
  c.energy_threshold = threshold;
  return c;
}

double max_reconstruction_error(const dmd::DmdDecomposition& dec, const Matrix& s) {
  double worst = 0.0;
  for (Eigen::Index t = 0; t < s.cols(); ++t) {
    worst = std::max(worst, (dmd::reconstruct(dec, static_cast<double>(t)) - s.col(t)).norm() / s.col(t).norm());
  }
  return worst;
}

}  // namespace

TEST_CASE("select_rank") {
  Vector s(3);
  s << 10, 1, 0.01;
  CHECK(dmd::select_rank(s, by_energy(0.95)) == 1);  // 100 / 101.0001 = 0.9901
  CHECK(dmd::select_rank(s, by_energy(0.995)) == 2);
  CHECK(dmd::select_rank(Vector::Constant(5, 1.0), preset(10)) == 5);
  CHECK(dmd::select_rank(Vector::Constant(4, 2.0), by_energy(1.0)) == 4);
  CHECK_THROWS_AS(dmd::select_rank(Vector::Zero(3), by_energy(0.9)), DegenerateInput);
  CHECK_THROWS_AS(dmd::select_rank(Vector(0), preset(2)), InvalidInput);
}

TEST_CASE("decompose a diagonal linear system") {
  Matrix a = Matrix::Zero(2, 2);
  a(0, 0) = 0.9;
  a(1, 1) = 0.5;
  const Matrix s = trajectory(a, Vector::Ones(2), 6);
  const auto dec = dmd::decompose(s, preset(2));
  REQUIRE(dec.rank == 2);
  for (int k = 0; k < 2; ++k) {
    const Complex lam = dec.eigenvalues(k);
    CHECK(std::abs(lam.imag()) < 1e-12);
    const bool slow = std::abs(lam.real() - 0.9) < 1e-10;
    CHECK((slow || std::abs(lam.real() - 0.5) < 1e-10));
    // The mode of 0.9 points along e1, the mode of 0.5 along e2.
    const int off = slow ? 1 : 0;
    CHECK(std::abs(dec.modes(off, k)) < 1e-10 * std::abs(dec.modes(1 - off, k)));
  }
  SUBCASE("reconstruction at t = 3 gives the closed-form powers") {
    const Vector x = dmd::reconstruct(dec, 3.0);
    CHECK(std::abs(x(0) - 0.729) < 1e-8);
    CHECK(std::abs(x(1) - 0.125) < 1e-8);
  }
  SUBCASE("t = 0 returns x0") { CHECK((dmd::reconstruct(dec, 0.0) - Vector::Ones(2)).norm() < 1e-8); }
  SUBCASE("forecast beyond the window matches repeated application of A") {
    Vector x = Vector::Ones(2);
    for (int k = 0; k < 12; ++k) x = a * x;
    CHECK((dmd::reconstruct(dec, 12.0) - x).norm() < 1e-6);
  }
}

TEST_CASE("constant snapshots: one mode with eigenvalue 1") {
  Matrix s(3, 5);
  for (int k = 0; k < 5; ++k) s.col(k) << 1.0, -2.0, 0.5;
  const auto dec = dmd::decompose(s, by_energy(0.95));
  REQUIRE(dec.rank == 1);
  CHECK(std::abs(dec.eigenvalues(0) - Complex(1.0, 0.0)) < 1e-12);
  CHECK(max_reconstruction_error(dec, s) < 1e-12);
}

TEST_CASE("planar rotation has eigenvalues exp(+-0.3i)") {
  const double th = 0.3;
  Matrix a(2, 2);
  a << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
  Vector x0(2);
  x0 << 1.0, 0.2;
  const auto dec = dmd::decompose(trajectory(a, x0, 8), preset(2));
  const Complex want = std::polar(1.0, th);
  for (int k = 0; k < 2; ++k) {
    const Complex lam = dec.eigenvalues(k);
    CHECK(std::min(std::abs(lam - want), std::abs(lam - std::conj(want))) < 1e-8);
  }
  CHECK(std::abs(dec.eigenvalues(0) - std::conj(dec.eigenvalues(1))) < 1e-12);
}

TEST_CASE("decompose rejects degenerate input") {
  CHECK_THROWS_AS(dmd::decompose(Matrix::Ones(3, 1), preset(1)), InvalidInput);
  CHECK_THROWS_AS(dmd::decompose(Matrix::Zero(3, 4), preset(1)), DegenerateInput);
}

TEST_CASE("exactness on random diagonalizable systems") {
  Rng rng(21);
  for (int trial = 0; trial < 40; ++trial) {
    const auto n = static_cast<Eigen::Index>(2 + rng.below(7));
    const Matrix w = Matrix::Identity(n, n) + 0.3 * oracle::random_matrix(rng, n, n);
    Vector lam(n);
    for (Eigen::Index i = 0; i < n; ++i) lam(i) = (0.4 + 0.7 * (i + rng.uniform01() * 0.5) / n) * (rng.below(2) ? 1 : -1);
    const Matrix a = w * lam.asDiagonal() * w.inverse();
    const Matrix s = trajectory(a, oracle::random_matrix(rng, n, 1).col(0) + Vector::Constant(n, 1.5), static_cast<int>(n) + 3);
    const auto dec = dmd::decompose(s, preset(static_cast<int>(n)));
    CHECK(max_reconstruction_error(dec, s) <= 1e-7);
  }
}

TEST_CASE("real data: conjugate-closed spectrum and negligible imaginary residue") {
  Rng rng(22);
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix a = 0.5 * oracle::random_matrix(rng, 6, 6);
    const Matrix s = trajectory(a, Vector::Ones(6), 12);
    const auto dec = dmd::decompose(s, preset(6));
    for (int k = 0; k < dec.rank; ++k) {
      const Complex lam = dec.eigenvalues(k);
      double nearest = 1e300;
      for (int j = 0; j < dec.rank; ++j) nearest = std::min(nearest, std::abs(dec.eigenvalues(j) - std::conj(lam)));
      CHECK(nearest <= 1e-9 * (1.0 + std::abs(lam)));
    }
    for (int t = 0; t < 12; ++t) {
      double ratio = 0.0;
      dmd::reconstruct(dec, t, &ratio);
      CHECK(ratio <= 1e-8);
    }
  }
}

TEST_CASE("energy rank grows with the threshold") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix s = oracle::random_matrix(rng, 8, 12);
    const Vector sig = linalg::svd(s.leftCols(11)).sigma;
    int previous = 0;
    for (double th = 0.05; th < 1.0; th += 0.05) {
      const int r = dmd::select_rank(sig, by_energy(th));
      CHECK(r >= previous);
      // Smallest rank whose leading squared mass reaches th.
      const double total = sig.squaredNorm();
      CHECK(sig.head(r).squaredNorm() >= th * total * (1 - 1e-12));
      if (r > 1) CHECK(sig.head(r - 1).squaredNorm() < th * total);
      previous = r;
    }
  }
}

TEST_CASE("reconstruct treats lambda^0 as 1 for lambda = 0") {
  dmd::DmdDecomposition dec;
  dec.rank = 1;
  dec.modes = CMatrix::Ones(2, 1);
  dec.eigenvalues = CVector::Zero(1);
  dec.amplitudes = CVector::Constant(1, Complex(3.0, 0.0));
  CHECK(dmd::reconstruct(dec, 0.0)(0) == 3.0);
  CHECK(dmd::reconstruct(dec, 2.0)(0) == 0.0);
}

TEST_CASE("branch encoding layout") {
  SUBCASE("single mode") {
    dmd::DmdDecomposition dec;
    dec.rank = 1;
    dec.modes = CMatrix(2, 1);
    dec.modes << Complex(1, 2), Complex(0, 0);
    dec.eigenvalues = CVector::Constant(1, Complex(0.9, 0));
    dec.amplitudes = CVector::Constant(1, Complex(1, 0));
    const auto enc = dmd::encode_branch_inputs(dec);
    CHECK(enc.mode_vec == std::vector<double>{1, 0, 2, 0});
    CHECK(enc.dyn_vec == std::vector<double>{0.9, 0, 1, 0});
    SUBCASE("evolved dynamics carry lambda^t b") {
      const auto ev = dmd::encode_branch_inputs(dec, dmd::DynamicsEncoding::kEvolved, 2.0);
      CHECK(ev.dyn_vec[0] == 0.9);
      CHECK(std::abs(ev.dyn_vec[2] - 0.81) < 1e-15);
    }
  }
  SUBCASE("ordering by |lambda| then |b|") {
    dmd::DmdDecomposition dec;
    dec.rank = 3;
    dec.modes = CMatrix::Identity(3, 3);
    dec.eigenvalues = CVector(3);
    dec.eigenvalues << 0.5, 0.9, Complex(0, -0.9);
    dec.amplitudes = CVector(3);
    dec.amplitudes << 1.0, 1.0, 2.0;
    CHECK(dmd::branch_order(dec) == std::vector<int>{2, 1, 0});
    const auto enc = dmd::encode_branch_inputs(dec);
    CHECK(enc.dyn_vec[0] == 0.0);
    CHECK(enc.dyn_vec[3] == -0.9);
  }
  SUBCASE("lengths for n = 100, r = 10") {
    Rng rng(24);
    const Matrix s = oracle::random_matrix(rng, 100, 15);
    const auto enc = dmd::encode_branch_inputs(dmd::decompose(s, preset(10)));
    CHECK(enc.mode_vec.size() == 2000);
    CHECK(enc.dyn_vec.size() == 40);
  }
}

TEST_CASE("identical data gives identical encoding bytes") {
  Rng rng(25);
  const Matrix s = oracle::random_matrix(rng, 20, 11);
  const auto a = dmd::encode_branch_inputs(dmd::decompose(s, preset(6)));
  const auto b = dmd::encode_branch_inputs(dmd::decompose(s, preset(6)));
  REQUIRE(a.mode_vec.size() == b.mode_vec.size());
  CHECK(std::memcmp(a.mode_vec.data(), b.mode_vec.data(), a.mode_vec.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(a.dyn_vec.data(), b.dyn_vec.data(), a.dyn_vec.size() * sizeof(double)) == 0);
}
