#include "dmdno/linalg.hpp"

#include <string>

#include "dmdno/error.hpp"

namespace dmdno::linalg {

bool all_finite(const Matrix& m) { return m.allFinite(); }

SvdFactors svd(const Matrix& m) {
  if (m.size() == 0) throw InvalidInput("svd: empty matrix");
  if (!m.allFinite()) throw InvalidInput("svd: matrix has non-finite entries");

  Eigen::JacobiSVD<Matrix, Eigen::ColPivHouseholderQRPreconditioner> solver(
      m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  SvdFactors f{solver.matrixU(), solver.singularValues(), solver.matrixV()};

  for (Eigen::Index j = 0; j < f.u.cols(); ++j) {
    Eigen::Index imax = 0;
    f.u.col(j).cwiseAbs().maxCoeff(&imax);
    if (f.u(imax, j) < 0.0) {
      f.u.col(j) = -f.u.col(j);
      f.v.col(j) = -f.v.col(j);
    }
  }
  return f;
}

ComplexEigenpairs eig(const Matrix& a) {
  if (a.rows() != a.cols()) {
    throw InvalidInput("eig: matrix is " + std::to_string(a.rows()) + "x" +
                       std::to_string(a.cols()) + ", expected square");
  }
  if (a.rows() == 0) throw InvalidInput("eig: empty matrix");
  if (a.rows() > kMaxEigSide) {
    throw InvalidInput("eig: side " + std::to_string(a.rows()) + " exceeds limit " +
                       std::to_string(kMaxEigSide));
  }
  if (!a.allFinite()) throw InvalidInput("eig: matrix has non-finite entries");

  Eigen::EigenSolver<Matrix> solver;
  // Eigen's default budget is 40 sweeps per row.
  const Eigen::Index max_iter = 40 * a.rows();
  solver.setMaxIterations(max_iter);
  solver.compute(a, true);
  if (solver.info() != Eigen::Success) {
    throw NumericalError("eig: QR iteration did not converge within " +
                         std::to_string(max_iter) + " iterations");
  }

  ComplexEigenpairs out{solver.eigenvalues(), solver.eigenvectors()};
  for (Eigen::Index j = 0; j < out.vectors.cols(); ++j) {
    const double nrm = out.vectors.col(j).norm();
    if (nrm > 0.0) out.vectors.col(j) /= nrm;
  }
  return out;
}

CVector lstsq_complex(const CMatrix& a, const CVector& y) {
  if (a.rows() < 1 || a.cols() < 1) throw InvalidInput("lstsq_complex: empty system");
  if (a.rows() != y.size()) {
    throw InvalidInput("lstsq_complex: matrix has " + std::to_string(a.rows()) +
                       " rows but right-hand side has " + std::to_string(y.size()));
  }
  Eigen::JacobiSVD<CMatrix> solver(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = solver.singularValues();
  const double cutoff = s.size() > 0 ? 1e-12 * s(0) : 0.0;

  CVector uy = solver.matrixU().adjoint() * y;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    uy(i) = (s(i) > cutoff && s(i) > 0.0) ? uy(i) / s(i) : Complex(0.0, 0.0);
  }
  return solver.matrixV() * uy;
}

}  // namespace dmdno::linalg
