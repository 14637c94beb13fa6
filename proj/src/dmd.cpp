#include "dmdno/dmd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dmdno/error.hpp"

namespace dmdno::dmd {

namespace {

Complex complex_pow(Complex base, double t) {
  if (t == 0.0) return {1.0, 0.0};
  if (base == Complex(0.0, 0.0)) return {0.0, 0.0};
  if (t == std::round(t) && std::abs(t) <= 1024.0) {
    // Integer horizons by repeated squaring; avoids log/exp round-off.
    auto n = static_cast<long>(std::abs(t));
    Complex acc(1.0, 0.0), b = base;
    while (n > 0) {
      if (n & 1) acc *= b;
      b *= b;
      n >>= 1;
    }
    return t < 0 ? 1.0 / acc : acc;
  }
  return std::pow(base, t);
}

// Rotate an eigenvector so its largest-magnitude entry is real and positive.
void fix_phase(CMatrix& w) {
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    Eigen::Index imax = 0;
    w.col(j).cwiseAbs().maxCoeff(&imax);
    const Complex pivot = w(imax, j);
    if (std::abs(pivot) > 0.0) w.col(j) *= std::conj(pivot) / std::abs(pivot);
  }
}

}  // namespace

int select_rank(const Vector& sigmas, const DmdConfig& cfg) {
  if (sigmas.size() == 0) throw InvalidInput("select_rank: no singular values");
  if (cfg.rank) {
    if (*cfg.rank < 1) throw InvalidInput("select_rank: preset rank must be >= 1");
    return std::min<int>(*cfg.rank, static_cast<int>(sigmas.size()));
  }
  if (!(cfg.energy_threshold > 0.0 && cfg.energy_threshold <= 1.0)) {
    throw InvalidInput("select_rank: energy threshold must lie in (0, 1]");
  }
  const double total = sigmas.squaredNorm();
  if (total == 0.0) throw DegenerateInput("select_rank: all singular values are zero");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < sigmas.size(); ++i) {
    acc += sigmas(i) * sigmas(i);
    if (acc / total >= cfg.energy_threshold) return static_cast<int>(i + 1);
  }
  return static_cast<int>(sigmas.size());
}

DmdDecomposition decompose(const Matrix& snapshots, const DmdConfig& cfg) {
  if (snapshots.cols() < 2) {
    throw InvalidInput("dmd: need at least 2 snapshots, got " +
                       std::to_string(snapshots.cols()));
  }
  if (snapshots.rows() < 1) throw InvalidInput("dmd: snapshot dimension is zero");

  const Eigen::Index m = snapshots.cols() - 1;
  const Matrix x = snapshots.leftCols(m);
  const Matrix xp = snapshots.rightCols(m);

  const linalg::SvdFactors f = linalg::svd(x);
  if (f.sigma(0) == 0.0) throw DegenerateInput("dmd: snapshot data has rank 0");

  const int r = select_rank(f.sigma, cfg);
  const Matrix ur = f.u.leftCols(r);
  const Matrix vr = f.v.leftCols(r);

  Vector sigma_inv(r);
  const double floor = cfg.sigma_floor * f.sigma(0);
  for (int i = 0; i < r; ++i) {
    sigma_inv(i) = f.sigma(i) > floor ? 1.0 / f.sigma(i) : 0.0;
  }

  // X' V_r Sigma_r^{-1}, shared by the projected operator and the modes.
  const Matrix xvs = xp * vr * sigma_inv.asDiagonal();
  const Matrix a_tilde = ur.transpose() * xvs;

  linalg::ComplexEigenpairs ep = linalg::eig(a_tilde);
  fix_phase(ep.vectors);

  DmdDecomposition dec;
  dec.rank = r;
  dec.sigmas = f.sigma;
  dec.eigenvalues = ep.values;
  dec.modes = xvs.cast<Complex>() * ep.vectors;
  dec.amplitudes = linalg::lstsq_complex(dec.modes, snapshots.col(0).cast<Complex>());
  return dec;
}

Vector reconstruct(const DmdDecomposition& dec, double t, double* imag_ratio) {
  if (!std::isfinite(t)) throw InvalidInput("dmd reconstruct: time must be finite");
  CVector coeff(dec.rank);
  for (int i = 0; i < dec.rank; ++i) {
    coeff(i) = complex_pow(dec.eigenvalues(i), t) * dec.amplitudes(i);
  }
  const CVector x = dec.modes * coeff;
  const Vector re = x.real();
  if (imag_ratio) {
    const double nre = re.norm();
    const double nim = x.imag().norm();
    *imag_ratio = nre > 0.0 ? nim / nre : nim;
  }
  return re;
}

Vector reconstruct(const DmdDecomposition& dec, double t) {
  return reconstruct(dec, t, nullptr);
}

std::vector<int> branch_order(const DmdDecomposition& dec) {
  std::vector<int> order(dec.rank);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const double la = std::abs(dec.eigenvalues(a));
    const double lb = std::abs(dec.eigenvalues(b));
    if (la != lb) return la > lb;
    return std::abs(dec.amplitudes(a)) > std::abs(dec.amplitudes(b));
  });
  return order;
}

BranchEncoding encode_branch_inputs(const DmdDecomposition& dec, DynamicsEncoding dynamics,
                                    double horizon) {
  const auto n = static_cast<std::size_t>(dec.modes.rows());
  const auto r = static_cast<std::size_t>(dec.rank);
  const std::vector<int> order = branch_order(dec);

  BranchEncoding enc;
  enc.mode_vec.resize(2 * n * r);
  enc.dyn_vec.resize(4 * r);
  for (std::size_t k = 0; k < r; ++k) {
    const int src = order[k];
    double* re = enc.mode_vec.data() + n * k;
    double* im = enc.mode_vec.data() + n * r + n * k;
    for (std::size_t i = 0; i < n; ++i) {
      re[i] = dec.modes(static_cast<Eigen::Index>(i), src).real();
      im[i] = dec.modes(static_cast<Eigen::Index>(i), src).imag();
    }
    Complex lam = dec.eigenvalues(src);
    Complex amp = dec.amplitudes(src);
    if (dynamics == DynamicsEncoding::kEvolved) {
      amp = complex_pow(lam, horizon) * amp;
    }
    enc.dyn_vec[k] = lam.real();
    enc.dyn_vec[r + k] = lam.imag();
    enc.dyn_vec[2 * r + k] = amp.real();
    enc.dyn_vec[3 * r + k] = amp.imag();
  }
  return enc;
}

}  // namespace dmdno::dmd
