#pragma once

#include <optional>
#include <vector>

#include "dmdno/linalg.hpp"

namespace dmdno::dmd {

/// Truncation policy. A preset rank wins; otherwise the smallest rank that
/// captures `energy_threshold` of the squared singular-value mass is used.
struct DmdConfig {
  std::optional<int> rank = 10;
  double energy_threshold = 0.95;
  /// Singular values below sigma_floor * sigma_1 are not inverted.
  double sigma_floor = 1e-12;
};

struct DmdDecomposition {
  CMatrix modes;        // n x r
  CVector eigenvalues;  // r
  CVector amplitudes;   // r
  Vector sigmas;        // all singular values of X
  int rank = 0;
};

/// Real-valued network inputs derived from a decomposition.
///
/// mode_vec holds Re(Phi) then Im(Phi), each column-major in mode order, so
/// its length is 2*n*r. dyn_vec holds [Re lambda, Im lambda, Re b, Im b], each block r long.
struct BranchEncoding {
  std::vector<double> mode_vec;
  std::vector<double> dyn_vec;
};

/// What the dynamics block carries: the eigenvalues and amplitudes
/// themselves, or the amplitudes advanced to a horizon t (lambda^t b).
enum class DynamicsEncoding { kEigAmp, kEvolved };

int select_rank(const Vector& sigmas, const DmdConfig& cfg);

/// Exact DMD of time-ordered snapshots stored as columns (n x (m+1)).
DmdDecomposition decompose(const Matrix& snapshots, const DmdConfig& cfg);

/// Re(sum_i phi_i lambda_i^t b_i). Uses the principal branch for lambda^t and
/// lambda^0 = 1 for every lambda, including 0.
Vector reconstruct(const DmdDecomposition& dec, double t);

/// Same as reconstruct() but also reports ||Im|| / ||Re|| of the raw sum.
Vector reconstruct(const DmdDecomposition& dec, double t, double* imag_ratio);

/// Modes ordered by descending |lambda|, ties broken by descending |b|.
BranchEncoding encode_branch_inputs(const DmdDecomposition& dec,
                                    DynamicsEncoding dynamics = DynamicsEncoding::kEigAmp,
                                    double horizon = 0.0);

/// Permutation applied by encode_branch_inputs.
std::vector<int> branch_order(const DmdDecomposition& dec);

}  // namespace dmdno::dmd
