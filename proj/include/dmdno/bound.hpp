#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "dmdno/model.hpp"
#include "dmdno/pde.hpp"

namespace dmdno::train {

struct BoundTrial {
  std::size_t sample = 0;
  /// ||u - u_r||_F for the snapshot matrix u and its rank-r truncation.
  double epsilon = 0.0;
  /// ||G(u) - G(u_r)||_2 over every grid point and channel.
  double lhs = 0.0;
  /// ||a - a_r||_F between the network inputs built from u and u_r. The
  /// audited pair alone keeps lhs within the bound iff this is <= 2 * epsilon.
  double input_distance = 0.0;
  /// Largest sampled ||H(a) - H(a')|| / ||a - a'||, the audited pair included.
  double lipschitz = 0.0;
  double bound = 0.0;  // 2 * lipschitz * epsilon
  bool satisfied = false;
};

struct BoundReport {
  int rank = 0;
  std::vector<BoundTrial> trials;
  std::size_t violations = 0;
};

struct BoundConfig {
  int rank = 5;
  std::size_t trials = 100;
  std::size_t perturbation_pairs = 200;
  std::uint64_t seed = 0;
};

/// Condition vector that the generator would have recorded for initial state x0.
/// Burgers keeps the viscosity from `original`.
std::vector<double> condition_from_state(pde::Equation eq, const pde::GridSpec& grid,
                                         const Vector& x0, std::span<const double> original);

/// Rank-r truncation of u, returned bit-identical to u when the discarded
/// singular values are all below 1e-14 * sigma_1.
Matrix truncate_rank(const Matrix& u, int r);

/// Audits ||G(u) - G(u_r)|| <= 2 L_H eps on trials cycling through `samples`.
/// Network inputs a = condition ++ mode_vec ++ dyn_vec are rebuilt from each
/// snapshot matrix with the dataset's DMD settings.
BoundReport check_bound(const model::OperatorSpec& spec, const model::ModelParams& params,
                        const pde::Dataset& data, std::span<const std::size_t> samples,
                        const BoundConfig& cfg);

/// Columns trial, sample, epsilon, lhs, lipschitz, bound, satisfied.
void write_bound_csv(std::ostream& os, const BoundReport& report);

}  // namespace dmdno::train
