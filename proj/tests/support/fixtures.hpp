#pragma once

// Random operators and problems shared by the unit and acceptance tests.

#include <vector>

#include "dmdno/model.hpp"
#include "dmdno/random.hpp"
#include "dmdno/train.hpp"

namespace fixture {

using namespace dmdno;

inline std::vector<int> random_widths(Rng& rng, int in, int out) {
  std::vector<int> w{in};
  const auto hidden = static_cast<int>(rng.below(3));
  for (int k = 0; k < hidden; ++k) w.push_back(2 + static_cast<int>(rng.below(5)));
  w.push_back(out);
  return w;
}

/// Small operator with random depth, widths, scales and channel count.
inline model::OperatorSpec random_spec(Rng& rng, bool dmd_on) {
  model::OperatorSpec s;
  s.latent_p = 2 + static_cast<int>(rng.below(4));
  s.out_channels = 1 + static_cast<int>(rng.below(2));
  s.grid_nx = 3;
  s.grid_ny = 3;
  const int cond = 3 + static_cast<int>(rng.below(4));
  // One or two function branches over a split condition vector.
  if (rng.below(2)) {
    const int a = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cond - 1)));
    s.function_branches = {model::MlpSpec{random_widths(rng, a, s.latent_p), rng.uniform(0.5, 2.0)},
                           model::MlpSpec{random_widths(rng, cond - a, s.latent_p), rng.uniform(0.5, 2.0)}};
    s.condition_slices = {{0, static_cast<std::size_t>(a)}, {static_cast<std::size_t>(a), static_cast<std::size_t>(cond - a)}};
  } else {
    s.function_branches = {model::MlpSpec{random_widths(rng, cond, s.latent_p), rng.uniform(0.5, 2.0)}};
    s.condition_slices = {{0, static_cast<std::size_t>(cond)}};
  }
  s.trunk = model::MlpSpec{random_widths(rng, 2, s.latent_p), rng.uniform(0.5, 3.0)};
  s.modes_branch = model::MlpSpec{random_widths(rng, 6, s.latent_p), rng.uniform(0.5, 2.0)};
  s.dynamics_branch = model::MlpSpec{random_widths(rng, 4, s.latent_p), rng.uniform(0.5, 2.0)};
  s.dmd_branches_enabled = dmd_on;
  s.output_scale = rng.uniform(0.5, 2.0);
  return s;
}

inline train::Problem random_problem(Rng& rng, const model::OperatorSpec& spec, std::size_t samples) {
  std::vector<std::vector<double>> conds;
  std::vector<dmd::BranchEncoding> encs;
  std::vector<Matrix> targets;
  const Eigen::Index points = static_cast<Eigen::Index>(spec.grid_nx) * spec.grid_ny;
  for (std::size_t k = 0; k < samples; ++k) {
    std::vector<double> c(spec.condition_size());
    for (double& x : c) x = rng.uniform(-1, 1);
    conds.push_back(c);
    dmd::BranchEncoding e;
    e.mode_vec.resize(static_cast<std::size_t>(spec.modes_branch.inputs()));
    e.dyn_vec.resize(static_cast<std::size_t>(spec.dynamics_branch.inputs()));
    for (double& x : e.mode_vec) x = rng.uniform(-1, 1);
    for (double& x : e.dyn_vec) x = rng.uniform(-1, 1);
    encs.push_back(e);
    Matrix t(points, spec.out_channels);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-1, 1);
    targets.push_back(t);
  }
  Matrix coords(points, 2);
  for (int i = 0; i < spec.grid_nx; ++i) {
    for (int j = 0; j < spec.grid_ny; ++j) {
      const auto c = model::node_coordinate(spec, i, j);
      coords(i * spec.grid_ny + j, 0) = c[0];
      coords(i * spec.grid_ny + j, 1) = c[1];
    }
  }
  return train::Problem::from_parts(std::move(conds), std::move(encs), coords, std::move(targets));
}

/// Random rows, repeats allowed, so shared branch work gets exercised.
inline std::vector<train::Row> random_batch(Rng& rng, const train::Problem& p, std::size_t n) {
  std::vector<train::Row> rows(n);
  for (auto& r : rows) {
    r.sample = static_cast<std::uint32_t>(rng.below(p.samples()));
    r.point = static_cast<std::uint32_t>(rng.below(p.points()));
  }
  return rows;
}

}  // namespace fixture
