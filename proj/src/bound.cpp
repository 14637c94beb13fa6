#include "dmdno/bound.hpp"

#include <cmath>
#include <ostream>

#include "dmdno/csv.hpp"
#include "dmdno/dmd.hpp"
#include "dmdno/error.hpp"
#include "dmdno/linalg.hpp"
#include "dmdno/random.hpp"

namespace dmdno::train {

std::vector<double> condition_from_state(pde::Equation eq, const pde::GridSpec& grid,
                                         const Vector& x0, std::span<const double> original) {
  const int ny = grid.ny;
  auto at = [&](int i, int j) { return x0(static_cast<Eigen::Index>(i) * ny + j); };
  std::vector<double> c;
  switch (eq) {
    case pde::Equation::kLaplace:
      for (auto [i, j] : pde::boundary_ring(grid.nx, grid.ny)) c.push_back(at(i, j));
      break;
    case pde::Equation::kHeat:
      for (auto [i, j] : pde::corners(grid.nx, grid.ny)) c.push_back(at(i, j));
      for (auto [i, j] : pde::boundary_ring(grid.nx, grid.ny)) c.push_back(at(i, j));
      break;
    case pde::Equation::kBurgers:
      if (original.empty()) throw InvalidInput("Burgers conditions need the original viscosity");
      c.assign(x0.data(), x0.data() + x0.size());
      c.push_back(original.back());
      break;
  }
  return c;
}

Matrix truncate_rank(const Matrix& u, int r) {
  if (r < 1) throw InvalidInput("truncation rank must be >= 1");
  const linalg::SvdFactors f = linalg::svd(u);
  const auto k = std::min<Eigen::Index>(r, f.sigma.size());
  const double tol = 1e-14 * (f.sigma.size() ? f.sigma(0) : 0.0);
  if (k == f.sigma.size() || f.sigma(k) <= tol) return u;
  return f.u.leftCols(k) * f.sigma.head(k).asDiagonal() * f.v.leftCols(k).transpose();
}

namespace {

struct NetworkInput {
  std::vector<double> condition;
  dmd::BranchEncoding encoding;

  std::size_t size() const { return condition.size() + encoding.mode_vec.size() + encoding.dyn_vec.size(); }
};

NetworkInput input_for(const model::OperatorSpec& spec, const pde::Dataset& data, const Matrix& u,
                       std::span<const double> original, const dmd::DmdConfig& dmd_cfg) {
  NetworkInput a;
  a.condition = condition_from_state(data.equation(), data.grid(), u.col(0), original);
  if (spec.dmd_branches_enabled) {
    a.encoding = dmd::encode_branch_inputs(dmd::decompose(u, dmd_cfg), spec.dynamics_encoding, spec.dynamics_horizon);
  }
  return a;
}

// H(a) = (G(a)(y_k))_{k, c}, every grid point and channel.
class OperatorOnGrid {
 public:
  OperatorOnGrid(const model::OperatorSpec& spec, const model::ModelParams& params) : spec_(spec), params_(params) {
    for (int i = 0; i < spec.grid_nx; ++i) {
      for (int j = 0; j < spec.grid_ny; ++j) {
        trunks_.push_back(model::trunk_outputs(spec, params, model::node_coordinate(spec, i, j)));
      }
    }
  }

  Vector operator()(const NetworkInput& a) const {
    model::SampleInputs in;
    in.condition = a.condition;
    in.encoding = spec_.dmd_branches_enabled ? &a.encoding : nullptr;
    const auto products = model::branch_products(spec_, params_, in);
    Vector out(static_cast<Eigen::Index>(trunks_.size()) * spec_.out_channels);
    Eigen::Index k = 0;
    for (const auto& t : trunks_) {
      for (int c = 0; c < spec_.out_channels; ++c) out(k++) = model::fuse(spec_, t[c], products[c]);
    }
    return out;
  }

 private:
  const model::OperatorSpec& spec_;
  const model::ModelParams& params_;
  std::vector<std::vector<std::vector<double>>> trunks_;
};

double distance(const NetworkInput& a, const NetworkInput& b) {
  double acc = 0.0;
  auto add = [&acc](const std::vector<double>& x, const std::vector<double>& y) {
    for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
  };
  add(a.condition, b.condition);
  add(a.encoding.mode_vec, b.encoding.mode_vec);
  add(a.encoding.dyn_vec, b.encoding.dyn_vec);
  return std::sqrt(acc);
}

double norm(const NetworkInput& a) {
  NetworkInput zero;
  zero.condition.assign(a.condition.size(), 0.0);
  zero.encoding.mode_vec.assign(a.encoding.mode_vec.size(), 0.0);
  zero.encoding.dyn_vec.assign(a.encoding.dyn_vec.size(), 0.0);
  return distance(a, zero);
}

NetworkInput perturbed(const NetworkInput& a, double radius, Rng& rng) {
  NetworkInput b = a;
  std::vector<double> dir(a.size());
  double n2 = 0.0;
  for (double& d : dir) {
    d = rng.normal();
    n2 += d * d;
  }
  const double s = radius / std::sqrt(n2);
  std::size_t k = 0;
  for (double& x : b.condition) x += s * dir[k++];
  for (double& x : b.encoding.mode_vec) x += s * dir[k++];
  for (double& x : b.encoding.dyn_vec) x += s * dir[k++];
  return b;
}

}  // namespace

BoundReport check_bound(const model::OperatorSpec& spec, const model::ModelParams& params,
                        const pde::Dataset& data, std::span<const std::size_t> samples,
                        const BoundConfig& cfg) {
  if (cfg.rank < 1) throw InvalidInput("bound check: rank must be >= 1");
  if (cfg.perturbation_pairs < 1) throw InvalidInput("bound check: need at least one perturbation pair");
  if (spec.out_channels != data.channels()) throw InvalidInput("bound check: operator and dataset disagree on channels");
  BoundReport report;
  report.rank = cfg.rank;
  if (cfg.trials == 0) return report;
  if (samples.empty()) throw InvalidInput("bound check: no samples to audit");

  dmd::DmdConfig dmd_cfg = data.params.dmd;
  dmd_cfg.rank = data.samples.front().dmd.rank;
  const OperatorOnGrid h(spec, params);

  for (std::size_t t = 0; t < cfg.trials; ++t) {
    const std::size_t s = samples[t % samples.size()];
    if (s >= data.samples.size()) throw InvalidInput("bound check: sample index out of range");
    const pde::Sample& smp = data.samples[s];
    const Matrix& u = smp.trajectory;
    const Matrix ur = truncate_rank(u, cfg.rank);

    BoundTrial trial;
    trial.sample = s;
    trial.epsilon = (u - ur).norm();

    const NetworkInput a = input_for(spec, data, u, smp.condition, dmd_cfg);
    const NetworkInput ar = input_for(spec, data, ur, smp.condition, dmd_cfg);
    const Vector ha = h(a);
    trial.lhs = (ha - h(ar)).norm();

    const double da = distance(a, ar);
    trial.input_distance = da;
    double lip = da > 0.0 ? trial.lhs / da : 0.0;
    const double radius = da > 0.0 ? da : 1e-6 * std::max(1.0, norm(a));
    Rng rng(cfg.seed + t);
    for (std::size_t k = 0; k < cfg.perturbation_pairs; ++k) {
      const NetworkInput b = perturbed(a, radius, rng);
      const double d = distance(a, b);
      if (d > 0.0) lip = std::max(lip, (h(b) - ha).norm() / d);
    }
    trial.lipschitz = lip;
    trial.bound = 2.0 * lip * trial.epsilon;
    trial.satisfied = trial.lhs <= trial.bound * (1.0 + 1e-6);
    if (!trial.satisfied) ++report.violations;
    report.trials.push_back(trial);
  }
  return report;
}

void write_bound_csv(std::ostream& os, const BoundReport& report) {
  os << "trial,sample,epsilon,lhs,lipschitz,bound,satisfied\n";
  for (std::size_t t = 0; t < report.trials.size(); ++t) {
    const BoundTrial& r = report.trials[t];
    os << t << ',' << r.sample << ',' << format_double(r.epsilon) << ',' << format_double(r.lhs) << ','
       << format_double(r.lipschitz) << ',' << format_double(r.bound) << ',' << (r.satisfied ? 1 : 0) << '\n';
  }
}

}  // namespace dmdno::train
