#include "dmdno/pde.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "dmdno/error.hpp"
#include "dmdno/random.hpp"

namespace dmdno::pde {

std::string_view to_string(Equation eq) {
  switch (eq) {
    case Equation::kLaplace: return "laplace";
    case Equation::kHeat: return "heat";
    case Equation::kBurgers: return "burgers";
  }
  return "unknown";
}

Equation equation_from_string(std::string_view name) {
  if (name == "laplace") return Equation::kLaplace;
  if (name == "heat") return Equation::kHeat;
  if (name == "burgers") return Equation::kBurgers;
  throw InvalidInput("unknown equation '" + std::string(name) + "'");
}

GeneratorParams default_params(Equation eq) {
  GeneratorParams p;
  p.equation = eq;
  switch (eq) {
    case Equation::kLaplace:
      p.grid = {10, 10, 1.0 / 9.0, 1.0 / 9.0};
      p.value_range = 10.0;
      break;
    case Equation::kHeat:
      // 10x10 nodes with the published spacing of 1/19 (see README).
      p.grid = {10, 10, 1.0 / 19.0, 1.0 / 19.0};
      p.value_range = 25.0;
      p.alpha = 0.5;
      p.dt = 1e-3;
      p.interior_value = 10.0;
      break;
    case Equation::kBurgers:
      p.grid = {10, 10, 1.0, 1.0};
      p.value_range = 25.0;
      p.dt = 1e-4;
      p.nu_min = 0.01;
      p.nu_max = 0.1;
      break;
  }
  return p;
}

void validate(const GeneratorParams& p) {
  if (p.n_samples == 0) throw InvalidInput("n_samples must be positive");
  if (p.grid.nx < 3 || p.grid.ny < 3) throw InvalidInput("grid must be at least 3x3");
  if (!(p.grid.dx > 0.0) || !(p.grid.dy > 0.0)) throw InvalidInput("grid spacing must be positive");
  if (p.steps < 1) throw InvalidInput("steps must be >= 1");
  if (!(p.value_range > 0.0) || !std::isfinite(p.value_range)) {
    throw InvalidInput("value_range must be positive and finite");
  }
  // Every sample must carry the same number of modes so the dataset stores
  // rectangular arrays and the modes branch has a fixed input width.
  if (!p.dmd.rank) throw InvalidInput("datasets need a preset dmd rank");
  if (*p.dmd.rank < 1) throw InvalidInput("dmd rank must be >= 1");
  if (p.equation == Equation::kHeat) {
    if (!(p.alpha > 0.0) || !(p.dt > 0.0)) throw InvalidInput("alpha and dt must be positive");
  }
  if (p.equation == Equation::kBurgers) {
    if (!(p.dt > 0.0)) throw InvalidInput("dt must be positive");
    if (!(p.nu_min >= 0.0) || !(p.nu_max >= p.nu_min)) {
      throw InvalidInput("viscosity range must satisfy 0 <= nu_min <= nu_max");
    }
  }
}

std::size_t condition_size(Equation eq, const GridSpec& g) {
  const std::size_t ring = 2 * static_cast<std::size_t>(g.nx - 2) + 2 * static_cast<std::size_t>(g.ny - 2);
  switch (eq) {
    case Equation::kLaplace: return ring;
    case Equation::kHeat: return 4 + ring;
    case Equation::kBurgers: return 2 * static_cast<std::size_t>(g.nx) * g.ny + 1;
  }
  return 0;
}

std::size_t Dataset::condition_size() const { return pde::condition_size(params.equation, params.grid); }

Mask boundary_mask(int nx, int ny) {
  Mask m = Mask::Constant(nx, ny, false);
  m.row(0).setConstant(true);
  m.row(nx - 1).setConstant(true);
  m.col(0).setConstant(true);
  m.col(ny - 1).setConstant(true);
  return m;
}

namespace {

void check_interior_mask(const Field& f, const Mask& frozen, const char* who) {
  if (f.rows() < 3 || f.cols() < 3) {
    throw InvalidInput(std::string(who) + ": grid must be at least 3x3");
  }
  if (frozen.rows() != f.rows() || frozen.cols() != f.cols()) {
    throw InvalidInput(std::string(who) + ": mask shape does not match field");
  }
  const Mask ring = boundary_mask(static_cast<int>(f.rows()), static_cast<int>(f.cols()));
  if ((ring && !frozen).any()) {
    throw InvalidInput(std::string(who) + ": every outer-ring node must be frozen");
  }
}

}  // namespace

Field laplace_step(const Field& field, const Mask& frozen) {
  check_interior_mask(field, frozen, "laplace_step");
  Field next = field;
  for (Eigen::Index i = 1; i + 1 < field.rows(); ++i) {
    for (Eigen::Index j = 1; j + 1 < field.cols(); ++j) {
      if (frozen(i, j)) continue;
      next(i, j) = 0.25 * (field(i - 1, j) + field(i + 1, j) + field(i, j - 1) + field(i, j + 1));
    }
  }
  return next;
}

double cfl_number(double alpha, double dt, double dx, double dy) {
  if (!(alpha > 0.0) || !(dt > 0.0) || !(dx > 0.0) || !(dy > 0.0)) {
    throw InvalidInput("cfl_check: alpha, dt, dx and dy must all be positive");
  }
  return alpha * dt * (1.0 / (dx * dx) + 1.0 / (dy * dy));
}

bool cfl_check(double alpha, double dt, double dx, double dy) {
  return cfl_number(alpha, dt, dx, dy) <= 0.5;
}

Field heat_step(const Field& field, double alpha, double dt, double dx, double dy,
                const Mask& frozen) {
  check_interior_mask(field, frozen, "heat_step");
  const double idx2 = 1.0 / (dx * dx);
  const double idy2 = 1.0 / (dy * dy);
  Field next = field;
  for (Eigen::Index i = 1; i + 1 < field.rows(); ++i) {
    for (Eigen::Index j = 1; j + 1 < field.cols(); ++j) {
      if (frozen(i, j)) continue;
      const double c = field(i, j);
      const double lap = (field(i + 1, j) - 2.0 * c + field(i - 1, j)) * idx2 +
                         (field(i, j + 1) - 2.0 * c + field(i, j - 1)) * idy2;
      next(i, j) = c + dt * alpha * lap;
    }
  }
  return next;
}

std::pair<Field, Field> burgers_step(const Field& u, const Field& v, double nu, double dt,
                                     double dx, double dy) {
  if (u.rows() != v.rows() || u.cols() != v.cols()) {
    throw InvalidInput("burgers_step: u and v must have the same shape");
  }
  const Eigen::Index nx = u.rows();
  const Eigen::Index ny = u.cols();
  const double idx2 = 1.0 / (dx * dx);
  const double idy2 = 1.0 / (dy * dy);
  Field un(nx, ny), vn(nx, ny);
  for (Eigen::Index i = 0; i < nx; ++i) {
    const Eigen::Index im = (i + nx - 1) % nx;
    const Eigen::Index ip = (i + 1) % nx;
    for (Eigen::Index j = 0; j < ny; ++j) {
      const Eigen::Index jm = (j + ny - 1) % ny;
      const Eigen::Index jp = (j + 1) % ny;
      const double uc = u(i, j);
      const double vc = v(i, j);

      const double u_conv = uc * (u(im, j) - uc) / dx + vc * (u(i, jm) - uc) / dy;
      const double v_conv = uc * (v(im, j) - vc) / dx + vc * (v(i, jm) - vc) / dy;
      const double u_diff = nu * ((u(im, j) - 2.0 * uc + u(ip, j)) * idx2 +
                                  (u(i, jm) - 2.0 * uc + u(i, jp)) * idy2);
      const double v_diff = nu * ((v(im, j) - 2.0 * vc + v(ip, j)) * idx2 +
                                  (v(i, jm) - 2.0 * vc + v(i, jp)) * idy2);

      un(i, j) = uc - dt * u_conv + dt * u_diff;
      vn(i, j) = vc - dt * v_conv + dt * v_diff;
    }
  }
  return {std::move(un), std::move(vn)};
}

std::vector<std::pair<int, int>> boundary_ring(int nx, int ny) {
  std::vector<std::pair<int, int>> ring;
  ring.reserve(2 * (nx - 2) + 2 * (ny - 2));
  for (int j = 1; j <= ny - 2; ++j) ring.emplace_back(0, j);
  for (int i = 1; i <= nx - 2; ++i) ring.emplace_back(i, ny - 1);
  for (int j = ny - 2; j >= 1; --j) ring.emplace_back(nx - 1, j);
  for (int i = nx - 2; i >= 1; --i) ring.emplace_back(i, 0);
  return ring;
}

std::vector<std::pair<int, int>> corners(int nx, int ny) {
  return {{0, 0}, {0, ny - 1}, {nx - 1, ny - 1}, {nx - 1, 0}};
}

Vector flatten(const Field& f) {
  Vector out(f.size());
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    for (Eigen::Index j = 0; j < f.cols(); ++j) out(i * f.cols() + j) = f(i, j);
  }
  return out;
}

Field unflatten(const double* data, int nx, int ny) {
  Field f(nx, ny);
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) f(i, j) = data[static_cast<std::size_t>(i) * ny + j];
  }
  return f;
}

namespace {

Rng sample_rng(const GeneratorParams& p, std::size_t index) {
  return Rng(p.seed + static_cast<std::uint64_t>(index));
}

void finish_sample(Sample& s, const GeneratorParams& p) {
  if (!s.trajectory.allFinite()) {
    throw NumericalError("generator produced non-finite values");
  }
  s.target = s.trajectory.col(s.trajectory.cols() - 1);
  s.dmd = dmd::decompose(s.trajectory, p.dmd);
}

template <typename Fn>
Dataset generate_all(const GeneratorParams& p, Fn&& make_sample) {
  validate(p);
  Dataset d;
  d.params = p;
  d.samples.reserve(p.n_samples);
  for (std::size_t k = 0; k < p.n_samples; ++k) d.samples.push_back(make_sample(p, k));
  return d;
}

}  // namespace

Sample generate_laplace_sample(const GeneratorParams& p, std::size_t index) {
  const int nx = p.grid.nx, ny = p.grid.ny;
  Rng rng = sample_rng(p, index);
  Field u = Field::Zero(nx, ny);

  Sample s;
  for (auto [i, j] : boundary_ring(nx, ny)) {
    u(i, j) = rng.uniform(-p.value_range, p.value_range);
    s.condition.push_back(u(i, j));
  }
  // corners stay at 0, interior starts at 0

  const Mask frozen = boundary_mask(nx, ny);
  s.trajectory.resize(static_cast<Eigen::Index>(nx) * ny, p.steps + 1);
  s.trajectory.col(0) = flatten(u);
  for (int t = 1; t <= p.steps; ++t) {
    u = laplace_step(u, frozen);
    s.trajectory.col(t) = flatten(u);
  }
  finish_sample(s, p);
  return s;
}

Sample generate_heat_sample(const GeneratorParams& p, std::size_t index) {
  const int nx = p.grid.nx, ny = p.grid.ny;
  Rng rng = sample_rng(p, index);

  // c00, c0N, cMN, cM0: clockwise from (0, 0)
  double c[4];
  for (double& v : c) v = rng.uniform(-p.value_range, p.value_range);

  Field u = Field::Constant(nx, ny, p.interior_value);
  for (int j = 0; j < ny; ++j) {
    const double s = static_cast<double>(j) / (ny - 1);
    u(0, j) = c[0] + (c[1] - c[0]) * s;
    u(nx - 1, j) = c[3] + (c[2] - c[3]) * s;
  }
  for (int i = 0; i < nx; ++i) {
    const double s = static_cast<double>(i) / (nx - 1);
    u(i, 0) = c[0] + (c[3] - c[0]) * s;
    u(i, ny - 1) = c[1] + (c[2] - c[1]) * s;
  }
  // a + (b - a) * 1 can miss b by an ulp; corners must equal the drawn values.
  u(0, 0) = c[0];
  u(0, ny - 1) = c[1];
  u(nx - 1, ny - 1) = c[2];
  u(nx - 1, 0) = c[3];

  Sample smp;
  smp.condition.assign(c, c + 4);
  for (auto [i, j] : boundary_ring(nx, ny)) smp.condition.push_back(u(i, j));

  const Mask frozen = boundary_mask(nx, ny);
  smp.trajectory.resize(static_cast<Eigen::Index>(nx) * ny, p.steps + 1);
  smp.trajectory.col(0) = flatten(u);
  for (int t = 1; t <= p.steps; ++t) {
    u = heat_step(u, p.alpha, p.dt, p.grid.dx, p.grid.dy, frozen);
    smp.trajectory.col(t) = flatten(u);
  }
  finish_sample(smp, p);
  return smp;
}

Sample generate_burgers_sample(const GeneratorParams& p, std::size_t index) {
  const int nx = p.grid.nx, ny = p.grid.ny;
  const Eigen::Index nodes = static_cast<Eigen::Index>(nx) * ny;
  Rng rng = sample_rng(p, index);

  Field u(nx, ny), v(nx, ny);
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j) u(i, j) = rng.uniform(-p.value_range, p.value_range);
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j) v(i, j) = rng.uniform(-p.value_range, p.value_range);
  const double nu = rng.uniform(p.nu_min, p.nu_max);

  Sample s;
  s.trajectory.resize(2 * nodes, p.steps + 1);
  auto store = [&](int t) {
    s.trajectory.col(t).head(nodes) = flatten(u);
    s.trajectory.col(t).tail(nodes) = flatten(v);
  };
  store(0);
  s.condition.assign(s.trajectory.col(0).data(), s.trajectory.col(0).data() + 2 * nodes);
  s.condition.push_back(nu);

  for (int t = 1; t <= p.steps; ++t) {
    auto [un, vn] = burgers_step(u, v, nu, p.dt, p.grid.dx, p.grid.dy);
    u = std::move(un);
    v = std::move(vn);
    store(t);
  }
  finish_sample(s, p);
  return s;
}

Dataset generate_laplace(const GeneratorParams& p) {
  return generate_all(p, generate_laplace_sample);
}

Dataset generate_heat(const GeneratorParams& p, const WarningSink& warn) {
  validate(p);
  const double cfl = cfl_number(p.alpha, p.dt, p.grid.dx, p.grid.dy);
  if (cfl > 0.5 && warn) {
    std::ostringstream msg;
    msg << std::setprecision(2) << "CFL violated: " << cfl << " > 0.5";
    warn(msg.str());
  }
  return generate_all(p, generate_heat_sample);
}

Dataset generate_burgers(const GeneratorParams& p) {
  return generate_all(p, generate_burgers_sample);
}

Dataset generate(const GeneratorParams& p, const WarningSink& warn) {
  switch (p.equation) {
    case Equation::kLaplace: return generate_laplace(p);
    case Equation::kHeat: return generate_heat(p, warn);
    case Equation::kBurgers: return generate_burgers(p);
  }
  throw InvalidInput("unknown equation tag");
}

}  // namespace dmdno::pde
