#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dmdno/dmd.hpp"
#include "dmdno/linalg.hpp"

namespace dmdno::pde {

enum class Equation : std::uint8_t { kLaplace = 0, kHeat = 1, kBurgers = 2 };

std::string_view to_string(Equation eq);
Equation equation_from_string(std::string_view name);

struct GridSpec {
  int nx = 10;
  int ny = 10;
  double dx = 1.0 / 9.0;
  double dy = 1.0 / 9.0;
};

/// Node values indexed (i, j) with i along x and j along y. Flattened
/// row-major: node (i, j) maps to i * ny + j.
using Field = Matrix;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Everything needed to regenerate a dataset. Fields that do not apply to an
/// equation are ignored by its generator but still recorded.
struct GeneratorParams {
  Equation equation = Equation::kLaplace;
  std::size_t n_samples = 1000;
  GridSpec grid;
  /// Jacobi sweeps for Laplace, time steps for heat and Burgers.
  int steps = 50;
  /// Half-width of the uniform draw for boundary (Laplace), corner (heat) or
  /// initial (Burgers) values.
  double value_range = 10.0;
  double alpha = 0.5;
  double dt = 1e-3;
  double interior_value = 10.0;
  double nu_min = 0.01;
  double nu_max = 0.1;
  dmd::DmdConfig dmd;
  std::uint64_t seed = 0;
};

/// Table defaults for each equation (1000 samples, 10x10 grid, 50 steps, rank 10).
GeneratorParams default_params(Equation eq);

void validate(const GeneratorParams& p);

struct Sample {
  std::vector<double> condition;
  /// One column per step, state_size rows; column 0 is the initial state.
  Matrix trajectory;
  Vector target;
  dmd::DmdDecomposition dmd;
};

struct Dataset {
  GeneratorParams params;
  std::vector<Sample> samples;

  Equation equation() const { return params.equation; }
  const GridSpec& grid() const { return params.grid; }
  int channels() const { return params.equation == Equation::kBurgers ? 2 : 1; }
  Eigen::Index nodes() const { return static_cast<Eigen::Index>(params.grid.nx) * params.grid.ny; }
  Eigen::Index state_size() const { return nodes() * channels(); }
  std::size_t condition_size() const;
};

std::size_t condition_size(Equation eq, const GridSpec& grid);

/// Receives human-readable warnings such as CFL violations.
using WarningSink = std::function<void(const std::string&)>;

// --- stencils -------------------------------------------------------------

/// True on the outer ring of an nx x ny grid.
Mask boundary_mask(int nx, int ny);

/// One Jacobi sweep of the five-point stencil on unmasked nodes.
Field laplace_step(const Field& field, const Mask& frozen);

/// alpha * dt * (1/dx^2 + 1/dy^2).
double cfl_number(double alpha, double dt, double dx, double dy);
/// cfl_number(...) <= 1/2.
bool cfl_check(double alpha, double dt, double dx, double dy);

/// Forward-Euler diffusion step on unmasked nodes.
Field heat_step(const Field& field, double alpha, double dt, double dx, double dy,
                const Mask& frozen);

/// One explicit step of the viscous Burgers system with periodic wrap.
std::pair<Field, Field> burgers_step(const Field& u, const Field& v, double nu, double dt,
                                     double dx, double dy);

// --- boundary layouts -----------------------------------------------------

/// Non-corner boundary nodes, clockwise from (0, 1).
std::vector<std::pair<int, int>> boundary_ring(int nx, int ny);
/// Corners clockwise from (0, 0).
std::vector<std::pair<int, int>> corners(int nx, int ny);

// --- generators -----------------------------------------------------------

Sample generate_laplace_sample(const GeneratorParams& p, std::size_t index);
Sample generate_heat_sample(const GeneratorParams& p, std::size_t index);
Sample generate_burgers_sample(const GeneratorParams& p, std::size_t index);

Dataset generate_laplace(const GeneratorParams& p);
Dataset generate_heat(const GeneratorParams& p, const WarningSink& warn = {});
Dataset generate_burgers(const GeneratorParams& p);

/// Dispatch on p.equation.
Dataset generate(const GeneratorParams& p, const WarningSink& warn = {});

/// Flatten fields into one state column (u first, then v for Burgers).
Vector flatten(const Field& f);
Field unflatten(const double* data, int nx, int ny);

}  // namespace dmdno::pde
