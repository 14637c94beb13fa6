#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "dmdno/model.hpp"
#include "dmdno/pde.hpp"
#include "dmdno/train.hpp"

namespace dmdno::config {

using Json = nlohmann::ordered_json;

/// Network shape knobs; input widths come from the dataset.
struct ModelConfig {
  int latent_p = 64;
  std::vector<int> trunk_hidden{64, 64};
  std::vector<int> function_hidden{64, 64};
  std::vector<int> modes_hidden{64, 64};
  std::vector<int> dynamics_hidden{64, 64};
  /// Multiplies the [0,1] coordinates before the trunk's first layer.
  double trunk_input_scale = 1.0;
  dmd::DynamicsEncoding dynamics_encoding = dmd::DynamicsEncoding::kEigAmp;
  double dynamics_horizon = 0.0;
};

struct ExperimentConfig {
  pde::GeneratorParams generator;
  ModelConfig model;
  train::TrainConfig train;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  /// Drop the modes and dynamics branches (plain DeepONet).
  bool baseline = false;
  /// Test samples exported as grids by `eval`.
  int eval_grids = 3;
  /// Truncation rank used by `check-bound`.
  int bound_rank = 5;
};

ModelConfig default_model_config(pde::Equation eq);
ExperimentConfig default_experiment(pde::Equation eq);

/// Copies the experiment seed into the generator and the trainer.
void apply_seed(ExperimentConfig& cfg, std::uint64_t seed);

void validate(const ExperimentConfig& cfg);

/// Operator for datasets produced by `gen`. Branch input widths follow from
/// the grid, the equation and the DMD rank.
model::OperatorSpec make_operator_spec(const ModelConfig& m, const pde::GeneratorParams& gen,
                                       bool baseline);

std::string_view to_string(dmd::DynamicsEncoding e);
dmd::DynamicsEncoding dynamics_encoding_from_string(std::string_view name);

// JSON mapping. Readers reject unknown keys and wrongly typed values with
// InvalidInput naming the key path; omitted keys keep the value already in
// the target.
Json to_json(const pde::GeneratorParams& p);
void from_json(const Json& j, pde::GeneratorParams& p);
Json to_json(const model::OperatorSpec& s);
void from_json(const Json& j, model::OperatorSpec& s);
Json to_json(const train::TrainConfig& c);
void from_json(const Json& j, train::TrainConfig& c);
Json to_json(const ModelConfig& m);
void from_json(const Json& j, ModelConfig& m);
Json to_json(const ExperimentConfig& e);

/// Starts from default_experiment(equation) and overlays the document, which
/// must name its "equation".
ExperimentConfig experiment_from_json(const Json& j);

Json parse_json(const std::string& text, const std::string& what);

}  // namespace dmdno::config
