#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dmdno/dmd.hpp"

namespace dmdno::model {

/// Fully connected net: widths.front() inputs, widths.back() outputs,
/// tanh after every layer except the last. Inputs are multiplied by
/// input_scale before the first layer.
struct MlpSpec {
  std::vector<int> widths;
  double input_scale = 1.0;

  int inputs() const { return widths.front(); }
  int outputs() const { return widths.back(); }
  int layers() const { return static_cast<int>(widths.size()) - 1; }
};

/// Contiguous part of the condition vector consumed by one function branch.
struct ConditionSlice {
  std::size_t offset = 0;
  std::size_t length = 0;
};

struct OperatorSpec {
  MlpSpec trunk;
  std::vector<MlpSpec> function_branches;
  std::vector<ConditionSlice> condition_slices;
  MlpSpec modes_branch;
  MlpSpec dynamics_branch;
  int latent_p = 64;
  int out_channels = 1;
  bool dmd_branches_enabled = true;
  /// Constant factor applied to the aggregated sum.
  double output_scale = 1.0;
  /// Grid used to normalize coordinates to [0, 1]^2.
  int grid_nx = 10;
  int grid_ny = 10;
  dmd::DynamicsEncoding dynamics_encoding = dmd::DynamicsEncoding::kEigAmp;
  double dynamics_horizon = 0.0;

  std::size_t condition_size() const;
};

/// Throws InvalidInput on inconsistent widths, slices or channel count.
void validate(const OperatorSpec& spec);

struct LayerSlice {
  std::size_t weight_offset = 0;  // out x in, row-major
  std::size_t bias_offset = 0;
  int in = 0;
  int out = 0;
};

struct MlpLayout {
  std::vector<LayerSlice> layers;
  double input_scale = 1.0;
};

struct ChannelLayout {
  MlpLayout trunk;
  std::vector<MlpLayout> functions;
  MlpLayout modes;     // empty when DMD branches are disabled
  MlpLayout dynamics;  // empty when DMD branches are disabled
};

/// Where every weight and bias lives inside theta. Per channel the order is
/// trunk, function branches, modes branch, dynamics branch; per layer the
/// weights come first, then the biases.
struct ParamLayout {
  std::vector<ChannelLayout> channels;
  std::size_t size = 0;
};

ParamLayout make_layout(const OperatorSpec& spec);

struct ModelParams {
  std::vector<double> theta;
  ParamLayout layout;
};

/// Glorot-uniform weights, zero biases. Every MLP draws from its own stream
/// keyed by (seed, channel, branch), so enabling or disabling the DMD
/// branches leaves trunk and function-branch weights unchanged.
ModelParams init_params(const OperatorSpec& spec, std::uint64_t seed);

/// Plain forward pass of one MLP on one input vector.
std::vector<double> mlp_forward(std::span<const double> theta, const MlpLayout& mlp,
                                std::span<const double> x);

/// Per-branch outputs of one evaluation, kept for inspection.
struct ForwardTrace {
  struct Channel {
    std::vector<double> trunk;
    std::vector<std::vector<double>> functions;
    std::vector<double> modes;
    std::vector<double> dynamics;
    std::vector<double> fused;  // branch product times trunk, before the sum
  };
  std::vector<Channel> channels;
  std::vector<double> output;
};

/// Outputs of every sample-dependent branch for one channel: the
/// elementwise product of all function, modes and dynamics branches.
using BranchProduct = std::vector<double>;

/// Inputs that stay fixed across all query points of one sample.
struct SampleInputs {
  std::span<const double> condition;
  const dmd::BranchEncoding* encoding = nullptr;
};

/// Normalized coordinates of node (i, j).
std::vector<double> node_coordinate(const OperatorSpec& spec, int i, int j);

std::vector<double> operator_forward(const OperatorSpec& spec, const ModelParams& params,
                                     const SampleInputs& in, std::span<const double> coord,
                                     ForwardTrace* trace = nullptr);

/// One query: sample index into `samples` plus a coordinate.
struct QueryRow {
  std::size_t sample = 0;
  std::vector<double> coord;
};

/// Row-major (rows x out_channels) predictions. Branch products are computed
/// once per distinct sample and trunk outputs once per distinct coordinate;
/// each row then matches operator_forward bit for bit.
std::vector<double> operator_forward_batch(const OperatorSpec& spec, const ModelParams& params,
                                           std::span<const SampleInputs> samples,
                                           std::span<const QueryRow> rows);

// Building blocks shared with the trainer.
std::vector<BranchProduct> branch_products(const OperatorSpec& spec, const ModelParams& params,
                                           const SampleInputs& in);
std::vector<std::vector<double>> trunk_outputs(const OperatorSpec& spec, const ModelParams& params,
                                               std::span<const double> coord);
double fuse(const OperatorSpec& spec, std::span<const double> trunk,
            std::span<const double> product);

}  // namespace dmdno::model
