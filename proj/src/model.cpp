#include "dmdno/model.hpp"

#include <cmath>
#include <map>
#include <string>

#include "dmdno/error.hpp"
#include "dmdno/random.hpp"

namespace dmdno::model {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t kTrunkId = 0;
constexpr std::uint64_t kModesId = 1;
constexpr std::uint64_t kDynamicsId = 2;
constexpr std::uint64_t kFunctionIdBase = 16;

std::uint64_t stream_seed(std::uint64_t seed, int channel, std::uint64_t branch) {
  return splitmix64(seed ^ splitmix64((static_cast<std::uint64_t>(channel) << 32) | branch));
}

void check_mlp(const MlpSpec& m, const std::string& name, int p) {
  if (m.widths.size() < 2) throw InvalidInput(name + ": an MLP needs at least 2 widths");
  for (int w : m.widths) {
    if (w < 1) throw InvalidInput(name + ": layer widths must be >= 1");
  }
  if (m.outputs() != p) {
    throw InvalidInput(name + ": output width " + std::to_string(m.outputs()) +
                       " differs from latent_p " + std::to_string(p));
  }
  if (!std::isfinite(m.input_scale)) throw InvalidInput(name + ": input_scale must be finite");
}

MlpLayout layout_mlp(const MlpSpec& m, std::size_t& cursor) {
  MlpLayout out;
  out.input_scale = m.input_scale;
  for (int l = 0; l < m.layers(); ++l) {
    LayerSlice s;
    s.in = m.widths[l];
    s.out = m.widths[l + 1];
    s.weight_offset = cursor;
    cursor += static_cast<std::size_t>(s.in) * s.out;
    s.bias_offset = cursor;
    cursor += s.out;
    out.layers.push_back(s);
  }
  return out;
}

void init_mlp(std::vector<double>& theta, const MlpLayout& m, std::uint64_t seed) {
  Rng rng(seed);
  for (const LayerSlice& s : m.layers) {
    const double a = std::sqrt(6.0 / (s.in + s.out));
    const std::size_t n = static_cast<std::size_t>(s.in) * s.out;
    for (std::size_t k = 0; k < n; ++k) theta[s.weight_offset + k] = rng.uniform(-a, a);
    for (int k = 0; k < s.out; ++k) theta[s.bias_offset + k] = 0.0;
  }
}

}  // namespace

std::size_t OperatorSpec::condition_size() const {
  std::size_t end = 0;
  for (const auto& s : condition_slices) end = std::max(end, s.offset + s.length);
  return end;
}

void validate(const OperatorSpec& spec) {
  if (spec.latent_p < 1) throw InvalidInput("latent_p must be >= 1");
  if (spec.out_channels < 1) throw InvalidInput("out_channels must be >= 1");
  if (spec.grid_nx < 2 || spec.grid_ny < 2) throw InvalidInput("coordinate grid must be at least 2x2");
  check_mlp(spec.trunk, "trunk", spec.latent_p);
  if (spec.function_branches.empty()) throw InvalidInput("at least one function branch is required");
  if (spec.function_branches.size() != spec.condition_slices.size()) {
    throw InvalidInput("each function branch needs exactly one condition slice");
  }
  for (std::size_t j = 0; j < spec.function_branches.size(); ++j) {
    const std::string name = "function branch " + std::to_string(j);
    check_mlp(spec.function_branches[j], name, spec.latent_p);
    if (static_cast<std::size_t>(spec.function_branches[j].inputs()) != spec.condition_slices[j].length) {
      throw InvalidInput(name + ": input width does not match its condition slice");
    }
  }
  if (spec.dmd_branches_enabled) {
    check_mlp(spec.modes_branch, "modes branch", spec.latent_p);
    check_mlp(spec.dynamics_branch, "dynamics branch", spec.latent_p);
  }
}

ParamLayout make_layout(const OperatorSpec& spec) {
  validate(spec);
  ParamLayout layout;
  std::size_t cursor = 0;
  for (int c = 0; c < spec.out_channels; ++c) {
    ChannelLayout ch;
    ch.trunk = layout_mlp(spec.trunk, cursor);
    for (const MlpSpec& f : spec.function_branches) ch.functions.push_back(layout_mlp(f, cursor));
    if (spec.dmd_branches_enabled) {
      ch.modes = layout_mlp(spec.modes_branch, cursor);
      ch.dynamics = layout_mlp(spec.dynamics_branch, cursor);
    }
    layout.channels.push_back(std::move(ch));
  }
  layout.size = cursor;
  return layout;
}

ModelParams init_params(const OperatorSpec& spec, std::uint64_t seed) {
  ModelParams p;
  p.layout = make_layout(spec);
  p.theta.assign(p.layout.size, 0.0);
  for (int c = 0; c < spec.out_channels; ++c) {
    const ChannelLayout& ch = p.layout.channels[c];
    init_mlp(p.theta, ch.trunk, stream_seed(seed, c, kTrunkId));
    for (std::size_t j = 0; j < ch.functions.size(); ++j) {
      init_mlp(p.theta, ch.functions[j], stream_seed(seed, c, kFunctionIdBase + j));
    }
    if (spec.dmd_branches_enabled) {
      init_mlp(p.theta, ch.modes, stream_seed(seed, c, kModesId));
      init_mlp(p.theta, ch.dynamics, stream_seed(seed, c, kDynamicsId));
    }
  }
  return p;
}

std::vector<double> mlp_forward(std::span<const double> theta, const MlpLayout& mlp,
                                std::span<const double> x) {
  if (mlp.layers.empty()) throw InvalidInput("mlp_forward: empty network");
  if (x.size() != static_cast<std::size_t>(mlp.layers.front().in)) {
    throw InvalidInput("mlp_forward: input has length " + std::to_string(x.size()) +
                       ", expected " + std::to_string(mlp.layers.front().in));
  }
  std::vector<double> a(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) a[i] = mlp.input_scale * x[i];

  std::vector<double> z;
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    const LayerSlice& s = mlp.layers[l];
    const double* w = theta.data() + s.weight_offset;
    const double* b = theta.data() + s.bias_offset;
    z.assign(s.out, 0.0);
    for (int o = 0; o < s.out; ++o) {
      const double* row = w + static_cast<std::size_t>(o) * s.in;
      double acc = b[o];
      for (int i = 0; i < s.in; ++i) acc += row[i] * a[i];
      z[o] = acc;
    }
    if (l + 1 < mlp.layers.size()) {
      for (double& v : z) v = std::tanh(v);
    }
    a.swap(z);
  }
  return a;
}

std::vector<double> node_coordinate(const OperatorSpec& spec, int i, int j) {
  return {static_cast<double>(i) / (spec.grid_nx - 1), static_cast<double>(j) / (spec.grid_ny - 1)};
}

namespace {

void check_sample(const OperatorSpec& spec, const SampleInputs& in) {
  if (in.condition.size() < spec.condition_size()) {
    throw InvalidInput("condition vector is shorter than the configured slices");
  }
  if (spec.dmd_branches_enabled && in.encoding == nullptr) {
    throw InvalidInput("DMD branches are enabled but no branch encoding was supplied");
  }
}

// Per channel: function outputs, modes, dynamics, and their elementwise product.
struct BranchOutputs {
  std::vector<std::vector<double>> functions;
  std::vector<double> modes;
  std::vector<double> dynamics;
  std::vector<double> product;
};

BranchOutputs eval_branches(const OperatorSpec& spec, const ModelParams& params,
                            const SampleInputs& in, int c) {
  const ChannelLayout& ch = params.layout.channels[c];
  BranchOutputs out;
  for (std::size_t j = 0; j < ch.functions.size(); ++j) {
    const ConditionSlice& sl = spec.condition_slices[j];
    out.functions.push_back(mlp_forward(params.theta, ch.functions[j], in.condition.subspan(sl.offset, sl.length)));
  }
  out.product = out.functions.front();
  for (std::size_t j = 1; j < out.functions.size(); ++j) {
    for (int i = 0; i < spec.latent_p; ++i) out.product[i] *= out.functions[j][i];
  }
  if (spec.dmd_branches_enabled) {
    out.modes = mlp_forward(params.theta, ch.modes, in.encoding->mode_vec);
    out.dynamics = mlp_forward(params.theta, ch.dynamics, in.encoding->dyn_vec);
    for (int i = 0; i < spec.latent_p; ++i) out.product[i] *= out.modes[i];
    for (int i = 0; i < spec.latent_p; ++i) out.product[i] *= out.dynamics[i];
  }
  return out;
}

}  // namespace

double fuse(const OperatorSpec& spec, std::span<const double> trunk, std::span<const double> product) {
  double acc = 0.0;
  for (int i = 0; i < spec.latent_p; ++i) acc += trunk[i] * product[i];
  return spec.output_scale * acc;
}

std::vector<BranchProduct> branch_products(const OperatorSpec& spec, const ModelParams& params,
                                           const SampleInputs& in) {
  check_sample(spec, in);
  std::vector<BranchProduct> out;
  for (int c = 0; c < spec.out_channels; ++c) out.push_back(eval_branches(spec, params, in, c).product);
  return out;
}

std::vector<std::vector<double>> trunk_outputs(const OperatorSpec& spec, const ModelParams& params,
                                               std::span<const double> coord) {
  std::vector<std::vector<double>> out;
  for (int c = 0; c < spec.out_channels; ++c) {
    out.push_back(mlp_forward(params.theta, params.layout.channels[c].trunk, coord));
  }
  return out;
}

std::vector<double> operator_forward(const OperatorSpec& spec, const ModelParams& params,
                                     const SampleInputs& in, std::span<const double> coord,
                                     ForwardTrace* trace) {
  check_sample(spec, in);
  std::vector<double> out(spec.out_channels);
  if (trace) trace->channels.assign(spec.out_channels, {});
  for (int c = 0; c < spec.out_channels; ++c) {
    BranchOutputs b = eval_branches(spec, params, in, c);
    std::vector<double> t = mlp_forward(params.theta, params.layout.channels[c].trunk, coord);
    out[c] = fuse(spec, t, b.product);
    if (trace) {
      ForwardTrace::Channel& tc = trace->channels[c];
      tc.fused.resize(spec.latent_p);
      for (int i = 0; i < spec.latent_p; ++i) tc.fused[i] = t[i] * b.product[i];
      tc.trunk = std::move(t);
      tc.functions = std::move(b.functions);
      tc.modes = std::move(b.modes);
      tc.dynamics = std::move(b.dynamics);
    }
  }
  if (trace) trace->output = out;
  return out;
}

std::vector<double> operator_forward_batch(const OperatorSpec& spec, const ModelParams& params,
                                           std::span<const SampleInputs> samples,
                                           std::span<const QueryRow> rows) {
  std::map<std::size_t, std::vector<BranchProduct>> products;
  std::map<std::vector<double>, std::vector<std::vector<double>>> trunks;
  std::vector<double> out(rows.size() * spec.out_channels);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const QueryRow& row = rows[r];
    if (row.sample >= samples.size()) throw InvalidInput("query row references a missing sample");
    auto pit = products.find(row.sample);
    if (pit == products.end()) {
      pit = products.emplace(row.sample, branch_products(spec, params, samples[row.sample])).first;
    }
    auto tit = trunks.find(row.coord);
    if (tit == trunks.end()) tit = trunks.emplace(row.coord, trunk_outputs(spec, params, row.coord)).first;
    for (int c = 0; c < spec.out_channels; ++c) {
      out[r * spec.out_channels + c] = fuse(spec, tit->second[c], pit->second[c]);
    }
  }
  return out;
}

}  // namespace dmdno::model
