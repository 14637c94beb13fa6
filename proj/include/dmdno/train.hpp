#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dmdno/model.hpp"
#include "dmdno/pde.hpp"

namespace dmdno::train {

enum class Optimizer { kSgd, kAdam };

struct TrainConfig {
  int epochs = 100;
  double learning_rate = 1e-3;
  double lambda = 1e-5;
  std::size_t batch_size = 32;
  Optimizer optimizer = Optimizer::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  int eval_every = 10;
  /// Set branch input scales and the output scale from training-split
  /// statistics before the first update.
  bool auto_scale = true;
};

void validate(const TrainConfig& cfg);

/// Samples plus the query grid they are evaluated on.
///
/// Holds the branch encodings of every sample; SampleInputs point into this
/// object (and into the dataset it was built from), so it is move-only.
class Problem {
 public:
  Problem() = default;
  Problem(const Problem&) = delete;
  Problem& operator=(const Problem&) = delete;
  Problem(Problem&&) = default;
  Problem& operator=(Problem&&) = default;

  /// Samples of a generated dataset on its own grid. The dataset must
  /// outlive the problem.
  static Problem from_dataset(const pde::Dataset& d, const model::OperatorSpec& spec);

  /// Hand-built problems (tests, bindings). `targets[s]` is points x channels.
  static Problem from_parts(std::vector<std::vector<double>> conditions,
                            std::vector<dmd::BranchEncoding> encodings, Matrix coords,
                            std::vector<Matrix> targets);

  std::size_t samples() const { return inputs_.size(); }
  std::size_t points() const { return static_cast<std::size_t>(coords_.rows()); }
  int channels() const { return targets_.empty() ? 0 : static_cast<int>(targets_.front().cols()); }
  const model::SampleInputs& inputs(std::size_t s) const { return inputs_[s]; }
  std::span<const model::SampleInputs> all_inputs() const { return inputs_; }
  const dmd::BranchEncoding& encoding(std::size_t s) const { return encodings_[s]; }
  const Matrix& coords() const { return coords_; }
  const Matrix& target(std::size_t s) const { return targets_[s]; }

 private:
  void bind();

  std::vector<std::vector<double>> owned_conditions_;
  std::vector<std::span<const double>> conditions_;
  std::vector<dmd::BranchEncoding> encodings_;
  std::vector<model::SampleInputs> inputs_;
  Matrix coords_;
  std::vector<Matrix> targets_;
  bool has_encodings_ = false;
};

/// One training row: a sample evaluated at one grid point.
struct Row {
  std::uint32_t sample = 0;
  std::uint32_t point = 0;
  friend bool operator==(const Row&, const Row&) = default;
};

std::vector<Row> rows_for(const Problem& problem, std::span<const std::size_t> samples);

/// (1/|B|) sum_rows ||u - u_hat||^2 + lambda ||theta||^2.
double loss(const model::OperatorSpec& spec, const model::ModelParams& params,
            const Problem& problem, std::span<const Row> batch, double lambda);

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Reverse-mode gradient of loss() with respect to theta.
LossAndGrad loss_and_grad(const model::OperatorSpec& spec, const model::ModelParams& params,
                          const Problem& problem, std::span<const Row> batch, double lambda);

/// Same as loss_and_grad but reuses out.grad's storage; the training loop
/// calls this once per batch.
void loss_and_grad_into(const model::OperatorSpec& spec, const model::ModelParams& params,
                        const Problem& problem, std::span<const Row> batch, double lambda,
                        LossAndGrad& out);

std::vector<double> grad(const model::OperatorSpec& spec, const model::ModelParams& params,
                         const Problem& problem, std::span<const Row> batch, double lambda);

// --- optimizers -------------------------------------------------------------

void sgd_step(std::vector<double>& theta, std::span<const double> g, double eta);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  static AdamState zeros(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0}; }
};

void adam_step(AdamState& state, std::vector<double>& theta, std::span<const double> g,
               const TrainConfig& cfg);

// --- training loop ----------------------------------------------------------

struct LossRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
};

using LossHistory = std::vector<LossRecord>;

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded shuffle of sample indices; the first round(fraction * n) go to
/// training. Both lists are returned sorted.
Split split_samples(std::size_t n, double train_fraction, std::uint64_t seed);

/// Branch input scales become 1 / RMS of each branch's inputs over the given
/// samples; the output scale becomes the RMS of their targets.
void calibrate_scales(model::OperatorSpec& spec, const Problem& problem,
                      std::span<const std::size_t> samples);

struct TrainResult {
  model::OperatorSpec spec;
  model::ModelParams params;
  LossHistory history;
  Split split;
};

/// Called after every logged epoch; return false to stop early.
using ProgressFn = std::function<void(const LossRecord&)>;

/// Mini-batch training. Loss rows are logged at epochs 0, eval_every, ...
/// using the parameters at the start of that epoch, over the full train and
/// test splits. Throws NumericalError naming the epoch and batch when a
/// non-finite loss appears.
TrainResult fit(const Problem& problem, model::OperatorSpec spec, const TrainConfig& cfg,
                const ProgressFn& progress = {});

// --- evaluation -------------------------------------------------------------

struct ChannelMetrics {
  double mse = 0.0;
  double rel_l2 = 0.0;
  double max_abs = 0.0;
  /// True when the reference norm is zero; rel_l2 then holds the absolute norm.
  bool rel_is_absolute = false;
};

struct MetricsReport {
  std::vector<ChannelMetrics> channels;
  ChannelMetrics aggregate;
};

MetricsReport metrics(std::span<const double> predicted, std::span<const double> truth,
                      int channels);

MetricsReport evaluate(const model::OperatorSpec& spec, const model::ModelParams& params,
                       const Problem& problem, std::span<const std::size_t> samples);

/// Predictions for every point of one sample, points x channels.
Matrix predict_sample(const model::OperatorSpec& spec, const model::ModelParams& params,
                      const Problem& problem, std::size_t sample);

// --- CSV --------------------------------------------------------------------

void write_loss_csv(std::ostream& os, const LossHistory& history);
void write_metrics_csv(std::ostream& os, const MetricsReport& report);

std::string_view to_string(Optimizer o);
Optimizer optimizer_from_string(std::string_view name);

}  // namespace dmdno::train
