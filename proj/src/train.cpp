#include "dmdno/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <string>

#include "dmdno/csv.hpp"
#include "dmdno/error.hpp"
#include "dmdno/random.hpp"

#if defined(__SSE2__)
#include <xmmintrin.h>
#endif

namespace dmdno::train {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstRowVecMap = Eigen::Map<const Eigen::RowVectorXd>;
using RowVecMap = Eigen::Map<Eigen::RowVectorXd>;

std::string_view to_string(Optimizer o) { return o == Optimizer::kSgd ? "sgd" : "adam"; }

Optimizer optimizer_from_string(std::string_view name) {
  if (name == "sgd") return Optimizer::kSgd;
  if (name == "adam") return Optimizer::kAdam;
  throw InvalidInput("unknown optimizer '" + std::string(name) + "'");
}

void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw InvalidInput("epochs must be >= 0");
  if (!(cfg.learning_rate > 0.0)) throw InvalidInput("learning rate must be positive");
  if (!(cfg.lambda >= 0.0)) throw InvalidInput("regularization lambda must be >= 0");
  if (cfg.batch_size < 1) throw InvalidInput("batch size must be >= 1");
  if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0)) {
    throw InvalidInput("train fraction must lie strictly between 0 and 1");
  }
  if (cfg.eval_every < 1) throw InvalidInput("eval_every must be >= 1");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
    throw InvalidInput("adam betas must lie in [0, 1)");
  }
  if (!(cfg.adam_eps > 0.0)) throw InvalidInput("adam epsilon must be positive");
}

// --- Problem ----------------------------------------------------------------

void Problem::bind() {
  inputs_.clear();
  inputs_.reserve(conditions_.size());
  for (std::size_t s = 0; s < conditions_.size(); ++s) {
    model::SampleInputs in;
    in.condition = conditions_[s];
    in.encoding = has_encodings_ ? &encodings_[s] : nullptr;
    inputs_.push_back(in);
  }
}

Problem Problem::from_dataset(const pde::Dataset& d, const model::OperatorSpec& spec) {
  if (d.samples.empty()) throw InvalidInput("dataset has no samples");
  if (spec.out_channels != d.channels()) {
    throw InvalidInput("operator has " + std::to_string(spec.out_channels) + " output channels, dataset has " +
                       std::to_string(d.channels()));
  }
  if (spec.condition_size() > d.condition_size()) {
    throw InvalidInput("operator condition slices exceed the dataset condition vector");
  }
  if (spec.grid_nx != d.grid().nx || spec.grid_ny != d.grid().ny) {
    throw InvalidInput("operator grid " + std::to_string(spec.grid_nx) + "x" + std::to_string(spec.grid_ny) +
                       " differs from the dataset grid " + std::to_string(d.grid().nx) + "x" +
                       std::to_string(d.grid().ny));
  }
  Problem p;
  const int nx = d.grid().nx, ny = d.grid().ny;
  const auto nodes = static_cast<Eigen::Index>(nx) * ny;
  p.coords_.resize(nodes, 2);
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) {
      const auto c = model::node_coordinate(spec, i, j);
      p.coords_(static_cast<Eigen::Index>(i) * ny + j, 0) = c[0];
      p.coords_(static_cast<Eigen::Index>(i) * ny + j, 1) = c[1];
    }
  }
  p.has_encodings_ = true;
  for (const pde::Sample& s : d.samples) {
    p.conditions_.emplace_back(s.condition);
    p.encodings_.push_back(dmd::encode_branch_inputs(s.dmd, spec.dynamics_encoding, spec.dynamics_horizon));
    if (spec.dmd_branches_enabled &&
        (p.encodings_.back().mode_vec.size() != static_cast<std::size_t>(spec.modes_branch.inputs()) ||
         p.encodings_.back().dyn_vec.size() != static_cast<std::size_t>(spec.dynamics_branch.inputs()))) {
      throw InvalidInput("DMD encoding of sample " + std::to_string(p.encodings_.size() - 1) +
                         " does not fit the modes/dynamics branch input widths");
    }
    Matrix t(nodes, d.channels());
    for (int c = 0; c < d.channels(); ++c) t.col(c) = s.target.segment(c * nodes, nodes);
    p.targets_.push_back(std::move(t));
  }
  p.bind();
  return p;
}

Problem Problem::from_parts(std::vector<std::vector<double>> conditions,
                            std::vector<dmd::BranchEncoding> encodings, Matrix coords,
                            std::vector<Matrix> targets) {
  if (conditions.size() != targets.size()) throw InvalidInput("conditions and targets differ in count");
  if (!encodings.empty() && encodings.size() != conditions.size()) {
    throw InvalidInput("encodings and conditions differ in count");
  }
  for (const Matrix& t : targets) {
    if (t.rows() != coords.rows()) throw InvalidInput("target rows must match the number of points");
    if (t.cols() != targets.front().cols()) throw InvalidInput("targets disagree on channel count");
  }
  Problem p;
  p.owned_conditions_ = std::move(conditions);
  for (const auto& c : p.owned_conditions_) p.conditions_.emplace_back(c);
  p.has_encodings_ = !encodings.empty();
  p.encodings_ = std::move(encodings);
  p.coords_ = std::move(coords);
  p.targets_ = std::move(targets);
  p.bind();
  return p;
}

std::vector<Row> rows_for(const Problem& problem, std::span<const std::size_t> samples) {
  std::vector<Row> rows;
  rows.reserve(samples.size() * problem.points());
  for (std::size_t s : samples) {
    if (s >= problem.samples()) throw InvalidInput("sample index out of range");
    for (std::size_t k = 0; k < problem.points(); ++k) {
      rows.push_back({static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(k)});
    }
  }
  return rows;
}

// --- loss (plain forward path) ---------------------------------------------

namespace {

double squared_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return acc;
}

void check_batch(const Problem& problem, std::span<const Row> batch) {
  if (batch.empty()) throw InvalidInput("loss: empty batch");
  for (const Row& r : batch) {
    if (r.sample >= problem.samples() || r.point >= problem.points()) {
      throw InvalidInput("loss: batch row out of range");
    }
  }
}

std::vector<double> coord_of(const Problem& problem, std::size_t point) {
  const Matrix& c = problem.coords();
  std::vector<double> out(static_cast<std::size_t>(c.cols()));
  for (Eigen::Index k = 0; k < c.cols(); ++k) out[k] = c(static_cast<Eigen::Index>(point), k);
  return out;
}

}  // namespace

double loss(const model::OperatorSpec& spec, const model::ModelParams& params,
            const Problem& problem, std::span<const Row> batch, double lambda) {
  check_batch(problem, batch);
  std::map<std::uint32_t, std::vector<model::BranchProduct>> products;
  std::vector<std::vector<std::vector<double>>> trunks(problem.points());
  double acc = 0.0;
  for (const Row& r : batch) {
    auto pit = products.find(r.sample);
    if (pit == products.end()) {
      pit = products.emplace(r.sample, model::branch_products(spec, params, problem.inputs(r.sample))).first;
    }
    std::vector<std::vector<double>>& trunk = trunks[r.point];
    if (trunk.empty()) trunk = model::trunk_outputs(spec, params, coord_of(problem, r.point));
    const Matrix& target = problem.target(r.sample);
    for (int c = 0; c < spec.out_channels; ++c) {
      const double e = model::fuse(spec, trunk[c], pit->second[c]) - target(r.point, c);
      acc += e * e;
    }
  }
  return acc / static_cast<double>(batch.size()) + lambda * squared_norm(params.theta);
}

// --- reverse mode (batched path) -------------------------------------------

namespace {

// The input scale is applied to the first-layer product rather than to the
// (possibly wide) input matrix; acts[0] points at the unscaled input.
struct MlpCache {
  const RowMatrix* input = nullptr;
  std::vector<RowMatrix> acts;  // acts[l - 1] = tanh output of layer l - 1
  const RowMatrix& act(std::size_t l) const { return l == 0 ? *input : acts[l - 1]; }
};

RowMatrix mlp_forward_batch(const std::vector<double>& theta, const model::MlpLayout& mlp,
                            const RowMatrix& x, MlpCache& cache) {
  cache.input = &x;
  cache.acts.clear();
  RowMatrix z;
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    const model::LayerSlice& s = mlp.layers[l];
    ConstMatMap w(theta.data() + s.weight_offset, s.out, s.in);
    ConstRowVecMap b(theta.data() + s.bias_offset, s.out);
    z.noalias() = cache.act(l) * w.transpose();
    if (l == 0) z *= mlp.input_scale;
    z.rowwise() += b;
    if (l + 1 < mlp.layers.size()) {
      cache.acts.emplace_back(z.unaryExpr([](double v) { return std::tanh(v); }));
    }
  }
  return z;
}

void mlp_backward_batch(const std::vector<double>& theta, const model::MlpLayout& mlp,
                        const MlpCache& cache, RowMatrix dz, std::vector<double>& grad) {
  for (std::size_t l = mlp.layers.size(); l-- > 0;) {
    const model::LayerSlice& s = mlp.layers[l];
    MatMap gw(grad.data() + s.weight_offset, s.out, s.in);
    RowVecMap gb(grad.data() + s.bias_offset, s.out);
    gb += dz.colwise().sum();
    if (l == 0) {
      dz *= mlp.input_scale;
      gw.noalias() += dz.transpose() * cache.act(0);
    } else {
      gw.noalias() += dz.transpose() * cache.act(l);
      ConstMatMap w(theta.data() + s.weight_offset, s.out, s.in);
      RowMatrix da = dz * w;
      dz = da.array() * (1.0 - cache.act(l).array().square());
    }
  }
}

}  // namespace

LossAndGrad loss_and_grad(const model::OperatorSpec& spec, const model::ModelParams& params,
                          const Problem& problem, std::span<const Row> batch, double lambda) {
  LossAndGrad out;
  loss_and_grad_into(spec, params, problem, batch, lambda, out);
  return out;
}

void loss_and_grad_into(const model::OperatorSpec& spec, const model::ModelParams& params,
                        const Problem& problem, std::span<const Row> batch, double lambda,
                        LossAndGrad& out) {
  check_batch(problem, batch);
  const auto R = static_cast<Eigen::Index>(batch.size());
  const int p = spec.latent_p;

  std::vector<std::uint32_t> uniq;
  uniq.reserve(batch.size());
  for (const Row& r : batch) uniq.push_back(r.sample);
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  const auto U = static_cast<Eigen::Index>(uniq.size());
  std::vector<Eigen::Index> local(batch.size());
  for (std::size_t r = 0; r < batch.size(); ++r) {
    local[r] = std::lower_bound(uniq.begin(), uniq.end(), batch[r].sample) - uniq.begin();
  }

  // Raw branch inputs, shared by all channels.
  const std::size_t nf = spec.function_branches.size();
  std::vector<RowMatrix> xf(nf);
  for (std::size_t j = 0; j < nf; ++j) {
    const model::ConditionSlice& sl = spec.condition_slices[j];
    xf[j].resize(U, static_cast<Eigen::Index>(sl.length));
    for (Eigen::Index u = 0; u < U; ++u) {
      const auto cond = problem.inputs(uniq[u]).condition;
      for (std::size_t k = 0; k < sl.length; ++k) xf[j](u, static_cast<Eigen::Index>(k)) = cond[sl.offset + k];
    }
  }
  RowMatrix xm, xd;
  if (spec.dmd_branches_enabled) {
    const auto* first = problem.inputs(uniq[0]).encoding;
    if (first == nullptr) throw InvalidInput("DMD branches are enabled but the problem has no encodings");
    xm.resize(U, static_cast<Eigen::Index>(first->mode_vec.size()));
    xd.resize(U, static_cast<Eigen::Index>(first->dyn_vec.size()));
    for (Eigen::Index u = 0; u < U; ++u) {
      const dmd::BranchEncoding* e = problem.inputs(uniq[u]).encoding;
      if (e->mode_vec.size() != static_cast<std::size_t>(xm.cols()) ||
          e->dyn_vec.size() != static_cast<std::size_t>(xd.cols())) {
        throw InvalidInput("branch encodings differ in length across samples");
      }
      xm.row(u) = ConstRowVecMap(e->mode_vec.data(), xm.cols());
      xd.row(u) = ConstRowVecMap(e->dyn_vec.data(), xd.cols());
    }
  }
  RowMatrix xt(R, problem.coords().cols());
  for (Eigen::Index r = 0; r < R; ++r) xt.row(r) = problem.coords().row(batch[r].point);

  // The gradient starts as the regularizer term; data terms accumulate on top.
  const auto n_theta = static_cast<Eigen::Index>(params.theta.size());
  const Eigen::Map<const Vector> theta_vec(params.theta.data(), n_theta);
  out.grad.resize(params.theta.size());
  Eigen::Map<Vector>(out.grad.data(), n_theta) = (2.0 * lambda) * theta_vec;
  const double theta_sq = theta_vec.squaredNorm();
  double sq = 0.0;
  const double s = spec.output_scale;

  for (int c = 0; c < spec.out_channels; ++c) {
    const model::ChannelLayout& ch = params.layout.channels[c];
    std::vector<MlpCache> cf(nf);
    std::vector<RowMatrix> f(nf);
    for (std::size_t j = 0; j < nf; ++j) f[j] = mlp_forward_batch(params.theta, ch.functions[j], xf[j], cf[j]);
    MlpCache cm, cd, ct;
    RowMatrix m, d;
    if (spec.dmd_branches_enabled) {
      m = mlp_forward_batch(params.theta, ch.modes, xm, cm);
      d = mlp_forward_batch(params.theta, ch.dynamics, xd, cd);
    }
    const RowMatrix t = mlp_forward_batch(params.theta, ch.trunk, xt, ct);

    RowMatrix g = f[0];
    for (std::size_t j = 1; j < nf; ++j) g.array() *= f[j].array();
    if (spec.dmd_branches_enabled) g.array() *= m.array() * d.array();

    RowMatrix dt(R, p);
    RowMatrix dg = RowMatrix::Zero(U, p);
    for (Eigen::Index r = 0; r < R; ++r) {
      const Eigen::Index u = local[r];
      const double y = s * t.row(r).dot(g.row(u));
      const double e = y - problem.target(batch[r].sample)(batch[r].point, c);
      sq += e * e;
      const double dy = 2.0 * e / static_cast<double>(R) * s;
      dt.row(r) = dy * g.row(u);
      dg.row(u) += dy * t.row(r);
    }

    mlp_backward_batch(params.theta, ch.trunk, ct, std::move(dt), out.grad);
    for (std::size_t j = 0; j < nf; ++j) {
      RowMatrix df = dg;
      for (std::size_t k = 0; k < nf; ++k) {
        if (k != j) df.array() *= f[k].array();
      }
      if (spec.dmd_branches_enabled) df.array() *= m.array() * d.array();
      mlp_backward_batch(params.theta, ch.functions[j], cf[j], std::move(df), out.grad);
    }
    if (spec.dmd_branches_enabled) {
      RowMatrix others = f[0];
      for (std::size_t j = 1; j < nf; ++j) others.array() *= f[j].array();
      RowMatrix dm = dg.array() * others.array() * d.array();
      RowMatrix dd = dg.array() * others.array() * m.array();
      mlp_backward_batch(params.theta, ch.modes, cm, std::move(dm), out.grad);
      mlp_backward_batch(params.theta, ch.dynamics, cd, std::move(dd), out.grad);
    }
  }

  out.loss = sq / static_cast<double>(R) + lambda * theta_sq;
}

std::vector<double> grad(const model::OperatorSpec& spec, const model::ModelParams& params,
                         const Problem& problem, std::span<const Row> batch, double lambda) {
  return loss_and_grad(spec, params, problem, batch, lambda).grad;
}

// --- optimizers -------------------------------------------------------------

void sgd_step(std::vector<double>& theta, std::span<const double> g, double eta) {
  if (g.size() != theta.size()) throw InvalidInput("sgd_step: gradient length mismatch");
  for (std::size_t k = 0; k < theta.size(); ++k) theta[k] -= eta * g[k];
}

void adam_step(AdamState& state, std::vector<double>& theta, std::span<const double> g,
               const TrainConfig& cfg) {
  if (g.size() != theta.size() || state.m.size() != theta.size() || state.v.size() != theta.size()) {
    throw InvalidInput("adam_step: state, parameter and gradient lengths differ");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  const double b1 = cfg.beta1, b2 = cfg.beta2, eps = cfg.adam_eps;
  // lr * (m / c1) / (sqrt(v / c2) + eps) with the bias corrections hoisted.
  const double step = cfg.learning_rate / c1;
  const double inv_sqrt_c2 = 1.0 / std::sqrt(c2);
  double* m = state.m.data();
  double* v = state.v.data();
  double* th = theta.data();
  const double* gp = g.data();
  const std::size_t n = theta.size();
  for (std::size_t k = 0; k < n; ++k) {
    m[k] = b1 * m[k] + (1.0 - b1) * gp[k];
    v[k] = b2 * v[k] + (1.0 - b2) * gp[k] * gp[k];
    th[k] -= step * m[k] / (std::sqrt(v[k]) * inv_sqrt_c2 + eps);
  }
}

// --- training loop ----------------------------------------------------------

Split split_samples(std::size_t n, double train_fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t k = 0; k < n; ++k) idx[k] = k;
  Rng rng(seed ^ 0x5eed5b1177ULL);
  rng.shuffle(idx);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, n)));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, n)), idx.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

namespace {

double rms_scale(double sum_sq, std::size_t count) {
  if (count == 0 || sum_sq == 0.0) return 1.0;
  return 1.0 / std::sqrt(sum_sq / static_cast<double>(count));
}

}  // namespace

void calibrate_scales(model::OperatorSpec& spec, const Problem& problem,
                      std::span<const std::size_t> samples) {
  for (std::size_t j = 0; j < spec.function_branches.size(); ++j) {
    const model::ConditionSlice& sl = spec.condition_slices[j];
    double acc = 0.0;
    for (std::size_t s : samples) {
      acc += squared_norm(problem.inputs(s).condition.subspan(sl.offset, sl.length));
    }
    spec.function_branches[j].input_scale = rms_scale(acc, samples.size() * sl.length);
  }
  if (spec.dmd_branches_enabled) {
    double am = 0.0, ad = 0.0;
    std::size_t nm = 0, nd = 0;
    for (std::size_t s : samples) {
      const dmd::BranchEncoding* e = problem.inputs(s).encoding;
      if (e == nullptr) continue;
      am += squared_norm(e->mode_vec);
      ad += squared_norm(e->dyn_vec);
      nm += e->mode_vec.size();
      nd += e->dyn_vec.size();
    }
    spec.modes_branch.input_scale = rms_scale(am, nm);
    spec.dynamics_branch.input_scale = rms_scale(ad, nd);
  }
  double at = 0.0;
  std::size_t nt = 0;
  for (std::size_t s : samples) {
    at += problem.target(s).squaredNorm();
    nt += static_cast<std::size_t>(problem.target(s).size());
  }
  // The fused sum has latent_p terms of unit order at initialization.
  spec.output_scale = 1.0 / (rms_scale(at, nt) * std::sqrt(static_cast<double>(spec.latent_p)));
}

namespace {

// Weights fed by inputs that are zero in every sample only see the
// regularizer, and Adam walks them into the subnormal range where x86
// arithmetic is two orders of magnitude slower. Training runs with
// flush-to-zero and denormals-are-zero; the caller's mode is restored.
class FlushDenormalsScope {
 public:
#if defined(__SSE2__)
  FlushDenormalsScope() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
  ~FlushDenormalsScope() { _mm_setcsr(saved_); }

 private:
  unsigned saved_;
#endif
};

}  // namespace

TrainResult fit(const Problem& problem, model::OperatorSpec spec, const TrainConfig& cfg,
                const ProgressFn& progress) {
  validate(cfg);
  model::validate(spec);
  const FlushDenormalsScope ftz;
  if (problem.samples() < 2) throw InvalidInput("training needs at least 2 samples");

  TrainResult res;
  res.split = split_samples(problem.samples(), cfg.train_fraction, cfg.seed);
  if (res.split.train.empty() || res.split.test.empty()) {
    throw InvalidInput("train fraction leaves the train or test split empty");
  }
  if (cfg.auto_scale) calibrate_scales(spec, problem, res.split.train);
  res.spec = spec;
  res.params = model::init_params(spec, cfg.seed);

  std::vector<Row> train_rows = rows_for(problem, res.split.train);
  const std::vector<Row> test_rows = rows_for(problem, res.split.test);
  Rng rng(cfg.seed ^ 0xba7c4e5ULL);
  AdamState adam = AdamState::zeros(res.params.theta.size());
  LossAndGrad lg;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (epoch % cfg.eval_every == 0) {
      LossRecord rec{epoch, loss(spec, res.params, problem, train_rows, cfg.lambda),
                     loss(spec, res.params, problem, test_rows, cfg.lambda)};
      if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.test_loss)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + " (evaluation)");
      }
      res.history.push_back(rec);
      if (progress) progress(rec);
    }
    rng.shuffle(train_rows);
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < train_rows.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t len = std::min(cfg.batch_size, train_rows.size() - start);
      const std::span<const Row> batch(train_rows.data() + start, len);
      loss_and_grad_into(spec, res.params, problem, batch, cfg.lambda, lg);
      if (!std::isfinite(lg.loss)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_index));
      }
      if (cfg.optimizer == Optimizer::kAdam) {
        adam_step(adam, res.params.theta, lg.grad, cfg);
      } else {
        sgd_step(res.params.theta, lg.grad, cfg.learning_rate);
      }
    }
  }
  return res;
}

// --- evaluation -------------------------------------------------------------

MetricsReport metrics(std::span<const double> predicted, std::span<const double> truth, int channels) {
  if (predicted.size() != truth.size()) throw InvalidInput("metrics: prediction and truth sizes differ");
  if (channels < 1 || truth.size() % static_cast<std::size_t>(channels) != 0) {
    throw InvalidInput("metrics: size is not a multiple of the channel count");
  }
  const std::size_t rows = truth.size() / channels;
  MetricsReport rep;
  rep.channels.resize(channels);
  std::vector<double> err_sq(channels, 0.0), ref_sq(channels, 0.0);
  double all_err = 0.0, all_ref = 0.0, all_max = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (int c = 0; c < channels; ++c) {
      const double u = truth[r * channels + c];
      const double e = predicted[r * channels + c] - u;
      err_sq[c] += e * e;
      ref_sq[c] += u * u;
      rep.channels[c].max_abs = std::max(rep.channels[c].max_abs, std::abs(e));
    }
  }
  auto finish = [](ChannelMetrics& m, double esq, double rsq, std::size_t n) {
    m.mse = n ? esq / static_cast<double>(n) : 0.0;
    if (rsq > 0.0) {
      m.rel_l2 = std::sqrt(esq) / std::sqrt(rsq);
    } else {
      m.rel_l2 = std::sqrt(esq);
      m.rel_is_absolute = true;
    }
  };
  for (int c = 0; c < channels; ++c) {
    finish(rep.channels[c], err_sq[c], ref_sq[c], rows);
    all_err += err_sq[c];
    all_ref += ref_sq[c];
    all_max = std::max(all_max, rep.channels[c].max_abs);
  }
  finish(rep.aggregate, all_err, all_ref, truth.size());
  rep.aggregate.max_abs = all_max;
  return rep;
}

Matrix predict_sample(const model::OperatorSpec& spec, const model::ModelParams& params,
                      const Problem& problem, std::size_t sample) {
  if (sample >= problem.samples()) throw InvalidInput("predict_sample: sample index out of range");
  const auto products = model::branch_products(spec, params, problem.inputs(sample));
  Matrix out(static_cast<Eigen::Index>(problem.points()), spec.out_channels);
  for (std::size_t k = 0; k < problem.points(); ++k) {
    const auto trunks = model::trunk_outputs(spec, params, coord_of(problem, k));
    for (int c = 0; c < spec.out_channels; ++c) {
      out(static_cast<Eigen::Index>(k), c) = model::fuse(spec, trunks[c], products[c]);
    }
  }
  return out;
}

MetricsReport evaluate(const model::OperatorSpec& spec, const model::ModelParams& params,
                       const Problem& problem, std::span<const std::size_t> samples) {
  // Sorted so the accumulation order, and with it every bit of the report,
  // does not depend on how the caller ordered the samples.
  std::vector<std::size_t> order(samples.begin(), samples.end());
  std::sort(order.begin(), order.end());
  std::vector<double> pred, truth;
  for (std::size_t s : order) {
    const Matrix y = predict_sample(spec, params, problem, s);
    const Matrix& u = problem.target(s);
    for (Eigen::Index k = 0; k < y.rows(); ++k) {
      for (Eigen::Index c = 0; c < y.cols(); ++c) {
        pred.push_back(y(k, c));
        truth.push_back(u(k, c));
      }
    }
  }
  return metrics(pred, truth, spec.out_channels);
}

// --- CSV --------------------------------------------------------------------

void write_loss_csv(std::ostream& os, const LossHistory& history) {
  os << "epoch,train_loss,test_loss\n";
  for (const LossRecord& r : history) {
    os << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.test_loss) << '\n';
  }
}

void write_metrics_csv(std::ostream& os, const MetricsReport& report) {
  os << "metric,channel,value\n";
  auto emit = [&](const ChannelMetrics& m, const std::string& channel) {
    os << "mse," << channel << ',' << format_double(m.mse) << '\n';
    os << (m.rel_is_absolute ? "abs_l2," : "rel_l2,") << channel << ',' << format_double(m.rel_l2) << '\n';
    os << "max_abs," << channel << ',' << format_double(m.max_abs) << '\n';
  };
  for (std::size_t c = 0; c < report.channels.size(); ++c) emit(report.channels[c], std::to_string(c));
  emit(report.aggregate, "all");
}

}  // namespace dmdno::train
