#include <doctest.h>

#include <cmath>
#include <sstream>

#include "dmdno/error.hpp"
#include "dmdno/train.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace dmdno;
using namespace dmdno::train;

namespace {

// out = theta * 1 through a one-weight function branch against a constant
// trunk of 1, so the squared error on target 0 is theta^2.
struct OneWeight {
  model::OperatorSpec spec;
  model::ModelParams params;
  Problem problem;
  std::size_t weight = 0;
};

OneWeight one_weight(double theta) {
  OneWeight o;
  o.spec.latent_p = 1;
  o.spec.trunk.widths = {2, 1};
  o.spec.function_branches = {model::MlpSpec{{1, 1}}};
  o.spec.condition_slices = {{0, 1}};
  o.spec.dmd_branches_enabled = false;
  o.spec.grid_nx = 2;
  o.spec.grid_ny = 2;
  o.params = model::init_params(o.spec, 0);
  const auto& ch = o.params.layout.channels[0];
  o.params.theta[ch.trunk.layers[0].weight_offset] = 0.0;
  o.params.theta[ch.trunk.layers[0].weight_offset + 1] = 0.0;
  o.params.theta[ch.trunk.layers[0].bias_offset] = 1.0;
  o.weight = ch.functions[0].layers[0].weight_offset;
  o.params.theta[o.weight] = theta;
  Matrix coords(1, 2);
  coords << 0.0, 0.0;
  o.problem = Problem::from_parts({{1.0}}, {}, coords, {Matrix::Zero(1, 1)});
  return o;
}

void zero_function_output(const model::OperatorSpec&, model::ModelParams& p) {
  for (auto& ch : p.layout.channels) {
    const auto& last = ch.functions[0].layers.back();
    for (std::size_t k = 0; k < static_cast<std::size_t>(last.in) * last.out; ++k) p.theta[last.weight_offset + k] = 0.0;
    for (int k = 0; k < last.out; ++k) p.theta[last.bias_offset + k] = 0.0;
  }
}

}  // namespace

TEST_CASE("one-weight net: loss theta^2, gradient 2 theta") {
  OneWeight o = one_weight(3.0);
  const std::vector<Row> batch{{0, 0}};
  CHECK(loss(o.spec, o.params, o.problem, batch, 0.0) == 9.0);
  const auto g = grad(o.spec, o.params, o.problem, batch, 0.0);
  CHECK(g[o.weight] == 6.0);
}

TEST_CASE("empty batch is rejected") {
  OneWeight o = one_weight(1.0);
  CHECK_THROWS_AS(loss(o.spec, o.params, o.problem, {}, 0.0), InvalidInput);
  CHECK_THROWS_AS(loss_and_grad(o.spec, o.params, o.problem, {}, 0.0), InvalidInput);
}

TEST_CASE("gradient matches central differences") {
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const model::OperatorSpec spec = fixture::random_spec(rng, trial % 4 != 0);
    const model::ModelParams params = model::init_params(spec, 1000 + trial);
    const Problem problem = fixture::random_problem(rng, spec, 3);
    const auto batch = fixture::random_batch(rng, problem, 6);
    const double lambda = rng.uniform(0.0, 1e-2);
    const LossAndGrad lg = loss_and_grad(spec, params, problem, batch, lambda);
    CHECK(lg.loss == doctest::Approx(loss(spec, params, problem, batch, lambda)).epsilon(1e-12));
    model::ModelParams probe = params;
    const auto fd = oracle::fd_gradient(
        [&](const std::vector<double>& th) {
          probe.theta = th;
          return loss(spec, probe, problem, batch, lambda);
        },
        params.theta, 1e-3);
    CHECK(oracle::max_relative_error(lg.grad, fd, 1e-6) <= 1e-5);
  }
}

TEST_CASE("regularizer gradient is exactly 2 lambda theta") {
  Rng rng(42);
  const model::OperatorSpec spec = fixture::random_spec(rng, true);
  model::ModelParams params = model::init_params(spec, 5);
  zero_function_output(spec, params);
  Problem problem = fixture::random_problem(rng, spec, 2);
  std::vector<Matrix> zeros(2, Matrix::Zero(static_cast<Eigen::Index>(problem.points()), spec.out_channels));
  // Zero targets against a zero prediction leave only the penalty.
  std::vector<std::vector<double>> conds;
  std::vector<dmd::BranchEncoding> encs;
  for (std::size_t s = 0; s < 2; ++s) {
    conds.emplace_back(problem.inputs(s).condition.begin(), problem.inputs(s).condition.end());
    encs.push_back(problem.encoding(s));
  }
  problem = Problem::from_parts(conds, encs, problem.coords(), zeros);
  const double lambda = 0.37;
  const auto g = grad(spec, params, problem, rows_for(problem, std::vector<std::size_t>{0, 1}), lambda);
  for (std::size_t k = 0; k < g.size(); ++k) CHECK(g[k] == 2.0 * lambda * params.theta[k]);
}

TEST_CASE("a zero multiplier path has a zero gradient block") {
  Rng rng(43);
  const model::OperatorSpec spec = fixture::random_spec(rng, true);
  model::ModelParams params = model::init_params(spec, 6);
  zero_function_output(spec, params);
  const Problem problem = fixture::random_problem(rng, spec, 3);
  const auto g = grad(spec, params, problem, fixture::random_batch(rng, problem, 8), 0.0);
  for (const auto& ch : params.layout.channels) {
    for (const model::MlpLayout* m : {&ch.trunk, &ch.modes, &ch.dynamics}) {
      for (const auto& l : m->layers) {
        for (std::size_t k = 0; k < static_cast<std::size_t>(l.in) * l.out; ++k) CHECK(g[l.weight_offset + k] == 0.0);
        for (int k = 0; k < l.out; ++k) CHECK(g[l.bias_offset + k] == 0.0);
      }
    }
  }
}

TEST_CASE("sgd_step") {
  std::vector<double> th{1, 2};
  sgd_step(th, std::vector<double>{0.5, -1}, 0.1);
  CHECK(th[0] == doctest::Approx(0.95).epsilon(1e-15));
  CHECK(th[1] == doctest::Approx(2.1).epsilon(1e-15));
  const auto before = th;
  sgd_step(th, std::vector<double>{0, 0}, 0.1);
  CHECK(th == before);

  std::vector<double> a{0.3, -0.7}, b = a;
  const std::vector<double> g{0.25, -0.5}, g2{0.5, -1.0};
  sgd_step(a, g, 0.5);
  sgd_step(a, g, 0.5);
  sgd_step(b, g2, 0.5);
  CHECK(a == b);  // 0.5 * 0.25 is exact, so the two routes round identically
}

TEST_CASE("adam_step") {
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  SUBCASE("first step moves by lr * g / (|g| + eps)") {
    AdamState st = AdamState::zeros(1);
    std::vector<double> th{0.0};
    adam_step(st, th, std::vector<double>{1.0}, cfg);
    CHECK(th[0] == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-14));
    CHECK(st.step == 1);
    adam_step(st, th, std::vector<double>{1.0}, cfg);
    CHECK(st.step == 2);
  }
  SUBCASE("zero gradient from zero state leaves parameters unchanged") {
    AdamState st = AdamState::zeros(3);
    std::vector<double> th{1.0, -2.0, 3.0};
    const auto before = th;
    adam_step(st, th, std::vector<double>{0, 0, 0}, cfg);
    CHECK(th == before);
  }
}

TEST_CASE("full-batch SGD with a small step decreases the loss 20 times in a row") {
  Rng rng(44);
  model::OperatorSpec spec = fixture::random_spec(rng, true);
  const Problem problem = fixture::random_problem(rng, spec, 2);
  std::vector<Row> rows = rows_for(problem, std::vector<std::size_t>{0, 1});
  rows.resize(10);
  model::ModelParams params = model::init_params(spec, 7);
  double previous = loss(spec, params, problem, rows, 1e-5);
  for (int step = 0; step < 20; ++step) {
    const auto g = grad(spec, params, problem, rows, 1e-5);
    sgd_step(params.theta, g, 1e-3);
    const double now = loss(spec, params, problem, rows, 1e-5);
    CHECK(now < previous);
    previous = now;
  }
}

TEST_CASE("split_samples") {
  const Split s = split_samples(100, 0.8, 3);
  CHECK(s.train.size() == 80);
  CHECK(s.test.size() == 20);
  std::vector<int> seen(100, 0);
  for (auto k : s.train) ++seen[k];
  for (auto k : s.test) ++seen[k];
  for (int v : seen) CHECK(v == 1);
  CHECK(std::is_sorted(s.train.begin(), s.train.end()));
  CHECK(split_samples(100, 0.8, 3).test == s.test);
  CHECK(split_samples(100, 0.8, 4).test != s.test);
}

TEST_CASE("training loop") {
  Rng rng(45);
  model::OperatorSpec spec = fixture::random_spec(rng, true);
  const Problem problem = fixture::random_problem(rng, spec, 10);
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.eval_every = 2;
  cfg.batch_size = 8;
  cfg.seed = 17;

  SUBCASE("logs at the start of every eval_every-th epoch") {
    const TrainResult r = fit(problem, spec, cfg);
    REQUIRE(r.history.size() == 3);
    CHECK(r.history[0].epoch == 0);
    CHECK(r.history[2].epoch == 4);
    CHECK(r.history[0].train_loss ==
          loss(r.spec, model::init_params(r.spec, cfg.seed), problem, rows_for(problem, r.split.train), cfg.lambda));
  }
  SUBCASE("same seed, same bits") {
    const TrainResult a = fit(problem, spec, cfg), b = fit(problem, spec, cfg);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t k = 0; k < a.history.size(); ++k) {
      CHECK(a.history[k].train_loss == b.history[k].train_loss);
      CHECK(a.history[k].test_loss == b.history[k].test_loss);
    }
    CHECK(a.params.theta == b.params.theta);
  }
  SUBCASE("zero epochs return the initial parameters and no loss rows") {
    cfg.epochs = 0;
    const TrainResult r = fit(problem, spec, cfg);
    CHECK(r.history.empty());
    CHECK(r.params.theta == model::init_params(r.spec, cfg.seed).theta);
  }
  SUBCASE("plain SGD is selectable") {
    cfg.optimizer = Optimizer::kSgd;
    CHECK(fit(problem, spec, cfg).history.size() == 3);
  }
  SUBCASE("a diverging run aborts with the epoch and batch") {
    cfg.optimizer = Optimizer::kSgd;
    cfg.learning_rate = 1e6;
    cfg.eval_every = 1000;
    try {
      fit(problem, spec, cfg);
      FAIL("expected a NumericalError");
    } catch (const NumericalError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("epoch") != std::string::npos);
      CHECK(msg.find("batch") != std::string::npos);
    }
  }
  SUBCASE("config validation") {
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(fit(problem, spec, cfg), InvalidInput);
    cfg.learning_rate = 1e-3;
    cfg.train_fraction = 1.0;
    CHECK_THROWS_AS(fit(problem, spec, cfg), InvalidInput);
  }
}

TEST_CASE("metrics") {
  SUBCASE("perfect prediction") {
    const std::vector<double> u{1, -2, 3};
    const auto r = metrics(u, u, 1);
    CHECK(r.aggregate.mse == 0.0);
    CHECK(r.aggregate.rel_l2 == 0.0);
    CHECK(r.aggregate.max_abs == 0.0);
  }
  SUBCASE("zero predictor has relative error 1") {
    CHECK(metrics(std::vector<double>{0, 0}, std::vector<double>{3, 4}, 1).aggregate.rel_l2 == 1.0);
  }
  SUBCASE("(1, 0) against (0, 1)") {
    const auto r = metrics(std::vector<double>{1, 0}, std::vector<double>{0, 1}, 1);
    CHECK(r.aggregate.rel_l2 == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
    CHECK(r.aggregate.mse == 1.0);
    CHECK(r.aggregate.max_abs == 1.0);
  }
  SUBCASE("zero-norm truth reports the absolute norm with a flag") {
    const auto r = metrics(std::vector<double>{3, 4}, std::vector<double>{0, 0}, 1);
    CHECK(r.aggregate.rel_is_absolute);
    CHECK(r.aggregate.rel_l2 == 5.0);
  }
  SUBCASE("per channel") {
    // rows (u, v): (1, 0), (1, 2) predicted as (1, 1), (0, 2)
    const auto r = metrics(std::vector<double>{1, 1, 0, 2}, std::vector<double>{1, 0, 1, 2}, 2);
    CHECK(r.channels[0].mse == 0.5);
    CHECK(r.channels[1].mse == 0.5);
    CHECK(r.channels[1].rel_l2 == 0.5);
    CHECK(r.aggregate.mse == 0.5);
  }
}

TEST_CASE("evaluate does not depend on the sample order") {
  Rng rng(46);
  const model::OperatorSpec spec = fixture::random_spec(rng, true);
  const model::ModelParams params = model::init_params(spec, 8);
  const Problem problem = fixture::random_problem(rng, spec, 6);
  const auto a = evaluate(spec, params, problem, std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
  const auto b = evaluate(spec, params, problem, std::vector<std::size_t>{4, 2, 5, 0, 3, 1});
  CHECK(a.aggregate.mse == b.aggregate.mse);
  CHECK(a.aggregate.rel_l2 == b.aggregate.rel_l2);
  CHECK(a.aggregate.max_abs == b.aggregate.max_abs);
}

TEST_CASE("CSV writers") {
  std::ostringstream loss_csv;
  write_loss_csv(loss_csv, {{0, 1.5, 2.0}, {10, 0.1, 0.30000000000000004}});
  CHECK(loss_csv.str() == "epoch,train_loss,test_loss\n0,1.5,2\n10,0.10000000000000001,0.30000000000000004\n");

  std::ostringstream m;
  write_metrics_csv(m, metrics(std::vector<double>{1, 0}, std::vector<double>{0, 1}, 1));
  CHECK(m.str().rfind("metric,channel,value\nmse,0,1\nrel_l2,0,1.4142135623730951\n", 0) == 0);
}

TEST_CASE("calibration makes the epoch-0 output unit scale") {
  Rng rng(47);
  model::OperatorSpec spec = fixture::random_spec(rng, true);
  const Problem problem = fixture::random_problem(rng, spec, 5);
  calibrate_scales(spec, problem, std::vector<std::size_t>{0, 1, 2, 3, 4});
  // Inputs are U(-1, 1), whose RMS is 1/sqrt(3).
  CHECK(spec.function_branches[0].input_scale == doctest::Approx(std::sqrt(3.0)).epsilon(0.3));
  CHECK(spec.output_scale > 0.0);
}
