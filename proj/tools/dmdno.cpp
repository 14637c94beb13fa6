#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "dmdno/bound.hpp"
#include "dmdno/config.hpp"
#include "dmdno/csv.hpp"
#include "dmdno/error.hpp"
#include "dmdno/io.hpp"
#include "dmdno/train.hpp"

namespace fs = std::filesystem;
using namespace dmdno;
using config::Json;

namespace {

// Stable contract for scripts.
constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumerical = 4;

struct Globals {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

class Log {
 public:
  explicit Log(bool quiet) : quiet_(quiet) {}
  void info(const std::string& msg) const {
    if (!quiet_) std::cout << msg << '\n' << std::flush;
  }
  void warn(const std::string& msg) const { std::cerr << "warning: " << msg << '\n'; }

 private:
  bool quiet_;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("sha256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

Json file_record(const fs::path& path) {
  return Json{{"path", path.string()}, {"sha256", sha256_hex(io::read_file(path))}};
}

/// Everything a command needs to rerun itself; written last, atomically.
class Manifest {
 public:
  explicit Manifest(std::string command) {
    doc_["command"] = std::move(command);
    doc_["code_version"] = DMDNO_VERSION;
  }
  void set_config(const config::ExperimentConfig& cfg) { doc_["config"] = config::to_json(cfg); }
  void input(const std::string& name, const fs::path& path) { doc_["inputs"][name] = file_record(path); }
  void output(const std::string& name, const fs::path& path) { doc_["outputs"][name] = file_record(path); }
  void timing(const std::string& name, double seconds) { doc_["timings_s"][name] = seconds; }
  Json& operator[](const std::string& key) { return doc_[key]; }

  void write(const fs::path& dir) const {
    io::write_file_atomic(dir / (doc_["command"].get<std::string>() + "_manifest.json"), doc_.dump(2) + "\n");
  }

 private:
  Json doc_;
};

config::ExperimentConfig load_experiment(const Globals& g, std::optional<pde::Equation> fallback) {
  config::ExperimentConfig cfg;
  if (!g.config_path.empty()) {
    cfg = config::experiment_from_json(config::parse_json(io::read_file(g.config_path), g.config_path));
  } else if (fallback) {
    cfg = config::default_experiment(*fallback);
  } else {
    throw InvalidInput("--config is required (or name the equation)");
  }
  if (g.seed) config::apply_seed(cfg, *g.seed);
  if (!g.out_dir.empty()) cfg.output_dir = g.out_dir;
  config::validate(cfg);
  return cfg;
}

fs::path prepare_out(const config::ExperimentConfig& cfg) {
  fs::path out(cfg.output_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory '" + out.string() + "': " + ec.message());
  return out;
}

template <class Fn>
void write_text(const fs::path& path, Fn&& body) {
  std::ostringstream os;
  body(os);
  io::write_file_atomic(path, os.str());
}

Json metrics_json(const train::MetricsReport& r) {
  auto one = [](const train::ChannelMetrics& m) {
    return Json{{"mse", m.mse},
                {m.rel_is_absolute ? "abs_l2" : "rel_l2", m.rel_l2},
                {"max_abs", m.max_abs}};
  };
  Json ch = Json::array();
  for (const auto& c : r.channels) ch.push_back(one(c));
  return Json{{"aggregate", one(r.aggregate)}, {"channels", ch}};
}

Json history_json(const train::LossHistory& h) {
  Json rows = Json::array();
  for (const auto& r : h) rows.push_back(Json{{"epoch", r.epoch}, {"train", r.train_loss}, {"test", r.test_loss}});
  return rows;
}

void require_equation(const config::ExperimentConfig& cfg, const pde::Dataset& d) {
  if (cfg.generator.equation != d.equation()) {
    throw InvalidInput("config is for " + std::string(pde::to_string(cfg.generator.equation)) +
                       " but the dataset holds " + std::string(pde::to_string(d.equation())));
  }
}

/// The config used for split bookkeeping when a command gets no --config.
config::ExperimentConfig experiment_for(const Globals& g, const pde::Dataset& d) {
  config::ExperimentConfig cfg = load_experiment(g, d.equation());
  require_equation(cfg, d);
  return cfg;
}

train::TrainResult run_training(const config::ExperimentConfig& cfg, const pde::Dataset& data, bool baseline,
                                const Log& log, const std::string& label) {
  const model::OperatorSpec spec = config::make_operator_spec(cfg.model, data.params, baseline);
  const train::Problem problem = train::Problem::from_dataset(data, spec);
  const auto t0 = Clock::now();
  auto progress = [&](const train::LossRecord& r) {
    std::ostringstream msg;
    msg << label << "epoch " << r.epoch << "  train " << format_double(r.train_loss) << "  test "
        << format_double(r.test_loss) << "  (" << std::fixed << std::setprecision(1) << seconds_since(t0) << " s)";
    log.info(msg.str());
  };
  return train::fit(problem, spec, cfg.train, progress);
}

// --- commands -----------------------------------------------------------------

int cmd_generate(const Globals& g, const std::string& equation) {
  const auto t0 = Clock::now();
  std::optional<pde::Equation> eq;
  if (!equation.empty()) eq = pde::equation_from_string(equation);
  config::ExperimentConfig cfg = load_experiment(g, eq);
  if (eq && *eq != cfg.generator.equation) throw InvalidInput("--equation disagrees with the config");
  const Log log(g.quiet);
  const fs::path out = prepare_out(cfg);

  const pde::Dataset data = pde::generate(cfg.generator, [&](const std::string& w) { log.warn(w); });
  const double gen_s = seconds_since(t0);
  const fs::path path = out / "dataset.dmdnods";
  io::save_dataset(data, path);

  Manifest m("generate");
  m.set_config(cfg);
  m.output("dataset", path);
  m.timing("generate", gen_s);
  m.timing("total", seconds_since(t0));
  m.write(out);
  log.info("wrote " + path.string() + " (" + std::to_string(data.samples.size()) + " samples)");
  return kExitOk;
}

int cmd_train(const Globals& g, const std::string& dataset_path) {
  const auto t0 = Clock::now();
  const pde::Dataset data = io::load_dataset(dataset_path);
  const config::ExperimentConfig cfg = experiment_for(g, data);
  const Log log(g.quiet);
  const fs::path out = prepare_out(cfg);

  const train::TrainResult res = run_training(cfg, data, cfg.baseline, log, "");
  const double train_s = seconds_since(t0);

  const fs::path ckpt = out / "checkpoint.dmdnomp";
  const fs::path loss = out / "loss.csv";
  io::save_checkpoint(res.spec, res.params, ckpt);
  write_text(loss, [&](std::ostream& os) { train::write_loss_csv(os, res.history); });

  const train::Problem problem = train::Problem::from_dataset(data, res.spec);
  Manifest m("train");
  m.set_config(cfg);
  m.input("dataset", dataset_path);
  m.output("checkpoint", ckpt);
  m.output("loss", loss);
  m["loss_history"] = history_json(res.history);
  m["metrics"] = Json{{"train", metrics_json(train::evaluate(res.spec, res.params, problem, res.split.train))},
                      {"test", metrics_json(train::evaluate(res.spec, res.params, problem, res.split.test))}};
  m.timing("train", train_s);
  m.timing("total", seconds_since(t0));
  m.write(out);
  log.info("wrote " + ckpt.string() + " and " + loss.string());
  return kExitOk;
}

/// Loads a checkpoint and checks that it can run on the dataset.
io::Checkpoint load_compatible(const std::string& checkpoint_path, const pde::Dataset& data) {
  io::Checkpoint ck = io::load_checkpoint(checkpoint_path);
  (void)train::Problem::from_dataset(data, ck.spec);
  return ck;
}

void write_grid(const fs::path& path, const Matrix& values, int col, int nx, int ny) {
  write_text(path, [&](std::ostream& os) {
    for (int i = 0; i < nx; ++i) {
      for (int j = 0; j < ny; ++j) {
        if (j) os << ',';
        os << format_double(values(static_cast<Eigen::Index>(i) * ny + j, col));
      }
      os << '\n';
    }
  });
}

int cmd_eval(const Globals& g, const std::string& checkpoint_path, const std::string& dataset_path,
             std::optional<int> grids) {
  const auto t0 = Clock::now();
  const pde::Dataset data = io::load_dataset(dataset_path);
  const config::ExperimentConfig cfg = experiment_for(g, data);
  const io::Checkpoint ck = load_compatible(checkpoint_path, data);
  const Log log(g.quiet);
  const fs::path out = prepare_out(cfg);
  const int k = grids.value_or(cfg.eval_grids);
  if (k < 0) throw InvalidInput("--grids must be >= 0");

  const train::Problem problem = train::Problem::from_dataset(data, ck.spec);
  const train::Split split = train::split_samples(problem.samples(), cfg.train.train_fraction, cfg.train.seed);
  const train::MetricsReport report = train::evaluate(ck.spec, ck.params, problem, split.test);
  const fs::path metrics = out / "metrics.csv";
  write_text(metrics, [&](std::ostream& os) { train::write_metrics_csv(os, report); });

  Manifest m("eval");
  m.set_config(cfg);
  m.input("dataset", dataset_path);
  m.input("checkpoint", checkpoint_path);
  m.output("metrics", metrics);

  const fs::path grid_dir = out / "grids";
  if (k > 0) fs::create_directories(grid_dir);
  const int nx = data.grid().nx, ny = data.grid().ny;
  const std::vector<std::string> channel_names =
      data.channels() == 2 ? std::vector<std::string>{"_u", "_v"} : std::vector<std::string>{""};
  for (int s = 0; s < k && s < static_cast<int>(split.test.size()); ++s) {
    const std::size_t idx = split.test[s];
    const Matrix pred = train::predict_sample(ck.spec, ck.params, problem, idx);
    const Matrix& truth = problem.target(idx);
    const Matrix err = (pred - truth).cwiseAbs();
    for (int c = 0; c < data.channels(); ++c) {
      const std::string stem = "sample_" + std::to_string(idx) + channel_names[c];
      const std::pair<const char*, const Matrix*> parts[] = {
          {"_prediction", &pred}, {"_truth", &truth}, {"_error", &err}};
      for (const auto& [suffix, mat] : parts) {
        const fs::path p = grid_dir / (stem + suffix + ".csv");
        write_grid(p, *mat, c, nx, ny);
        m.output(stem + suffix, p);
      }
    }
  }
  m["metrics"] = metrics_json(report);
  m.timing("total", seconds_since(t0));
  m.write(out);
  log.info("test rel_l2 " + format_double(report.aggregate.rel_l2) + ", wrote " + metrics.string());
  return kExitOk;
}

int cmd_dmd(const Globals& g, const std::string& dataset_path, long long sample) {
  const auto t0 = Clock::now();
  const pde::Dataset data = io::load_dataset(dataset_path);
  const config::ExperimentConfig cfg = experiment_for(g, data);
  if (sample < 0 || static_cast<std::size_t>(sample) >= data.samples.size()) {
    throw InvalidInput("sample index " + std::to_string(sample) + " is outside [0, " +
                       std::to_string(data.samples.size()) + ")");
  }
  const Log log(g.quiet);
  const fs::path out = prepare_out(cfg);
  const dmd::DmdDecomposition& dec = data.samples[sample].dmd;
  const auto n = dec.modes.rows();

  const fs::path path = out / ("dmd_sample_" + std::to_string(sample) + ".csv");
  write_text(path, [&](std::ostream& os) {
    os << "mode,eig_re,eig_im,eig_abs,amp_re,amp_im";
    for (Eigen::Index i = 0; i < n; ++i) os << ",phi_re_" << i;
    for (Eigen::Index i = 0; i < n; ++i) os << ",phi_im_" << i;
    os << '\n';
    for (int k : dmd::branch_order(dec)) {
      const Complex lam = dec.eigenvalues(k), b = dec.amplitudes(k);
      os << k << ',' << format_double(lam.real()) << ',' << format_double(lam.imag()) << ','
         << format_double(std::abs(lam)) << ',' << format_double(b.real()) << ',' << format_double(b.imag());
      for (Eigen::Index i = 0; i < n; ++i) os << ',' << format_double(dec.modes(i, k).real());
      for (Eigen::Index i = 0; i < n; ++i) os << ',' << format_double(dec.modes(i, k).imag());
      os << '\n';
    }
  });

  Manifest m("dmd");
  m.set_config(cfg);
  m["sample"] = sample;
  m.input("dataset", dataset_path);
  m.output("modes", path);
  m.timing("total", seconds_since(t0));
  m.write(out);
  log.info("rank " + std::to_string(dec.rank) + ", wrote " + path.string());
  return kExitOk;
}

int cmd_compare(const Globals& g, const std::string& dataset_path) {
  const auto t0 = Clock::now();
  const pde::Dataset data = io::load_dataset(dataset_path);
  const config::ExperimentConfig cfg = experiment_for(g, data);
  const Log log(g.quiet);
  const fs::path out = prepare_out(cfg);

  const train::TrainResult with = run_training(cfg, data, false, log, "[dmdno] ");
  const double with_s = seconds_since(t0);
  const train::TrainResult without = run_training(cfg, data, true, log, "[deeponet] ");
  const double without_s = seconds_since(t0) - with_s;
  if (with.history.size() != without.history.size()) throw NumericalError("loss histories differ in length");

  const fs::path path = out / "compare.csv";
  write_text(path, [&](std::ostream& os) {
    os << "epoch,dmdno_train,dmdno_test,deeponet_train,deeponet_test\n";
    for (std::size_t i = 0; i < with.history.size(); ++i) {
      const auto& a = with.history[i];
      const auto& b = without.history[i];
      os << a.epoch << ',' << format_double(a.train_loss) << ',' << format_double(a.test_loss) << ','
         << format_double(b.train_loss) << ',' << format_double(b.test_loss) << '\n';
    }
  });

  Manifest m("compare");
  m.set_config(cfg);
  m.input("dataset", dataset_path);
  m.output("compare", path);
  m["loss_history"] = Json{{"dmdno", history_json(with.history)}, {"deeponet", history_json(without.history)}};
  m.timing("train_dmdno", with_s);
  m.timing("train_deeponet", without_s);
  m.timing("total", seconds_since(t0));
  m.write(out);
  log.info("wrote " + path.string());
  return kExitOk;
}

int cmd_check_bound(const Globals& g, const std::string& checkpoint_path, const std::string& dataset_path,
                    std::size_t trials, std::optional<int> rank) {
  const auto t0 = Clock::now();
  const pde::Dataset data = io::load_dataset(dataset_path);
  const config::ExperimentConfig cfg = experiment_for(g, data);
  const io::Checkpoint ck = load_compatible(checkpoint_path, data);
  const Log log(g.quiet);
  const fs::path out = prepare_out(cfg);

  train::BoundConfig bc;
  bc.rank = rank.value_or(cfg.bound_rank);
  bc.trials = trials;
  bc.seed = cfg.seed;
  const train::Split split = train::split_samples(data.samples.size(), cfg.train.train_fraction, cfg.train.seed);
  const train::BoundReport report = train::check_bound(ck.spec, ck.params, data, split.test, bc);

  const fs::path path = out / "bound.csv";
  write_text(path, [&](std::ostream& os) { train::write_bound_csv(os, report); });

  Manifest m("check-bound");
  m.set_config(cfg);
  m.input("dataset", dataset_path);
  m.input("checkpoint", checkpoint_path);
  m.output("bound", path);
  m["rank"] = bc.rank;
  m["trials"] = report.trials.size();
  m["violations"] = report.violations;
  m.timing("total", seconds_since(t0));
  m.write(out);
  std::cout << "bound check: rank " << bc.rank << ", " << report.trials.size() << " trials, "
            << report.violations << " violations\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DMD-enhanced neural operator experiments"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Experiment config (JSON)");
  app.add_option("--out", g.out_dir, "Output directory (overrides the config)");
  app.add_option("--seed", g.seed, "Seed for generation, splitting and training (overrides the config)");
  app.add_flag("--quiet", g.quiet, "Only print warnings and errors");

  std::string equation, dataset, checkpoint;
  std::optional<int> grids, rank;
  long long sample = 0;
  std::size_t trials = 100;

  auto* gen = app.add_subcommand("generate", "Generate a dataset");
  gen->add_option("--equation", equation, "laplace, heat or burgers (defaults when no --config)");

  auto* tr = app.add_subcommand("train", "Train an operator on a dataset");
  tr->add_option("--dataset", dataset, "Dataset file")->required();

  auto* ev = app.add_subcommand("eval", "Test-split metrics and field grids");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ev->add_option("--dataset", dataset, "Dataset file")->required();
  ev->add_option("--grids", grids, "Number of test samples exported as grids");

  auto* dm = app.add_subcommand("dmd", "DMD eigenvalues, amplitudes and modes of one sample");
  dm->add_option("--dataset", dataset, "Dataset file")->required();
  dm->add_option("--sample", sample, "Sample index")->required();

  auto* cmp = app.add_subcommand("compare", "Train with and without DMD branches");
  cmp->add_option("--dataset", dataset, "Dataset file")->required();

  auto* cb = app.add_subcommand("check-bound", "Audit the truncation error bound");
  cb->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  cb->add_option("--dataset", dataset, "Dataset file")->required();
  cb->add_option("--trials", trials, "Number of truncation trials");
  cb->add_option("--rank", rank, "Truncation rank (overrides the config)");

  for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (gen->parsed()) return cmd_generate(g, equation);
    if (tr->parsed()) return cmd_train(g, dataset);
    if (ev->parsed()) return cmd_eval(g, checkpoint, dataset, grids);
    if (dm->parsed()) return cmd_dmd(g, dataset, sample);
    if (cmp->parsed()) return cmd_compare(g, dataset);
    if (cb->parsed()) return cmd_check_bound(g, checkpoint, dataset, trials, rank);
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const DegenerateInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const FormatError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  }
  return kExitValidation;
}
