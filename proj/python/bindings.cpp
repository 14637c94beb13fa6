#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>

#include "dmdno/bound.hpp"
#include "dmdno/config.hpp"
#include "dmdno/dmd.hpp"
#include "dmdno/error.hpp"
#include "dmdno/io.hpp"
#include "dmdno/pde.hpp"
#include "dmdno/train.hpp"

namespace py = pybind11;
using namespace dmdno;

namespace {

// Python holds datasets behind shared_ptr: a Problem keeps spans into it.
using DatasetPtr = std::shared_ptr<pde::Dataset>;

struct Model {
  model::OperatorSpec spec;
  model::ModelParams params;
};

config::ExperimentConfig experiment_from(const std::string& json_text) {
  config::ExperimentConfig cfg = config::experiment_from_json(config::parse_json(json_text, "config"));
  config::validate(cfg);
  return cfg;
}

const pde::Sample& sample_at(const pde::Dataset& d, std::size_t i) {
  if (i >= d.samples.size()) throw InvalidInput("sample index out of range");
  return d.samples[i];
}

py::dict metrics_dict(const train::MetricsReport& r) {
  auto one = [](const train::ChannelMetrics& m) {
    py::dict d;
    d["mse"] = m.mse;
    d[m.rel_is_absolute ? "abs_l2" : "rel_l2"] = m.rel_l2;
    d["max_abs"] = m.max_abs;
    return d;
  };
  py::list channels;
  for (const auto& c : r.channels) channels.append(one(c));
  py::dict out = one(r.aggregate);
  out["channels"] = channels;
  return out;
}

py::list history_list(const train::LossHistory& h) {
  py::list out;
  for (const auto& r : h) out.append(py::make_tuple(r.epoch, r.train_loss, r.test_loss));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "DMD-enhanced neural operator: solvers, DMD, model, training";

  // Registered translators run before pybind11's defaults, so InvalidInput
  // is not reported as a plain ValueError.
  py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);
  py::register_exception<DegenerateInput>(m, "DegenerateInput", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  // --- configuration --------------------------------------------------------

  m.def(
      "default_config",
      [](const std::string& equation) {
        return config::to_json(config::default_experiment(pde::equation_from_string(equation))).dump();
      },
      py::arg("equation"), "Default experiment config for an equation, as JSON text.");
  m.def(
      "normalize_config", [](const std::string& text) { return config::to_json(experiment_from(text)).dump(); },
      py::arg("config_json"), "Validates a config and fills in every default.");

  // --- solvers --------------------------------------------------------------

  m.def("cfl_number", &pde::cfl_number, py::arg("alpha"), py::arg("dt"), py::arg("dx"), py::arg("dy"));
  m.def("laplace_step", [](const Matrix& f) { return pde::laplace_step(f, pde::boundary_mask(f.rows(), f.cols())); },
        py::arg("field"), "One Jacobi sweep with the boundary held fixed.");
  m.def(
      "heat_step",
      [](const Matrix& f, double alpha, double dt, double dx, double dy) {
        return pde::heat_step(f, alpha, dt, dx, dy, pde::boundary_mask(f.rows(), f.cols()));
      },
      py::arg("field"), py::arg("alpha"), py::arg("dt"), py::arg("dx"), py::arg("dy"));
  m.def("burgers_step", &pde::burgers_step, py::arg("u"), py::arg("v"), py::arg("nu"), py::arg("dt"), py::arg("dx"),
        py::arg("dy"));

  // --- datasets -------------------------------------------------------------

  py::class_<pde::Dataset, DatasetPtr>(m, "Dataset")
      .def_property_readonly("equation", [](const pde::Dataset& d) { return std::string(pde::to_string(d.equation())); })
      .def_property_readonly("n_samples", [](const pde::Dataset& d) { return d.samples.size(); })
      .def_property_readonly("channels", &pde::Dataset::channels)
      .def_property_readonly("grid_shape", [](const pde::Dataset& d) { return py::make_tuple(d.grid().nx, d.grid().ny); })
      .def_property_readonly("params_json", [](const pde::Dataset& d) { return config::to_json(d.params).dump(); })
      .def("condition", [](const pde::Dataset& d, std::size_t i) { return sample_at(d, i).condition; }, py::arg("i"))
      .def("trajectory", [](const pde::Dataset& d, std::size_t i) { return sample_at(d, i).trajectory; }, py::arg("i"),
           "Snapshots as columns; node (i, j) is row i * ny + j.")
      .def("target",
           [](const pde::Dataset& d, std::size_t i) {
             // Stored channel after channel; returned like Model.predict.
             const Vector& t = sample_at(d, i).target;
             return Matrix(Eigen::Map<const Matrix>(t.data(), d.nodes(), d.channels()));
           },
           py::arg("i"),
           "Final state, points x channels.")
      .def("dmd", [](const pde::Dataset& d, std::size_t i) { return sample_at(d, i).dmd; }, py::arg("i"))
      .def("save", [](const pde::Dataset& d, const std::filesystem::path& p) { io::save_dataset(d, p); }, py::arg("path"))
      .def_static("load", [](const std::filesystem::path& p) { return std::make_shared<pde::Dataset>(io::load_dataset(p)); },
                  py::arg("path"));

  m.def(
      "generate",
      [](const std::string& text, const std::function<void(const std::string&)>& warn) {
        const config::ExperimentConfig cfg = experiment_from(text);
        pde::WarningSink sink;
        if (warn) sink = warn;
        return std::make_shared<pde::Dataset>(pde::generate(cfg.generator, sink));
      },
      py::arg("config_json"), py::arg("warn") = nullptr,
      "Generates the dataset described by an experiment config. `warn` receives solver warnings.");

  // --- DMD ------------------------------------------------------------------

  py::class_<dmd::DmdDecomposition>(m, "Decomposition")
      .def_readonly("modes", &dmd::DmdDecomposition::modes)
      .def_readonly("eigenvalues", &dmd::DmdDecomposition::eigenvalues)
      .def_readonly("amplitudes", &dmd::DmdDecomposition::amplitudes)
      .def_readonly("sigmas", &dmd::DmdDecomposition::sigmas)
      .def_readonly("rank", &dmd::DmdDecomposition::rank)
      .def("reconstruct", [](const dmd::DmdDecomposition& d, double t) { return dmd::reconstruct(d, t); }, py::arg("t"))
      .def("branch_order", &dmd::branch_order)
      .def(
          "encode",
          [](const dmd::DmdDecomposition& d, const std::string& encoding, double horizon) {
            const dmd::BranchEncoding e = dmd::encode_branch_inputs(d, config::dynamics_encoding_from_string(encoding), horizon);
            return py::make_tuple(e.mode_vec, e.dyn_vec);
          },
          py::arg("encoding") = "eig_amp", py::arg("horizon") = 0.0, "Network inputs (mode_vec, dyn_vec).");

  m.def(
      "dmd",
      [](const Matrix& snapshots, std::optional<int> rank, double energy_threshold, double sigma_floor) {
        dmd::DmdConfig cfg;
        cfg.rank = rank;
        cfg.energy_threshold = energy_threshold;
        cfg.sigma_floor = sigma_floor;
        return dmd::decompose(snapshots, cfg);
      },
      py::arg("snapshots"), py::arg("rank") = std::nullopt, py::arg("energy_threshold") = 0.95,
      py::arg("sigma_floor") = 1e-12, "Exact DMD of snapshots stored as columns; rank=None uses the energy threshold.");

  // --- model ----------------------------------------------------------------

  py::class_<Model>(m, "Model")
      .def_property_readonly("spec_json", [](const Model& md) { return config::to_json(md.spec).dump(); })
      .def_property_readonly("theta", [](const Model& md) { return md.params.theta; })
      .def_property_readonly("uses_dmd", [](const Model& md) { return md.spec.dmd_branches_enabled; })
      .def("save", [](const Model& md, const std::filesystem::path& p) { io::save_checkpoint(md.spec, md.params, p); },
           py::arg("path"))
      .def_static("load",
                  [](const std::filesystem::path& p) {
                    io::Checkpoint ck = io::load_checkpoint(p);
                    return Model{std::move(ck.spec), std::move(ck.params)};
                  },
                  py::arg("path"))
      .def(
          "predict",
          [](const Model& md, const DatasetPtr& d, std::size_t sample) {
            const train::Problem problem = train::Problem::from_dataset(*d, md.spec);
            if (sample >= problem.samples()) throw InvalidInput("sample index out of range");
            return train::predict_sample(md.spec, md.params, problem, sample);
          },
          py::arg("dataset"), py::arg("sample"), "Prediction at every grid point, points x channels.")
      .def(
          "evaluate",
          [](const Model& md, const DatasetPtr& d, std::vector<std::size_t> samples) {
            const train::Problem problem = train::Problem::from_dataset(*d, md.spec);
            for (std::size_t s : samples) {
              if (s >= problem.samples()) throw InvalidInput("sample index out of range");
            }
            return metrics_dict(train::evaluate(md.spec, md.params, problem, samples));
          },
          py::arg("dataset"), py::arg("samples"))
      .def(
          "check_bound",
          [](const Model& md, const DatasetPtr& d, std::vector<std::size_t> samples, int rank, std::size_t trials,
             std::uint64_t seed) {
            train::BoundConfig bc;
            bc.rank = rank;
            bc.trials = trials;
            bc.seed = seed;
            const train::BoundReport r = train::check_bound(md.spec, md.params, *d, samples, bc);
            py::list rows;
            for (const auto& t : r.trials) {
              py::dict row;
              row["sample"] = t.sample;
              row["epsilon"] = t.epsilon;
              row["lhs"] = t.lhs;
              row["lipschitz"] = t.lipschitz;
              row["bound"] = t.bound;
              row["satisfied"] = t.satisfied;
              rows.append(row);
            }
            py::dict out;
            out["rank"] = r.rank;
            out["violations"] = r.violations;
            out["trials"] = rows;
            return out;
          },
          py::arg("dataset"), py::arg("samples"), py::arg("rank") = 5, py::arg("trials") = 100, py::arg("seed") = 0);

  // --- training -------------------------------------------------------------

  m.def("split_samples", [](std::size_t n, double fraction, std::uint64_t seed) {
    const train::Split s = train::split_samples(n, fraction, seed);
    return py::make_tuple(s.train, s.test);
  }, py::arg("n"), py::arg("train_fraction"), py::arg("seed"));

  m.def(
      "train",
      [](const DatasetPtr& d, const std::string& text, std::optional<bool> baseline,
         const std::function<void(int, double, double)>& progress) {
        const config::ExperimentConfig cfg = experiment_from(text);
        if (cfg.generator.equation != d->equation()) throw InvalidInput("config equation differs from the dataset's");
        const model::OperatorSpec spec = config::make_operator_spec(cfg.model, d->params, baseline.value_or(cfg.baseline));
        const train::Problem problem = train::Problem::from_dataset(*d, spec);
        train::ProgressFn fn;
        if (progress) fn = [&](const train::LossRecord& r) { progress(r.epoch, r.train_loss, r.test_loss); };
        train::TrainResult res = train::fit(problem, spec, cfg.train, fn);
        py::dict out;
        out["model"] = Model{std::move(res.spec), std::move(res.params)};
        out["history"] = history_list(res.history);
        out["train_samples"] = res.split.train;
        out["test_samples"] = res.split.test;
        return out;
      },
      py::arg("dataset"), py::arg("config_json"), py::arg("baseline") = std::nullopt, py::arg("progress") = nullptr,
      "Trains an operator. Returns {model, history [(epoch, train, test)], train_samples, test_samples}.");
}
