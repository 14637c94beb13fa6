#include "dmdno/config.hpp"

#include <set>
#include <string>

#include "dmdno/error.hpp"

namespace dmdno::config {

namespace {

/// Reads a JSON object key by key and rejects keys nobody asked for.
class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw InvalidInput(where() + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw InvalidInput(where(key) + " has the wrong type");
    }
  }

  void get_double(const char* key, double& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_number()) throw InvalidInput(where(key) + " must be a number");
    out = it->template get<double>();
  }

  template <typename T>
  void get_unsigned(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_number_unsigned()) throw InvalidInput(where(key) + " must be a non-negative integer");
    out = it->template get<T>();
  }

  void get_int(const char* key, int& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_number_integer()) throw InvalidInput(where(key) + " must be an integer");
    out = it->template get<int>();
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw InvalidInput("unknown field '" + where(it.key()) + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "document" : "'" + path_ + "'"; }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::vector<int> widths_from(const Json& j, const std::string& path) {
  if (!j.is_array()) throw InvalidInput("'" + path + "' must be an array of integers");
  std::vector<int> out;
  for (const Json& w : j) {
    if (!w.is_number_integer()) throw InvalidInput("'" + path + "' must be an array of integers");
    out.push_back(w.get<int>());
  }
  return out;
}

Json to_json(const model::MlpSpec& m) {
  return Json{{"widths", m.widths}, {"input_scale", m.input_scale}};
}

void from_json(const Json& j, model::MlpSpec& m, const std::string& path) {
  Reader r(j, path);
  if (const Json* w = r.child("widths")) m.widths = widths_from(*w, r.where("widths"));
  r.get_double("input_scale", m.input_scale);
  r.finish();
}

std::vector<int> hidden_from(Reader& r, const char* key, std::vector<int> current) {
  if (const Json* w = r.child(key)) return widths_from(*w, r.where(key));
  return current;
}

std::vector<int> with_ends(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

}  // namespace

std::string_view to_string(dmd::DynamicsEncoding e) {
  return e == dmd::DynamicsEncoding::kEvolved ? "evolved" : "eig_amp";
}

dmd::DynamicsEncoding dynamics_encoding_from_string(std::string_view name) {
  if (name == "eig_amp") return dmd::DynamicsEncoding::kEigAmp;
  if (name == "evolved") return dmd::DynamicsEncoding::kEvolved;
  throw InvalidInput("unknown dynamics encoding '" + std::string(name) + "'");
}

ModelConfig default_model_config(pde::Equation eq) {
  ModelConfig m;
  m.trunk_input_scale = 80.0;
  // The modes input is 2 * nodes * channels * rank wide; a narrow first
  // layer keeps its Adam and matmul cost close to the other branches.
  m.modes_hidden = {32, 32};
  if (eq == pde::Equation::kLaplace) {
    // eig_amp inputs of a converged Jacobi run are nearly constant across
    // samples; λ^steps * b separates them.
    m.dynamics_encoding = dmd::DynamicsEncoding::kEvolved;
    m.dynamics_horizon = 50.0;
  }
  if (eq == pde::Equation::kBurgers) m.modes_hidden = {16, 16};
  return m;
}

ExperimentConfig default_experiment(pde::Equation eq) {
  ExperimentConfig e;
  e.generator = pde::default_params(eq);
  e.model = default_model_config(eq);
  if (eq == pde::Equation::kLaplace) e.train.learning_rate = 3e-4;
  return e;
}

void apply_seed(ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.generator.seed = seed;
  cfg.train.seed = seed;
}

void validate(const ExperimentConfig& cfg) {
  pde::validate(cfg.generator);
  train::validate(cfg.train);
  if (cfg.eval_grids < 0) throw InvalidInput("eval_grids must be >= 0");
  if (cfg.bound_rank < 1) throw InvalidInput("bound_rank must be >= 1");
  if (cfg.output_dir.empty()) throw InvalidInput("output_dir must not be empty");
  model::validate(make_operator_spec(cfg.model, cfg.generator, cfg.baseline));
}

model::OperatorSpec make_operator_spec(const ModelConfig& m, const pde::GeneratorParams& gen,
                                       bool baseline) {
  if (!gen.dmd.rank) throw InvalidInput("operator inputs need a preset dmd rank");
  const int p = m.latent_p;
  const int rank = *gen.dmd.rank;
  const int channels = gen.equation == pde::Equation::kBurgers ? 2 : 1;
  const int state = gen.grid.nx * gen.grid.ny * channels;
  const auto cond = static_cast<int>(pde::condition_size(gen.equation, gen.grid));

  model::OperatorSpec s;
  s.latent_p = p;
  s.out_channels = channels;
  s.grid_nx = gen.grid.nx;
  s.grid_ny = gen.grid.ny;
  s.trunk.widths = with_ends(2, m.trunk_hidden, p);
  s.trunk.input_scale = m.trunk_input_scale;
  s.function_branches = {model::MlpSpec{with_ends(cond, m.function_hidden, p)}};
  s.condition_slices = {{0, static_cast<std::size_t>(cond)}};
  s.modes_branch.widths = with_ends(2 * state * rank, m.modes_hidden, p);
  s.dynamics_branch.widths = with_ends(4 * rank, m.dynamics_hidden, p);
  s.dmd_branches_enabled = !baseline;
  s.dynamics_encoding = m.dynamics_encoding;
  s.dynamics_horizon = m.dynamics_horizon;
  return s;
}

// --- generator params -------------------------------------------------------

Json to_json(const pde::GeneratorParams& p) {
  Json dmd{{"rank", p.dmd.rank ? Json(*p.dmd.rank) : Json(nullptr)},
           {"energy_threshold", p.dmd.energy_threshold},
           {"sigma_floor", p.dmd.sigma_floor}};
  return Json{{"equation", std::string(pde::to_string(p.equation))},
              {"n_samples", p.n_samples},
              {"grid", Json{{"nx", p.grid.nx}, {"ny", p.grid.ny}, {"dx", p.grid.dx}, {"dy", p.grid.dy}}},
              {"steps", p.steps},
              {"value_range", p.value_range},
              {"alpha", p.alpha},
              {"dt", p.dt},
              {"interior_value", p.interior_value},
              {"nu_min", p.nu_min},
              {"nu_max", p.nu_max},
              {"dmd", dmd},
              {"seed", p.seed}};
}

void from_json(const Json& j, pde::GeneratorParams& p) {
  Reader r(j, "generator");
  if (const Json* e = r.child("equation")) {
    if (!e->is_string()) throw InvalidInput("'generator.equation' must be a string");
    p.equation = pde::equation_from_string(e->get<std::string>());
  }
  r.get_unsigned("n_samples", p.n_samples);
  if (const Json* g = r.child("grid")) {
    Reader gr(*g, "generator.grid");
    gr.get_int("nx", p.grid.nx);
    gr.get_int("ny", p.grid.ny);
    gr.get_double("dx", p.grid.dx);
    gr.get_double("dy", p.grid.dy);
    gr.finish();
  }
  r.get_int("steps", p.steps);
  r.get_double("value_range", p.value_range);
  r.get_double("alpha", p.alpha);
  r.get_double("dt", p.dt);
  r.get_double("interior_value", p.interior_value);
  r.get_double("nu_min", p.nu_min);
  r.get_double("nu_max", p.nu_max);
  if (const Json* d = r.child("dmd")) {
    Reader dr(*d, "generator.dmd");
    if (const Json* rank = dr.child("rank")) {
      if (rank->is_null()) {
        p.dmd.rank.reset();
      } else if (rank->is_number_integer()) {
        p.dmd.rank = rank->get<int>();
      } else {
        throw InvalidInput("'generator.dmd.rank' must be an integer or null");
      }
    }
    dr.get_double("energy_threshold", p.dmd.energy_threshold);
    dr.get_double("sigma_floor", p.dmd.sigma_floor);
    dr.finish();
  }
  r.get_unsigned("seed", p.seed);
  r.finish();
}

// --- operator spec ----------------------------------------------------------

Json to_json(const model::OperatorSpec& s) {
  Json branches = Json::array();
  for (const auto& b : s.function_branches) branches.push_back(to_json(b));
  Json slices = Json::array();
  for (const auto& c : s.condition_slices) slices.push_back(Json{{"offset", c.offset}, {"length", c.length}});
  return Json{{"latent_p", s.latent_p},
              {"out_channels", s.out_channels},
              {"dmd_branches_enabled", s.dmd_branches_enabled},
              {"output_scale", s.output_scale},
              {"grid_nx", s.grid_nx},
              {"grid_ny", s.grid_ny},
              {"dynamics_encoding", std::string(to_string(s.dynamics_encoding))},
              {"dynamics_horizon", s.dynamics_horizon},
              {"trunk", to_json(s.trunk)},
              {"function_branches", branches},
              {"condition_slices", slices},
              {"modes_branch", to_json(s.modes_branch)},
              {"dynamics_branch", to_json(s.dynamics_branch)}};
}

void from_json(const Json& j, model::OperatorSpec& s) {
  Reader r(j, "operator");
  r.get_int("latent_p", s.latent_p);
  r.get_int("out_channels", s.out_channels);
  r.get("dmd_branches_enabled", s.dmd_branches_enabled);
  r.get_double("output_scale", s.output_scale);
  r.get_int("grid_nx", s.grid_nx);
  r.get_int("grid_ny", s.grid_ny);
  if (const Json* e = r.child("dynamics_encoding")) {
    if (!e->is_string()) throw InvalidInput("'operator.dynamics_encoding' must be a string");
    s.dynamics_encoding = dynamics_encoding_from_string(e->get<std::string>());
  }
  r.get_double("dynamics_horizon", s.dynamics_horizon);
  if (const Json* t = r.child("trunk")) from_json(*t, s.trunk, "operator.trunk");
  if (const Json* fb = r.child("function_branches")) {
    if (!fb->is_array()) throw InvalidInput("'operator.function_branches' must be an array");
    s.function_branches.clear();
    for (std::size_t k = 0; k < fb->size(); ++k) {
      model::MlpSpec m;
      from_json((*fb)[k], m, "operator.function_branches[" + std::to_string(k) + "]");
      s.function_branches.push_back(std::move(m));
    }
  }
  if (const Json* cs = r.child("condition_slices")) {
    if (!cs->is_array()) throw InvalidInput("'operator.condition_slices' must be an array");
    s.condition_slices.clear();
    for (std::size_t k = 0; k < cs->size(); ++k) {
      model::ConditionSlice c;
      Reader sr((*cs)[k], "operator.condition_slices[" + std::to_string(k) + "]");
      sr.get_unsigned("offset", c.offset);
      sr.get_unsigned("length", c.length);
      sr.finish();
      s.condition_slices.push_back(c);
    }
  }
  if (const Json* m = r.child("modes_branch")) from_json(*m, s.modes_branch, "operator.modes_branch");
  if (const Json* d = r.child("dynamics_branch")) from_json(*d, s.dynamics_branch, "operator.dynamics_branch");
  r.finish();
}

// --- training config --------------------------------------------------------

Json to_json(const train::TrainConfig& c) {
  return Json{{"epochs", c.epochs},
              {"learning_rate", c.learning_rate},
              {"lambda", c.lambda},
              {"batch_size", c.batch_size},
              {"optimizer", std::string(train::to_string(c.optimizer))},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"train_fraction", c.train_fraction},
              {"eval_every", c.eval_every},
              {"auto_scale", c.auto_scale}};
}

void from_json(const Json& j, train::TrainConfig& c) {
  Reader r(j, "train");
  r.get_int("epochs", c.epochs);
  r.get_double("learning_rate", c.learning_rate);
  r.get_double("lambda", c.lambda);
  r.get_unsigned("batch_size", c.batch_size);
  if (const Json* o = r.child("optimizer")) {
    if (!o->is_string()) throw InvalidInput("'train.optimizer' must be a string");
    c.optimizer = train::optimizer_from_string(o->get<std::string>());
  }
  r.get_double("beta1", c.beta1);
  r.get_double("beta2", c.beta2);
  r.get_double("adam_eps", c.adam_eps);
  r.get_double("train_fraction", c.train_fraction);
  r.get_int("eval_every", c.eval_every);
  r.get("auto_scale", c.auto_scale);
  r.finish();
}

// --- model config -----------------------------------------------------------

Json to_json(const ModelConfig& m) {
  return Json{{"latent_p", m.latent_p},
              {"trunk_hidden", m.trunk_hidden},
              {"function_hidden", m.function_hidden},
              {"modes_hidden", m.modes_hidden},
              {"dynamics_hidden", m.dynamics_hidden},
              {"trunk_input_scale", m.trunk_input_scale},
              {"dynamics_encoding", std::string(to_string(m.dynamics_encoding))},
              {"dynamics_horizon", m.dynamics_horizon}};
}

void from_json(const Json& j, ModelConfig& m) {
  Reader r(j, "model");
  r.get_int("latent_p", m.latent_p);
  m.trunk_hidden = hidden_from(r, "trunk_hidden", m.trunk_hidden);
  m.function_hidden = hidden_from(r, "function_hidden", m.function_hidden);
  m.modes_hidden = hidden_from(r, "modes_hidden", m.modes_hidden);
  m.dynamics_hidden = hidden_from(r, "dynamics_hidden", m.dynamics_hidden);
  r.get_double("trunk_input_scale", m.trunk_input_scale);
  if (const Json* e = r.child("dynamics_encoding")) {
    if (!e->is_string()) throw InvalidInput("'model.dynamics_encoding' must be a string");
    m.dynamics_encoding = dynamics_encoding_from_string(e->get<std::string>());
  }
  r.get_double("dynamics_horizon", m.dynamics_horizon);
  r.finish();
}

// --- experiment -------------------------------------------------------------

Json to_json(const ExperimentConfig& e) {
  Json gen = to_json(e.generator);
  gen.erase("equation");
  gen.erase("seed");
  return Json{{"equation", std::string(pde::to_string(e.generator.equation))},
              {"seed", e.seed},
              {"output_dir", e.output_dir},
              {"baseline", e.baseline},
              {"eval_grids", e.eval_grids},
              {"bound_rank", e.bound_rank},
              {"generator", gen},
              {"model", to_json(e.model)},
              {"train", to_json(e.train)}};
}

ExperimentConfig experiment_from_json(const Json& j) {
  Reader r(j, "");
  const Json* eq = r.child("equation");
  if (eq == nullptr || !eq->is_string()) throw InvalidInput("config must name its 'equation' as a string");
  ExperimentConfig e = default_experiment(pde::equation_from_string(eq->get<std::string>()));
  std::uint64_t seed = 0;
  r.get_unsigned("seed", seed);
  r.get("output_dir", e.output_dir);
  r.get("baseline", e.baseline);
  r.get_int("eval_grids", e.eval_grids);
  r.get_int("bound_rank", e.bound_rank);
  if (const Json* g = r.child("generator")) {
    if (g->is_object() && (g->contains("equation") || g->contains("seed"))) {
      throw InvalidInput("'generator' takes its equation and seed from the top level");
    }
    from_json(*g, e.generator);
  }
  if (const Json* m = r.child("model")) from_json(*m, e.model);
  if (const Json* t = r.child("train")) {
    if (t->is_object() && t->contains("seed")) throw InvalidInput("'train' takes its seed from the top level");
    from_json(*t, e.train);
  }
  r.finish();
  apply_seed(e, seed);
  return e;
}

Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& err) {
    throw InvalidInput(what + ": invalid JSON (" + err.what() + ")");
  }
}

}  // namespace dmdno::config
