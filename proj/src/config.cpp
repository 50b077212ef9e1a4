#include "geoflow/cli/config.hpp"

#include "geoflow/data/gmm.hpp"
#include "geoflow/metrics/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace geoflow::cli {

using nlohmann::json;

PosteriorMethods parse_methods(const std::string& s) {
  if (s == "euclidean") return PosteriorMethods::euclidean;
  if (s == "riemannian") return PosteriorMethods::riemannian;
  if (s == "both") return PosteriorMethods::both;
  throw ConfigError("unknown posterior method '" + s + "' (expected euclidean, riemannian or both)");
}

std::string to_string(PosteriorMethods m) {
  switch (m) {
    case PosteriorMethods::euclidean: return "euclidean";
    case PosteriorMethods::riemannian: return "riemannian";
    case PosteriorMethods::both: return "both";
  }
  return "both";
}

HessianMode parse_hessian_mode(const std::string& s) {
  if (s == "auto") return HessianMode::automatic;
  if (s == "dense") return HessianMode::dense;
  if (s == "lanczos") return HessianMode::lanczos;
  throw ConfigError("unknown hessian mode '" + s + "' (expected auto, dense or lanczos)");
}

std::string to_string(HessianMode m) {
  switch (m) {
    case HessianMode::automatic: return "auto";
    case HessianMode::dense: return "dense";
    case HessianMode::lanczos: return "lanczos";
  }
  return "auto";
}

Profile parse_profile(const std::string& s) {
  if (s == "smoke") return Profile::smoke;
  if (s == "full") return Profile::full;
  throw ConfigError("unknown profile '" + s + "' (expected smoke or full)");
}

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  train.seed = s;
}

void RunConfig::apply_profile(Profile p) {
  if (p != Profile::smoke) return;
  posterior.samples = std::min<Index>(posterior.samples, 50);
  base_samples = std::min<Index>(base_samples, 200);
}

std::vector<double> RunConfig::c_grid() const {
  return evaluation.c_grid.empty() ? metrics::default_c_grid() : evaluation.c_grid;
}

void RunConfig::validate() const {
  if (schema_version != kSchemaVersion) {
    std::ostringstream msg;
    msg << "unsupported schema_version " << schema_version << " (this build reads " << kSchemaVersion << ")";
    throw ConfigError(msg.str());
  }
  const data::FixtureDataset fx = data::fixture(fixture);
  if (model.input_dim != fx.dim()) throw ConfigError("model input_dim does not match the fixture dimension");
  model.validate();
  if (n_pairs < 1) throw ConfigError("data.n_pairs must be >= 1");
  train.validate();
  generation.validate();
  geodesic.validate();
  if (posterior.lanczos_k < 1) throw ConfigError("posterior.lanczos_k must be >= 1");
  if (posterior.samples < 1) throw ConfigError("posterior.samples must be >= 1");
  if (posterior.eta.empty()) throw ConfigError("posterior.eta must list at least one scale");
  for (double e : posterior.eta)
    if (!(e >= 0.0) || !std::isfinite(e)) throw ConfigError("posterior.eta entries must be finite and >= 0");
  if (posterior.velocity_modes.empty()) throw ConfigError("posterior.velocity_modes must not be empty");
  models::param_slice_mask(model, posterior.mask);
  if (base_samples < 1) throw ConfigError("generation.base_samples must be >= 1");
  const metrics::MemorisationConfig mc{0.5, evaluation.k_neighbours};
  mc.validate();
  const auto grid = c_grid();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0.0 && grid[i] < 1.0)) throw ConfigError("evaluation.c_grid entries must lie in (0, 1)");
    if (i && !(grid[i] > grid[i - 1])) throw ConfigError("evaluation.c_grid must be strictly ascending");
  }
  if (evaluation.kl_repetitions < 2) throw ConfigError("evaluation.kl_repetitions must be >= 2");
  if (evaluation.kl_subset < 2) throw ConfigError("evaluation.kl_subset must be >= 2");
  if (evaluation.endpoint_points < 1) throw ConfigError("evaluation.endpoint_points must be >= 1");
  if (!(evaluation.grid_hi > evaluation.grid_lo)) throw ConfigError("evaluation grid needs grid_hi > grid_lo");
  if (evaluation.grid_x < 2 || evaluation.grid_t < 2) throw ConfigError("evaluation grids need >= 2 points");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

namespace {

class Reader {
 public:
  Reader(const std::string& text, std::string source) : text_(text), source_(std::move(source)) {}

  [[noreturn]] void fail(const std::string& path, const std::string& key, const std::string& what) const {
    std::ostringstream msg;
    msg << source_;
    const int line = line_of(key);
    if (line > 0) msg << ":" << line;
    msg << ": " << (path.empty() ? key : path + "." + key) << ": " << what;
    throw ConfigError(msg.str());
  }

  void only(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) const {
    if (!obj.is_object()) fail("", path.empty() ? "<root>" : path, "expected an object");
    for (const auto& [key, value] : obj.items()) {
      const bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
      if (!ok) fail(path, key, "unknown key");
    }
  }

  template <typename T>
  void read(const json& obj, const std::string& path, const char* key, T& out) const {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      fail(path, key, "wrong type (got " + std::string(it->type_name()) + ")");
    }
  }

  template <typename T, typename Parse>
  void read_enum(const json& obj, const std::string& path, const char* key, T& out, Parse parse) const {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    if (!it->is_string()) fail(path, key, "expected a string");
    try {
      out = parse(it->get<std::string>());
    } catch (const ConfigError& e) {
      fail(path, key, e.what());
    }
  }

  const json* child(const json& obj, const std::string& path, const char* key) const {
    auto it = obj.find(key);
    if (it == obj.end()) return nullptr;
    if (!it->is_object()) fail(path, key, "expected an object");
    return &*it;
  }

 private:
  int line_of(const std::string& key) const {
    const std::size_t at = text_.find("\"" + key + "\"");
    if (at == std::string::npos) return 0;
    return 1 + static_cast<int>(std::count(text_.begin(), text_.begin() + static_cast<long>(at), '\n'));
  }

  const std::string& text_;
  std::string source_;
};

}  // namespace

RunConfig parse_config(const std::string& text, const std::string& source_name) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source_name + ": " + e.what());
  }
  const Reader r(text, source_name);
  r.only(doc, "", {"schema_version", "fixture", "model", "data", "train", "posterior", "generation", "geodesic",
                   "evaluation", "seed", "output_dir"});
  RunConfig cfg;
  if (!doc.contains("schema_version")) r.fail("", "schema_version", "missing (required)");
  r.read(doc, "", "schema_version", cfg.schema_version);
  if (cfg.schema_version != kSchemaVersion) r.fail("", "schema_version", "unsupported version");
  r.read(doc, "", "fixture", cfg.fixture);
  try {
    cfg.model.input_dim = data::fixture(cfg.fixture).dim();
  } catch (const ConfigError& e) {
    r.fail("", "fixture", e.what());
  }
  if (cfg.model.input_dim > 1) cfg.model.hidden = {64, 64, 64};
  std::uint64_t seed = 0;
  r.read(doc, "", "seed", seed);
  cfg.set_seed(seed);
  r.read(doc, "", "output_dir", cfg.output_dir);

  if (const json* m = r.child(doc, "", "model")) {
    r.only(*m, "model", {"hidden", "activation", "time_encoding", "n_freqs"});
    r.read(*m, "model", "hidden", cfg.model.hidden);
    r.read_enum(*m, "model", "activation", cfg.model.activation, models::parse_activation);
    r.read_enum(*m, "model", "time_encoding", cfg.model.time_encoding, models::parse_time_encoding);
    r.read(*m, "model", "n_freqs", cfg.model.n_freqs);
  }
  if (const json* d = r.child(doc, "", "data")) {
    r.only(*d, "data", {"n_pairs", "pairing"});
    r.read(*d, "data", "n_pairs", cfg.n_pairs);
    r.read_enum(*d, "data", "pairing", cfg.pairing, flowmatch::parse_pairing);
  }
  if (const json* t = r.child(doc, "", "train")) {
    r.only(*t, "train", {"optimiser", "learning_rate", "epochs", "loss_tolerance", "log_every",
                         "gradient_tolerance", "refine_epochs"});
    r.read_enum(*t, "train", "optimiser", cfg.train.optimiser, flowmatch::parse_optimiser);
    r.read(*t, "train", "learning_rate", cfg.train.learning_rate);
    r.read(*t, "train", "epochs", cfg.train.epochs);
    r.read(*t, "train", "loss_tolerance", cfg.train.loss_tolerance);
    r.read(*t, "train", "log_every", cfg.train.log_every);
    r.read(*t, "train", "gradient_tolerance", cfg.train.gradient_tolerance);
    r.read(*t, "train", "refine_epochs", cfg.train.refine_epochs);
  }
  if (const json* p = r.child(doc, "", "posterior")) {
    r.only(*p, "posterior", {"methods", "hessian", "lanczos_k", "dense_limit", "mask", "velocity_modes", "eta",
                             "samples", "exclude_failed"});
    r.read_enum(*p, "posterior", "methods", cfg.posterior.methods, parse_methods);
    r.read_enum(*p, "posterior", "hessian", cfg.posterior.hessian, parse_hessian_mode);
    r.read(*p, "posterior", "lanczos_k", cfg.posterior.lanczos_k);
    r.read(*p, "posterior", "dense_limit", cfg.posterior.dense_limit);
    r.read(*p, "posterior", "mask", cfg.posterior.mask);
    if (p->contains("velocity_modes")) {
      std::vector<std::string> names;
      r.read(*p, "posterior", "velocity_modes", names);
      cfg.posterior.velocity_modes.clear();
      for (const auto& n : names) {
        try {
          cfg.posterior.velocity_modes.push_back(laplace::parse_velocity_mode(n));
        } catch (const ConfigError& e) {
          r.fail("posterior", "velocity_modes", e.what());
        }
      }
    }
    r.read(*p, "posterior", "eta", cfg.posterior.eta);
    r.read(*p, "posterior", "samples", cfg.posterior.samples);
    r.read(*p, "posterior", "exclude_failed", cfg.posterior.exclude_failed);
  }
  if (const json* g = r.child(doc, "", "generation")) {
    r.only(*g, "generation", {"n_steps", "base_samples"});
    r.read(*g, "generation", "n_steps", cfg.generation.n_steps);
    r.read(*g, "generation", "base_samples", cfg.base_samples);
  }
  if (const json* g = r.child(doc, "", "geodesic")) {
    r.only(*g, "geodesic", {"integrator", "rel_tol", "abs_tol", "max_steps", "t_end", "wall_clock_budget_s",
                            "fixed_steps"});
    r.read_enum(*g, "geodesic", "integrator", cfg.geodesic.integrator, geodesic::parse_integrator);
    r.read(*g, "geodesic", "rel_tol", cfg.geodesic.rel_tol);
    r.read(*g, "geodesic", "abs_tol", cfg.geodesic.abs_tol);
    r.read(*g, "geodesic", "max_steps", cfg.geodesic.max_steps);
    r.read(*g, "geodesic", "t_end", cfg.geodesic.t_end);
    r.read(*g, "geodesic", "wall_clock_budget_s", cfg.geodesic.wall_clock_budget_s);
    r.read(*g, "geodesic", "fixed_steps", cfg.geodesic.fixed_steps);
  }
  if (const json* e = r.child(doc, "", "evaluation")) {
    r.only(*e, "evaluation", {"c_grid", "k_neighbours", "kl_repetitions", "kl_subset", "endpoint_points", "grid_lo",
                              "grid_hi", "grid_x", "grid_t", "wasserstein"});
    r.read(*e, "evaluation", "c_grid", cfg.evaluation.c_grid);
    r.read(*e, "evaluation", "k_neighbours", cfg.evaluation.k_neighbours);
    r.read(*e, "evaluation", "kl_repetitions", cfg.evaluation.kl_repetitions);
    r.read(*e, "evaluation", "kl_subset", cfg.evaluation.kl_subset);
    r.read(*e, "evaluation", "endpoint_points", cfg.evaluation.endpoint_points);
    r.read(*e, "evaluation", "grid_lo", cfg.evaluation.grid_lo);
    r.read(*e, "evaluation", "grid_hi", cfg.evaluation.grid_hi);
    r.read(*e, "evaluation", "grid_x", cfg.evaluation.grid_x);
    r.read(*e, "evaluation", "grid_t", cfg.evaluation.grid_t);
    r.read(*e, "evaluation", "wasserstein", cfg.evaluation.wasserstein);
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source_name + ": " + e.what());
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), path.string());
}

json to_json(const RunConfig& cfg) {
  json modes = json::array();
  for (auto m : cfg.posterior.velocity_modes) modes.push_back(laplace::to_string(m));
  return json{
      {"schema_version", cfg.schema_version},
      {"fixture", cfg.fixture},
      {"model",
       {{"hidden", cfg.model.hidden},
        {"activation", models::to_string(cfg.model.activation)},
        {"time_encoding", models::to_string(cfg.model.time_encoding)},
        {"n_freqs", cfg.model.n_freqs}}},
      {"data", {{"n_pairs", cfg.n_pairs}, {"pairing", flowmatch::to_string(cfg.pairing)}}},
      {"train",
       {{"optimiser", flowmatch::to_string(cfg.train.optimiser)},
        {"learning_rate", cfg.train.learning_rate},
        {"epochs", cfg.train.epochs},
        {"loss_tolerance", cfg.train.loss_tolerance},
        {"log_every", cfg.train.log_every},
        {"gradient_tolerance", cfg.train.gradient_tolerance},
        {"refine_epochs", cfg.train.refine_epochs}}},
      {"posterior",
       {{"methods", to_string(cfg.posterior.methods)},
        {"hessian", to_string(cfg.posterior.hessian)},
        {"lanczos_k", cfg.posterior.lanczos_k},
        {"dense_limit", cfg.posterior.dense_limit},
        {"mask", cfg.posterior.mask},
        {"velocity_modes", modes},
        {"eta", cfg.posterior.eta},
        {"samples", cfg.posterior.samples},
        {"exclude_failed", cfg.posterior.exclude_failed}}},
      {"generation", {{"n_steps", cfg.generation.n_steps}, {"base_samples", cfg.base_samples}}},
      {"geodesic",
       {{"integrator", geodesic::to_string(cfg.geodesic.integrator)},
        {"rel_tol", cfg.geodesic.rel_tol},
        {"abs_tol", cfg.geodesic.abs_tol},
        {"max_steps", cfg.geodesic.max_steps},
        {"t_end", cfg.geodesic.t_end},
        {"wall_clock_budget_s", cfg.geodesic.wall_clock_budget_s},
        {"fixed_steps", cfg.geodesic.fixed_steps}}},
      {"evaluation",
       {{"c_grid", cfg.c_grid()},
        {"k_neighbours", cfg.evaluation.k_neighbours},
        {"kl_repetitions", cfg.evaluation.kl_repetitions},
        {"kl_subset", cfg.evaluation.kl_subset},
        {"endpoint_points", cfg.evaluation.endpoint_points},
        {"grid_lo", cfg.evaluation.grid_lo},
        {"grid_hi", cfg.evaluation.grid_hi},
        {"grid_x", cfg.evaluation.grid_x},
        {"grid_t", cfg.evaluation.grid_t},
        {"wasserstein", cfg.evaluation.wasserstein}}},
      {"seed", cfg.seed},
      {"output_dir", cfg.output_dir},
  };
}

RunConfig study_config(const std::string& study, Profile profile) {
  RunConfig cfg;
  const bool smoke = profile == Profile::smoke;
  if (study == "1d") {
    cfg.fixture = "toy-1d";
    cfg.model.input_dim = 1;
    cfg.model.hidden = {64, 64};
    cfg.posterior.samples = smoke ? 50 : 1000;
    cfg.base_samples = smoke ? 200 : 1000;
    cfg.evaluation.wasserstein = false;
    cfg.output_dir = "runs/reproduce-1d";
  } else if (study == "2d") {
    cfg.fixture = "toy-2d";
    cfg.model.input_dim = 2;
    cfg.model.hidden = {64, 64, 64};
    cfg.n_pairs = 96;
    cfg.posterior.eta = {0.25, 0.5, 1.0, 2.0};
    cfg.posterior.velocity_modes = {laplace::VelocityMode::gaussian, laplace::VelocityMode::top_eigvec};
    // 3000 generated points per method and scale in the full profile.
    cfg.posterior.samples = smoke ? 6 : 30;
    cfg.base_samples = 100;
    cfg.evaluation.grid_x = 21;
    cfg.evaluation.grid_t = 11;
    cfg.output_dir = "runs/reproduce-2d";
  } else {
    throw ConfigError("unknown study '" + study + "' (expected 1d or 2d)");
  }
  // Contraction needs θ* to be a critical point, not just a low-loss point.
  cfg.train.loss_tolerance = 1e-4;
  cfg.train.gradient_tolerance = 1e-9;
  // At 1e-6 the speed drift on the largest 1d draws reaches ~7e-3 and scales with the tolerance.
  cfg.geodesic.rel_tol = 1e-8;
  cfg.geodesic.abs_tol = 1e-8;
  cfg.validate();
  return cfg;
}

}  // namespace geoflow::cli
