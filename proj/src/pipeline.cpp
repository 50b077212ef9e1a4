#include "geoflow/cli/pipeline.hpp"

#include "geoflow/data/gmm.hpp"
#include "geoflow/data/rng.hpp"
#include "geoflow/io/container.hpp"
#include "geoflow/io/csv.hpp"
#include "geoflow/io/svg.hpp"
#include "geoflow/util/parallel.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace geoflow::cli {

using nlohmann::json;

namespace {

constexpr const char* kCheckpoint = "map.ckpt";
constexpr const char* kPosterior = "posterior.ckpt";
constexpr const char* kGenerated = "generated.ckpt";

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void log(const std::string& msg) { std::cerr << "[geoflow] " << msg << std::endl; }

std::string eta_label(double eta) { return io::format_double(eta); }

json spec_json(const models::MLPSpec& spec) {
  return {{"input_dim", spec.input_dim},
          {"hidden", spec.hidden},
          {"activation", models::to_string(spec.activation)},
          {"time_encoding", models::to_string(spec.time_encoding)},
          {"n_freqs", spec.n_freqs}};
}

models::MLPSpec spec_from_json(const json& j) {
  models::MLPSpec spec;
  spec.input_dim = j.at("input_dim").get<Index>();
  spec.hidden = j.at("hidden").get<std::vector<Index>>();
  spec.activation = models::parse_activation(j.at("activation").get<std::string>());
  spec.time_encoding = models::parse_time_encoding(j.at("time_encoding").get<std::string>());
  spec.n_freqs = j.at("n_freqs").get<int>();
  return spec;
}

io::Container load_or_fail(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path))
    throw io::IoError(path.string() + " not found; run `geoflow " + producer + "` first");
  return io::load_container(path);
}

ParamVector load_map(const RunConfig& cfg, const fs::path& out) {
  const io::Container c = load_or_fail(out / kCheckpoint, "train");
  if (c.metadata.value("kind", "") != "map-checkpoint") throw io::IoError("map.ckpt is not a MAP checkpoint");
  if (spec_from_json(c.metadata.at("spec")) != cfg.model)
    throw ConfigError("checkpoint architecture does not match the config's model section");
  return c.get("params").col(0);
}

std::vector<Index> active_mask(const RunConfig& cfg) { return models::param_slice_mask(cfg.model, cfg.posterior.mask); }

bool wants_riemannian(const RunConfig& cfg) { return cfg.posterior.methods != PosteriorMethods::euclidean; }
bool wants_euclidean(const RunConfig& cfg) { return cfg.posterior.methods != PosteriorMethods::riemannian; }

PointSet base_points(const RunConfig& cfg) {
  auto rng = data::rng_stream(cfg.seed, data::StreamId::base_samples);
  PointSet x(cfg.model.input_dim, cfg.base_samples);
  for (Index i = 0; i < x.cols(); ++i) x.col(i) = rng.normal_vector(x.rows());
  return x;
}

PointSet grid_points(const RunConfig& cfg) {
  const Index d = cfg.model.input_dim, g = cfg.evaluation.grid_x;
  const Vector axis = Vector::LinSpaced(g, cfg.evaluation.grid_lo, cfg.evaluation.grid_hi);
  Index total = 1;
  for (Index k = 0; k < d; ++k) total *= g;
  PointSet out(d, total);
  for (Index i = 0; i < total; ++i) {
    Index rest = i;
    for (Index k = 0; k < d; ++k) {
      out(k, i) = axis[rest % g];
      rest /= g;
    }
  }
  return out;
}

std::vector<ParamVector> columns(const Matrix& m) {
  std::vector<ParamVector> out;
  out.reserve(static_cast<std::size_t>(m.cols()));
  for (Index j = 0; j < m.cols(); ++j) out.emplace_back(m.col(j));
  return out;
}

// Per-column generation that flags points whose trajectory leaves the reals.
PointSet generate_flagged(const models::VelocityField& field, const PointSet& x0, const flowmatch::GenerationConfig& g,
                          std::vector<char>& ok) {
  ok.assign(static_cast<std::size_t>(x0.cols()), 1);
  try {
    return flowmatch::generate_batch(field, x0, g);
  } catch (const NumericalError&) {
  }
  PointSet out(x0.rows(), x0.cols());
  for (Index i = 0; i < x0.cols(); ++i) {
    try {
      out.col(i) = flowmatch::generate(field, x0.col(i), g);
    } catch (const NumericalError&) {
      ok[static_cast<std::size_t>(i)] = 0;
      out.col(i).setConstant(std::numeric_limits<double>::quiet_NaN());
    }
  }
  return out;
}

Ensemble build_ensemble(const std::string& method, laplace::VelocityMode mode, double eta,
                        const std::vector<Index>& sample_ids, const std::vector<ParamVector>& params,
                        const RunConfig& cfg, const PointSet& base) {
  const Index n = base.cols();
  std::vector<PointSet> outs(params.size());
  std::vector<std::vector<char>> oks(params.size());
  util::parallel_for(params.size(), [&](std::size_t s) {
    outs[s] = generate_flagged(models::VelocityField(cfg.model, params[s]), base, cfg.generation, oks[s]);
  });
  Ensemble e;
  e.method = method;
  e.mode = mode;
  e.eta = eta;
  Index rows = 0;
  for (const auto& ok : oks) rows += std::count(ok.begin(), ok.end(), 1);
  e.points.resize(base.rows(), rows);
  Index r = 0;
  for (std::size_t s = 0; s < params.size(); ++s) {
    for (Index j = 0; j < n; ++j) {
      if (!oks[s][static_cast<std::size_t>(j)]) {
        ++e.flagged;
        continue;
      }
      e.points.col(r++) = outs[s].col(j);
      e.s.push_back(sample_ids[s]);
      e.n.push_back(j);
    }
  }
  return e;
}

template <typename Fn>
auto with_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError("stage " + stage + ": " + e.what());
  } catch (const io::IoError& e) {
    throw io::IoError("stage " + stage + ": " + e.what());
  } catch (const NonConvergenceError& e) {
    throw NonConvergenceError("stage " + stage + ": " + e.what());
  } catch (const DegenerateCurvatureError& e) {
    throw DegenerateCurvatureError("stage " + stage + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError("stage " + stage + ": " + e.what(), e.offending_index());
  } catch (const std::runtime_error& e) {
    throw std::runtime_error("stage " + stage + ": " + e.what());
  } catch (const std::logic_error& e) {
    throw std::logic_error("stage " + stage + ": " + e.what());
  }
}

const std::vector<std::string> kPalette{"#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2",
                                        "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace

// ---------------------------------------------------------------------------------------------
// Manifest

Manifest::Manifest(fs::path out_dir) : out_(std::move(out_dir)) {
  const fs::path path = out_ / "manifest.json";
  if (fs::exists(path)) {
    std::ifstream f(path);
    try {
      doc_ = json::parse(f);
    } catch (const json::exception&) {
      doc_ = json::object();
    }
  }
  if (!doc_.is_object()) doc_ = json::object();
  if (!doc_.contains("stages")) doc_["stages"] = json::object();
  if (!doc_.contains("artifacts")) doc_["artifacts"] = json::array();
}

void Manifest::stage(const std::string& name, double wall_seconds) {
  doc_["stages"][name] = {{"wall_seconds", wall_seconds}};
}

void Manifest::artifact(const fs::path& path) {
  const std::string rel = fs::relative(path, out_).generic_string();
  auto& list = doc_["artifacts"];
  if (std::find(list.begin(), list.end(), rel) == list.end()) list.push_back(rel);
}

void Manifest::write(const RunConfig& cfg) {
  doc_["config"] = to_json(cfg);
  doc_["code_version"] = std::string("geoflow ") + kVersion;
  json kept = json::array();
  for (const auto& a : doc_["artifacts"]) {
    if (!fs::exists(out_ / a.get<std::string>()))
      throw io::IoError("manifest names a missing artifact: " + a.get<std::string>());
    kept.push_back(a);
  }
  std::sort(kept.begin(), kept.end());
  doc_["artifacts"] = kept;
  io::write_atomic(out_ / "manifest.json", doc_.dump(2) + "\n");
}

std::string Ensemble::key() const {
  if (method == "map") return "map";
  return method + "/" + laplace::to_string(mode) + "/eta=" + eta_label(eta);
}

const EnsembleMetrics* EvaluateStage::find(const std::string& method, laplace::VelocityMode mode, double eta) const {
  for (const auto& e : ensembles) {
    if (e.method != method) continue;
    if (method == "map" || (e.mode == mode && e.eta == eta)) return &e;
  }
  return nullptr;
}

flowmatch::PairedDataset training_data(const RunConfig& cfg) {
  const data::FixtureDataset fx = data::fixture(cfg.fixture);
  return flowmatch::make_paired_dataset(fx.train, cfg.n_pairs, cfg.seed, cfg.pairing);
}

// ---------------------------------------------------------------------------------------------
// train

TrainStage run_train(const RunConfig& cfg, const fs::path& out, Manifest& manifest) {
  const Timer timer;
  fs::create_directories(out);
  const flowmatch::PairedDataset ds = training_data(cfg);
  log("training " + cfg.fixture + " MLP with K = " + std::to_string(cfg.model.parameter_count()) + " parameters");
  TrainStage st;
  st.result = flowmatch::train_map(cfg.model, ds, cfg.train);

  io::Container c;
  c.metadata = {{"kind", "map-checkpoint"},
                {"spec", spec_json(cfg.model)},
                {"fixture", cfg.fixture},
                {"seed", cfg.seed},
                {"n_pairs", cfg.n_pairs},
                {"pairing", flowmatch::to_string(cfg.pairing)},
                {"training",
                 {{"optimiser", flowmatch::to_string(cfg.train.optimiser)},
                  {"learning_rate", cfg.train.learning_rate},
                  {"epochs_run", st.result.epochs_run},
                  {"final_loss", st.result.final_loss},
                  {"gradient_norm", st.result.gradient_norm},
                  {"converged", st.result.converged}}}};
  c.put("params", st.result.params);
  st.checkpoint = out / kCheckpoint;
  io::save_container(c, st.checkpoint);

  io::CsvTable loss({"epoch", "loss"});
  for (const auto& [epoch, value] : st.result.loss_history) loss.add({static_cast<long long>(epoch), value});
  loss.write(out / "train_loss.csv");

  io::SvgPlot plot("Training loss", "epoch", "log10 loss");
  io::Series s{"loss", {}, {}, kPalette[1], true};
  for (const auto& [epoch, value] : st.result.loss_history) {
    s.x.push_back(static_cast<double>(epoch));
    s.y.push_back(std::log10(std::max(value, 1e-300)));
  }
  plot.add(s);
  plot.write(out / "train_loss.svg");

  for (const char* f : {kCheckpoint, "train_loss.csv", "train_loss.svg"}) manifest.artifact(out / f);
  manifest.field("training") = c.metadata["training"];
  manifest.stage("train", timer.seconds());
  std::ostringstream msg;
  msg << "final loss " << st.result.final_loss << " after " << st.result.epochs_run << " epochs, |grad| "
      << st.result.gradient_norm;
  log(msg.str());
  if (!st.result.converged) {
    manifest.write(cfg);
    std::ostringstream err;
    err << "training stopped after " << st.result.epochs_run << " epochs with loss " << st.result.final_loss
        << " above tolerance " << cfg.train.loss_tolerance << " (checkpoint written)";
    throw NonConvergenceError(err.str());
  }
  return st;
}

// ---------------------------------------------------------------------------------------------
// sample

SampleStage run_sample(const RunConfig& cfg, const fs::path& out, Manifest& manifest) {
  const Timer timer;
  SampleStage st;
  st.theta_star = load_map(cfg, out);
  auto loss = std::make_shared<flowmatch::FlowMatchingLoss>(cfg.model, training_data(cfg));
  laplace::LossManifold manifold(loss, active_mask(cfg));
  manifold.set_map(st.theta_star);
  std::vector<Index> batch(static_cast<std::size_t>(cfg.n_pairs));
  std::iota(batch.begin(), batch.end(), Index{0});
  manifold.set_batch_indices(std::move(batch));

  double grad_norm = 0.0;
  if (!geodesic::is_map_point(manifold, st.theta_star, &grad_norm)) {
    std::ostringstream msg;
    msg << "checkpoint is not a MAP point: |grad L| = " << grad_norm << " >= 1e-2 (1 + |theta*|)";
    throw NonConvergenceError(msg.str());
  }

  const Index active = manifold.masked() ? static_cast<Index>(manifold.mask().size()) : manifold.dimension();
  const bool dense = cfg.posterior.hessian == HessianMode::dense ||
                     (cfg.posterior.hessian == HessianMode::automatic && active <= cfg.posterior.dense_limit);
  st.hessian = dense ? "dense" : "lanczos";
  log("building " + st.hessian + " Laplace posterior over " + std::to_string(active) + " parameters");
  laplace::PosteriorBuild build =
      dense ? laplace::build_dense(manifold, st.theta_star, 1.0, cfg.posterior.dense_limit)
            : laplace::build_lanczos(manifold, st.theta_star, std::min(cfg.posterior.lanczos_k, active), cfg.seed);
  st.spectrum = build.spectrum;

  io::CsvTable spectrum({"index", "eigenvalue", "retained"});
  for (Index i = 0; i < st.spectrum.eigenvalues.size(); ++i)
    spectrum.add({static_cast<long long>(i), st.spectrum.eigenvalues[i],
                  static_cast<long long>(st.spectrum.eigenvalues[i] > st.spectrum.floor ? 1 : 0)});
  spectrum.write(out / "spectrum.csv");

  io::CsvTable diag({"mode", "eta", "sample", "status", "v_norm", "euclidean_distance", "riemannian_distance",
                     "speed_drift", "steps", "rejected_steps", "rhs_evaluations", "contraction_ok", "kept"});
  io::CsvTable traces({"mode", "eta", "sample", "step", "t", "speed", "loss", "step_size"});
  io::Container archive;
  archive.metadata = {{"kind", "posterior-samples"}, {"spec", spec_json(cfg.model)}, {"hessian", st.hessian},
                      {"rank", build.posterior.rank()}, {"groups", json::array()}};
  archive.put("theta_star", st.theta_star);

  const Index S = cfg.posterior.samples;
  Index budget = 0, blow_up = 0;
  for (laplace::VelocityMode mode : cfg.posterior.velocity_modes) {
    for (double eta : cfg.posterior.eta) {
      laplace::LaplacePosterior post = build.posterior;
      post.set_eta(eta);
      SampleGroup g;
      g.mode = mode;
      g.eta = eta;
      std::vector<ParamVector> vs(static_cast<std::size_t>(S));
      std::vector<geodesic::GeodesicSolution> sols(static_cast<std::size_t>(S));
      log("sampling " + std::to_string(S) + " velocities (" + laplace::to_string(mode) + ", eta " +
          eta_label(eta) + ")" + (wants_riemannian(cfg) ? " with geodesics" : ""));
      util::parallel_for(static_cast<std::size_t>(S), [&](std::size_t s) {
        vs[s] = laplace::sample_velocity(post, cfg.seed, s, mode);
        if (wants_riemannian(cfg)) sols[s] = geodesic::exp_map(manifold, st.theta_star, vs[s], cfg.geodesic, false);
      });
      std::vector<ParamVector> keep_e, keep_r;
      for (Index s = 0; s < S; ++s) {
        const auto& v = vs[static_cast<std::size_t>(s)];
        auto& sol = sols[static_cast<std::size_t>(s)];
        GeodesicRecord rec;
        rec.sample = s;
        rec.v_norm = v.norm();
        rec.euclidean_distance = rec.v_norm;
        bool keep = true;
        if (wants_riemannian(cfg)) {
          rec.status = sol.status;
          rec.riemannian_distance = (sol.endpoint - st.theta_star).norm();
          rec.speed_drift = sol.speed_drift();
          rec.steps = static_cast<long>(sol.times.size()) - 1;
          rec.rejected = sol.rejected_steps;
          rec.rhs_evaluations = sol.rhs_evaluations;
          rec.contraction_ok = rec.riemannian_distance <= rec.v_norm + 1e-9;
          if (sol.status == geodesic::GeodesicStatus::budget_exceeded) ++budget;
          if (sol.status == geodesic::GeodesicStatus::blow_up) ++blow_up;
          keep = sol.status == geodesic::GeodesicStatus::converged || !cfg.posterior.exclude_failed;
          for (std::size_t k = 0; k < sol.times.size(); ++k)
            traces.add({laplace::to_string(mode), eta, static_cast<long long>(s), static_cast<long long>(k),
                        sol.times[k], sol.speed[k], sol.loss[k], sol.step_size[k]});
        }
        diag.add({laplace::to_string(mode), eta, static_cast<long long>(s), geodesic::to_string(rec.status),
                  rec.v_norm, rec.euclidean_distance, rec.riemannian_distance, rec.speed_drift,
                  static_cast<long long>(rec.steps), static_cast<long long>(rec.rejected),
                  static_cast<long long>(rec.rhs_evaluations), static_cast<long long>(rec.contraction_ok),
                  static_cast<long long>(keep)});
        g.geodesics.push_back(rec);
        if (!keep) {
          ++st.excluded;
          continue;
        }
        if (!rec.contraction_ok) ++st.contraction_violations;
        g.sample_ids.push_back(s);
        keep_e.push_back(st.theta_star + v);
        if (wants_riemannian(cfg)) keep_r.push_back(sol.endpoint);
      }
      const Index K = st.theta_star.size(), kept = static_cast<Index>(g.sample_ids.size());
      g.euclidean.resize(K, kept);
      for (Index j = 0; j < kept; ++j) g.euclidean.col(j) = keep_e[static_cast<std::size_t>(j)];
      if (wants_riemannian(cfg)) {
        g.riemannian.resize(K, kept);
        for (Index j = 0; j < kept; ++j) g.riemannian.col(j) = keep_r[static_cast<std::size_t>(j)];
      }
      const std::string prefix = "group" + std::to_string(st.groups.size()) + "/";
      archive.metadata["groups"].push_back({{"mode", laplace::to_string(mode)}, {"eta", eta}});
      Vector ids(kept);
      for (Index j = 0; j < kept; ++j) ids[j] = static_cast<double>(g.sample_ids[static_cast<std::size_t>(j)]);
      archive.put(prefix + "sample_ids", ids);
      archive.put(prefix + "euclidean", g.euclidean);
      if (wants_riemannian(cfg)) archive.put(prefix + "riemannian", g.riemannian);
      st.groups.push_back(std::move(g));
    }
  }
  archive.metadata["methods"] = to_string(cfg.posterior.methods);
  io::save_container(archive, out / kPosterior);
  diag.write(out / "geodesic_diagnostics.csv");
  std::vector<const char*> files{kPosterior, "spectrum.csv", "geodesic_diagnostics.csv"};
  if (wants_riemannian(cfg)) {
    traces.write(out / "geodesic_traces.csv");
    files.push_back("geodesic_traces.csv");
  }

  io::SvgPlot plot("Hessian eigenvalue spectrum", "index", "log10 eigenvalue");
  io::Series s{"retained", {}, {}, kPalette[1], false};
  for (Index i = 0; i < st.spectrum.eigenvalues.size(); ++i) {
    if (st.spectrum.eigenvalues[i] <= 0.0) continue;
    s.x.push_back(static_cast<double>(i));
    s.y.push_back(std::log10(st.spectrum.eigenvalues[i]));
  }
  plot.add(s);
  plot.write(out / "spectrum.svg");
  files.push_back("spectrum.svg");
  for (const char* f : files) manifest.artifact(out / f);

  manifest.field("posterior") = {{"hessian", st.hessian},
                                 {"rank", build.posterior.rank()},
                                 {"n_positive", st.spectrum.n_positive},
                                 {"n_truncated", st.spectrum.n_truncated},
                                 {"map_gradient_norm", grad_norm}};
  manifest.field("geodesic_failures") = {{"budget_exceeded", budget},
                                         {"blow_up", blow_up},
                                         {"excluded_samples", st.excluded},
                                         {"contraction_violations", st.contraction_violations}};
  manifest.stage("sample", timer.seconds());
  if (st.contraction_violations > 0)
    log("warning: " + std::to_string(st.contraction_violations) + " samples violate |theta_R - theta*| <= |v|");
  return st;
}

// ---------------------------------------------------------------------------------------------
// generate

GenerateStage run_generate(const RunConfig& cfg, const fs::path& out, Manifest& manifest) {
  const Timer timer;
  const ParamVector theta_star = load_map(cfg, out);
  const io::Container archive = load_or_fail(out / kPosterior, "sample");
  if (spec_from_json(archive.metadata.at("spec")) != cfg.model)
    throw ConfigError("posterior archive architecture does not match the config's model section");

  GenerateStage st;
  st.base = base_points(cfg);
  const Index D = cfg.model.input_dim;
  st.ensembles.push_back(build_ensemble("map", laplace::VelocityMode::gaussian, 0.0, {0}, {theta_star}, cfg, st.base));

  const std::string methods = archive.metadata.value("methods", "both");
  const auto& groups = archive.metadata.at("groups");
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto mode = laplace::parse_velocity_mode(groups[gi].at("mode").get<std::string>());
    const double eta = groups[gi].at("eta").get<double>();
    const std::string prefix = "group" + std::to_string(gi) + "/";
    const Vector ids_d = archive.get(prefix + "sample_ids");
    std::vector<Index> ids(static_cast<std::size_t>(ids_d.size()));
    for (Index j = 0; j < ids_d.size(); ++j) ids[static_cast<std::size_t>(j)] = static_cast<Index>(ids_d[j]);
    log("generating " + std::to_string(ids.size()) + " x " + std::to_string(cfg.base_samples) + " points (" +
        laplace::to_string(mode) + ", eta " + eta_label(eta) + ")");
    if (methods != "riemannian" && wants_euclidean(cfg))
      st.ensembles.push_back(
          build_ensemble("euclidean", mode, eta, ids, columns(archive.get(prefix + "euclidean")), cfg, st.base));
    if (archive.has(prefix + "riemannian") && wants_riemannian(cfg))
      st.ensembles.push_back(
          build_ensemble("riemannian", mode, eta, ids, columns(archive.get(prefix + "riemannian")), cfg, st.base));
  }

  std::vector<std::string> header{"method", "mode", "eta", "s", "n"};
  for (Index k = 0; k < D; ++k) header.push_back("x" + std::to_string(k + 1));
  io::CsvTable table(header);
  io::Container gen;
  gen.metadata = {{"kind", "generated"}, {"ensembles", json::array()}};
  gen.put("base", st.base);
  Index flagged = 0;
  for (std::size_t i = 0; i < st.ensembles.size(); ++i) {
    const Ensemble& e = st.ensembles[i];
    flagged += e.flagged;
    for (Index r = 0; r < e.points.cols(); ++r) {
      io::CsvRow row{e.method, e.method == "map" ? std::string("none") : laplace::to_string(e.mode), e.eta,
                     static_cast<long long>(e.s[static_cast<std::size_t>(r)]),
                     static_cast<long long>(e.n[static_cast<std::size_t>(r)])};
      for (Index k = 0; k < D; ++k) row.emplace_back(e.points(k, r));
      table.add(std::move(row));
    }
    const std::string prefix = "ensemble" + std::to_string(i) + "/";
    gen.metadata["ensembles"].push_back(
        {{"method", e.method}, {"mode", laplace::to_string(e.mode)}, {"eta", e.eta}, {"flagged", e.flagged}});
    gen.put(prefix + "points", e.points);
    Matrix idx(2, static_cast<Index>(e.s.size()));
    for (std::size_t r = 0; r < e.s.size(); ++r) {
      idx(0, static_cast<Index>(r)) = static_cast<double>(e.s[r]);
      idx(1, static_cast<Index>(r)) = static_cast<double>(e.n[r]);
    }
    gen.put(prefix + "index", idx);
  }
  io::save_container(gen, out / kGenerated);
  table.write(out / "generated.csv");

  std::vector<std::string> bheader{"n"};
  for (Index k = 0; k < D; ++k) bheader.push_back("x" + std::to_string(k + 1));
  io::CsvTable base(bheader);
  for (Index j = 0; j < st.base.cols(); ++j) {
    io::CsvRow row{static_cast<long long>(j)};
    for (Index k = 0; k < D; ++k) row.emplace_back(st.base(k, j));
    base.add(std::move(row));
  }
  base.write(out / "base_samples.csv");

  // MAP trajectories for the first few base samples.
  io::CsvTable traj([&] {
    std::vector<std::string> h{"sample_id", "step", "t"};
    for (Index k = 0; k < D; ++k) h.push_back("x" + std::to_string(k + 1));
    return h;
  }());
  const models::VelocityField map_field(cfg.model, theta_star);
  for (Index j = 0; j < std::min<Index>(st.base.cols(), 20); ++j) {
    try {
      const auto states = flowmatch::trajectory(map_field, st.base.col(j), cfg.generation);
      for (std::size_t k = 0; k < states.size(); ++k) {
        io::CsvRow row{static_cast<long long>(j), static_cast<long long>(k), states[k].t};
        for (Index d = 0; d < D; ++d) row.emplace_back(states[k].x[d]);
        traj.add(std::move(row));
      }
    } catch (const NumericalError&) {
    }
  }
  traj.write(out / "map_trajectories.csv");

  for (const char* f : {kGenerated, "generated.csv", "base_samples.csv", "map_trajectories.csv"})
    manifest.artifact(out / f);
  manifest.field("generation") = {{"ensembles", st.ensembles.size()}, {"flagged_rows", flagged}};
  manifest.stage("generate", timer.seconds());
  return st;
}

// ---------------------------------------------------------------------------------------------
// evaluate

EvaluateStage run_evaluate(const RunConfig& cfg, const fs::path& out, Manifest& manifest) {
  const Timer timer;
  const io::Container gen = load_or_fail(out / kGenerated, "generate");
  const io::Container archive = load_or_fail(out / kPosterior, "sample");
  const data::FixtureDataset fx = data::fixture(cfg.fixture);
  const Index D = cfg.model.input_dim;
  if (gen.get("base").rows() != D) throw ConfigError("generated outputs do not match the fixture dimension");
  const auto grid = cfg.c_grid();

  // Parameter ensembles by key for the field-uncertainty grids.
  std::map<std::string, Matrix> params;
  const auto& groups = archive.metadata.at("groups");
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const std::string suffix = groups[gi].at("mode").get<std::string>() + "/eta=" +
                               eta_label(groups[gi].at("eta").get<double>());
    const std::string prefix = "group" + std::to_string(gi) + "/";
    params["euclidean/" + suffix] = archive.get(prefix + "euclidean");
    if (archive.has(prefix + "riemannian")) params["riemannian/" + suffix] = archive.get(prefix + "riemannian");
  }

  const PointSet x_grid = grid_points(cfg);
  const Vector t_grid = Vector::LinSpaced(cfg.evaluation.grid_t, 0.0, 1.0);
  const auto& ens_meta = gen.metadata.at("ensembles");
  EvaluateStage st;
  Matrix map_points;
  std::vector<Index> map_n;

  io::CsvTable curves({"method", "mode", "eta", "c", "ratio"});
  io::CsvTable kl({"method", "mode", "eta", "kl_mean", "kl_standard_error", "n_points"});
  io::CsvTable w1({"method", "mode", "eta", "w1", "n_points"});
  std::vector<std::string> eh{"method", "mode", "eta", "point"};
  for (Index k = 0; k < D; ++k) eh.push_back("x0_" + std::to_string(k + 1));
  for (Index k = 0; k < D; ++k) eh.push_back("mean_" + std::to_string(k + 1));
  for (const char* c : {"variance_trace", "bias", "n_members"}) eh.emplace_back(c);
  io::CsvTable endpoints(eh);
  io::CsvTable uncertainty({"method", "mode", "eta", "grid_mean_stddev"});
  std::vector<std::string> files;

  for (std::size_t i = 0; i < ens_meta.size(); ++i) {
    const std::string prefix = "ensemble" + std::to_string(i) + "/";
    EnsembleMetrics m;
    m.method = ens_meta[i].at("method").get<std::string>();
    m.mode = laplace::parse_velocity_mode(ens_meta[i].at("mode").get<std::string>());
    m.eta = ens_meta[i].at("eta").get<double>();
    const PointSet& pts = gen.get(prefix + "points");
    const Matrix& idx = gen.get(prefix + "index");
    m.n_points = pts.cols();
    const std::string mode_s = m.method == "map" ? "none" : laplace::to_string(m.mode);
    if (pts.cols() == 0) {
      log("warning: ensemble " + m.method + " has no finite points; skipped");
      st.ensembles.push_back(std::move(m));
      continue;
    }
    log("evaluating " + m.method + " (" + mode_s + ", eta " + eta_label(m.eta) + "), " +
        std::to_string(pts.cols()) + " points");

    m.memorisation = metrics::memorisation_curve(pts, fx.train, grid, cfg.evaluation.k_neighbours);
    for (const auto& [c, r] : m.memorisation) curves.add({m.method, mode_s, m.eta, c, r});

    if (pts.cols() >= std::max<Index>(cfg.evaluation.kl_subset, 50)) {
      m.kl = metrics::kl_resampled(pts, fx.target, cfg.seed, cfg.evaluation.kl_repetitions, cfg.evaluation.kl_subset);
      kl.add({m.method, mode_s, m.eta, m.kl.mean, m.kl.standard_error, static_cast<long long>(pts.cols())});
    }

    if (cfg.evaluation.wasserstein) {
      const PointSet target = data::gmm_sample(fx.target, pts.cols(), cfg.seed, 1);
      m.w1 = metrics::wasserstein1(pts, target);
      w1.add({m.method, mode_s, m.eta, m.w1, static_cast<long long>(pts.cols())});
    }

    if (m.method == "map") {
      map_points = pts;
      map_n.assign(static_cast<std::size_t>(idx.cols()), 0);
      for (Index r = 0; r < idx.cols(); ++r) map_n[static_cast<std::size_t>(r)] = static_cast<Index>(idx(1, r));
    } else {
      const PointSet& base = gen.get("base");
      for (Index j = 0; j < std::min(cfg.evaluation.endpoint_points, base.cols()); ++j) {
        std::vector<Index> rows;
        for (Index r = 0; r < idx.cols(); ++r)
          if (static_cast<Index>(idx(1, r)) == j) rows.push_back(r);
        const auto map_row = std::find(map_n.begin(), map_n.end(), j);
        if (rows.size() < 2 || map_row == map_n.end()) continue;
        PointSet e(D, static_cast<Index>(rows.size()));
        for (std::size_t r = 0; r < rows.size(); ++r) e.col(static_cast<Index>(r)) = pts.col(rows[r]);
        const auto s = metrics::endpoint_stats(e, map_points.col(map_row - map_n.begin()));
        io::CsvRow row{m.method, mode_s, m.eta, static_cast<long long>(j)};
        for (Index k = 0; k < D; ++k) row.emplace_back(base(k, j));
        for (Index k = 0; k < D; ++k) row.emplace_back(s.mean[k]);
        row.emplace_back(s.covariance.trace());
        row.emplace_back(s.bias);
        row.emplace_back(static_cast<long long>(rows.size()));
        endpoints.add(std::move(row));
        m.endpoints.push_back(s);
      }

      const std::string key = m.method + "/" + mode_s + "/eta=" + eta_label(m.eta);
      auto it = params.find(key);
      if (it != params.end() && it->second.cols() > 0) {
        const Matrix sd = metrics::field_uncertainty_grid(columns(it->second), x_grid, t_grid, cfg.model);
        m.uncertainty_mean = sd.mean();
        uncertainty.add({m.method, mode_s, m.eta, m.uncertainty_mean});
        const std::string stem = "uncertainty_" + m.method + "_" + mode_s + "_eta" + eta_label(m.eta);
        if (D == 1) {
          io::write_grid_csv(out / (stem + ".csv"), "x\\t", x_grid.row(0).transpose(), t_grid, sd);
          io::SvgPlot heat("Velocity-field stddev, " + m.method + " (eta " + eta_label(m.eta) + ")", "t", "x");
          heat.heatmap(t_grid, x_grid.row(0).transpose(), sd);
          heat.write(out / (stem + ".svg"));
          files.push_back(stem + ".svg");
        } else {
          std::vector<std::string> h;
          for (Index k = 0; k < D; ++k) h.push_back("x" + std::to_string(k + 1));
          h.emplace_back("t");
          h.emplace_back("stddev");
          io::CsvTable long_form(h);
          for (Index gi = 0; gi < x_grid.cols(); ++gi)
            for (Index ti = 0; ti < t_grid.size(); ++ti) {
              io::CsvRow row;
              for (Index k = 0; k < D; ++k) row.emplace_back(x_grid(k, gi));
              row.emplace_back(t_grid[ti]);
              row.emplace_back(sd(gi, ti));
              long_form.add(std::move(row));
            }
          long_form.write(out / (stem + ".csv"));
        }
        files.push_back(stem + ".csv");
      }
    }
    st.ensembles.push_back(std::move(m));
  }

  curves.write(out / "memorisation_curves.csv");
  kl.write(out / "kl.csv");
  endpoints.write(out / "endpoint_stats.csv");
  uncertainty.write(out / "uncertainty_summary.csv");
  for (const char* f : {"memorisation_curves.csv", "kl.csv", "endpoint_stats.csv", "uncertainty_summary.csv"})
    files.emplace_back(f);
  if (cfg.evaluation.wasserstein) {
    w1.write(out / "wasserstein.csv");
    files.emplace_back("wasserstein.csv");
  }

  // Plots: memorisation curves and KL per ensemble, generated samples.
  io::SvgPlot mem("Memorisation ratio", "threshold c", "memorisation ratio");
  io::SvgPlot klp("KL(generated || target) per ensemble", "ensemble index", "KL (mean and +/- 1 s.e.)");
  io::SvgPlot samples(D == 1 ? "Generated sample histograms" : "Generated samples",
                      D == 1 ? "x" : "x1", D == 1 ? "density" : "x2");
  for (std::size_t i = 0; i < st.ensembles.size(); ++i) {
    const auto& m = st.ensembles[i];
    const std::string colour = kPalette[i % kPalette.size()];
    const std::string label = m.method == "map" ? "map" : m.method + " " + laplace::to_string(m.mode) + " eta " + eta_label(m.eta);
    io::Series s{label, {}, {}, colour, true};
    for (const auto& [c, r] : m.memorisation) s.x.push_back(c), s.y.push_back(r);
    mem.add(s);
    if (m.kl.repetitions.size()) {
      const double x = static_cast<double>(i);
      klp.add({label, {x}, {m.kl.mean}, colour, false});
      klp.add({"", {x, x}, {m.kl.mean - m.kl.standard_error, m.kl.mean + m.kl.standard_error}, colour, true});
    }
    const PointSet& pts = gen.get("ensemble" + std::to_string(i) + "/points");
    if (pts.cols() == 0) continue;
    if (D == 1) {
      const int bins = 80;
      const double lo = cfg.evaluation.grid_lo, hi = cfg.evaluation.grid_hi, w = (hi - lo) / bins;
      std::vector<double> counts(bins, 0.0);
      for (Index r = 0; r < pts.cols(); ++r) {
        const int b = static_cast<int>(std::floor((pts(0, r) - lo) / w));
        if (b >= 0 && b < bins) counts[static_cast<std::size_t>(b)] += 1.0;
      }
      io::Series h{label, {}, {}, colour, true};
      for (int b = 0; b < bins; ++b) {
        h.x.push_back(lo + (b + 0.5) * w);
        h.y.push_back(counts[static_cast<std::size_t>(b)] / (static_cast<double>(pts.cols()) * w));
      }
      samples.add(h);
    } else {
      io::Series sc{label, {}, {}, colour, false};
      const Index stride = std::max<Index>(1, pts.cols() / 1500);
      for (Index r = 0; r < pts.cols(); r += stride) sc.x.push_back(pts(0, r)), sc.y.push_back(pts(1, r));
      samples.add(sc);
    }
  }
  mem.write(out / "memorisation.svg");
  klp.write(out / "kl.svg");
  samples.write(out / "samples.svg");
  for (const char* f : {"memorisation.svg", "kl.svg", "samples.svg"}) files.emplace_back(f);
  for (const auto& f : files) manifest.artifact(out / f);
  manifest.stage("evaluate", timer.seconds());
  return st;
}

// ---------------------------------------------------------------------------------------------
// reproduce

std::vector<Check> directional_checks(const std::string& study, const RunConfig& cfg, const SampleStage& sample,
                                      const EvaluateStage& eval) {
  std::vector<Check> checks;
  const auto mode = laplace::VelocityMode::gaussian;
  const double eta_ref = std::find(cfg.posterior.eta.begin(), cfg.posterior.eta.end(), 1.0) != cfg.posterior.eta.end()
                             ? 1.0
                             : cfg.posterior.eta.back();
  const EnsembleMetrics* map = eval.find("map", mode, 0.0);
  const EnsembleMetrics* euc = eval.find("euclidean", mode, eta_ref);
  const EnsembleMetrics* rie = eval.find("riemannian", mode, eta_ref);
  auto fmt = [](double v) {
    std::ostringstream s;
    s.precision(4);
    s << v;
    return s.str();
  };

  {
    Check c{"memorisation_ordering", false, "missing ensembles"};
    if (map && euc && rie && !map->memorisation.empty() && map->memorisation.size() == euc->memorisation.size() &&
        rie->memorisation.size() == euc->memorisation.size()) {
      int bad = 0;
      for (std::size_t i = 0; i < map->memorisation.size(); ++i) {
        const double m = map->memorisation[i].second, r = rie->memorisation[i].second, e = euc->memorisation[i].second;
        if (!(m >= r && r >= e)) ++bad;
      }
      c.held = bad <= 2;
      c.detail = "MAP >= Riemannian >= Euclidean fails at " + std::to_string(bad) + " of " +
                 std::to_string(map->memorisation.size()) + " thresholds (allowed 2)";
    }
    checks.push_back(c);
  }
  {
    Check c{"kl_ordering", false, "missing ensembles"};
    if (map && euc && rie && !map->kl.repetitions.empty() && !euc->kl.repetitions.empty() &&
        !rie->kl.repetitions.empty()) {
      const double e_lo = euc->kl.mean - euc->kl.standard_error;
      c.held = e_lo > rie->kl.mean + rie->kl.standard_error && e_lo > map->kl.mean + map->kl.standard_error;
      c.detail = "KL euclidean " + fmt(euc->kl.mean) + "+/-" + fmt(euc->kl.standard_error) + ", riemannian " +
                 fmt(rie->kl.mean) + "+/-" + fmt(rie->kl.standard_error) + ", map " + fmt(map->kl.mean) + "+/-" +
                 fmt(map->kl.standard_error);
    }
    checks.push_back(c);
  }
  {
    Index pairs = 0;
    for (const auto& g : sample.groups) pairs += static_cast<Index>(g.sample_ids.size());
    checks.push_back({"contraction", sample.contraction_violations == 0,
                      std::to_string(sample.contraction_violations) + " violations among " + std::to_string(pairs) +
                          " emitted pairs"});
  }
  if (study == "1d") {
    Check u{"uncertainty_ratio", false, "missing ensembles"};
    if (euc && rie && euc->uncertainty_mean >= 0 && rie->uncertainty_mean > 0) {
      const double ratio = euc->uncertainty_mean / rie->uncertainty_mean;
      u.held = ratio >= 1.5;
      u.detail = "grid-mean stddev ratio euclidean/riemannian = " + fmt(ratio) + " (gate 1.5)";
    }
    checks.push_back(u);
    Check e{"endpoint_spread", false, "missing ensembles"};
    if (euc && rie && euc->endpoints.size() == rie->endpoints.size() && !euc->endpoints.empty()) {
      int var = 0, bias = 0;
      for (std::size_t i = 0; i < euc->endpoints.size(); ++i) {
        var += euc->endpoints[i].covariance.trace() > rie->endpoints[i].covariance.trace();
        bias += euc->endpoints[i].bias > rie->endpoints[i].bias;
      }
      const int n = static_cast<int>(euc->endpoints.size());
      e.held = 10 * var >= 8 * n && 10 * bias >= 8 * n;
      e.detail = "euclidean variance larger in " + std::to_string(var) + "/" + std::to_string(n) +
                 ", bias larger in " + std::to_string(bias) + "/" + std::to_string(n);
    }
    checks.push_back(e);
  } else {
    Check mono{"w1_monotone_euclidean", false, "missing ensembles"};
    std::vector<double> etas = cfg.posterior.eta;
    std::sort(etas.begin(), etas.end());
    std::string trail;
    bool ok = true, found = true;
    double prev = -1.0;
    for (double eta : etas) {
      const EnsembleMetrics* e = eval.find("euclidean", mode, eta);
      if (!e || e->w1 < 0) {
        found = false;
        break;
      }
      trail += (trail.empty() ? "" : ", ") + eta_label(eta) + ":" + fmt(e->w1);
      ok = ok && e->w1 >= prev;
      prev = e->w1;
    }
    if (found) {
      mono.held = ok;
      mono.detail = "euclidean W1 by eta " + trail;
    }
    checks.push_back(mono);
    Check mild{"w1_riemannian_milder", false, "missing ensembles"};
    const EnsembleMetrics* e = eval.find("euclidean", mode, etas.back());
    const EnsembleMetrics* r = eval.find("riemannian", mode, etas.back());
    if (e && r && e->w1 >= 0 && r->w1 >= 0) {
      mild.held = e->w1 >= r->w1;
      mild.detail = "at eta " + eta_label(etas.back()) + ": euclidean " + fmt(e->w1) + ", riemannian " + fmt(r->w1);
    }
    checks.push_back(mild);
  }
  return checks;
}

ReproduceStage run_reproduce(const std::string& study, const RunConfig& cfg, const fs::path& out, Manifest& manifest) {
  ReproduceStage st;
  fs::create_directories(out);
  io::write_atomic(out / "config.json", to_json(cfg).dump(2) + "\n");
  manifest.artifact(out / "config.json");
  st.train = with_stage("train", [&] { return run_train(cfg, out, manifest); });
  st.sample = with_stage("sample", [&] { return run_sample(cfg, out, manifest); });
  st.generate = with_stage("generate", [&] { return run_generate(cfg, out, manifest); });
  st.evaluate = with_stage("evaluate", [&] { return run_evaluate(cfg, out, manifest); });
  st.checks = directional_checks(study, cfg, st.sample, st.evaluate);

  io::CsvTable summary({"check", "held", "detail"});
  std::string md = "# reproduce " + study + "\n\n| check | held | detail |\n|---|---|---|\n";
  json checks = json::array();
  for (const auto& c : st.checks) {
    summary.add({c.name, std::string(c.held ? "yes" : "no"), c.detail});
    md += "| " + c.name + " | " + (c.held ? "yes" : "no") + " | " + c.detail + " |\n";
    checks.push_back({{"check", c.name}, {"held", c.held}, {"detail", c.detail}});
  }
  summary.write(out / "summary.csv");
  io::write_atomic(out / "summary.md", md);
  manifest.artifact(out / "summary.csv");
  manifest.artifact(out / "summary.md");
  manifest.field("checks") = checks;
  manifest.write(cfg);
  return st;
}

int exit_status(const std::exception& e) {
  if (dynamic_cast<const NonConvergenceError*>(&e)) return 2;
  if (dynamic_cast<const DegenerateCurvatureError*>(&e)) return 3;
  return 1;
}

std::string error_label(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config error";
  if (dynamic_cast<const io::IoError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e)) return "I/O error";
  if (dynamic_cast<const NonConvergenceError*>(&e)) return "not converged";
  if (dynamic_cast<const DegenerateCurvatureError*>(&e)) return "degenerate curvature";
  return "error";
}

}  // namespace geoflow::cli
