#pragma once

#include "geoflow/cli/config.hpp"
#include "geoflow/metrics/metrics.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace geoflow::cli {

namespace fs = std::filesystem;

/// Training stopped on the epoch budget, or the checkpoint is not a MAP point.
class NonConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kVersion = "0.1.0";

/// Run record kept in <out>/manifest.json. Each command merges its own stage into it.
class Manifest {
 public:
  explicit Manifest(fs::path out_dir);

  void stage(const std::string& name, double wall_seconds);
  void artifact(const fs::path& path);
  nlohmann::json& field(const std::string& key) { return doc_[key]; }
  const nlohmann::json& doc() const { return doc_; }
  /// Writes atomically; throws if a named artifact is missing.
  void write(const RunConfig& cfg);

 private:
  fs::path out_;
  nlohmann::json doc_;
};

struct TrainStage {
  flowmatch::TrainResult result;
  fs::path checkpoint;
};

struct GeodesicRecord {
  Index sample = 0;
  geodesic::GeodesicStatus status = geodesic::GeodesicStatus::converged;
  double v_norm = 0.0;
  double euclidean_distance = 0.0;
  double riemannian_distance = 0.0;
  double speed_drift = 0.0;
  long steps = 0;
  long rejected = 0;
  long rhs_evaluations = 0;
  bool contraction_ok = true;
};

struct SampleGroup {
  laplace::VelocityMode mode = laplace::VelocityMode::gaussian;
  double eta = 1.0;
  std::vector<Index> sample_ids;  // kept samples, ascending
  Matrix euclidean;               // K x kept
  Matrix riemannian;              // K x kept (empty when not requested)
  std::vector<GeodesicRecord> geodesics;  // every attempted sample
};

struct SampleStage {
  ParamVector theta_star;
  laplace::SpectrumReport spectrum;
  std::string hessian;  // "dense" or "lanczos"
  std::vector<SampleGroup> groups;
  Index excluded = 0;
  Index contraction_violations = 0;
};

struct Ensemble {
  std::string method;  // map, euclidean, riemannian
  laplace::VelocityMode mode = laplace::VelocityMode::gaussian;
  double eta = 0.0;
  PointSet points;          // D x rows
  std::vector<Index> s, n;  // posterior-sample id and base-sample id of each row
  Index flagged = 0;

  std::string key() const;
};

struct GenerateStage {
  PointSet base;
  std::vector<Ensemble> ensembles;
};

struct EnsembleMetrics {
  std::string method;
  laplace::VelocityMode mode = laplace::VelocityMode::gaussian;
  double eta = 0.0;
  Index n_points = 0;
  std::vector<std::pair<double, double>> memorisation;
  metrics::KlSummary kl;
  double w1 = -1.0;  // negative when not computed
  std::vector<metrics::EndpointStats> endpoints;
  double uncertainty_mean = -1.0;
};

struct EvaluateStage {
  std::vector<EnsembleMetrics> ensembles;
  const EnsembleMetrics* find(const std::string& method, laplace::VelocityMode mode, double eta) const;
};

struct Check {
  std::string name;
  bool held = false;
  std::string detail;
};

struct ReproduceStage {
  TrainStage train;
  SampleStage sample;
  GenerateStage generate;
  EvaluateStage evaluate;
  std::vector<Check> checks;
};

TrainStage run_train(const RunConfig& cfg, const fs::path& out, Manifest& manifest);
SampleStage run_sample(const RunConfig& cfg, const fs::path& out, Manifest& manifest);
GenerateStage run_generate(const RunConfig& cfg, const fs::path& out, Manifest& manifest);
EvaluateStage run_evaluate(const RunConfig& cfg, const fs::path& out, Manifest& manifest);

/// train -> sample -> generate -> evaluate, then the directional checks for the study.
/// A failing stage rethrows the same error type with the stage name prefixed.
ReproduceStage run_reproduce(const std::string& study, const RunConfig& cfg, const fs::path& out,
                             Manifest& manifest);

std::vector<Check> directional_checks(const std::string& study, const RunConfig& cfg, const SampleStage& sample,
                                      const EvaluateStage& eval);

/// Process exit status for an error escaping a command: 1 for config and I/O errors (and
/// anything unclassified), 2 for non-convergence, 3 for degenerate curvature.
int exit_status(const std::exception& e);
/// Short label for the same classification, used as the stderr prefix.
std::string error_label(const std::exception& e);

/// Paired dataset for a config: the fixture's training points with cfg.n_pairs noise pairs.
flowmatch::PairedDataset training_data(const RunConfig& cfg);

}  // namespace geoflow::cli
