#pragma once

#include "geoflow/flowmatch/flowmatch.hpp"
#include "geoflow/geodesic/geodesic.hpp"
#include "geoflow/laplace/laplace.hpp"
#include "geoflow/models/mlp.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace geoflow::cli {

inline constexpr int kSchemaVersion = 1;

enum class PosteriorMethods { euclidean, riemannian, both };
enum class HessianMode { automatic, dense, lanczos };
enum class Profile { none, smoke, full };

PosteriorMethods parse_methods(const std::string& s);
std::string to_string(PosteriorMethods m);
HessianMode parse_hessian_mode(const std::string& s);
std::string to_string(HessianMode m);
Profile parse_profile(const std::string& s);

struct PosteriorConfig {
  PosteriorMethods methods = PosteriorMethods::both;
  HessianMode hessian = HessianMode::automatic;
  Index lanczos_k = 100;
  Index dense_limit = autodiff::kDefaultDenseLimit;
  std::string mask = "all";
  std::vector<laplace::VelocityMode> velocity_modes{laplace::VelocityMode::gaussian};
  std::vector<double> eta{1.0};
  Index samples = 1000;  // S
  /// Budget-exceeded and blow-up geodesics drop the whole (θ_E, θ_R) pair.
  bool exclude_failed = true;
};

struct EvaluationConfig {
  std::vector<double> c_grid;  // empty: 50 points on [0.02, 0.98]
  int k_neighbours = 1;
  int kl_repetitions = 50;
  Index kl_subset = 100;
  Index endpoint_points = 10;  // first base samples used for endpoint statistics
  double grid_lo = -3.0;
  double grid_hi = 3.0;
  Index grid_x = 61;
  Index grid_t = 21;
  bool wasserstein = true;
};

struct RunConfig {
  int schema_version = kSchemaVersion;
  std::string fixture = "toy-1d";
  models::MLPSpec model;
  Index n_pairs = 64;
  flowmatch::Pairing pairing = flowmatch::Pairing::independent;
  flowmatch::TrainConfig train;
  PosteriorConfig posterior;
  flowmatch::GenerationConfig generation;
  Index base_samples = 1000;  // N
  geodesic::GeodesicConfig geodesic;
  EvaluationConfig evaluation;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";

  /// Seeds every stage from `seed`; the train seed follows it.
  void set_seed(std::uint64_t s);
  void apply_profile(Profile p);
  void validate() const;
  std::vector<double> c_grid() const;
};

/// Parses a config document. Unknown keys, wrong types and out-of-range values raise
/// ConfigError with the source line of the offending key where it can be located.
RunConfig parse_config(const std::string& text, const std::string& source_name = "<config>");
RunConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

/// Paper-shaped study configs: "1d" and "2d".
RunConfig study_config(const std::string& study, Profile profile);

}  // namespace geoflow::cli
