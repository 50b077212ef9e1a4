#pragma once

#include "geoflow/common.hpp"
#include "geoflow/data/gmm.hpp"
#include "geoflow/flowmatch/flowmatch.hpp"

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

namespace geoflow::metrics {

struct MemorisationConfig {
  double c = 1.0 / 3.0;
  int k_neighbours = 1;  // 1: second-nearest rule; K > 1: mean of neighbours 2..K+1

  void validate() const;
};

struct MemorisationFlag {
  bool memorised = false;
  double d1 = 0.0;
  double d_ref = 0.0;
  Index nearest = -1;
};

/// d1² <= c·d_ref², except that ties d1 = d_ref (within 1e-12) are never memorised.
MemorisationFlag memorised(const Vector& x_hat, const PointSet& train, const MemorisationConfig& cfg);

struct MemorisationReport {
  std::vector<MemorisationFlag> samples;
  double ratio = 0.0;
  MemorisationConfig config;
};

/// Brute-force all-pairs nearest neighbours; ratio is the mean of the per-sample flags.
MemorisationReport memorisation_ratio(const PointSet& gen, const PointSet& train,
                                      const MemorisationConfig& cfg);

/// 50 points evenly spaced on [0.02, 0.98].
std::vector<double> default_c_grid();

/// (c, ratio) for each c of an ascending grid inside (0, 1). Distances are computed once.
std::vector<std::pair<double, double>> memorisation_curve(const PointSet& gen, const PointSet& train,
                                                          const std::vector<double>& c_grid,
                                                          int k_neighbours = 1);

/// Gaussian kernel density estimate with a diagonal bandwidth from Silverman's rule:
/// 0.9·min(σ, IQR/1.34)·n^{-1/5} in 1D, σ_j·(4/((D+2)n))^{1/(D+4)} per axis otherwise.
class Kde {
 public:
  explicit Kde(PointSet samples);

  const Vector& bandwidth() const { return bandwidth_; }
  double log_density(const Vector& x) const;
  Vector log_density(const PointSet& x) const;

 private:
  PointSet samples_;
  Vector bandwidth_;
  double log_norm_ = 0.0;
};

using LogDensity = std::function<Vector(const PointSet&)>;

/// mean over gen of log p̂(x) − log q(x), with p̂ the KDE fitted on gen.
double kl_estimate(const PointSet& gen, const LogDensity& log_q);
double kl_to_target(const PointSet& gen, const data::GmmSpec& target);

struct KlSummary {
  double mean = 0.0;
  double standard_error = 0.0;
  std::vector<double> repetitions;
};

/// Subset resampling: `repetitions` draws of `subset` points without replacement from
/// the kl_resampling stream, each scored with kl_estimate.
KlSummary kl_resampled(const PointSet& gen, const data::GmmSpec& target, std::uint64_t seed,
                       int repetitions = 50, Index subset = 100);

/// Exact optimal-assignment W1 between equal-size empirical measures, Euclidean cost.
/// 1D inputs use the sorted coupling. Unequal sizes throw std::invalid_argument.
double wasserstein1(const PointSet& a, const PointSet& b);

/// Minimum-cost perfect matching on a square cost matrix; returns the column assigned to
/// each row.
std::vector<Index> solve_assignment(const Matrix& cost);

struct EndpointStats {
  Vector mean;
  Matrix covariance;  // unbiased (n - 1)
  PointSet endpoints;
  Vector map_endpoint;
  double bias = 0.0;  // ||mean - map_endpoint||
};

EndpointStats endpoint_stats(const PointSet& endpoints, const Vector& map_endpoint);

/// Generates x0 under every parameter sample and under θ*, then summarises.
EndpointStats endpoint_stats(const std::vector<ParamVector>& samples, const ParamVector& theta_star,
                             const models::MLPSpec& spec, const Vector& x0,
                             const flowmatch::GenerationConfig& gen_cfg);

/// Standard deviation of u_θ(x, t) over the ensemble (divisor S) for each x-grid point
/// (rows) and t-grid value (columns). For D > 1 the per-component variances are summed
/// before the square root.
Matrix field_uncertainty_grid(const std::vector<ParamVector>& samples, const PointSet& x_grid,
                              const Vector& t_grid, const models::MLPSpec& spec);

struct MarginCheck {
  bool memorised_before = false;
  bool memorised_after = false;   // brute-force evaluation on x̂ + δ
  bool predicate_memorised = false;  // from the two bounds below
  double lower = 0.0;  // √c·d2 − d1
  double upper = 0.0;  // d2 − √c·d1
  double displacement = 0.0;  // ||δ||(1 + √c)
};

/// Moves x̂ a distance delta_norm from x1 toward x2 and compares the brute-force flag
/// against the predicate "memorised unless lower < ||δ||(1+√c) < upper".
MarginCheck margin_check(const Vector& x_hat, const Vector& x1, const Vector& x2, double delta_norm,
                         double c);

}  // namespace geoflow::metrics
