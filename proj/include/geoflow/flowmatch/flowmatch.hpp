#pragma once

#include "geoflow/autodiff/derivatives.hpp"
#include "geoflow/common.hpp"
#include "geoflow/models/mlp.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace geoflow::flowmatch {

/// Fixed data-noise-time triples: index i permanently binds (x0_i, x*_i, t_i), so the
/// loss over this set is a deterministic function of the parameters.
struct PairedDataset {
  PointSet targets;  // D x N
  PointSet noise;    // D x N
  Vector times;      // N

  Index size() const { return times.size(); }
  Index dim() const { return targets.rows(); }
  void validate() const;
};

enum class Pairing {
  independent,  // target i cycles through the training points, noise drawn independently
  nearest,      // each noise draw is paired with its nearest training point
};

Pairing parse_pairing(const std::string& s);
std::string to_string(Pairing p);

/// Builds n_pairs triples from training points (D x M) with equidistant times t_i = i/N,
/// i = 1..N, and standard-normal noise drawn from the pairing_noise stream.
PairedDataset make_paired_dataset(const PointSet& train, Index n_pairs, std::uint64_t seed,
                                  Pairing pairing = Pairing::independent);

/// Point on the conditional path: t·x* + (1 - t)·x0.
Vector transport_sample(const Vector& x0, const Vector& x_star, double t);

/// Flow-matching objective (1/N) Σ ||u_θ(x_t^i, t_i) - (x*^i - x0^i)||² with its
/// analytic gradient and exact Hessian-vector product.
class FlowMatchingLoss final : public autodiff::Objective {
 public:
  FlowMatchingLoss(models::MLPSpec spec, PairedDataset data);

  Index dimension() const override { return mlp_.parameter_count(); }
  double value(const ParamVector& theta) const override;
  double value_and_gradient(const ParamVector& theta, ParamVector& grad) const override;
  bool has_exact_hvp() const override { return true; }
  void gradient_and_exact_hvp(const ParamVector& theta, const ParamVector& direction,
                              ParamVector& grad, ParamVector& hv) const override;

  const models::Mlp& mlp() const { return mlp_; }
  const PairedDataset& data() const { return data_; }
  /// Network inputs and regression targets (x* - x0) for the bound dataset.
  const Matrix& features() const { return features_; }
  const Matrix& regression_targets() const { return targets_; }

 private:
  models::Mlp mlp_;
  PairedDataset data_;
  Matrix features_;
  Matrix targets_;
};

double fm_loss(const ParamVector& theta, const PairedDataset& data, const models::MLPSpec& spec);

enum class Optimiser { sgd, adam };

struct TrainConfig {
  Optimiser optimiser = Optimiser::adam;
  double learning_rate = 1e-3;
  std::int64_t epochs = 20000;
  std::uint64_t seed = 0;
  double loss_tolerance = 1e-3;
  /// Epoch interval at which the loss history is recorded.
  std::int64_t log_every = 100;
  /// After the loss tolerance is met, keep refining with a decaying learning rate until
  /// the gradient norm drops below this. Zero disables refinement.
  double gradient_tolerance = 0.0;
  std::int64_t refine_epochs = 40000;

  void validate() const;
};

Optimiser parse_optimiser(const std::string& s);
std::string to_string(Optimiser o);

struct TrainResult {
  ParamVector params;
  double final_loss = 0.0;
  double gradient_norm = 0.0;
  std::int64_t epochs_run = 0;
  bool converged = false;  // loss <= tolerance before epochs ran out
  std::int64_t refine_epochs_run = 0;
  std::vector<std::pair<std::int64_t, double>> loss_history;
};

/// Full-batch MAP training from init_params(spec, cfg.seed). Throws NumericalError on
/// divergence, with the epoch and last finite loss in the message.
TrainResult train_map(const models::MLPSpec& spec, const PairedDataset& data,
                      const TrainConfig& cfg);

struct GenerationConfig {
  int n_steps = 100;

  void validate() const;
};

/// Euler integration of dx/dt = u(x, t) on [0, 1]. Throws BlowUpError carrying the last
/// finite time if the state leaves the reals.
Vector generate(const models::VelocityField& field, const Vector& x0, const GenerationConfig& cfg);

/// Batched variant: every column of x0 is integrated independently.
PointSet generate_batch(const models::VelocityField& field, const PointSet& x0,
                        const GenerationConfig& cfg);

struct TrajectoryState {
  double t;
  Vector x;
};

std::vector<TrajectoryState> trajectory(const models::VelocityField& field, const Vector& x0,
                                        const GenerationConfig& cfg);

/// log density of the generated sample: inverts the generation Euler steps from t = 1
/// back to 0, accumulating the log-determinant of each step (h tr J to first order), then
/// adds the standard-normal base log density at x(0). Requires D <= 16. Throws
/// NumericalError if a step cannot be inverted.
double log_likelihood(const models::VelocityField& field, const Vector& x_hat,
                      const GenerationConfig& cfg);
Vector log_likelihood_batch(const models::VelocityField& field, const PointSet& x_hat,
                            const GenerationConfig& cfg);

/// Monte-Carlo posterior predictive density: mean of exp(log_likelihood) over fields.
Vector posterior_predictive_density(const std::vector<models::VelocityField>& fields,
                                    const PointSet& x_hat, const GenerationConfig& cfg);

double standard_normal_logpdf(const Vector& x);

}  // namespace geoflow::flowmatch
