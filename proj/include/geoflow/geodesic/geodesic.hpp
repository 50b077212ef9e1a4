#pragma once

#include "geoflow/laplace/manifold.hpp"

#include <string>
#include <vector>

namespace geoflow::geodesic {

enum class Integrator { rk45_adaptive, euler_fixed };

Integrator parse_integrator(const std::string& s);
std::string to_string(Integrator i);

struct GeodesicConfig {
  Integrator integrator = Integrator::rk45_adaptive;
  double rel_tol = 1e-6;
  double abs_tol = 1e-6;
  long max_steps = 20000;
  double t_end = 1.0;
  double wall_clock_budget_s = 0.0;  // <= 0 disables the wall-clock limit
  int fixed_steps = 1000;           // euler_fixed only

  void validate() const;
};

enum class GeodesicStatus { converged, budget_exceeded, blow_up };

std::string to_string(GeodesicStatus s);

/// Integrated curve α(t) with α(0) = θ* and α̇(0) = v, sampled at accepted steps.
struct GeodesicSolution {
  std::vector<double> times;
  std::vector<ParamVector> alpha;
  std::vector<ParamVector> alpha_dot;
  std::vector<double> speed;       // Riemannian norm of α̇ under the Monge metric
  std::vector<double> loss;        // L(α(t))
  std::vector<double> step_size;   // step that produced each entry (0 for the first)
  ParamVector endpoint;            // α(t_end), or the last accepted state on failure
  GeodesicStatus status = GeodesicStatus::converged;
  long rhs_evaluations = 0;
  long rejected_steps = 0;

  /// max_t |speed(t) - speed(0)| / speed(0); zero for a stationary curve.
  double speed_drift() const;
  /// Drops the stored path, keeping endpoint and diagnostics.
  void discard_path();
};

struct Acceleration {
  ParamVector value;  // α̈
  ParamVector grad;   // ∇L(α)
  double loss = 0.0;
};

/// Monge-metric geodesic acceleration: -(α̇ᵀ H α̇) / (1 + ||∇L||²) · ∇L, from one gradient
/// and one Hessian-vector product at α.
Acceleration geodesic_rhs(const laplace::LossManifold& manifold, const ParamVector& alpha,
                          const ParamVector& alpha_dot);

/// sqrt(||α̇||² + (∇Lᵀα̇)²).
double riemannian_speed(const ParamVector& grad, const ParamVector& alpha_dot);
double riemannian_speed(const laplace::LossManifold& manifold, const ParamVector& alpha,
                        const ParamVector& alpha_dot);

/// ||∇L(θ*)|| < 1e-2 (1 + ||θ*||); the exponential map is launched from a MAP point only.
bool is_map_point(const laplace::LossManifold& manifold, const ParamVector& theta_star,
                  double* grad_norm = nullptr);

/// Exponential map: integrates the second-order geodesic system from t = 0 to t_end.
/// Failures are reported through `status` with the partial solution retained.
GeodesicSolution exp_map(const laplace::LossManifold& manifold, const ParamVector& theta_star,
                         const ParamVector& v, const GeodesicConfig& cfg = {},
                         bool record_path = true);

struct DiscreteExpMap {
  ParamVector endpoint;        // explicit Euler, step 1/n
  ParamVector sum_form;        // θ* + v + ε² Σ_{j=0}^{n-2} (n-1-j) α̈_j
  ParamVector euclidean;       // θ* + v
  std::vector<ParamVector> accelerations;  // α̈_j, j = 0..n-2
  double identity_defect = 0.0;  // max |endpoint - sum_form|
};

/// Explicit-Euler discretisation of the geodesic with n steps. Throws NumericalError if
/// the step-by-step and summed forms disagree beyond 1e-10 (relative to the state scale).
DiscreteExpMap discrete_exp_map(const laplace::LossManifold& manifold, const ParamVector& theta_star,
                                const ParamVector& v, int n);

/// κ = Σ_{j=0}^{n-2} (n-1-j) · (α̇ᵀHα̇)/(1 + ||∇L||²) · ∇L along the discrete curve, so
/// that the discrete endpoint equals θ_E - ε²κ.
ParamVector correction_vector(const laplace::LossManifold& manifold, const ParamVector& theta_star,
                              const ParamVector& v, int n);

}  // namespace geoflow::geodesic
