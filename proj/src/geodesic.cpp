#include "geoflow/geodesic/geodesic.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

namespace geoflow::geodesic {

Integrator parse_integrator(const std::string& s) {
  if (s == "rk45-adaptive") return Integrator::rk45_adaptive;
  if (s == "euler-fixed") return Integrator::euler_fixed;
  throw ConfigError("unknown integrator '" + s + "' (expected rk45-adaptive or euler-fixed)");
}

std::string to_string(Integrator i) {
  return i == Integrator::rk45_adaptive ? "rk45-adaptive" : "euler-fixed";
}

std::string to_string(GeodesicStatus s) {
  switch (s) {
    case GeodesicStatus::converged: return "converged";
    case GeodesicStatus::budget_exceeded: return "budget-exceeded";
    case GeodesicStatus::blow_up: return "blow-up";
  }
  return "unknown";
}

void GeodesicConfig::validate() const {
  if (!(rel_tol > 0.0) || !(abs_tol > 0.0)) throw ConfigError("geodesic tolerances must be positive");
  if (max_steps < 1) throw ConfigError("geodesic max_steps must be >= 1");
  if (!(t_end > 0.0)) throw ConfigError("geodesic t_end must be positive");
  if (fixed_steps < 1) throw ConfigError("geodesic fixed_steps must be >= 1");
}

double GeodesicSolution::speed_drift() const {
  if (speed.empty() || speed.front() == 0.0) return 0.0;
  double worst = 0.0;
  for (double s : speed) worst = std::max(worst, std::abs(s - speed.front()));
  return worst / speed.front();
}

void GeodesicSolution::discard_path() {
  alpha.clear();
  alpha.shrink_to_fit();
  alpha_dot.clear();
  alpha_dot.shrink_to_fit();
}

Acceleration geodesic_rhs(const laplace::LossManifold& manifold, const ParamVector& alpha,
                          const ParamVector& alpha_dot) {
  if (!alpha.allFinite() || !alpha_dot.allFinite())
    throw NumericalError("geodesic state is not finite");
  autodiff::GradientAndHvp gh = manifold.grad_and_hvp(alpha, alpha_dot);
  const double curvature = alpha_dot.dot(gh.hv);
  const double scale = -curvature / (1.0 + gh.grad.squaredNorm());
  Acceleration out{scale * gh.grad, std::move(gh.grad), gh.value};
  require_finite(out.value, "geodesic acceleration");
  return out;
}

double riemannian_speed(const ParamVector& grad, const ParamVector& alpha_dot) {
  const double along = grad.dot(alpha_dot);
  return std::sqrt(alpha_dot.squaredNorm() + along * along);
}

double riemannian_speed(const laplace::LossManifold& manifold, const ParamVector& alpha,
                        const ParamVector& alpha_dot) {
  return riemannian_speed(manifold.grad(alpha), alpha_dot);
}

bool is_map_point(const laplace::LossManifold& manifold, const ParamVector& theta_star,
                  double* grad_norm) {
  const double g = manifold.grad(theta_star).norm();
  if (grad_norm) *grad_norm = g;
  return g < 1e-2 * (1.0 + theta_star.norm());
}

namespace {

// Dormand-Prince 5(4) coefficients.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                 a76 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

// PI step-size controller constants.
constexpr double kBeta = 0.04;
constexpr double kExpo = 0.2 - kBeta * 0.75;
constexpr double kSafety = 0.9;
constexpr double kMinShrink = 0.2;
constexpr double kMaxGrow = 10.0;

struct State {
  ParamVector pos;
  ParamVector vel;
};

double error_norm(const State& err, const State& y, const State& y_new, double atol, double rtol) {
  double sum = 0.0;
  const Index k = y.pos.size();
  for (Index i = 0; i < k; ++i) {
    const double sp = atol + rtol * std::max(std::abs(y.pos[i]), std::abs(y_new.pos[i]));
    const double sv = atol + rtol * std::max(std::abs(y.vel[i]), std::abs(y_new.vel[i]));
    sum += (err.pos[i] / sp) * (err.pos[i] / sp) + (err.vel[i] / sv) * (err.vel[i] / sv);
  }
  return std::sqrt(sum / static_cast<double>(2 * k));
}

double scaled_norm(const ParamVector& a, const ParamVector& b, const State& y, double atol, double rtol) {
  double sum = 0.0;
  const Index k = y.pos.size();
  for (Index i = 0; i < k; ++i) {
    const double sp = atol + rtol * std::abs(y.pos[i]);
    const double sv = atol + rtol * std::abs(y.vel[i]);
    sum += (a[i] / sp) * (a[i] / sp) + (b[i] / sv) * (b[i] / sv);
  }
  return std::sqrt(sum / static_cast<double>(2 * k));
}

class Recorder {
 public:
  Recorder(GeodesicSolution& sol, bool record_path) : sol_(sol), record_path_(record_path) {}

  void push(double t, const State& y, const Acceleration& acc, double h) {
    sol_.times.push_back(t);
    sol_.speed.push_back(riemannian_speed(acc.grad, y.vel));
    sol_.loss.push_back(acc.loss);
    sol_.step_size.push_back(h);
    if (record_path_) {
      sol_.alpha.push_back(y.pos);
      sol_.alpha_dot.push_back(y.vel);
    }
  }

 private:
  GeodesicSolution& sol_;
  bool record_path_;
};

GeodesicSolution integrate_euler(const laplace::LossManifold& manifold, const State& y0,
                                 const GeodesicConfig& cfg, bool record_path) {
  GeodesicSolution sol;
  Recorder rec(sol, record_path);
  State y = y0;
  const double h = cfg.t_end / cfg.fixed_steps;
  try {
    Acceleration acc = geodesic_rhs(manifold, y.pos, y.vel);
    ++sol.rhs_evaluations;
    rec.push(0.0, y, acc, 0.0);
    for (int j = 0; j < cfg.fixed_steps; ++j) {
      State next{y.pos + h * y.vel, y.vel + h * acc.value};
      y = std::move(next);
      acc = geodesic_rhs(manifold, y.pos, y.vel);
      ++sol.rhs_evaluations;
      rec.push(j + 1 == cfg.fixed_steps ? cfg.t_end : (j + 1) * h, y, acc, h);
    }
  } catch (const NumericalError&) {
    sol.status = GeodesicStatus::blow_up;
  }
  sol.endpoint = y.pos;
  return sol;
}

GeodesicSolution integrate_dopri(const laplace::LossManifold& manifold, const State& y0,
                                 const GeodesicConfig& cfg, bool record_path) {
  using clock = std::chrono::steady_clock;
  const auto started = clock::now();
  GeodesicSolution sol;
  Recorder rec(sol, record_path);
  State y = y0;
  double t = 0.0;
  const double atol = cfg.abs_tol, rtol = cfg.rel_tol;

  auto rhs = [&](const ParamVector& pos, const ParamVector& vel) {
    ++sol.rhs_evaluations;
    return geodesic_rhs(manifold, pos, vel);
  };

  try {
    Acceleration k1 = rhs(y.pos, y.vel);
    rec.push(0.0, y, k1, 0.0);

    // Initial step guess (Hairer, Norsett & Wanner, II.4).
    double h;
    {
      const double d0 = scaled_norm(y.pos, y.vel, y, atol, rtol);
      const double d1 = scaled_norm(y.vel, k1.value, y, atol, rtol);
      double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
      h0 = std::min(h0, cfg.t_end);
      const ParamVector p1 = y.pos + h0 * y.vel;
      const ParamVector v1 = y.vel + h0 * k1.value;
      const Acceleration f1 = rhs(p1, v1);
      const double d2 = scaled_norm(v1 - y.vel, f1.value - k1.value, y, atol, rtol) / h0;
      const double h1 = std::max(d1, d2) <= 1e-15 ? std::max(1e-6, h0 * 1e-3)
                                                  : std::pow(0.01 / std::max(d1, d2), 0.2);
      h = std::min(100.0 * h0, h1);
    }

    double fac_old = 1e-4;
    bool last_rejected = false;
    long steps = 0;
    while (t < cfg.t_end) {
      if (steps >= cfg.max_steps ||
          (cfg.wall_clock_budget_s > 0.0 &&
           std::chrono::duration<double>(clock::now() - started).count() > cfg.wall_clock_budget_s)) {
        sol.status = GeodesicStatus::budget_exceeded;
        break;
      }
      ++steps;
      bool final_step = false;
      if (t + h >= cfg.t_end * (1.0 - 1e-14)) {
        h = cfg.t_end - t;
        final_step = true;
      }
      // Stage derivatives: position part of stage i is the stage velocity.
      const ParamVector& kp1 = y.vel;
      const ParamVector& kv1 = k1.value;

      ParamVector p2 = y.pos + h * a21 * kp1;
      ParamVector v2 = y.vel + h * a21 * kv1;
      const Acceleration k2 = rhs(p2, v2);

      ParamVector p3 = y.pos + h * (a31 * kp1 + a32 * v2);
      ParamVector v3 = y.vel + h * (a31 * kv1 + a32 * k2.value);
      const Acceleration k3 = rhs(p3, v3);

      ParamVector p4 = y.pos + h * (a41 * kp1 + a42 * v2 + a43 * v3);
      ParamVector v4 = y.vel + h * (a41 * kv1 + a42 * k2.value + a43 * k3.value);
      const Acceleration k4 = rhs(p4, v4);

      ParamVector p5 = y.pos + h * (a51 * kp1 + a52 * v2 + a53 * v3 + a54 * v4);
      ParamVector v5 = y.vel + h * (a51 * kv1 + a52 * k2.value + a53 * k3.value + a54 * k4.value);
      const Acceleration k5 = rhs(p5, v5);

      ParamVector p6 = y.pos + h * (a61 * kp1 + a62 * v2 + a63 * v3 + a64 * v4 + a65 * v5);
      ParamVector v6 = y.vel + h * (a61 * kv1 + a62 * k2.value + a63 * k3.value + a64 * k4.value +
                                    a65 * k5.value);
      const Acceleration k6 = rhs(p6, v6);

      State y_new{y.pos + h * (a71 * kp1 + a73 * v3 + a74 * v4 + a75 * v5 + a76 * v6),
                  y.vel + h * (a71 * kv1 + a73 * k3.value + a74 * k4.value + a75 * k5.value +
                               a76 * k6.value)};
      Acceleration k7 = rhs(y_new.pos, y_new.vel);

      const State err{h * (e1 * kp1 + e3 * v3 + e4 * v4 + e5 * v5 + e6 * v6 + e7 * y_new.vel),
                      h * (e1 * kv1 + e3 * k3.value + e4 * k4.value + e5 * k5.value +
                           e6 * k6.value + e7 * k7.value)};
      const double err_norm = error_norm(err, y, y_new, atol, rtol);
      if (!std::isfinite(err_norm)) throw NumericalError("geodesic error estimate is not finite");

      const double fac11 = std::pow(err_norm, kExpo);
      if (err_norm <= 1.0) {
        double fac = fac11 / std::pow(fac_old, kBeta);
        fac = std::clamp(fac / kSafety, 1.0 / kMaxGrow, 1.0 / kMinShrink);
        double h_new = h / fac;
        if (last_rejected) h_new = std::min(h_new, h);
        fac_old = std::max(err_norm, 1e-4);
        t = final_step ? cfg.t_end : t + h;
        y = std::move(y_new);
        k1 = std::move(k7);
        rec.push(t, y, k1, h);
        last_rejected = false;
        h = h_new;
      } else {
        ++sol.rejected_steps;
        h = h / std::min(1.0 / kMinShrink, fac11 / kSafety);
        last_rejected = true;
      }
      if (h < 1e-14 * cfg.t_end) throw NumericalError("geodesic step size underflow");
    }
  } catch (const NumericalError&) {
    sol.status = GeodesicStatus::blow_up;
  }
  sol.endpoint = y.pos;
  return sol;
}

}  // namespace

GeodesicSolution exp_map(const laplace::LossManifold& manifold, const ParamVector& theta_star,
                         const ParamVector& v, const GeodesicConfig& cfg, bool record_path) {
  cfg.validate();
  if (theta_star.size() != manifold.dimension() || v.size() != manifold.dimension())
    throw std::invalid_argument("exp_map dimension mismatch");
  if (!v.allFinite()) throw std::invalid_argument("initial velocity is not finite");
  const State y0{theta_star, manifold.project(v)};
  if (y0.vel.squaredNorm() == 0.0) {
    // Stationary geodesic: no integration needed.
    GeodesicSolution sol;
    Recorder rec(sol, record_path);
    Acceleration acc{ParamVector::Zero(v.size()), manifold.grad(theta_star), manifold.value(theta_star)};
    rec.push(0.0, y0, acc, 0.0);
    rec.push(cfg.t_end, y0, acc, cfg.t_end);
    sol.endpoint = theta_star;
    return sol;
  }
  return cfg.integrator == Integrator::rk45_adaptive ? integrate_dopri(manifold, y0, cfg, record_path)
                                                     : integrate_euler(manifold, y0, cfg, record_path);
}

DiscreteExpMap discrete_exp_map(const laplace::LossManifold& manifold, const ParamVector& theta_star,
                                const ParamVector& v, int n) {
  if (n < 2) throw std::invalid_argument("discrete exponential map needs n >= 2");
  const double eps = 1.0 / n;
  DiscreteExpMap out;
  ParamVector pos = theta_star;
  ParamVector vel = manifold.project(v);
  out.euclidean = theta_star + vel;
  out.accelerations.reserve(static_cast<std::size_t>(n - 1));
  for (int j = 0; j < n; ++j) {
    const bool needs_acc = j + 1 < n;  // α̈ at the last node never reaches the endpoint
    ParamVector acc;
    if (needs_acc) {
      acc = geodesic_rhs(manifold, pos, vel).value;
      out.accelerations.push_back(acc);
    }
    pos += eps * vel;
    if (needs_acc) vel += eps * acc;
    if (!pos.allFinite() || !vel.allFinite())
      throw BlowUpError("discrete geodesic left the reals", j * eps);
  }
  out.endpoint = std::move(pos);

  ParamVector weighted = ParamVector::Zero(theta_star.size());
  for (int j = 0; j <= n - 2; ++j)
    weighted += static_cast<double>(n - 1 - j) * out.accelerations[static_cast<std::size_t>(j)];
  out.sum_form = out.euclidean + eps * eps * weighted;
  out.identity_defect = (out.endpoint - out.sum_form).cwiseAbs().maxCoeff();
  const double scale = std::max(1.0, out.euclidean.cwiseAbs().maxCoeff());
  if (out.identity_defect > 1e-10 * scale) {
    std::ostringstream msg;
    msg << "discrete geodesic sum form disagrees with step-by-step Euler by " << out.identity_defect;
    throw NumericalError(msg.str());
  }
  return out;
}

ParamVector correction_vector(const laplace::LossManifold& manifold, const ParamVector& theta_star,
                              const ParamVector& v, int n) {
  const DiscreteExpMap d = discrete_exp_map(manifold, theta_star, v, n);
  ParamVector kappa = ParamVector::Zero(theta_star.size());
  // α̈_j = -(α̇ᵀHα̇)/(1 + ||∇L||²) ∇L, so κ is the negated weighted acceleration sum.
  for (int j = 0; j <= n - 2; ++j)
    kappa -= static_cast<double>(n - 1 - j) * d.accelerations[static_cast<std::size_t>(j)];
  return kappa;
}

}  // namespace geoflow::geodesic
