#include "geoflow/flowmatch/flowmatch.hpp"

#include "geoflow/data/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace geoflow::flowmatch {

void PairedDataset::validate() const {
  if (times.size() == 0) throw std::invalid_argument("paired dataset is empty");
  if (targets.cols() != times.size() || noise.cols() != times.size() ||
      noise.rows() != targets.rows())
    throw std::invalid_argument("paired dataset arrays have inconsistent shapes");
  for (Index i = 0; i < times.size(); ++i) {
    if (!(times[i] >= 0.0 && times[i] <= 1.0))
      throw std::invalid_argument("paired dataset time outside [0, 1]");
  }
}

Pairing parse_pairing(const std::string& s) {
  if (s == "independent") return Pairing::independent;
  if (s == "nearest") return Pairing::nearest;
  throw ConfigError("unknown pairing '" + s + "' (expected independent or nearest)");
}

std::string to_string(Pairing p) { return p == Pairing::independent ? "independent" : "nearest"; }

PairedDataset make_paired_dataset(const PointSet& train, Index n_pairs, std::uint64_t seed,
                                  Pairing pairing) {
  if (train.cols() == 0 || n_pairs <= 0) throw std::invalid_argument("need training points and n_pairs > 0");
  const Index d = train.rows();
  PairedDataset ds{PointSet(d, n_pairs), PointSet(d, n_pairs), Vector(n_pairs)};
  auto rng = data::rng_stream(seed, data::StreamId::pairing_noise);
  for (Index i = 0; i < n_pairs; ++i) {
    ds.noise.col(i) = rng.normal_vector(d);
    Index target = i % train.cols();
    if (pairing == Pairing::nearest) {
      (train.colwise() - ds.noise.col(i)).colwise().squaredNorm().minCoeff(&target);
    }
    ds.targets.col(i) = train.col(target);
    ds.times[i] = static_cast<double>(i + 1) / static_cast<double>(n_pairs);
  }
  return ds;
}

Vector transport_sample(const Vector& x0, const Vector& x_star, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("transport time outside [0, 1]");
  return t * x_star + (1.0 - t) * x0;
}

FlowMatchingLoss::FlowMatchingLoss(models::MLPSpec spec, PairedDataset data)
    : mlp_(std::move(spec)), data_(std::move(data)) {
  data_.validate();
  if (data_.dim() != mlp_.spec().input_dim)
    throw std::invalid_argument("dataset dimension does not match the model");
  PointSet xt(data_.dim(), data_.size());
  for (Index i = 0; i < data_.size(); ++i)
    xt.col(i) = transport_sample(data_.noise.col(i), data_.targets.col(i), data_.times[i]);
  features_ = mlp_.features(xt, data_.times);
  targets_ = data_.targets - data_.noise;
}

double FlowMatchingLoss::value(const ParamVector& theta) const {
  return mlp_.regression_loss(theta, features_, targets_);
}

double FlowMatchingLoss::value_and_gradient(const ParamVector& theta, ParamVector& grad) const {
  return mlp_.regression_loss_and_gradient(theta, features_, targets_, grad);
}

void FlowMatchingLoss::gradient_and_exact_hvp(const ParamVector& theta,
                                              const ParamVector& direction, ParamVector& grad,
                                              ParamVector& hv) const {
  mlp_.regression_loss_gradient_hvp(theta, features_, targets_, direction, grad, hv);
}

double fm_loss(const ParamVector& theta, const PairedDataset& data, const models::MLPSpec& spec) {
  const double value = FlowMatchingLoss(spec, data).value(theta);
  if (!std::isfinite(value)) throw NumericalError("flow-matching loss is non-finite");
  return value;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (log_every <= 0) throw ConfigError("log_every must be positive");
  if (!(gradient_tolerance >= 0.0)) throw ConfigError("gradient_tolerance must be non-negative");
  if (refine_epochs < 0) throw ConfigError("refine_epochs must be non-negative");
}

Optimiser parse_optimiser(const std::string& s) {
  if (s == "adam") return Optimiser::adam;
  if (s == "sgd") return Optimiser::sgd;
  throw ConfigError("unknown optimiser '" + s + "' (expected sgd or adam)");
}

std::string to_string(Optimiser o) { return o == Optimiser::adam ? "adam" : "sgd"; }

TrainResult train_map(const models::MLPSpec& spec, const PairedDataset& data,
                      const TrainConfig& cfg) {
  cfg.validate();
  const FlowMatchingLoss loss(spec, data);
  TrainResult result;
  result.params = models::init_params(spec, cfg.seed);
  ParamVector& theta = result.params;
  ParamVector grad(theta.size());

  constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  ParamVector m = ParamVector::Zero(theta.size());
  ParamVector v = ParamVector::Zero(theta.size());
  double beta1_pow = 1.0, beta2_pow = 1.0;
  auto step = [&](double lr) {
    if (cfg.optimiser == Optimiser::adam) {
      beta1_pow *= beta1;
      beta2_pow *= beta2;
      m = beta1 * m + (1.0 - beta1) * grad;
      v = beta2 * v + (1.0 - beta2) * grad.cwiseAbs2();
      const double a = lr / (1.0 - beta1_pow);
      theta.array() -= a * m.array() / ((v.array() / (1.0 - beta2_pow)).sqrt() + adam_eps);
    } else {
      theta -= lr * grad;
    }
  };

  double value = loss.value_and_gradient(theta, grad);
  double last_finite = value;
  std::int64_t epoch = 0;
  auto check_finite = [&] {
    if (std::isfinite(value) && grad.allFinite()) {
      last_finite = value;
      return;
    }
    std::ostringstream msg;
    msg << "training diverged at epoch " << epoch << " (last finite loss " << last_finite << ")";
    throw NumericalError(msg.str());
  };
  for (; epoch < cfg.epochs; ++epoch) {
    check_finite();
    if (epoch % cfg.log_every == 0) result.loss_history.emplace_back(epoch, value);
    if (value <= cfg.loss_tolerance) {
      result.converged = true;
      break;
    }
    step(cfg.learning_rate);
    value = loss.value_and_gradient(theta, grad);
  }
  check_finite();
  if (value <= cfg.loss_tolerance) result.converged = true;

  // Refinement towards a critical point: fresh optimiser state, learning rate cut by
  // 10 to start and by 0.3 every 4000 epochs.
  if (result.converged && cfg.gradient_tolerance > 0.0) {
    m.setZero();
    v.setZero();
    beta1_pow = beta2_pow = 1.0;
    double lr = 0.1 * cfg.learning_rate;
    std::int64_t r = 0;
    for (; r < cfg.refine_epochs && grad.norm() > cfg.gradient_tolerance; ++r, ++epoch) {
      if (r > 0 && r % 4000 == 0) lr *= 0.3;
      if (epoch % cfg.log_every == 0) result.loss_history.emplace_back(epoch, value);
      step(lr);
      value = loss.value_and_gradient(theta, grad);
      check_finite();
    }
    result.refine_epochs_run = r;
  }

  result.epochs_run = epoch;
  result.final_loss = value;
  result.gradient_norm = grad.norm();
  if (result.loss_history.empty() || result.loss_history.back().first != epoch)
    result.loss_history.emplace_back(epoch, value);
  return result;
}

void GenerationConfig::validate() const {
  if (n_steps < 1) throw ConfigError("generation needs n_steps >= 1");
}

PointSet generate_batch(const models::VelocityField& field, const PointSet& x0,
                        const GenerationConfig& cfg) {
  cfg.validate();
  if (!x0.allFinite()) throw std::invalid_argument("generation start point is not finite");
  const double h = 1.0 / cfg.n_steps;
  PointSet x = x0;
  for (int k = 0; k < cfg.n_steps; ++k) {
    const double t = k * h;
    x += h * field.velocity(x, t);
    if (!x.allFinite()) throw BlowUpError("generation trajectory left the reals", t);
  }
  return x;
}

Vector generate(const models::VelocityField& field, const Vector& x0, const GenerationConfig& cfg) {
  return generate_batch(field, Matrix(x0), cfg).col(0);
}

std::vector<TrajectoryState> trajectory(const models::VelocityField& field, const Vector& x0,
                                        const GenerationConfig& cfg) {
  cfg.validate();
  if (!x0.allFinite()) throw std::invalid_argument("generation start point is not finite");
  const double h = 1.0 / cfg.n_steps;
  std::vector<TrajectoryState> states;
  states.reserve(static_cast<std::size_t>(cfg.n_steps) + 1);
  Matrix x = x0;
  states.push_back({0.0, x.col(0)});
  for (int k = 0; k < cfg.n_steps; ++k) {
    const double t = k * h;
    x += h * field.velocity(x, t);
    if (!x.allFinite()) throw BlowUpError("generation trajectory left the reals", t);
    states.push_back({k + 1 == cfg.n_steps ? 1.0 : (k + 1) * h, x.col(0)});
  }
  return states;
}

double standard_normal_logpdf(const Vector& x) {
  return -0.5 * x.squaredNorm() - 0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi);
}

Vector log_likelihood_batch(const models::VelocityField& field, const PointSet& x_hat,
                            const GenerationConfig& cfg) {
  cfg.validate();
  if (field.dimension() > 16) throw std::invalid_argument("exact likelihood needs D <= 16");
  const Index d = field.dimension();
  const double h = 1.0 / cfg.n_steps;
  PointSet x = x_hat;
  Vector accumulated = Vector::Zero(x.cols());
  // Each generation step is y = z + h u(z, t_k). Walking back, z is recovered by Newton's
  // method and log|det(I + h J(z))| is accumulated, so the density is that of the Euler
  // generator itself; h tr J is its first-order term.
  for (int k = cfg.n_steps - 1; k >= 0; --k) {
    const double t = k * h;
    for (Index i = 0; i < x.cols(); ++i) {
      const Vector y = x.col(i);
      Vector z = y - h * field.velocity(y, t);
      Matrix step_jac;
      bool solved = false;
      for (int it = 0; it < 100 && !solved; ++it) {
        step_jac = Matrix::Identity(d, d) + h * field.input_jacobian(z, t);
        const Vector residual = z + h * field.velocity(z, t) - y;
        solved = residual.norm() <= 1e-12 * (1.0 + y.norm());
        if (!solved) z -= step_jac.partialPivLu().solve(residual);
        if (!z.allFinite()) throw BlowUpError("likelihood back-integration left the reals", t);
      }
      if (!solved) {
        std::ostringstream msg;
        msg << "likelihood: Euler step at t = " << t << " could not be inverted";
        throw NumericalError(msg.str());
      }
      accumulated[i] += std::log(std::abs(step_jac.determinant()));
      x.col(i) = z;
    }
  }
  Vector out(x.cols());
  for (Index i = 0; i < x.cols(); ++i) out[i] = standard_normal_logpdf(x.col(i)) - accumulated[i];
  return out;
}

double log_likelihood(const models::VelocityField& field, const Vector& x_hat,
                      const GenerationConfig& cfg) {
  return log_likelihood_batch(field, Matrix(x_hat), cfg)[0];
}

Vector posterior_predictive_density(const std::vector<models::VelocityField>& fields,
                                    const PointSet& x_hat, const GenerationConfig& cfg) {
  if (fields.empty()) throw std::invalid_argument("posterior predictive needs at least one field");
  Vector density = Vector::Zero(x_hat.cols());
  for (const auto& f : fields) density += log_likelihood_batch(f, x_hat, cfg).array().exp().matrix();
  return density / static_cast<double>(fields.size());
}

}  // namespace geoflow::flowmatch
