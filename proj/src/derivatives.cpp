#include "geoflow/autodiff/derivatives.hpp"

#include <cmath>
#include <sstream>

namespace geoflow::autodiff {

void Objective::gradient_and_exact_hvp(const ParamVector&, const ParamVector&, ParamVector&,
                                       ParamVector&) const {
  throw std::logic_error("objective has no exact Hessian-vector product");
}

namespace {

void check_dims(const Objective& loss, const ParamVector& theta) {
  if (theta.size() != loss.dimension()) {
    std::ostringstream msg;
    msg << "parameter vector has dimension " << theta.size() << ", objective expects "
        << loss.dimension();
    throw std::invalid_argument(msg.str());
  }
}

double checked_value_and_gradient(const Objective& loss, const ParamVector& theta,
                                  ParamVector& grad) {
  const double value = loss.value_and_gradient(theta, grad);
  if (!std::isfinite(value)) {
    Index bad = -1;
    for (Index i = 0; i < theta.size(); ++i) {
      if (!std::isfinite(theta[i]) || !std::isfinite(grad[i])) {
        bad = i;
        break;
      }
    }
    std::ostringstream msg;
    msg << "loss is non-finite (" << value << ")";
    if (bad >= 0) msg << "; first non-finite parameter/gradient entry at index " << bad;
    throw NumericalError(msg.str(), bad);
  }
  require_finite(grad, "gradient");
  return value;
}

bool use_exact(const Objective& loss, HvpMethod method) {
  switch (method) {
    case HvpMethod::exact:
      if (!loss.has_exact_hvp()) throw std::invalid_argument("exact HVP requested but unavailable");
      return true;
    case HvpMethod::finite_difference:
      return false;
    case HvpMethod::automatic:
      return loss.has_exact_hvp();
  }
  return false;
}

ParamVector fd_hvp(const Objective& loss, const ParamVector& theta, const ParamVector& v) {
  const double vnorm = v.norm();
  if (vnorm == 0.0) return ParamVector::Zero(theta.size());
  const double eps = hvp_step(theta, v);
  ParamVector gp(theta.size()), gm(theta.size());
  checked_value_and_gradient(loss, theta + eps * v, gp);
  checked_value_and_gradient(loss, theta - eps * v, gm);
  return (gp - gm) / (2.0 * eps);
}

}  // namespace

double hvp_step(const ParamVector& theta, const ParamVector& direction) {
  return 1e-4 * (1.0 + theta.norm()) / direction.norm();
}

ParamVector gradient(const Objective& loss, const ParamVector& theta) {
  check_dims(loss, theta);
  ParamVector g(theta.size());
  checked_value_and_gradient(loss, theta, g);
  return g;
}

ParamVector hvp(const Objective& loss, const ParamVector& theta, const ParamVector& direction,
                HvpMethod method) {
  return gradient_and_hvp(loss, theta, direction, method).hv;
}

GradientAndHvp gradient_and_hvp(const Objective& loss, const ParamVector& theta,
                                const ParamVector& direction, HvpMethod method) {
  check_dims(loss, theta);
  if (direction.size() != theta.size()) throw std::invalid_argument("HVP direction dimension mismatch");
  require_finite(direction, "HVP direction");
  GradientAndHvp out{0.0, ParamVector(theta.size()), ParamVector(theta.size())};
  if (use_exact(loss, method)) {
    loss.gradient_and_exact_hvp(theta, direction, out.grad, out.hv);
    out.value = loss.value(theta);
    if (!std::isfinite(out.value)) throw NumericalError("loss is non-finite", -1);
    require_finite(out.grad, "gradient");
  } else {
    out.value = checked_value_and_gradient(loss, theta, out.grad);
    out.hv = fd_hvp(loss, theta, direction);
  }
  require_finite(out.hv, "Hessian-vector product");
  return out;
}

Matrix hessian_dense(const Objective& loss, const ParamVector& theta, Index dense_limit,
                     HvpMethod method) {
  check_dims(loss, theta);
  const Index k = theta.size();
  if (k > dense_limit) {
    std::ostringstream msg;
    msg << "dense Hessian requested for " << k << " parameters (limit " << dense_limit
        << "); use the Lanczos low-rank path instead";
    throw CapacityError(msg.str());
  }
  Matrix h(k, k);
  ParamVector e = ParamVector::Zero(k);
  for (Index j = 0; j < k; ++j) {
    e[j] = 1.0;
    h.col(j) = hvp(loss, theta, e, method);
    e[j] = 0.0;
  }
  return 0.5 * (h + h.transpose());
}

double TapeObjective::value(const ParamVector& theta) const {
  Tape tape;
  std::vector<Var> inputs;
  inputs.reserve(theta.size());
  for (Index i = 0; i < theta.size(); ++i) inputs.push_back(tape.variable(theta[i]));
  return fn_(tape, inputs).value();
}

double TapeObjective::value_and_gradient(const ParamVector& theta, ParamVector& grad) const {
  Tape tape;
  std::vector<Var> inputs;
  inputs.reserve(theta.size());
  for (Index i = 0; i < theta.size(); ++i) inputs.push_back(tape.variable(theta[i]));
  const Var out = fn_(tape, inputs);
  grad.resize(theta.size());
  if (out.tape() == nullptr) {  // constant result not recorded on the tape
    grad.setZero();
    return out.value();
  }
  const std::vector<double> bar = tape.adjoints(out);
  for (Index i = 0; i < theta.size(); ++i) grad[i] = bar[inputs[i].node()];
  return out.value();
}

QuadraticObjective::QuadraticObjective(Matrix a, Vector b, double c)
    : a_(0.5 * (a + a.transpose())), b_(std::move(b)), c_(c) {
  if (a_.rows() != a_.cols()) throw std::invalid_argument("quadratic form must be square");
  if (b_.size() == 0) b_ = Vector::Zero(a_.rows());
}

double QuadraticObjective::value(const ParamVector& theta) const {
  return 0.5 * theta.dot(a_ * theta) + b_.dot(theta) + c_;
}

double QuadraticObjective::value_and_gradient(const ParamVector& theta, ParamVector& grad) const {
  grad = a_ * theta + b_;
  return value(theta);
}

void QuadraticObjective::gradient_and_exact_hvp(const ParamVector& theta,
                                                const ParamVector& direction, ParamVector& grad,
                                                ParamVector& hv) const {
  grad = a_ * theta + b_;
  hv = a_ * direction;
}

MaskedObjective::MaskedObjective(std::shared_ptr<const Objective> inner, std::vector<Index> mask)
    : inner_(std::move(inner)), mask_(std::move(mask)), indicator_(Vector::Zero(inner_->dimension())) {
  for (Index i : mask_) {
    if (i < 0 || i >= indicator_.size()) throw std::out_of_range("mask index out of range");
    indicator_[i] = 1.0;
  }
}

ParamVector MaskedObjective::project(const ParamVector& v) const {
  return v.cwiseProduct(indicator_);
}

double MaskedObjective::value_and_gradient(const ParamVector& theta, ParamVector& grad) const {
  const double value = inner_->value_and_gradient(theta, grad);
  grad = project(grad);
  return value;
}

void MaskedObjective::gradient_and_exact_hvp(const ParamVector& theta,
                                             const ParamVector& direction, ParamVector& grad,
                                             ParamVector& hv) const {
  inner_->gradient_and_exact_hvp(theta, project(direction), grad, hv);
  grad = project(grad);
  hv = project(hv);
}

}  // namespace geoflow::autodiff
