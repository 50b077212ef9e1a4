#pragma once

#include "geoflow/autodiff/tape.hpp"
#include "geoflow/common.hpp"

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace geoflow::autodiff {

/// Scalar, twice-differentiable loss over a flat parameter vector.
///
/// Implementations must be pure: concurrent calls with distinct outputs are allowed and
/// repeated calls on the same input are bit-identical.
class Objective {
 public:
  virtual ~Objective() = default;

  virtual Index dimension() const = 0;
  virtual double value(const ParamVector& theta) const = 0;
  virtual double value_and_gradient(const ParamVector& theta, ParamVector& grad) const = 0;

  /// Objectives with an analytic forward-over-reverse pass override both of these.
  virtual bool has_exact_hvp() const { return false; }
  virtual void gradient_and_exact_hvp(const ParamVector& theta, const ParamVector& direction,
                                      ParamVector& grad, ParamVector& hv) const;
};

enum class HvpMethod {
  automatic,          // exact when the objective provides it, finite differences otherwise
  finite_difference,  // (grad(θ+εv) - grad(θ-εv)) / 2ε
  exact,
};

inline constexpr Index kDefaultDenseLimit = 2000;

ParamVector gradient(const Objective& loss, const ParamVector& theta);

ParamVector hvp(const Objective& loss, const ParamVector& theta, const ParamVector& direction,
                HvpMethod method = HvpMethod::automatic);

struct GradientAndHvp {
  double value;
  ParamVector grad;
  ParamVector hv;
};

/// One call producing L, ∇L and H·v at the same point (the geodesic right-hand side needs all three).
GradientAndHvp gradient_and_hvp(const Objective& loss, const ParamVector& theta,
                                const ParamVector& direction,
                                HvpMethod method = HvpMethod::automatic);

/// Column j is hvp(e_j); returned symmetrised as (H + Hᵀ)/2.
Matrix hessian_dense(const Objective& loss, const ParamVector& theta,
                     Index dense_limit = kDefaultDenseLimit,
                     HvpMethod method = HvpMethod::automatic);

/// Step used by the finite-difference HVP: ε = 1e-4 (1 + ‖θ‖) / ‖v‖.
double hvp_step(const ParamVector& theta, const ParamVector& direction);

using TapeFunction = std::function<Var(Tape&, std::span<const Var>)>;

/// Objective recorded on a fresh scalar tape per call.
class TapeObjective final : public Objective {
 public:
  TapeObjective(Index dimension, TapeFunction fn) : dim_(dimension), fn_(std::move(fn)) {}

  Index dimension() const override { return dim_; }
  double value(const ParamVector& theta) const override;
  double value_and_gradient(const ParamVector& theta, ParamVector& grad) const override;

 private:
  Index dim_;
  TapeFunction fn_;
};

/// L(θ) = ½ θᵀAθ + bᵀθ + c with exact Hessian A (symmetrised on construction).
class QuadraticObjective final : public Objective {
 public:
  explicit QuadraticObjective(Matrix a, Vector b = {}, double c = 0.0);

  Index dimension() const override { return a_.rows(); }
  double value(const ParamVector& theta) const override;
  double value_and_gradient(const ParamVector& theta, ParamVector& grad) const override;
  bool has_exact_hvp() const override { return true; }
  void gradient_and_exact_hvp(const ParamVector& theta, const ParamVector& direction,
                              ParamVector& grad, ParamVector& hv) const override;

  const Matrix& hessian() const { return a_; }

 private:
  Matrix a_;
  Vector b_;
  double c_;
};

/// Restricts an objective to the coordinates in `mask`: gradients and HVPs are zero
/// outside the mask and directions are projected onto it before use.
class MaskedObjective final : public Objective {
 public:
  MaskedObjective(std::shared_ptr<const Objective> inner, std::vector<Index> mask);

  Index dimension() const override { return inner_->dimension(); }
  double value(const ParamVector& theta) const override { return inner_->value(theta); }
  double value_and_gradient(const ParamVector& theta, ParamVector& grad) const override;
  bool has_exact_hvp() const override { return inner_->has_exact_hvp(); }
  void gradient_and_exact_hvp(const ParamVector& theta, const ParamVector& direction,
                              ParamVector& grad, ParamVector& hv) const override;

  const std::vector<Index>& mask() const { return mask_; }
  ParamVector project(const ParamVector& v) const;

 private:
  std::shared_ptr<const Objective> inner_;
  std::vector<Index> mask_;
  Vector indicator_;
};

}  // namespace geoflow::autodiff
