#pragma once

#include "geoflow/autodiff/derivatives.hpp"

#include <memory>
#include <optional>
#include <vector>

namespace geoflow::laplace {

/// A dataset-bound loss viewed as the graph manifold {(θ, L(θ))}. Loss, gradient and
/// HVP are all evaluated against the same fixed binding; an optional parameter mask
/// restricts gradients, HVPs and directions to a subset of coordinates.
class LossManifold {
 public:
  explicit LossManifold(std::shared_ptr<const autodiff::Objective> loss,
                        std::vector<Index> mask = {},
                        autodiff::HvpMethod hvp_method = autodiff::HvpMethod::automatic);

  Index dimension() const { return loss_->dimension(); }
  bool masked() const { return masked_; }
  const std::vector<Index>& mask() const { return mask_; }
  autodiff::HvpMethod hvp_method() const { return hvp_method_; }

  double value(const ParamVector& theta) const;
  ParamVector grad(const ParamVector& theta) const;
  ParamVector hvp(const ParamVector& theta, const ParamVector& direction) const;
  autodiff::GradientAndHvp grad_and_hvp(const ParamVector& theta, const ParamVector& direction) const;

  /// Zeroes coordinates outside the mask (identity when unmasked).
  ParamVector project(const ParamVector& v) const;

  void set_map(ParamVector theta_star) { map_ = std::move(theta_star); }
  const std::optional<ParamVector>& map() const { return map_; }

  /// Indices of the training pairs bound to this manifold (recorded for reproducibility).
  void set_batch_indices(std::vector<Index> idx) { batch_indices_ = std::move(idx); }
  const std::vector<Index>& batch_indices() const { return batch_indices_; }

  const autodiff::Objective& objective() const { return *active_; }

 private:
  std::shared_ptr<const autodiff::Objective> loss_;
  std::shared_ptr<const autodiff::Objective> active_;
  std::vector<Index> mask_;
  bool masked_ = false;
  autodiff::HvpMethod hvp_method_;
  std::optional<ParamVector> map_;
  std::vector<Index> batch_indices_;
};

}  // namespace geoflow::laplace
