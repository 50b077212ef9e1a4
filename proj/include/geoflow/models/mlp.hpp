#pragma once

#include "geoflow/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace geoflow::models {

enum class Activation { tanh, silu };
enum class TimeEncoding { concat_raw, concat_sinusoidal };

std::string to_string(Activation a);
std::string to_string(TimeEncoding e);
Activation parse_activation(const std::string& s);
TimeEncoding parse_time_encoding(const std::string& s);

/// Architecture of a time-conditioned MLP velocity field u(x, t): R^D x [0,1] -> R^D.
struct MLPSpec {
  Index input_dim = 1;
  std::vector<Index> hidden{64, 64};
  Activation activation = Activation::tanh;
  TimeEncoding time_encoding = TimeEncoding::concat_raw;
  int n_freqs = 0;  // only used by concat_sinusoidal

  Index feature_dim() const;
  Index parameter_count() const;
  void validate() const;

  bool operator==(const MLPSpec&) const = default;
};

/// Placement of one dense layer inside the flat parameter vector. Weights are stored
/// row-major (out x in) followed immediately by the bias.
struct LayerLayout {
  std::string name;  // "layer0", "layer1", ...
  Index in = 0;
  Index out = 0;
  Index weight_offset = 0;
  Index bias_offset = 0;

  Index end() const { return bias_offset + out; }
};

std::vector<LayerLayout> layout_table(const MLPSpec& spec);

/// Sorted indices selected by `selector`: "all", a layer name ("layer0".."layerL"), or
/// "output" for the last layer. Throws ConfigError for unknown names.
std::vector<Index> param_slice_mask(const MLPSpec& spec, const std::string& selector);

/// Fan-in scaled uniform weights U(-1/sqrt(in), 1/sqrt(in)); zero biases.
ParamVector init_params(const MLPSpec& spec, std::uint64_t seed);

/// Stateless evaluator for one architecture. All methods take the flat parameter
/// vector explicitly so the same object serves training and geometry.
class Mlp {
 public:
  explicit Mlp(MLPSpec spec);

  const MLPSpec& spec() const { return spec_; }
  const std::vector<LayerLayout>& layout() const { return layout_; }
  Index parameter_count() const { return count_; }

  /// Network input features for points x (D x n) at per-point times t (n).
  Matrix features(const PointSet& x, const Vector& t) const;
  Matrix features(const PointSet& x, double t) const;

  /// Output for precomputed features (feature_dim x n) -> (D x n).
  Matrix forward_features(const ParamVector& params, const Matrix& features) const;
  Matrix forward(const ParamVector& params, const PointSet& x, double t) const;

  /// Mean squared regression loss (1/n) Σ ||u(f_i) - y_i||² against targets (D x n).
  double regression_loss(const ParamVector& params, const Matrix& features,
                         const Matrix& targets) const;
  double regression_loss_and_gradient(const ParamVector& params, const Matrix& features,
                                      const Matrix& targets, ParamVector& grad) const;
  /// Pearlmutter forward-over-reverse pass: gradient and exact Hessian-vector product.
  double regression_loss_gradient_hvp(const ParamVector& params, const Matrix& features,
                                      const Matrix& targets, const ParamVector& direction,
                                      ParamVector& grad, ParamVector& hv) const;

  /// ∂u_i/∂x_j at a single point.
  Matrix input_jacobian(const ParamVector& params, const Vector& x, double t) const;
  /// Trace of the input Jacobian for each column of x.
  Vector divergence(const ParamVector& params, const PointSet& x, double t) const;

 private:
  void check_params(const ParamVector& params) const;

  MLPSpec spec_;
  std::vector<LayerLayout> layout_;
  Index count_;
};

/// u_θ: an architecture bound to a parameter vector.
class VelocityField {
 public:
  VelocityField(MLPSpec spec, ParamVector params);

  const MLPSpec& spec() const { return mlp_.spec(); }
  const ParamVector& params() const { return params_; }
  const Mlp& mlp() const { return mlp_; }
  Index dimension() const { return mlp_.spec().input_dim; }

  Vector velocity(const Vector& x, double t) const;
  Matrix velocity(const PointSet& x, double t) const;
  Matrix input_jacobian(const Vector& x, double t) const;
  Vector divergence(const PointSet& x, double t) const;

 private:
  Mlp mlp_;
  ParamVector params_;
};

}  // namespace geoflow::models
