#include "geoflow/models/mlp.hpp"

#include "geoflow/data/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace geoflow::models {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstWeights = Eigen::Map<const RowMatrix>;
using Weights = Eigen::Map<RowMatrix>;
using ConstBias = Eigen::Map<const Vector>;
using Bias = Eigen::Map<Vector>;

ConstWeights weights(const ParamVector& p, const LayerLayout& l) {
  return ConstWeights(p.data() + l.weight_offset, l.out, l.in);
}
ConstBias bias(const ParamVector& p, const LayerLayout& l) {
  return ConstBias(p.data() + l.bias_offset, l.out);
}
Weights weights(ParamVector& p, const LayerLayout& l) {
  return Weights(p.data() + l.weight_offset, l.out, l.in);
}
Bias bias(ParamVector& p, const LayerLayout& l) { return Bias(p.data() + l.bias_offset, l.out); }

// σ, σ' and σ'' evaluated elementwise; derivatives are expressed through z and σ(z).
Matrix activate(Activation act, const Matrix& z) {
  if (act == Activation::tanh) return z.array().tanh().matrix();
  return (z.array() / (1.0 + (-z.array()).exp())).matrix();
}

Matrix activation_d1(Activation act, const Matrix& z, const Matrix& a) {
  if (act == Activation::tanh) return (1.0 - a.array().square()).matrix();
  const auto s = 1.0 / (1.0 + (-z.array()).exp());
  return (s + z.array() * s * (1.0 - s)).matrix();
}

Matrix activation_d2(Activation act, const Matrix& z, const Matrix& a) {
  if (act == Activation::tanh) return (-2.0 * a.array() * (1.0 - a.array().square())).matrix();
  const auto s = 1.0 / (1.0 + (-z.array()).exp());
  return (s * (1.0 - s) * (2.0 + z.array() * (1.0 - 2.0 * s))).matrix();
}

struct ForwardCache {
  std::vector<Matrix> pre;   // pre[l]: pre-activation of hidden layer l
  std::vector<Matrix> acts;  // acts[0] = features, acts[l+1] = σ(pre[l])
  Matrix output;
};

ForwardCache run_forward(const MLPSpec& spec, const std::vector<LayerLayout>& layout,
                         const ParamVector& p, const Matrix& features) {
  ForwardCache c;
  const std::size_t n_hidden = spec.hidden.size();
  c.acts.reserve(n_hidden + 1);
  c.pre.reserve(n_hidden);
  c.acts.push_back(features);
  for (std::size_t l = 0; l < n_hidden; ++l) {
    Matrix z = weights(p, layout[l]) * c.acts[l];
    z.colwise() += bias(p, layout[l]);
    c.acts.push_back(activate(spec.activation, z));
    c.pre.push_back(std::move(z));
  }
  const LayerLayout& last = layout.back();
  c.output = weights(p, last) * c.acts.back();
  c.output.colwise() += bias(p, last);
  return c;
}

void require_finite_output(const Matrix& out) {
  if (!out.allFinite()) throw NumericalError("non-finite network output", -1);
}

}  // namespace

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "silu"; }

std::string to_string(TimeEncoding e) {
  return e == TimeEncoding::concat_raw ? "concat-raw" : "concat-sinusoidal";
}

Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "silu") return Activation::silu;
  throw ConfigError("unknown activation '" + s + "' (expected tanh or silu)");
}

TimeEncoding parse_time_encoding(const std::string& s) {
  if (s == "concat-raw") return TimeEncoding::concat_raw;
  if (s == "concat-sinusoidal") return TimeEncoding::concat_sinusoidal;
  throw ConfigError("unknown time encoding '" + s + "'");
}

Index MLPSpec::feature_dim() const {
  return input_dim + (time_encoding == TimeEncoding::concat_raw ? 1 : 2 * n_freqs);
}

Index MLPSpec::parameter_count() const {
  Index count = 0;
  Index in = feature_dim();
  for (Index h : hidden) {
    count += in * h + h;
    in = h;
  }
  return count + in * input_dim + input_dim;
}

void MLPSpec::validate() const {
  if (input_dim <= 0) throw ConfigError("input dimension must be positive");
  for (Index h : hidden) {
    if (h <= 0) throw ConfigError("hidden widths must be positive");
  }
  if (time_encoding == TimeEncoding::concat_sinusoidal && n_freqs <= 0)
    throw ConfigError("sinusoidal time encoding needs n_freqs >= 1");
}

std::vector<LayerLayout> layout_table(const MLPSpec& spec) {
  spec.validate();
  std::vector<LayerLayout> table;
  Index offset = 0;
  Index in = spec.feature_dim();
  for (std::size_t l = 0; l <= spec.hidden.size(); ++l) {
    const Index out = l < spec.hidden.size() ? spec.hidden[l] : spec.input_dim;
    LayerLayout layer{"layer" + std::to_string(l), in, out, offset, offset + in * out};
    offset = layer.end();
    in = out;
    table.push_back(std::move(layer));
  }
  return table;
}

std::vector<Index> param_slice_mask(const MLPSpec& spec, const std::string& selector) {
  const auto table = layout_table(spec);
  std::vector<Index> mask;
  if (selector == "all") {
    mask.resize(static_cast<std::size_t>(spec.parameter_count()));
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = static_cast<Index>(i);
    return mask;
  }
  const LayerLayout* found = nullptr;
  if (selector == "output") found = &table.back();
  for (const auto& layer : table) {
    if (layer.name == selector) found = &layer;
  }
  if (found == nullptr) throw ConfigError("unknown layer selector '" + selector + "'");
  for (Index i = found->weight_offset; i < found->end(); ++i) mask.push_back(i);
  return mask;
}

ParamVector init_params(const MLPSpec& spec, std::uint64_t seed) {
  const auto table = layout_table(spec);
  ParamVector p = ParamVector::Zero(spec.parameter_count());
  auto rng = data::rng_stream(seed, data::StreamId::init);
  for (const auto& layer : table) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
    for (Index i = layer.weight_offset; i < layer.bias_offset; ++i)
      p[i] = bound * (2.0 * rng.uniform() - 1.0);
  }
  return p;
}

Mlp::Mlp(MLPSpec spec)
    : spec_(std::move(spec)), layout_(layout_table(spec_)), count_(spec_.parameter_count()) {}

void Mlp::check_params(const ParamVector& params) const {
  if (params.size() != count_) {
    std::ostringstream msg;
    msg << "parameter vector has " << params.size() << " entries, architecture needs " << count_;
    throw std::invalid_argument(msg.str());
  }
}

Matrix Mlp::features(const PointSet& x, const Vector& t) const {
  if (x.rows() != spec_.input_dim || x.cols() != t.size())
    throw std::invalid_argument("feature input shape mismatch");
  Matrix f(spec_.feature_dim(), x.cols());
  f.topRows(spec_.input_dim) = x;
  if (spec_.time_encoding == TimeEncoding::concat_raw) {
    f.row(spec_.input_dim) = t.transpose();
  } else {
    for (int k = 0; k < spec_.n_freqs; ++k) {
      const double w = std::numbers::pi * (k + 1);
      f.row(spec_.input_dim + 2 * k) = (w * t.array()).sin().transpose();
      f.row(spec_.input_dim + 2 * k + 1) = (w * t.array()).cos().transpose();
    }
  }
  return f;
}

Matrix Mlp::features(const PointSet& x, double t) const {
  return features(x, Vector::Constant(x.cols(), t));
}

Matrix Mlp::forward_features(const ParamVector& params, const Matrix& features) const {
  check_params(params);
  Matrix out = run_forward(spec_, layout_, params, features).output;
  require_finite_output(out);
  return out;
}

Matrix Mlp::forward(const ParamVector& params, const PointSet& x, double t) const {
  return forward_features(params, features(x, t));
}

double Mlp::regression_loss(const ParamVector& params, const Matrix& features,
                            const Matrix& targets) const {
  check_params(params);
  const Matrix out = run_forward(spec_, layout_, params, features).output;
  return (out - targets).squaredNorm() / static_cast<double>(features.cols());
}

double Mlp::regression_loss_and_gradient(const ParamVector& params, const Matrix& features,
                                         const Matrix& targets, ParamVector& grad) const {
  check_params(params);
  const ForwardCache c = run_forward(spec_, layout_, params, features);
  const double n = static_cast<double>(features.cols());
  const Matrix residual = c.output - targets;
  grad.resize(count_);

  const std::size_t n_hidden = spec_.hidden.size();
  Matrix gz = (2.0 / n) * residual;
  for (std::size_t l = n_hidden + 1; l-- > 0;) {
    const LayerLayout& layer = layout_[l];
    weights(grad, layer).noalias() = gz * c.acts[l].transpose();
    bias(grad, layer) = gz.rowwise().sum();
    if (l == 0) break;
    const Matrix ga = weights(params, layer).transpose() * gz;
    gz = activation_d1(spec_.activation, c.pre[l - 1], c.acts[l]).cwiseProduct(ga);
  }
  return residual.squaredNorm() / n;
}

double Mlp::regression_loss_gradient_hvp(const ParamVector& params, const Matrix& features,
                                         const Matrix& targets, const ParamVector& direction,
                                         ParamVector& grad, ParamVector& hv) const {
  check_params(params);
  check_params(direction);
  const ForwardCache c = run_forward(spec_, layout_, params, features);
  const double n = static_cast<double>(features.cols());
  const std::size_t n_hidden = spec_.hidden.size();

  // Forward tangent: R{·} denotes the directional derivative along `direction`.
  std::vector<Matrix> r_pre(n_hidden);
  std::vector<Matrix> r_acts(n_hidden + 1);
  std::vector<Matrix> d1(n_hidden);
  r_acts[0] = Matrix::Zero(features.rows(), features.cols());
  for (std::size_t l = 0; l < n_hidden; ++l) {
    const LayerLayout& layer = layout_[l];
    Matrix rz = weights(direction, layer) * c.acts[l];
    if (l > 0) rz.noalias() += weights(params, layer) * r_acts[l];
    rz.colwise() += bias(direction, layer);
    d1[l] = activation_d1(spec_.activation, c.pre[l], c.acts[l + 1]);
    r_acts[l + 1] = d1[l].cwiseProduct(rz);
    r_pre[l] = std::move(rz);
  }
  const LayerLayout& last = layout_.back();
  Matrix r_out = weights(direction, last) * c.acts[n_hidden];
  r_out.noalias() += weights(params, last) * r_acts[n_hidden];
  r_out.colwise() += bias(direction, last);

  grad.resize(count_);
  hv.resize(count_);
  const Matrix residual = c.output - targets;
  Matrix gz = (2.0 / n) * residual;
  Matrix r_gz = (2.0 / n) * r_out;
  for (std::size_t l = n_hidden + 1; l-- > 0;) {
    const LayerLayout& layer = layout_[l];
    weights(grad, layer).noalias() = gz * c.acts[l].transpose();
    bias(grad, layer) = gz.rowwise().sum();
    weights(hv, layer).noalias() = r_gz * c.acts[l].transpose();
    if (l > 0) weights(hv, layer).noalias() += gz * r_acts[l].transpose();
    bias(hv, layer) = r_gz.rowwise().sum();
    if (l == 0) break;
    const Matrix ga = weights(params, layer).transpose() * gz;
    Matrix r_ga = weights(direction, layer).transpose() * gz;
    r_ga.noalias() += weights(params, layer).transpose() * r_gz;
    const Matrix d2 = activation_d2(spec_.activation, c.pre[l - 1], c.acts[l]);
    r_gz = d2.cwiseProduct(r_pre[l - 1]).cwiseProduct(ga) + d1[l - 1].cwiseProduct(r_ga);
    gz = d1[l - 1].cwiseProduct(ga);
  }
  return residual.squaredNorm() / n;
}

Vector Mlp::divergence(const ParamVector& params, const PointSet& x, double t) const {
  check_params(params);
  const Matrix f = features(x, t);
  const ForwardCache c = run_forward(spec_, layout_, params, f);
  require_finite_output(c.output);
  const std::size_t n_hidden = spec_.hidden.size();
  std::vector<Matrix> d1(n_hidden);
  for (std::size_t l = 0; l < n_hidden; ++l)
    d1[l] = activation_d1(spec_.activation, c.pre[l], c.acts[l + 1]);

  Vector div = Vector::Zero(x.cols());
  for (Index j = 0; j < spec_.input_dim; ++j) {
    // Tangent of the first layer's pre-activation along e_j is column j of W0.
    const auto w0 = weights(params, layout_[0]);
    Matrix tangent;
    if (n_hidden == 0) {
      div += Vector::Constant(x.cols(), w0(j, j));
      continue;
    }
    tangent = d1[0].cwiseProduct(w0.col(j).replicate(1, x.cols()));
    for (std::size_t l = 1; l < n_hidden; ++l)
      tangent = d1[l].cwiseProduct(weights(params, layout_[l]) * tangent);
    div += (weights(params, layout_.back()).row(j) * tangent).transpose();
  }
  return div;
}

Matrix Mlp::input_jacobian(const ParamVector& params, const Vector& x, double t) const {
  check_params(params);
  const Matrix f = features(Matrix(x), t);
  const ForwardCache c = run_forward(spec_, layout_, params, f);
  require_finite_output(c.output);
  const Index d = spec_.input_dim;
  // Columns 0..D-1 of the first weight matrix act on x; the rest act on time features.
  Matrix tangent = weights(params, layout_[0]).leftCols(d);
  for (std::size_t l = 0; l < spec_.hidden.size(); ++l) {
    const Vector d1 = activation_d1(spec_.activation, c.pre[l], c.acts[l + 1]);
    tangent = d1.asDiagonal() * tangent;
    tangent = weights(params, layout_[l + 1]) * tangent;
  }
  return tangent;
}

VelocityField::VelocityField(MLPSpec spec, ParamVector params)
    : mlp_(std::move(spec)), params_(std::move(params)) {
  if (params_.size() != mlp_.parameter_count())
    throw std::invalid_argument("velocity field parameter count does not match its spec");
}

Vector VelocityField::velocity(const Vector& x, double t) const {
  return mlp_.forward(params_, Matrix(x), t).col(0);
}

Matrix VelocityField::velocity(const PointSet& x, double t) const {
  return mlp_.forward(params_, x, t);
}

Matrix VelocityField::input_jacobian(const Vector& x, double t) const {
  return mlp_.input_jacobian(params_, x, t);
}

Vector VelocityField::divergence(const PointSet& x, double t) const {
  return mlp_.divergence(params_, x, t);
}

}  // namespace geoflow::models
