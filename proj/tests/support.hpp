#pragma once

#include "geoflow/autodiff/derivatives.hpp"
#include "geoflow/cli/config.hpp"
#include "geoflow/cli/pipeline.hpp"
#include "geoflow/flowmatch/flowmatch.hpp"

#include <doctest.h>

#include <cmath>

namespace geoflow::testing {

/// Central differences of the objective value, one coordinate at a time.
inline ParamVector fd_gradient(const autodiff::Objective& f, const ParamVector& theta, double h = 1e-5) {
  ParamVector g(theta.size());
  ParamVector p = theta;
  for (Index i = 0; i < theta.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    const double up = f.value(p);
    p[i] = keep - h;
    const double down = f.value(p);
    p[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Difference of gradients along v.
inline ParamVector fd_hvp(const autodiff::Objective& f, const ParamVector& theta, const ParamVector& v,
                          double eps = 1e-4) {
  ParamVector gp(theta.size()), gm(theta.size());
  f.value_and_gradient(theta + eps * v, gp);
  f.value_and_gradient(theta - eps * v, gm);
  return (gp - gm) / (2.0 * eps);
}

inline double rel_err(const Vector& a, const Vector& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

/// Flow-matching loss of a small random model on the 1D fixture.
inline flowmatch::FlowMatchingLoss small_loss(Index input_dim, std::vector<Index> hidden, Index n_pairs,
                                              std::uint64_t seed, models::Activation act = models::Activation::tanh) {
  models::MLPSpec spec;
  spec.input_dim = input_dim;
  spec.hidden = std::move(hidden);
  spec.activation = act;
  PointSet train(input_dim, 2);
  for (Index j = 0; j < input_dim; ++j) train.row(j) << -1.5, 1.5;
  return flowmatch::FlowMatchingLoss(spec, flowmatch::make_paired_dataset(train, n_pairs, seed));
}

/// A one-hidden-unit field u(x, t) = k·tanh(εx)/ε, linear in x to O(ε²x³).
inline models::VelocityField near_linear_field(double k, double eps = 1e-5) {
  models::MLPSpec spec;
  spec.input_dim = 1;
  spec.hidden = {1};
  ParamVector p(5);
  p << eps, 0.0, 0.0, k / eps, 0.0;
  return models::VelocityField(spec, p);
}

/// Constant field u ≡ c: zero weights, output bias c.
inline models::VelocityField constant_field(const Vector& c) {
  models::MLPSpec spec;
  spec.input_dim = c.size();
  spec.hidden = {4};
  ParamVector p = ParamVector::Zero(spec.parameter_count());
  p.tail(c.size()) = c;
  return models::VelocityField(spec, p);
}

struct Trained {
  cli::RunConfig cfg;
  flowmatch::PairedDataset data;
  flowmatch::TrainResult result;
};

/// MAP fit of the 1D study configuration, computed once per process.
inline const Trained& trained_1d() {
  static const Trained t = [] {
    Trained r;
    r.cfg = cli::study_config("1d", cli::Profile::smoke);
    r.cfg.set_seed(7);
    r.data = cli::training_data(r.cfg);
    r.result = flowmatch::train_map(r.cfg.model, r.data, r.cfg.train);
    return r;
  }();
  return t;
}

}  // namespace geoflow::testing
