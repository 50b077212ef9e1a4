#include "support.hpp"

#include "geoflow/models/mlp.hpp"

#include <algorithm>
#include <iomanip>
#include <set>

using namespace geoflow;
using namespace geoflow::models;

namespace {
MLPSpec spec_1d_8() {
  MLPSpec s;
  s.input_dim = 1;
  s.hidden = {8};
  return s;
}
}  // namespace

TEST_CASE("parameter count and layout") {
  const MLPSpec s = spec_1d_8();
  CHECK(s.parameter_count() == 33);
  const auto t = layout_table(s);
  REQUIRE(t.size() == 2);
  CHECK(t[0].weight_offset == 0);
  CHECK(t[0].bias_offset == 16);
  CHECK(t[1].weight_offset == 24);
  CHECK(t[1].end() == 33);

  MLPSpec sin = s;
  sin.time_encoding = TimeEncoding::concat_sinusoidal;
  sin.n_freqs = 3;
  CHECK(sin.feature_dim() == 7);
  CHECK(sin.parameter_count() == 7 * 8 + 8 + 9);
}

TEST_CASE("init_params") {
  MLPSpec s;
  s.input_dim = 2;
  s.hidden = {16, 16};
  const ParamVector a = init_params(s, 5), b = init_params(s, 5);
  CHECK(a == b);
  CHECK(a != init_params(s, 6));
  for (const auto& l : layout_table(s)) {
    CHECK(a.segment(l.bias_offset, l.out).isZero());
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
    CHECK(a.segment(l.weight_offset, l.in * l.out).cwiseAbs().maxCoeff() <= bound);
  }
}

TEST_CASE("forward pass") {
  const MLPSpec s = spec_1d_8();
  const VelocityField zero(s, ParamVector::Zero(33));
  CHECK(zero.velocity(Vector(Vector::Constant(1, 0.8)), 0.3).isZero());
  const VelocityField u(s, init_params(s, 1));
  const Vector x = Vector::Constant(1, 0.25);
  CHECK(u.velocity(x, 0.6) == u.velocity(x, 0.6));
  CHECK_THROWS_AS(VelocityField(s, ParamVector::Zero(32)), std::invalid_argument);
}

TEST_CASE("divergence equals Jacobian trace") {
  MLPSpec s;
  s.input_dim = 2;
  s.hidden = {6, 6};
  s.activation = Activation::silu;
  const VelocityField u(s, init_params(s, 8) * 2.0);
  PointSet x(2, 3);
  x << 0.1, -0.5, 1.2, 0.4, 0.0, -0.9;
  const Vector div = u.divergence(x, 0.7);
  for (Index i = 0; i < 3; ++i)
    CHECK(div[i] == doctest::Approx(u.input_jacobian(x.col(i), 0.7).trace()).epsilon(1e-12));
}

TEST_CASE("param_slice_mask") {
  const MLPSpec s = spec_1d_8();
  const auto all = param_slice_mask(s, "all");
  CHECK(all.size() == 33);
  const auto l0 = param_slice_mask(s, "layer0");
  REQUIRE(l0.size() == 24);
  for (Index i = 0; i < 24; ++i) CHECK(l0[static_cast<std::size_t>(i)] == i);
  const auto out = param_slice_mask(s, "output");
  CHECK(out == param_slice_mask(s, "layer1"));
  std::set<Index> u(l0.begin(), l0.end());
  u.insert(out.begin(), out.end());
  CHECK(u.size() == 33);
  CHECK_THROWS_AS(param_slice_mask(s, "layer7"), ConfigError);
}

// recorded from the reference build; guards against silent changes in init, pairing or training
constexpr double kGoldenU = 0.86597280196829352;

TEST_CASE("trained 1D field at (x=0, t=0.5)") {
  const auto& t = geoflow::testing::trained_1d();
  const VelocityField u(t.cfg.model, t.result.params);
  const double v = u.velocity(Vector(Vector::Zero(1)), 0.5)[0];
  MESSAGE("u(0, 0.5) = " << std::setprecision(17) << v);
  CHECK(v == doctest::Approx(kGoldenU).epsilon(1e-6));
}
