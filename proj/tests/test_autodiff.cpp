#include "support.hpp"

#include "geoflow/autodiff/derivatives.hpp"
#include "geoflow/autodiff/tape.hpp"
#include "geoflow/data/rng.hpp"

using namespace geoflow;
using namespace geoflow::autodiff;
using geoflow::testing::rel_err;

namespace {

QuadraticObjective diag23() {
  Matrix a = Matrix::Zero(2, 2);
  a.diagonal() << 2.0, 3.0;
  return QuadraticObjective(a);
}

// The same tanh MLP loss written out scalar by scalar on the tape.
Var tape_mlp_loss(Tape& tape, std::span<const Var> p, const models::MLPSpec& spec, const Matrix& features,
                  const Matrix& targets) {
  const auto layout = models::layout_table(spec);
  Var total = tape.constant(0.0);
  for (Index n = 0; n < features.cols(); ++n) {
    std::vector<Var> h;
    for (Index i = 0; i < features.rows(); ++i) h.push_back(tape.constant(features(i, n)));
    for (std::size_t l = 0; l < layout.size(); ++l) {
      const auto& L = layout[l];
      std::vector<Var> next;
      for (Index o = 0; o < L.out; ++o) {
        Var z = p[static_cast<std::size_t>(L.bias_offset + o)];
        for (Index i = 0; i < L.in; ++i) z = z + p[static_cast<std::size_t>(L.weight_offset + o * L.in + i)] * h[i];
        next.push_back(l + 1 < layout.size() ? tanh(z) : z);
      }
      h = std::move(next);
    }
    for (Index d = 0; d < targets.rows(); ++d) total = total + square(h[d] - targets(d, n));
  }
  return total / static_cast<double>(features.cols());
}

}  // namespace

TEST_CASE("tape arithmetic and elementary functions") {
  Tape t;
  const Var x = t.variable(0.7), y = t.variable(-1.3);
  const Var f = sin(x) * exp(y) + log(x) / sqrt(x * x + 1.0) - sigmoid(y) + cos(x - y);
  const auto adj = t.adjoints(f);
  const double dx = std::cos(0.7) * std::exp(-1.3) +
                    (1.0 / 0.7 * std::sqrt(1.49) - std::log(0.7) * 0.7 / std::sqrt(1.49)) / 1.49 -
                    std::sin(0.7 + 1.3);
  const double s = 1.0 / (1.0 + std::exp(1.3));
  const double dy = std::sin(0.7) * std::exp(-1.3) - s * (1.0 - s) + std::sin(0.7 + 1.3);
  CHECK(adj[x.node()] == doctest::Approx(dx).epsilon(1e-12));
  CHECK(adj[y.node()] == doctest::Approx(dy).epsilon(1e-12));
}

TEST_CASE("gradient of quadratic and constant losses") {
  const auto q = diag23();
  const ParamVector g = gradient(q, Vector::Ones(2));
  CHECK(g[0] == 2.0);
  CHECK(g[1] == 3.0);

  TapeObjective constant(3, [](Tape& t, std::span<const Var>) { return t.constant(7.0); });
  CHECK(gradient(constant, Vector::Ones(3)).isZero());
}

TEST_CASE("hvp of quadratic loss") {
  const auto q = diag23();
  Vector v(2);
  v << 1.0, 0.0;
  for (auto m : {HvpMethod::exact, HvpMethod::finite_difference}) {
    const ParamVector hv = hvp(q, Vector::Ones(2), v, m);
    CHECK(hv[0] == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(std::abs(hv[1]) < 1e-9);
    CHECK(hvp(q, Vector::Ones(2), Vector::Zero(2), m).isZero());
  }
}

TEST_CASE("MLP loss gradient matches finite differences") {
  for (auto act : {models::Activation::tanh, models::Activation::silu}) {
    const auto loss = geoflow::testing::small_loss(1, {6, 5}, 12, 3, act);
    auto rng = data::rng_stream(11, data::StreamId::test);
    const ParamVector theta = rng.normal_vector(loss.dimension()) * 0.5;
    const ParamVector g = gradient(loss, theta);
    CHECK(rel_err(g, geoflow::testing::fd_gradient(loss, theta)) < 1e-4);
  }
}

TEST_CASE("MLP loss gradient agrees with the scalar tape") {
  const auto loss = geoflow::testing::small_loss(2, {5, 4}, 9, 5);
  const auto& spec = loss.mlp().spec();
  TapeObjective taped(loss.dimension(), [&](Tape& t, std::span<const Var> p) {
    return tape_mlp_loss(t, p, spec, loss.features(), loss.regression_targets());
  });
  auto rng = data::rng_stream(12, data::StreamId::test);
  const ParamVector theta = rng.normal_vector(loss.dimension()) * 0.4;
  ParamVector g1(theta.size()), g2(theta.size());
  const double v1 = loss.value_and_gradient(theta, g1);
  const double v2 = taped.value_and_gradient(theta, g2);
  CHECK(v1 == doctest::Approx(v2).epsilon(1e-12));
  CHECK(rel_err(g1, g2) < 1e-10);
}

TEST_CASE("MLP exact hvp matches difference of gradients") {
  for (auto act : {models::Activation::tanh, models::Activation::silu}) {
    const auto loss = geoflow::testing::small_loss(2, {7, 6}, 10, 4, act);
    auto rng = data::rng_stream(13, data::StreamId::test);
    const ParamVector theta = rng.normal_vector(loss.dimension()) * 0.5;
    const ParamVector v = rng.normal_vector(loss.dimension());
    const ParamVector hv = hvp(loss, theta, v, HvpMethod::exact);
    CHECK(rel_err(hv, geoflow::testing::fd_hvp(loss, theta, v)) < 1e-3);
  }
}

TEST_CASE("dense Hessian") {
  Matrix a(3, 3);
  a << 4, 1, 0, 1, 3, -1, 0, -1, 2;
  const QuadraticObjective q(a);
  CHECK((hessian_dense(q, Vector::Zero(3)) - a).norm() < 1e-12);

  TapeObjective f(3, [](Tape&, std::span<const Var> p) {
    return exp(p[0] * p[1]) + sin(p[2]) * p[0] * p[0] + square(p[1] * p[2]);
  });
  Vector theta(3);
  theta << 0.3, -0.4, 0.9;
  const Matrix h = hessian_dense(f, theta);
  CHECK((h - h.transpose()).cwiseAbs().maxCoeff() < 1e-8);
  for (Index j = 0; j < 3; ++j) {
    const ParamVector hj = hvp(f, theta, Vector::Unit(3, j));
    // hessian_dense symmetrises the columns it collects
    CHECK((h.col(j) - hj).cwiseAbs().maxCoeff() < 1e-6);
  }
  Matrix exact(3, 3);
  const double e = std::exp(0.3 * -0.4);
  exact << -0.4 * -0.4 * e + 2 * std::sin(0.9), e * (1 + 0.3 * -0.4), 2 * 0.3 * std::cos(0.9),
      e * (1 + 0.3 * -0.4), 0.3 * 0.3 * e + 2 * 0.81, 4 * -0.4 * 0.9,
      2 * 0.3 * std::cos(0.9), 4 * -0.4 * 0.9, -std::sin(0.9) * 0.09 + 2 * 0.16;
  CHECK((h - exact).cwiseAbs().maxCoeff() < 1e-5);

  const auto loss = geoflow::testing::small_loss(1, {4}, 6, 1);
  const Matrix hm = hessian_dense(loss, models::init_params(loss.mlp().spec(), 2));
  CHECK((hm - hm.transpose()).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("dense Hessian refuses large dimension") {
  const QuadraticObjective q(Matrix::Identity(30, 30));
  CHECK_THROWS_AS(hessian_dense(q, Vector::Zero(30), 20), CapacityError);
}

TEST_CASE("masked objective zeroes gradient and hvp outside the mask") {
  auto inner = std::make_shared<QuadraticObjective>(Matrix::Identity(4, 4) * 2.0);
  const MaskedObjective m(inner, {1, 3});
  ParamVector g(4);
  m.value_and_gradient(Vector::Ones(4), g);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 2.0);
  const ParamVector hv = hvp(m, Vector::Ones(4), Vector::Ones(4));
  CHECK(hv[2] == 0.0);
  CHECK(hv[3] == doctest::Approx(2.0));
}

TEST_CASE("input Jacobian") {
  models::MLPSpec spec;
  spec.input_dim = 3;
  spec.hidden = {8, 8};
  const ParamVector p = models::init_params(spec, 4) * 3.0;
  const models::VelocityField u(spec, p);
  Vector x(3);
  x << 0.2, -0.7, 1.1;
  const Matrix j = u.input_jacobian(x, 0.4);
  Matrix fd(3, 3);
  const double h = 1e-6;
  for (Index c = 0; c < 3; ++c) {
    Vector xp = x, xm = x;
    xp[c] += h;
    xm[c] -= h;
    fd.col(c) = (u.velocity(xp, 0.4) - u.velocity(xm, 0.4)) / (2 * h);
  }
  CHECK((j - fd).norm() / fd.norm() < 1e-4);

  const auto c = geoflow::testing::constant_field(Vector::Constant(2, 0.5));
  CHECK(c.input_jacobian(Vector::Zero(2), 0.1).isZero());

  // u(x) ≈ x: Jacobian ≈ identity
  const auto lin = geoflow::testing::near_linear_field(1.0);
  CHECK(lin.input_jacobian(Vector::Constant(1, 0.3), 0.5)(0, 0) == doctest::Approx(1.0).epsilon(1e-8));
}
