#include "support.hpp"

#include "geoflow/autodiff/tape.hpp"
#include "geoflow/geodesic/geodesic.hpp"

using namespace geoflow;
using namespace geoflow::geodesic;
using autodiff::Tape;
using autodiff::Var;

namespace {

std::shared_ptr<autodiff::Objective> paraboloid() {
  return std::make_shared<autodiff::QuadraticObjective>(Matrix::Identity(2, 2));
}

std::shared_ptr<autodiff::Objective> flat(Index k) {
  return std::make_shared<autodiff::TapeObjective>(k, [](Tape& t, std::span<const Var>) { return t.constant(3.0); });
}

// Fixed-step RK4 on (α, α̇) with the analytic gradient and Hessian of ½|θ|².
Vector rk4_paraboloid(const Vector& v, int steps) {
  auto f = [](const Vector& s) {
    const Vector a = s.head(2), ad = s.tail(2);
    Vector out(4);
    out.head(2) = ad;
    out.tail(2) = -(ad.squaredNorm() / (1.0 + a.squaredNorm())) * a;
    return out;
  };
  Vector s = Vector::Zero(4);
  s.tail(2) = v;
  const double h = 1.0 / steps;
  for (int i = 0; i < steps; ++i) {
    const Vector k1 = f(s), k2 = f(s + 0.5 * h * k1), k3 = f(s + 0.5 * h * k2), k4 = f(s + h * k3);
    s += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return s.head(2);
}

}  // namespace

TEST_CASE("geodesic_rhs") {
  const laplace::LossManifold m(paraboloid());
  CHECK(geodesic_rhs(m, Vector::Zero(2), Vector{{0.3, 1.0}}).value.isZero());
  const auto a = geodesic_rhs(m, Vector{{1.0, 0.0}}, Vector{{0.0, 1.0}});
  CHECK(a.value[0] == doctest::Approx(-0.5));
  CHECK(a.value[1] == 0.0);

  auto f = std::make_shared<autodiff::TapeObjective>(3, [](Tape&, std::span<const Var> p) {
    return exp(p[0]) * cos(p[1]) + p[2] * p[2] * p[0];
  });
  const laplace::LossManifold mf(f);
  const auto r = geodesic_rhs(mf, Vector{{0.2, 0.5, -0.4}}, Vector{{1.0, -0.3, 0.7}});
  const double cosang = r.value.dot(r.grad) / (r.value.norm() * r.grad.norm());
  CHECK(std::abs(std::abs(cosang) - 1.0) < 1e-12);
}

TEST_CASE("riemannian_speed") {
  CHECK(riemannian_speed(Vector::Zero(2), Vector{{3.0, 4.0}}) == 5.0);
  CHECK(riemannian_speed(Vector{{0.0, 2.0}}, Vector{{3.0, 0.0}}) == 3.0);
  CHECK(riemannian_speed(Vector::Ones(1), Vector::Ones(1)) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("exp_map trivial cases") {
  const laplace::LossManifold m(paraboloid());
  const Vector theta{{0.4, -0.2}};
  CHECK(exp_map(m, theta, Vector::Zero(2)).endpoint == theta);

  const laplace::LossManifold fm(flat(2));
  const Vector v{{1.5, -2.0}};
  const auto s = exp_map(fm, theta, v);
  CHECK(s.status == GeodesicStatus::converged);
  CHECK((s.endpoint - (theta + v)).norm() < 1e-12);
}

TEST_CASE("exp_map on the paraboloid matches a fine fixed-step reference") {
  const laplace::LossManifold m(paraboloid());
  for (const Vector& v : {Vector{{1.0, 0.0}}, Vector{{0.8, -1.7}}, Vector{{3.0, 2.0}}}) {
    const auto s = exp_map(m, Vector::Zero(2), v);
    REQUIRE(s.status == GeodesicStatus::converged);
    const Vector ref = rk4_paraboloid(v, 1000000);
    CHECK((s.endpoint - ref).norm() < 1e-4);
    CHECK(s.speed_drift() < 1e-3);
    CHECK(s.endpoint.norm() <= v.norm() + 1e-9);
  }
}

TEST_CASE("exp_map budget exceeded keeps the partial path") {
  const laplace::LossManifold m(paraboloid());
  GeodesicConfig cfg;
  cfg.max_steps = 3;
  const auto s = exp_map(m, Vector::Zero(2), Vector{{30.0, 10.0}}, cfg);
  CHECK(s.status == GeodesicStatus::budget_exceeded);
  CHECK(s.times.back() < 1.0);
  CHECK(s.endpoint == s.alpha.back());
}

TEST_CASE("fixed-step Euler integrator converges to the adaptive one") {
  const laplace::LossManifold m(paraboloid());
  const Vector v{{1.2, 0.4}};
  GeodesicConfig cfg;
  cfg.integrator = Integrator::euler_fixed;
  cfg.fixed_steps = 20000;
  const auto e = exp_map(m, Vector::Zero(2), v, cfg);
  const auto r = exp_map(m, Vector::Zero(2), v);
  CHECK((e.endpoint - r.endpoint).norm() < 1e-3);
}

TEST_CASE("is_map_point") {
  const laplace::LossManifold m(paraboloid());
  double g = -1.0;
  CHECK(is_map_point(m, Vector{{1e-4, 0.0}}, &g));
  CHECK(g == doctest::Approx(1e-4));
  CHECK_FALSE(is_map_point(m, Vector{{1.0, 0.0}}));
}

TEST_CASE("discrete exp map") {
  const laplace::LossManifold fm(flat(2));
  const Vector theta{{0.1, 0.2}}, v{{1.0, -1.0}};
  for (int n : {2, 5, 40}) {
    CHECK((discrete_exp_map(fm, theta, v, n).endpoint - (theta + v)).norm() < 1e-15);
    CHECK(correction_vector(fm, theta, v, n).isZero());
  }

  const laplace::LossManifold m(paraboloid());
  const Vector v2{{1.1, 0.6}};
  const auto d = discrete_exp_map(m, Vector::Zero(2), v2, 64);
  CHECK((d.endpoint - d.sum_form).cwiseAbs().maxCoeff() < 1e-10);
  const double eps = 1.0 / 64;
  CHECK((d.endpoint - (d.euclidean - eps * eps * correction_vector(m, Vector::Zero(2), v2, 64))).cwiseAbs().maxCoeff() <
        1e-8);
}

TEST_CASE("discrete exp map converges at first order") {
  const laplace::LossManifold m(paraboloid());
  const Vector v{{1.3, -0.7}};
  const Vector ref = exp_map(m, Vector::Zero(2), v, GeodesicConfig{Integrator::rk45_adaptive, 1e-12, 1e-12}).endpoint;
  double prev = -1.0;
  for (int n : {50, 100, 200, 400}) {
    const double err = (discrete_exp_map(m, Vector::Zero(2), v, n).endpoint - ref).norm();
    if (prev > 0) CHECK(prev / err == doctest::Approx(2.0).epsilon(0.1));
    prev = err;
  }
}

TEST_CASE("correction vector follows the gradient sign in 1D") {
  auto f = std::make_shared<autodiff::TapeObjective>(1, [](Tape&, std::span<const Var> p) {
    return square(p[0]) + 0.1 * square(square(p[0]));
  });
  const laplace::LossManifold m(f);
  for (double v : {0.7, -1.3}) {
    const ParamVector k = correction_vector(m, Vector::Zero(1), Vector::Constant(1, v), 16);
    CHECK(k[0] * v > 0.0);
  }
}
