#include "support.hpp"

#include "geoflow/laplace/laplace.hpp"

#include <algorithm>

using namespace geoflow;
using namespace geoflow::laplace;

namespace {

LossManifold quadratic(const Vector& diag) {
  return LossManifold(std::make_shared<autodiff::QuadraticObjective>(Matrix(diag.asDiagonal())));
}

Matrix empirical_cov(const LaplacePosterior& post, Index n, std::uint64_t seed) {
  const Index k = post.dimension();
  Matrix acc = Matrix::Zero(k, k);
  for (Index s = 0; s < n; ++s) {
    const ParamVector v = sample_velocity(post, seed, static_cast<std::uint64_t>(s));
    acc += v * v.transpose();
  }
  return acc / static_cast<double>(n);
}

}  // namespace

TEST_CASE("dense posterior of a quadratic") {
  const auto m = quadratic(Vector{{4.0, 1.0}});
  const auto b = build_dense(m, Vector::Zero(2));
  Matrix expected = Matrix::Zero(2, 2);
  expected.diagonal() << 0.25, 1.0;
  CHECK((b.posterior.covariance() - expected).norm() < 1e-12);
  CHECK(b.spectrum.n_positive == 2);
  CHECK(b.spectrum.eigenvalues[0] == doctest::Approx(4.0));
}

TEST_CASE("indefinite Hessian keeps only positive curvature") {
  const auto m = quadratic(Vector{{2.0, -1.0}});
  const auto b = build_dense(m, Vector::Zero(2));
  CHECK(b.posterior.rank() == 1);
  CHECK(b.posterior.factor().lambda_plus[0] == doctest::Approx(2.0));
  CHECK(b.spectrum.n_truncated == 1);
  CHECK_THROWS_AS(build_dense(quadratic(Vector{{-2.0, -1.0}}), Vector::Zero(2)), DegenerateCurvatureError);
}

TEST_CASE("empirical velocity covariance matches the inverse Hessian") {
  Matrix a(3, 3);
  a << 3.0, 0.5, 0.0, 0.5, 2.0, 0.3, 0.0, 0.3, 0.5;
  const LossManifold m(std::make_shared<autodiff::QuadraticObjective>(a));
  auto b = build_dense(m, Vector::Zero(3), 2.0);
  const Matrix target = 4.0 * a.inverse();
  const Matrix emp = empirical_cov(b.posterior, 50000, 21);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j)
      if (std::abs(target(i, j)) > 0.1 * target.diagonal().maxCoeff())
        CHECK(std::abs(emp(i, j) - target(i, j)) / std::abs(target(i, j)) < 0.05);
}

TEST_CASE("sample_velocity and sample_euclidean") {
  const auto m = quadratic(Vector{{4.0, 1.0, 0.25}});
  auto b = build_dense(m, Vector{{1.0, 2.0, 3.0}}, 0.0);
  CHECK(sample_velocity(b.posterior, 1, 0).isZero());
  CHECK(sample_euclidean(b.posterior, 1, 0) == b.posterior.mean());
  b.posterior.set_eta(1.0);
  CHECK(sample_euclidean(b.posterior, 1, 4) - b.posterior.mean() == sample_velocity(b.posterior, 1, 4));
  CHECK(sample_velocity(b.posterior, 1, 4) != sample_velocity(b.posterior, 1, 5));

  const Index n = 10000;
  Vector mean = Vector::Zero(3);
  for (Index s = 0; s < n; ++s) mean += sample_euclidean(b.posterior, 3, static_cast<std::uint64_t>(s));
  mean /= static_cast<double>(n);
  const Vector se = (Vector{{0.25, 1.0, 4.0}} / static_cast<double>(n)).cwiseSqrt();
  for (Index i = 0; i < 3; ++i) CHECK(std::abs(mean[i] - b.posterior.mean()[i]) < 4.0 * se[i]);

  const ParamVector top = sample_velocity(b.posterior, 1, 4, VelocityMode::top_eigvec);
  CHECK(top[1] == 0.0);
  CHECK(top[2] == 0.0);
  const ParamVector bottom = sample_velocity(b.posterior, 1, 4, VelocityMode::bottom_eigvec);
  CHECK(bottom[0] == 0.0);
  CHECK(bottom[1] == 0.0);
}

TEST_CASE("masked posterior is supported on the mask") {
  const auto loss = geoflow::testing::small_loss(1, {4}, 6, 1);
  auto shared = std::make_shared<flowmatch::FlowMatchingLoss>(loss);
  const auto mask = models::param_slice_mask(loss.mlp().spec(), "output");
  const LossManifold m(shared, mask);
  const ParamVector theta = models::init_params(loss.mlp().spec(), 2);
  const auto b = build_dense(m, theta);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const ParamVector v = sample_velocity(b.posterior, 9, s);
    for (Index i = 0; i < v.size(); ++i)
      if (std::find(mask.begin(), mask.end(), i) == mask.end()) CHECK(v[i] == 0.0);
  }
}

TEST_CASE("Lanczos on a diagonal Hessian") {
  const auto m = quadratic(Vector{{5.0, 3.0, 1.0}});
  const auto l = lanczos_lowrank(m, Vector::Zero(3), 3, 4);
  Eigen::SelfAdjointEigenSolver<Matrix> es(l.tridiagonal());
  Vector ev = es.eigenvalues();
  std::sort(ev.data(), ev.data() + 3);
  CHECK(std::abs(ev[0] - 1.0) < 1e-8);
  CHECK(std::abs(ev[1] - 3.0) < 1e-8);
  CHECK(std::abs(ev[2] - 5.0) < 1e-8);
  CHECK((l.q.transpose() * l.q - Matrix::Identity(3, 3)).norm() < 1e-12);

  const auto one = lanczos_lowrank(m, Vector::Zero(3), 1, 4);
  const Vector q = one.q.col(0);
  CHECK(one.alpha[0] == doctest::Approx(q.dot(Vector{{5.0, 3.0, 1.0}}.cwiseProduct(q))).epsilon(1e-14));
  CHECK(one.q.col(0) == l.q.col(0));
}

TEST_CASE("Lanczos breakdown on a low-rank Hessian") {
  const auto m = quadratic(Vector{{2.0, 2.0, 0.0, 0.0, 0.0}});
  const auto l = lanczos_lowrank(m, Vector::Zero(5), 5, 1);
  CHECK(l.breakdown);
  CHECK(l.achieved < 5);
}

TEST_CASE("truncate_psd") {
  LanczosResult l;
  l.q = Matrix::Identity(3, 3);
  l.alpha = Vector{{2.0, 0.0, -1.0}};
  l.beta = Vector::Zero(2);
  l.achieved = 3;
  const auto t = truncate_psd(l);
  CHECK(t.factor.lambda_plus.size() == 1);
  CHECK(t.factor.lambda_plus[0] == 2.0);

  l.alpha = Vector{{2.0, 0.5, 1.0}};
  CHECK(truncate_psd(l).factor.lambda_plus.size() == 3);

  // H₊⁻¹ q_i = q_i / λ_i on the retained Ritz vectors
  const auto m = quadratic(Vector{{9.0, 4.0, 2.0, 1.0, 0.5, 0.25}});
  const auto b = build_lanczos(m, Vector::Zero(6), 4, 2);
  const Matrix& basis = b.posterior.basis();
  for (Index i = 0; i < b.posterior.rank(); ++i) {
    const ParamVector q = basis.col(i);
    const ParamVector want = q / b.posterior.factor().lambda_plus[i];
    CHECK((b.posterior.apply_inverse(q) - want).norm() / want.norm() < 1e-6);
  }
}

TEST_CASE("Lanczos matches dense on a ~500 parameter model") {
  auto loss = std::make_shared<flowmatch::FlowMatchingLoss>(geoflow::testing::small_loss(1, {20, 20}, 32, 3));
  REQUIRE(loss->dimension() == 501);
  flowmatch::TrainConfig tc;
  tc.epochs = 3000;
  const auto tr = flowmatch::train_map(loss->mlp().spec(), loss->data(), tc);
  const LossManifold m(loss);
  const auto dense = build_dense(m, tr.params);
  const auto lz = build_lanczos(m, tr.params, 100, 5);
  for (Index i = 0; i < 5; ++i) {
    const double d = dense.spectrum.eigenvalues[i], l = lz.spectrum.eigenvalues[i];
    CHECK(std::abs(l - d) / d < 1e-3);
  }
}
