#include "support.hpp"

#include "geoflow/data/gmm.hpp"
#include "geoflow/data/rng.hpp"

#include <numbers>
#include <set>

using namespace geoflow;
using namespace geoflow::data;

TEST_CASE("rng streams") {
  auto a = rng_stream(5, StreamId::posterior, 3), b = rng_stream(5, StreamId::posterior, 3);
  for (int i = 0; i < 100; ++i) CHECK(a() == b());

  const StreamId ids[] = {StreamId::init,          StreamId::pairing_noise,  StreamId::training,
                          StreamId::posterior,     StreamId::base_samples,   StreamId::lanczos_start,
                          StreamId::target_samples, StreamId::kl_resampling, StreamId::test};
  std::set<std::vector<std::uint64_t>> seen;
  for (auto id : ids) {
    CHECK_FALSE(stream_name(id).empty());
    auto r = rng_stream(5, id);
    std::vector<std::uint64_t> first;
    for (int i = 0; i < 64; ++i) first.push_back(r());
    seen.insert(first);
  }
  CHECK(seen.size() == std::size(ids));
  auto s0 = rng_stream(5, StreamId::posterior, 0), s1 = rng_stream(5, StreamId::posterior, 1);
  CHECK(s0() != s1());
}

TEST_CASE("rng moments") {
  auto r = rng_stream(1, StreamId::test);
  const Index n = 200000;
  const Vector z = r.normal_vector(n);
  CHECK(std::abs(z.mean()) < 4.0 / std::sqrt(double(n)));
  CHECK(std::abs((z.array() - z.mean()).square().mean() - 1.0) < 0.02);
  double u = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double v = r.uniform();
    CHECK_UNARY(v >= 0.0 && v < 1.0);
    u += v;
  }
  CHECK(std::abs(u / n - 0.5) < 0.005);
}

TEST_CASE("gmm validation") {
  GmmSpec bad = GmmSpec::isotropic({Vector::Zero(1)}, 1.0);
  bad.covariances[0](0, 0) = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("gmm sampling") {
  const auto f = fixture(FixtureName::toy_1d);
  const PointSet x = gmm_sample(f.target, 10000, 2);
  CHECK(x == gmm_sample(f.target, 10000, 2));
  const double sd = std::sqrt(1.5 * 1.5 + 0.1);
  CHECK(std::abs(x.mean()) < 3.0 * sd / 100.0);

  const auto f2 = fixture(FixtureName::toy_2d);
  const PointSet y = gmm_sample(f2.target, 20000, 3);
  const Vector m = y.rowwise().mean();
  CHECK(m.norm() < 0.1);
  CHECK(((y.row(0).array() - y.row(1).array()).square().mean()) == doctest::Approx(0.4).epsilon(0.05));
}

TEST_CASE("gmm log density") {
  const auto std_normal = GmmSpec::isotropic({Vector::Zero(1)}, 1.0);
  CHECK(gmm_logpdf(std_normal, Vector(Vector::Zero(1))) == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi)));

  const auto f = fixture(FixtureName::toy_1d);
  for (double x : {0.1, 0.9, 1.5, 2.7})
    CHECK(gmm_logpdf(f.target, Vector(Vector::Constant(1, x))) ==
          doctest::Approx(gmm_logpdf(f.target, Vector(Vector::Constant(1, -x)))).epsilon(1e-14));

  const Index n = 160001;
  const PointSet grid = Vector::LinSpaced(n, -8.0, 8.0).transpose();
  const Vector p = gmm_logpdf(f.target, grid).array().exp();
  const double h = 16.0 / (n - 1);
  CHECK(std::abs(h * (p.sum() - 0.5 * (p[0] + p[n - 1])) - 1.0) < 1e-6);

  // 2D density against the closed form of one component far from the other
  const auto f2 = fixture(FixtureName::toy_2d);
  const Vector at = Vector::Constant(2, 1.5);
  CHECK(gmm_logpdf(f2.target, at) == doctest::Approx(std::log(0.5 / (2 * std::numbers::pi * 0.2))).epsilon(1e-9));
}

TEST_CASE("fixtures") {
  const auto f = fixture("toy-1d");
  CHECK(f.train.cols() == 2);
  CHECK(f.train(0, 0) == -1.5);
  CHECK(f.train(0, 1) == 1.5);

  const auto g = fixture("toy-2d");
  REQUIRE(g.train.cols() == 6);
  CHECK(g.target.means[0] == Vector::Constant(2, 1.5));
  CHECK(g.target.means[1] == Vector::Constant(2, -1.5));
  double ref = -1.0;
  for (Index i = 0; i < 6; ++i) {
    double d = 1e300;
    for (const auto& m : g.target.means) d = std::min(d, (g.train.col(i) - m).norm());
    if (ref < 0) ref = d;
    CHECK(d == doctest::Approx(ref).epsilon(1e-14));
  }
  CHECK_THROWS_AS(fixture("toy-3d"), ConfigError);
}
