#include "support.hpp"

#include "geoflow/data/gmm.hpp"
#include "geoflow/data/rng.hpp"
#include "geoflow/metrics/metrics.hpp"

#include <algorithm>
#include <numeric>

using namespace geoflow;
using namespace geoflow::metrics;

namespace {

PointSet line(std::initializer_list<double> xs) {
  PointSet p(1, static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) p(0, i++) = x;
  return p;
}

// Minimum over all permutations of the mean matched distance.
double brute_w1(const PointSet& a, const PointSet& b) {
  std::vector<Index> perm(static_cast<std::size_t>(a.cols()));
  std::iota(perm.begin(), perm.end(), 0);
  double best = 1e300;
  do {
    double s = 0.0;
    for (Index i = 0; i < a.cols(); ++i) s += (a.col(i) - b.col(perm[static_cast<std::size_t>(i)])).norm();
    best = std::min(best, s / a.cols());
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

TEST_CASE("memorisation flag") {
  const PointSet train = line({0.0, 3.0});
  const auto f = memorised(Vector::Constant(1, 1.0), train, {});
  CHECK(f.memorised);
  CHECK(f.d1 == 1.0);
  CHECK(f.d_ref == 2.0);
  CHECK(f.nearest == 0);

  // duplicate nearest training points are never memorised
  const PointSet dup = line({1.0, 1.0, 5.0});
  for (double c : {0.1, 0.5, 0.99}) CHECK_FALSE(memorised(Vector::Constant(1, 2.0), dup, {c, 1}).memorised);
  CHECK_FALSE(memorised(Vector::Constant(1, 1.5), line({0.0, 3.0}), {0.99, 1}).memorised);

  CHECK(MemorisationConfig{}.c == doctest::Approx(1.0 / 3.0));
  CHECK_THROWS_AS((MemorisationConfig{1.0, 1}.validate()), ConfigError);
  CHECK_THROWS_AS(memorised(Vector::Zero(1), line({0.0}), {}), std::invalid_argument);
}

TEST_CASE("memorisation with several neighbours") {
  const PointSet train = line({0.0, 2.0, 4.0});
  const auto f = memorised(Vector::Constant(1, 0.5), train, {0.1, 2});
  CHECK(f.d_ref == doctest::Approx((1.5 + 3.5) / 2));
  CHECK(f.memorised);
}

TEST_CASE("memorisation ratio") {
  const PointSet train = line({-1.5, 1.5});
  CHECK(memorisation_ratio(train, train, {0.5, 1}).ratio == 1.0);
  const PointSet far = line({0.0, 0.0, 0.0});
  CHECK(memorisation_ratio(far, train, {0.5, 1}).ratio == 0.0);
  const PointSet mix = line({1.4, 0.1, -1.5, 0.0});
  CHECK(memorisation_ratio(mix, train, {0.25, 1}).ratio == 0.5);
}

TEST_CASE("memorisation curve") {
  const auto grid = default_c_grid();
  REQUIRE(grid.size() == 50);
  CHECK(grid.front() == doctest::Approx(0.02));
  CHECK(grid.back() == doctest::Approx(0.98));

  auto rng = data::rng_stream(3, data::StreamId::test);
  PointSet gen = rng.normal_vector(400).transpose();
  gen(0, 0) = 1.5;
  gen(0, 1) = -1.5;
  const PointSet train = line({-1.5, 1.5});
  const auto curve = memorisation_curve(gen, train, grid);
  for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].second >= curve[i - 1].second);
  for (std::size_t i = 0; i < curve.size(); i += 7)
    CHECK(curve[i].second == memorisation_ratio(gen, train, {grid[i], 1}).ratio);
  const auto tiny = memorisation_curve(gen, train, {1e-12});
  CHECK(tiny[0].second == doctest::Approx(2.0 / 400));
}

TEST_CASE("KDE bandwidth and normalisation") {
  auto rng = data::rng_stream(4, data::StreamId::test);
  const PointSet x = rng.normal_vector(1000).transpose();
  const Kde k(x);
  std::vector<double> s(x.data(), x.data() + 1000);
  std::sort(s.begin(), s.end());
  const double sd = std::sqrt((x.array() - x.mean()).square().sum() / 999.0);
  CHECK(k.bandwidth()[0] <= 0.9 * sd * std::pow(1000.0, -0.2) + 1e-15);
  const PointSet grid = Vector::LinSpaced(4001, -8, 8).transpose();
  const Vector p = k.log_density(grid).array().exp();
  CHECK(p.sum() * 16.0 / 4000 == doctest::Approx(1.0).epsilon(1e-3));

  PointSet x2(2, 500);
  x2.row(0) = rng.normal_vector(500).transpose();
  x2.row(1) = 3.0 * rng.normal_vector(500).transpose();
  const Kde k2(x2);
  CHECK(k2.bandwidth()[1] / k2.bandwidth()[0] == doctest::Approx(3.0).epsilon(0.15));
  CHECK_THROWS_AS(Kde(PointSet::Zero(1, 10)), NumericalError);
}

TEST_CASE("KL of target samples against themselves") {
  for (Index d : {1, 2}) {
    const auto target = data::GmmSpec::isotropic({Vector::Zero(d)}, 1.0);
    const double kl = kl_to_target(data::gmm_sample(target, 5000, 9), target);
    MESSAGE("self KL, standard normal, D = " << d << ": " << kl);
    CHECK(kl >= -0.05);
    CHECK(kl <= 0.15);
  }
}

TEST_CASE("KL on the toy mixtures matches the smoothing bias of the bandwidth") {
  // E_p[log (p * K_h) − log p]: the smoothed mixture keeps its means and gains h² per axis.
  for (const char* name : {"toy-1d", "toy-2d"}) {
    const auto f = data::fixture(name);
    const PointSet gen = data::gmm_sample(f.target, 5000, 9);
    const Kde kde(gen);
    data::GmmSpec smoothed = f.target;
    for (auto& c : smoothed.covariances) c.diagonal() += kde.bandwidth().array().square().matrix();
    const PointSet fresh = data::gmm_sample(f.target, 200000, 10);
    const double bias = (data::gmm_logpdf(smoothed, fresh) - data::gmm_logpdf(f.target, fresh)).mean();
    const double kl = kl_to_target(gen, f.target);
    MESSAGE(name << ": KL " << kl << ", smoothing bias " << bias);
    CHECK(std::abs(kl - bias) < 0.02);
  }
}

TEST_CASE("KL estimates") {
  const auto f1 = data::fixture("toy-1d");
  auto rng = data::rng_stream(5, data::StreamId::test);
  const PointSet far = (20.0 + 0.05 * rng.normal_vector(200).array()).matrix().transpose();
  CHECK(kl_to_target(far, f1.target) > 5.0);

  const PointSet g = data::gmm_sample(f1.target, 300, 2);
  const Kde same(g);
  CHECK(kl_estimate(g, [&](const PointSet& x) { return same.log_density(x); }) == 0.0);
  CHECK_THROWS(kl_to_target(g.leftCols(20), f1.target));
}

TEST_CASE("KL subset resampling") {
  const auto f = data::fixture("toy-1d");
  const PointSet g = data::gmm_sample(f.target, 1000, 3);
  const auto a = kl_resampled(g, f.target, 7);
  const auto b = kl_resampled(g, f.target, 7);
  CHECK(a.repetitions.size() == 50);
  CHECK(a.repetitions == b.repetitions);
  const double m = std::accumulate(a.repetitions.begin(), a.repetitions.end(), 0.0) / 50;
  CHECK(a.mean == doctest::Approx(m));
  CHECK(a.standard_error > 0.0);
  CHECK(kl_resampled(g, f.target, 8).repetitions != a.repetitions);
}

TEST_CASE("Wasserstein-1") {
  const PointSet a = line({0.0, 1.0});
  CHECK(wasserstein1(a, a) == 0.0);
  CHECK(wasserstein1(line({2.0}), line({-1.5})) == 3.5);
  CHECK(wasserstein1(line({0.0, 1.0}), line({0.0, 2.0})) == 0.5);
  CHECK_THROWS_AS(wasserstein1(a, line({0.0})), std::invalid_argument);

  auto rng = data::rng_stream(6, data::StreamId::test);
  for (int trial = 0; trial < 5; ++trial) {
    PointSet x(2, 7), y(2, 7);
    for (Index i = 0; i < 7; ++i) {
      x.col(i) = rng.normal_vector(2);
      y.col(i) = rng.normal_vector(2) * 2.0;
    }
    CHECK(wasserstein1(x, y) == doctest::Approx(brute_w1(x, y)).epsilon(1e-12));
    CHECK(wasserstein1(x, y) == doctest::Approx(wasserstein1(y, x)).epsilon(1e-12));
  }
  // sorted coupling in 1D agrees with the assignment solver
  PointSet u = rng.normal_vector(8).transpose(), v = rng.normal_vector(8).transpose();
  CHECK(wasserstein1(u, v) == doctest::Approx(brute_w1(u, v)).epsilon(1e-12));
}

TEST_CASE("assignment solver") {
  Matrix c(3, 3);
  c << 4, 1, 3, 2, 0, 5, 3, 2, 2;
  const auto a = solve_assignment(c);
  double cost = 0.0;
  for (Index i = 0; i < 3; ++i) cost += c(i, a[static_cast<std::size_t>(i)]);
  CHECK(cost == 5.0);
}

TEST_CASE("endpoint statistics") {
  const Vector map = Vector{{1.0, 2.0}};
  const PointSet same = map.replicate(1, 4);
  const auto s = endpoint_stats(same, map);
  CHECK(s.covariance.isZero());
  CHECK(s.bias == 0.0);

  PointSet two(2, 2);
  two.col(0) = Vector{{0.0, 0.0}};
  two.col(1) = Vector{{2.0, 4.0}};
  const auto t = endpoint_stats(two, map);
  const Vector d = two.col(1) - two.col(0);
  CHECK((t.covariance - 0.5 * d * d.transpose()).norm() < 1e-14);
  CHECK(t.bias == 0.0);

  models::MLPSpec spec;
  spec.input_dim = 1;
  spec.hidden = {6};
  const ParamVector theta = models::init_params(spec, 2);
  const auto e = endpoint_stats({theta, theta, theta}, theta, spec, Vector::Constant(1, 0.3), {});
  CHECK(e.covariance.isZero());
  CHECK(e.bias == 0.0);
}

TEST_CASE("field uncertainty grid") {
  models::MLPSpec spec;
  spec.input_dim = 1;
  spec.hidden = {6, 6};
  const ParamVector theta = models::init_params(spec, 3) * 2.0;
  const PointSet xs = Vector::LinSpaced(9, -2, 2).transpose();
  const Vector ts = Vector::LinSpaced(4, 0, 1);
  CHECK(field_uncertainty_grid({theta}, xs, ts, spec).isZero());

  ParamVector flipped = theta;
  const auto out = models::layout_table(spec).back();
  flipped.segment(out.weight_offset, out.end() - out.weight_offset) *= -1.0;
  const Matrix g = field_uncertainty_grid({theta, flipped}, xs, ts, spec);
  const models::VelocityField u(spec, theta);
  for (Index i = 0; i < 9; ++i)
    for (Index j = 0; j < 4; ++j)
      CHECK(g(i, j) == doctest::Approx(std::abs(u.velocity(Vector(xs.col(i)), ts[j])[0])).epsilon(1e-12));
}

TEST_CASE("margin check") {
  const Vector x1 = Vector::Constant(1, 0.0), x2 = Vector::Constant(1, 10.0);
  const auto z = margin_check(Vector::Constant(1, 2.0), x1, x2, 0.0, 0.25);
  CHECK(z.memorised_before);
  CHECK(z.memorised_after);

  const auto m = margin_check(Vector::Constant(1, 2.0), x1, x2, 3.0, 0.25);
  CHECK(m.memorised_before);
  CHECK_FALSE(m.memorised_after);
  CHECK_FALSE(m.predicate_memorised);
  CHECK(m.lower == 2.0);
  CHECK(m.upper == 7.0);

  // collinear sweep in 2D: predicate and brute force agree everywhere
  const Vector a{{1.0, -1.0}}, b{{7.0, 7.0}};
  const Vector xh = a + 0.2 * (b - a);
  const double d1 = (xh - a).norm(), d2 = (xh - b).norm();
  int disagree = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto r = margin_check(xh, a, b, i * (d2 - d1) / 10000.0, 0.3);
    if (r.memorised_after != r.predicate_memorised) ++disagree;
  }
  CHECK(disagree == 0);
  CHECK_THROWS_AS(margin_check(Vector{{0.0, 1.0}}, a, b, 0.1, 0.3), std::invalid_argument);
}
