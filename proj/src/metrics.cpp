#include "geoflow/metrics/metrics.hpp"

#include "geoflow/data/rng.hpp"
#include "geoflow/util/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

namespace geoflow::metrics {

namespace {

constexpr double kTieTolerance = 1e-12;

void check_c(double c) {
  if (!(c > 0.0 && c < 1.0)) {
    std::ostringstream msg;
    msg << "memorisation threshold c must lie in (0, 1), got " << c;
    throw ConfigError(msg.str());
  }
}

struct Neighbours {
  double d1 = 0.0;
  double d_ref = 0.0;
  Index nearest = -1;
};

Neighbours neighbours(const Vector& x, const PointSet& train, int k) {
  if (train.cols() < k + 1) {
    std::ostringstream msg;
    msg << "memorisation needs at least " << k + 1 << " training points, got " << train.cols();
    throw std::invalid_argument(msg.str());
  }
  if (x.size() != train.rows()) throw std::invalid_argument("point and training set differ in dimension");
  std::vector<std::pair<double, Index>> d(static_cast<std::size_t>(train.cols()));
  for (Index j = 0; j < train.cols(); ++j) d[static_cast<std::size_t>(j)] = {(train.col(j) - x).norm(), j};
  const auto kth = d.begin() + k + 1;
  std::partial_sort(d.begin(), kth, d.end());
  Neighbours out;
  out.d1 = d[0].first;
  out.nearest = d[0].second;
  double sum = 0.0;
  for (int i = 1; i <= k; ++i) sum += d[static_cast<std::size_t>(i)].first;
  out.d_ref = sum / k;
  return out;
}

bool flag(double d1, double d_ref, double c) {
  if (std::abs(d1 - d_ref) <= kTieTolerance) return false;
  return d1 * d1 <= c * d_ref * d_ref;
}

std::vector<Neighbours> all_neighbours(const PointSet& gen, const PointSet& train, int k) {
  if (gen.cols() == 0) throw std::invalid_argument("memorisation needs a nonempty generated set");
  std::vector<Neighbours> out(static_cast<std::size_t>(gen.cols()));
  util::parallel_for(out.size(), [&](std::size_t i) {
    out[i] = neighbours(gen.col(static_cast<Index>(i)), train, k);
  });
  return out;
}

double sample_std(const Eigen::Ref<const Vector>& v) {
  const double m = v.mean();
  return std::sqrt((v.array() - m).square().sum() / static_cast<double>(v.size() - 1));
}

// Linear-interpolated quantile of sorted data.
double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

void MemorisationConfig::validate() const {
  check_c(c);
  if (k_neighbours < 1) throw ConfigError("k_neighbours must be >= 1");
}

MemorisationFlag memorised(const Vector& x_hat, const PointSet& train, const MemorisationConfig& cfg) {
  cfg.validate();
  const Neighbours n = neighbours(x_hat, train, cfg.k_neighbours);
  return {flag(n.d1, n.d_ref, cfg.c), n.d1, n.d_ref, n.nearest};
}

MemorisationReport memorisation_ratio(const PointSet& gen, const PointSet& train,
                                      const MemorisationConfig& cfg) {
  cfg.validate();
  const auto nb = all_neighbours(gen, train, cfg.k_neighbours);
  MemorisationReport report;
  report.config = cfg;
  report.samples.reserve(nb.size());
  Index count = 0;
  for (const auto& n : nb) {
    const bool m = flag(n.d1, n.d_ref, cfg.c);
    count += m ? 1 : 0;
    report.samples.push_back({m, n.d1, n.d_ref, n.nearest});
  }
  report.ratio = static_cast<double>(count) / static_cast<double>(nb.size());
  return report;
}

std::vector<double> default_c_grid() {
  std::vector<double> grid(50);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = 0.02 + 0.96 * static_cast<double>(i) / 49.0;
  return grid;
}

std::vector<std::pair<double, double>> memorisation_curve(const PointSet& gen, const PointSet& train,
                                                          const std::vector<double>& c_grid,
                                                          int k_neighbours) {
  for (std::size_t i = 0; i < c_grid.size(); ++i) {
    check_c(c_grid[i]);
    if (i > 0 && !(c_grid[i] > c_grid[i - 1])) throw ConfigError("c grid must be strictly ascending");
  }
  if (k_neighbours < 1) throw ConfigError("k_neighbours must be >= 1");
  const auto nb = all_neighbours(gen, train, k_neighbours);
  std::vector<std::pair<double, double>> curve;
  curve.reserve(c_grid.size());
  for (double c : c_grid) {
    Index count = 0;
    for (const auto& n : nb) count += flag(n.d1, n.d_ref, c) ? 1 : 0;
    curve.emplace_back(c, static_cast<double>(count) / static_cast<double>(nb.size()));
  }
  return curve;
}

Kde::Kde(PointSet samples) : samples_(std::move(samples)) {
  const Index n = samples_.cols();
  const Index d = samples_.rows();
  if (n < 2) throw NumericalError("kernel density estimate needs at least two samples");
  bandwidth_.resize(d);
  for (Index j = 0; j < d; ++j) {
    const Vector row = samples_.row(j).transpose();
    const double sigma = sample_std(row);
    if (d == 1) {
      std::vector<double> sorted(row.data(), row.data() + n);
      std::sort(sorted.begin(), sorted.end());
      const double iqr = quantile(sorted, 0.75) - quantile(sorted, 0.25);
      const double spread = iqr > 0.0 ? std::min(sigma, iqr / 1.34) : sigma;
      bandwidth_[j] = 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
    } else {
      bandwidth_[j] = sigma * std::pow(4.0 / ((d + 2.0) * static_cast<double>(n)), 1.0 / (d + 4.0));
    }
    if (!(bandwidth_[j] > 0.0) || !std::isfinite(bandwidth_[j]))
      throw NumericalError("kernel density estimate is degenerate (zero variance)", j);
  }
  log_norm_ = -std::log(static_cast<double>(n)) - 0.5 * d * std::log(2.0 * std::numbers::pi) -
              bandwidth_.array().log().sum();
}

double Kde::log_density(const Vector& x) const {
  const Index n = samples_.cols();
  Vector e(n);
  for (Index i = 0; i < n; ++i)
    e[i] = -0.5 * ((samples_.col(i) - x).array() / bandwidth_.array()).square().sum();
  const double m = e.maxCoeff();
  return m + std::log((e.array() - m).exp().sum()) + log_norm_;
}

Vector Kde::log_density(const PointSet& x) const {
  Vector out(x.cols());
  for (Index i = 0; i < x.cols(); ++i) out[i] = log_density(Vector(x.col(i)));
  return out;
}

double kl_estimate(const PointSet& gen, const LogDensity& log_q) {
  const Kde kde(gen);
  const Vector lp = kde.log_density(gen);
  const Vector lq = log_q(gen);
  return (lp - lq).mean();
}

double kl_to_target(const PointSet& gen, const data::GmmSpec& target) {
  if (gen.cols() < 50) throw std::invalid_argument("KL estimate needs at least 50 samples");
  return kl_estimate(gen, [&](const PointSet& x) { return data::gmm_logpdf(target, x); });
}

KlSummary kl_resampled(const PointSet& gen, const data::GmmSpec& target, std::uint64_t seed,
                       int repetitions, Index subset) {
  if (repetitions < 2) throw std::invalid_argument("KL resampling needs at least two repetitions");
  if (subset < 2 || subset > gen.cols()) throw std::invalid_argument("KL subset size out of range");
  KlSummary out;
  out.repetitions.resize(static_cast<std::size_t>(repetitions));
  const auto log_q = [&](const PointSet& x) { return data::gmm_logpdf(target, x); };
  util::parallel_for(out.repetitions.size(), [&](std::size_t r) {
    auto rng = data::rng_stream(seed, data::StreamId::kl_resampling, r);
    std::vector<Index> idx(static_cast<std::size_t>(gen.cols()));
    std::iota(idx.begin(), idx.end(), Index{0});
    // Partial Fisher-Yates: the first `subset` entries are a uniform draw without replacement.
    for (Index i = 0; i < subset; ++i) {
      const auto span = static_cast<std::uint64_t>(gen.cols() - i);
      const Index j = i + static_cast<Index>(rng() % span);
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    PointSet sub(gen.rows(), subset);
    for (Index i = 0; i < subset; ++i) sub.col(i) = gen.col(idx[static_cast<std::size_t>(i)]);
    out.repetitions[r] = kl_estimate(sub, log_q);
  });
  const Eigen::Map<const Vector> reps(out.repetitions.data(), repetitions);
  out.mean = reps.mean();
  out.standard_error = sample_std(reps) / std::sqrt(static_cast<double>(repetitions));
  return out;
}

std::vector<Index> solve_assignment(const Matrix& cost) {
  const Index n = cost.rows();
  if (cost.cols() != n) throw std::invalid_argument("assignment needs a square cost matrix");
  if (n == 0) return {};
  // Shortest augmenting path with row/column potentials (Kuhn-Munkres), 1-based.
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<Index> p(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  std::vector<double> minv(static_cast<std::size_t>(n + 1));
  std::vector<char> used(static_cast<std::size_t>(n + 1));
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const Index i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        const auto js = static_cast<std::size_t>(j);
        if (used[js]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[js];
        if (cur < minv[js]) {
          minv[js] = cur;
          way[js] = j0;
        }
        if (minv[js] < delta) {
          delta = minv[js];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        const auto js = static_cast<std::size_t>(j);
        if (used[js]) {
          u[static_cast<std::size_t>(p[js])] += delta;
          v[js] -= delta;
        } else {
          minv[js] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Index> row_to_col(static_cast<std::size_t>(n));
  for (Index j = 1; j <= n; ++j) row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return row_to_col;
}

double wasserstein1(const PointSet& a, const PointSet& b) {
  if (a.cols() != b.cols()) {
    std::ostringstream msg;
    msg << "wasserstein1 needs equal-size sets, got " << a.cols() << " and " << b.cols();
    throw std::invalid_argument(msg.str());
  }
  if (a.rows() != b.rows()) throw std::invalid_argument("wasserstein1 sets differ in dimension");
  const Index n = a.cols();
  if (n == 0) throw std::invalid_argument("wasserstein1 needs nonempty sets");
  if (a.rows() == 1) {
    std::vector<double> x(a.data(), a.data() + n), y(b.data(), b.data() + n);
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    double total = 0.0;
    for (Index i = 0; i < n; ++i) total += std::abs(x[static_cast<std::size_t>(i)] - y[static_cast<std::size_t>(i)]);
    return total / static_cast<double>(n);
  }
  Matrix cost(n, n);
  util::parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    const auto r = static_cast<Index>(i);
    for (Index j = 0; j < n; ++j) cost(r, j) = (a.col(r) - b.col(j)).norm();
  });
  const auto match = solve_assignment(cost);
  double total = 0.0;
  for (Index i = 0; i < n; ++i) total += cost(i, match[static_cast<std::size_t>(i)]);
  return total / static_cast<double>(n);
}

EndpointStats endpoint_stats(const PointSet& endpoints, const Vector& map_endpoint) {
  if (endpoints.cols() < 2) throw std::invalid_argument("endpoint statistics need at least two samples");
  if (map_endpoint.size() != endpoints.rows()) throw std::invalid_argument("endpoint dimension mismatch");
  EndpointStats s;
  s.endpoints = endpoints;
  s.map_endpoint = map_endpoint;
  s.mean = endpoints.rowwise().mean();
  const Matrix centred = endpoints.colwise() - s.mean;
  s.covariance = centred * centred.transpose() / static_cast<double>(endpoints.cols() - 1);
  s.bias = (s.mean - map_endpoint).norm();
  return s;
}

EndpointStats endpoint_stats(const std::vector<ParamVector>& samples, const ParamVector& theta_star,
                             const models::MLPSpec& spec, const Vector& x0,
                             const flowmatch::GenerationConfig& gen_cfg) {
  PointSet endpoints(x0.size(), static_cast<Index>(samples.size()));
  for (std::size_t s = 0; s < samples.size(); ++s)
    endpoints.col(static_cast<Index>(s)) = flowmatch::generate(models::VelocityField(spec, samples[s]), x0, gen_cfg);
  const Vector map_end = flowmatch::generate(models::VelocityField(spec, theta_star), x0, gen_cfg);
  return endpoint_stats(endpoints, map_end);
}

Matrix field_uncertainty_grid(const std::vector<ParamVector>& samples, const PointSet& x_grid,
                              const Vector& t_grid, const models::MLPSpec& spec) {
  if (samples.empty() || x_grid.cols() == 0 || t_grid.size() == 0)
    throw std::invalid_argument("field uncertainty grid needs samples and nonempty grids");
  const models::Mlp mlp(spec);
  const Index g = x_grid.cols();
  const Index d = x_grid.rows();
  const auto s_count = static_cast<double>(samples.size());
  Matrix out(g, t_grid.size());
  util::parallel_for(static_cast<std::size_t>(t_grid.size()), [&](std::size_t ti) {
    const auto col = static_cast<Index>(ti);
    const Matrix features = mlp.features(x_grid, t_grid[col]);
    Matrix sum = Matrix::Zero(d, g), sum_sq = Matrix::Zero(d, g);
    for (const auto& theta : samples) {
      const Matrix u = mlp.forward_features(theta, features);
      sum += u;
      sum_sq += u.cwiseProduct(u);
    }
    const Matrix mean = sum / s_count;
    const Matrix var = (sum_sq / s_count - mean.cwiseProduct(mean)).cwiseMax(0.0);
    out.col(col) = var.colwise().sum().transpose().cwiseSqrt();
  });
  return out;
}

MarginCheck margin_check(const Vector& x_hat, const Vector& x1, const Vector& x2, double delta_norm,
                         double c) {
  check_c(c);
  if (x_hat.size() != x1.size() || x2.size() != x1.size())
    throw std::invalid_argument("margin check points differ in dimension");
  const double span = (x2 - x1).norm();
  const double d1 = (x_hat - x1).norm();
  const double d2 = (x_hat - x2).norm();
  if (!(span > 0.0)) throw std::invalid_argument("margin check needs distinct training points");
  if (std::abs(d1 + d2 - span) > 1e-9 * std::max(1.0, span))
    throw std::invalid_argument("margin check needs x_hat on the segment between x1 and x2");
  if (d1 <= 0.0 || d2 <= 0.0) throw std::invalid_argument("x_hat must lie strictly between x1 and x2");
  if (!(delta_norm >= 0.0) || delta_norm > d2)
    throw std::invalid_argument("displacement must keep x_hat between x1 and x2");

  PointSet train(x1.size(), 2);
  train.col(0) = x1;
  train.col(1) = x2;
  const MemorisationConfig cfg{c, 1};
  const Vector displaced = x_hat + delta_norm * (x2 - x1) / span;

  MarginCheck out;
  const double rc = std::sqrt(c);
  out.memorised_before = memorised(x_hat, train, cfg).memorised;
  out.memorised_after = memorised(displaced, train, cfg).memorised;
  out.lower = rc * d2 - d1;
  out.upper = d2 - rc * d1;
  out.displacement = delta_norm * (1.0 + rc);
  out.predicate_memorised = !(out.displacement > out.lower && out.displacement < out.upper);
  return out;
}

}  // namespace geoflow::metrics
