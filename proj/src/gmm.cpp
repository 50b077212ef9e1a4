#include "geoflow/data/gmm.hpp"

#include "geoflow/data/rng.hpp"

#include <cmath>
#include <numbers>

namespace geoflow::data {

void GmmSpec::validate() const {
  if (means.empty()) throw std::invalid_argument("mixture has no components");
  if (covariances.size() != means.size() || weights.size() != static_cast<Index>(means.size()))
    throw std::invalid_argument("mixture component arrays differ in length");
  if (std::abs(weights.sum() - 1.0) > 1e-12 || (weights.array() < 0.0).any())
    throw std::invalid_argument("mixture weights must lie on the simplex");
  const Index d = dim();
  for (std::size_t k = 0; k < means.size(); ++k) {
    if (means[k].size() != d || covariances[k].rows() != d || covariances[k].cols() != d)
      throw std::invalid_argument("mixture component has the wrong dimension");
    Eigen::LLT<Matrix> llt(covariances[k]);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("mixture covariance is not positive definite");
  }
}

GmmSpec GmmSpec::isotropic(std::vector<Vector> means, double variance) {
  GmmSpec spec;
  const Index d = means.front().size();
  spec.covariances.assign(means.size(), variance * Matrix::Identity(d, d));
  spec.weights = Vector::Constant(static_cast<Index>(means.size()), 1.0 / static_cast<double>(means.size()));
  spec.means = std::move(means);
  spec.validate();
  return spec;
}

PointSet gmm_sample(const GmmSpec& spec, Index n, std::uint64_t seed, std::uint64_t substream) {
  spec.validate();
  if (n < 1) throw std::invalid_argument("gmm_sample needs n >= 1");
  std::vector<Matrix> factors;
  for (const auto& c : spec.covariances) factors.push_back(Eigen::LLT<Matrix>(c).matrixL());
  auto rng = rng_stream(seed, StreamId::target_samples, substream);
  PointSet out(spec.dim(), n);
  for (Index i = 0; i < n; ++i) {
    const double u = rng.uniform();
    std::size_t k = 0;
    double cumulative = spec.weights[0];
    while (u >= cumulative && k + 1 < spec.means.size()) cumulative += spec.weights[static_cast<Index>(++k)];
    out.col(i) = spec.means[k] + factors[k] * rng.normal_vector(spec.dim());
  }
  return out;
}

double gmm_logpdf(const GmmSpec& spec, const Vector& x) {
  return gmm_logpdf(spec, Matrix(x))[0];
}

Vector gmm_logpdf(const GmmSpec& spec, const PointSet& x) {
  const Index d = spec.dim();
  const std::size_t k_count = spec.means.size();
  Matrix terms(static_cast<Index>(k_count), x.cols());
  for (std::size_t k = 0; k < k_count; ++k) {
    Eigen::LLT<Matrix> llt(spec.covariances[k]);
    const Matrix l = llt.matrixL();
    const double log_det = 2.0 * l.diagonal().array().log().sum();
    const Matrix centred = x.colwise() - spec.means[k];
    const Matrix solved = llt.matrixL().solve(centred);
    const double constant = std::log(spec.weights[static_cast<Index>(k)]) -
                            0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + log_det);
    terms.row(static_cast<Index>(k)) = (constant - 0.5 * solved.colwise().squaredNorm().array()).matrix();
  }
  const Eigen::RowVectorXd peak = terms.colwise().maxCoeff();
  const Eigen::RowVectorXd sum = (terms.rowwise() - peak).array().exp().colwise().sum();
  return (peak.array() + sum.array().log()).transpose();
}

FixtureDataset fixture(FixtureName name) {
  if (name == FixtureName::toy_1d) {
    FixtureDataset f{name, PointSet(1, 2), GmmSpec::isotropic({Vector::Constant(1, -1.5), Vector::Constant(1, 1.5)}, 0.1)};
    f.train << -1.5, 1.5;
    return f;
  }
  const Vector mode = Vector::Constant(2, 1.5);
  FixtureDataset f{name, PointSet(2, 6), GmmSpec::isotropic({mode, -mode}, 0.2)};
  const double angles[3] = {90.0, 210.0, 330.0};
  for (int m = 0; m < 2; ++m) {
    const Vector centre = m == 0 ? Vector(mode) : Vector(-mode);
    for (int j = 0; j < 3; ++j) {
      const double a = angles[j] * std::numbers::pi / 180.0;
      f.train.col(3 * m + j) = centre + kToy2dRadius * Vector{{std::cos(a), std::sin(a)}};
    }
  }
  return f;
}

FixtureDataset fixture(const std::string& name) {
  if (name == "toy-1d") return fixture(FixtureName::toy_1d);
  if (name == "toy-2d") return fixture(FixtureName::toy_2d);
  throw ConfigError("unknown fixture '" + name + "' (expected toy-1d or toy-2d)");
}

std::string to_string(FixtureName name) { return name == FixtureName::toy_1d ? "toy-1d" : "toy-2d"; }

}  // namespace geoflow::data
