#pragma once

#include "geoflow/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace geoflow::data {

/// Gaussian mixture. Covariances must be symmetric positive definite.
struct GmmSpec {
  std::vector<Vector> means;
  std::vector<Matrix> covariances;
  Vector weights;

  Index dim() const { return means.empty() ? 0 : means.front().size(); }
  void validate() const;

  /// Equal-weight mixture of isotropic components sharing one variance.
  static GmmSpec isotropic(std::vector<Vector> means, double variance);
};

/// n draws (D x n). Component labels are sampled from the weights; the stream is
/// target_samples unless another is requested.
PointSet gmm_sample(const GmmSpec& spec, Index n, std::uint64_t seed, std::uint64_t substream = 0);

double gmm_logpdf(const GmmSpec& spec, const Vector& x);
Vector gmm_logpdf(const GmmSpec& spec, const PointSet& x);

enum class FixtureName { toy_1d, toy_2d };

struct FixtureDataset {
  FixtureName name;
  PointSet train;  // D x M
  GmmSpec target;

  Index dim() const { return train.rows(); }
};

/// Radius of the toy-2d training points around their mode.
inline constexpr double kToy2dRadius = 0.3;

FixtureDataset fixture(FixtureName name);
FixtureDataset fixture(const std::string& name);
std::string to_string(FixtureName name);

}  // namespace geoflow::data
