#pragma once

#include "geoflow/laplace/manifold.hpp"

#include <cstdint>
#include <string>

namespace geoflow::laplace {

/// Eigenvalues at or below this fraction of the largest one are dropped.
inline constexpr double kRelativeEigenFloor = 1e-8;

struct SpectrumReport {
  Vector eigenvalues;  // descending, before truncation
  Index n_positive = 0;
  Index n_truncated = 0;
  double floor = 0.0;
};

struct LanczosResult {
  Matrix q;      // K x m, orthonormal columns
  Vector alpha;  // diagonal of T (m)
  Vector beta;   // off-diagonal of T (m - 1)
  Index achieved = 0;  // m; smaller than requested after breakdown
  bool breakdown = false;

  Matrix tridiagonal() const;
};

/// Truncated positive part of a Hessian approximation: H₊ ≈ B Λ₊ Bᵀ with B = Q V₊ (or
/// the retained eigenvectors in the dense case).
struct LowRankFactor {
  Matrix q;             // K x m Lanczos basis (dense case: K x r retained eigenvectors)
  Matrix v_plus;        // m x r (dense case: identity)
  Vector lambda_plus;   // r, strictly positive, descending
};

enum class VelocityMode { gaussian, top_eigvec, bottom_eigvec };

VelocityMode parse_velocity_mode(const std::string& s);
std::string to_string(VelocityMode m);

class LaplacePosterior {
 public:
  enum class Kind { dense, low_rank };

  LaplacePosterior(ParamVector mean, Kind kind, LowRankFactor factor, double eta,
                   std::vector<Index> mask = {});

  const ParamVector& mean() const { return mean_; }
  Kind kind() const { return kind_; }
  const LowRankFactor& factor() const { return factor_; }
  double eta() const { return eta_; }
  void set_eta(double eta);
  Index rank() const { return factor_.lambda_plus.size(); }
  Index dimension() const { return mean_.size(); }
  const std::vector<Index>& mask() const { return mask_; }

  /// Orthonormal K x r basis B of the retained eigen-directions.
  const Matrix& basis() const { return basis_; }
  /// S with S Sᵀ = H₊⁻¹ (K x r).
  Matrix covariance_sqrt() const;
  /// H₊⁻¹ w without forming the K x K matrix.
  ParamVector apply_inverse(const ParamVector& w) const;
  Matrix covariance() const;

 private:
  ParamVector mean_;
  Kind kind_;
  LowRankFactor factor_;
  double eta_;
  std::vector<Index> mask_;
  Matrix basis_;
};

struct PosteriorBuild {
  LaplacePosterior posterior;
  SpectrumReport spectrum;
};

/// Dense Hessian at θ*, symmetrised and eigendecomposed; pairs with λ <= floor dropped.
PosteriorBuild build_dense(const LossManifold& manifold, const ParamVector& theta_star,
                           double eta = 1.0, Index dense_limit = autodiff::kDefaultDenseLimit);

/// k-step Lanczos with full re-orthogonalisation, using only HVPs. The start vector is a
/// normalised standard normal from the lanczos_start stream (projected onto the mask).
/// Stops early when β_j < 1e-12.
LanczosResult lanczos_lowrank(const LossManifold& manifold, const ParamVector& theta_star,
                              Index k, std::uint64_t seed, std::uint64_t substream = 0);

struct TruncatedFactor {
  LowRankFactor factor;
  SpectrumReport spectrum;
};

/// Eigendecomposes T and keeps pairs with λ > kRelativeEigenFloor · λ_max.
TruncatedFactor truncate_psd(const LanczosResult& lanczos);

PosteriorBuild build_lanczos(const LossManifold& manifold, const ParamVector& theta_star, Index k,
                             std::uint64_t seed, double eta = 1.0, std::uint64_t substream = 0);

/// v = η · B Λ₊^{-1/2} ε with ε ~ N(0, I_r) from the posterior stream at `substream`.
/// top_eigvec / bottom_eigvec draw ε only along the largest / smallest retained pair.
ParamVector sample_velocity(const LaplacePosterior& post, std::uint64_t seed, std::uint64_t substream,
                            VelocityMode mode = VelocityMode::gaussian);

/// θ* + sample_velocity(...).
ParamVector sample_euclidean(const LaplacePosterior& post, std::uint64_t seed, std::uint64_t substream,
                             VelocityMode mode = VelocityMode::gaussian);

}  // namespace geoflow::laplace
