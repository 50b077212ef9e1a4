#include "geoflow/laplace/laplace.hpp"

#include "geoflow/data/rng.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace geoflow::laplace {

LossManifold::LossManifold(std::shared_ptr<const autodiff::Objective> loss,
                           std::vector<Index> mask, autodiff::HvpMethod hvp_method)
    : loss_(std::move(loss)), mask_(std::move(mask)), hvp_method_(hvp_method) {
  if (!loss_) throw std::invalid_argument("loss manifold needs an objective");
  std::sort(mask_.begin(), mask_.end());
  mask_.erase(std::unique(mask_.begin(), mask_.end()), mask_.end());
  masked_ = !mask_.empty() && static_cast<Index>(mask_.size()) < loss_->dimension();
  if (masked_) {
    active_ = std::make_shared<autodiff::MaskedObjective>(loss_, mask_);
  } else {
    active_ = loss_;
    mask_.clear();
  }
}

double LossManifold::value(const ParamVector& theta) const { return active_->value(theta); }

ParamVector LossManifold::grad(const ParamVector& theta) const {
  return autodiff::gradient(*active_, theta);
}

ParamVector LossManifold::hvp(const ParamVector& theta, const ParamVector& direction) const {
  return autodiff::hvp(*active_, theta, project(direction), hvp_method_);
}

autodiff::GradientAndHvp LossManifold::grad_and_hvp(const ParamVector& theta,
                                                    const ParamVector& direction) const {
  return autodiff::gradient_and_hvp(*active_, theta, project(direction), hvp_method_);
}

ParamVector LossManifold::project(const ParamVector& v) const {
  if (!masked_) return v;
  return static_cast<const autodiff::MaskedObjective&>(*active_).project(v);
}

Matrix LanczosResult::tridiagonal() const {
  Matrix t = Matrix::Zero(achieved, achieved);
  for (Index i = 0; i < achieved; ++i) {
    t(i, i) = alpha[i];
    if (i + 1 < achieved) t(i, i + 1) = t(i + 1, i) = beta[i];
  }
  return t;
}

VelocityMode parse_velocity_mode(const std::string& s) {
  if (s == "gaussian") return VelocityMode::gaussian;
  if (s == "top-eigvec") return VelocityMode::top_eigvec;
  if (s == "bottom-eigvec") return VelocityMode::bottom_eigvec;
  throw ConfigError("unknown velocity mode '" + s + "'");
}

std::string to_string(VelocityMode m) {
  switch (m) {
    case VelocityMode::gaussian: return "gaussian";
    case VelocityMode::top_eigvec: return "top-eigvec";
    case VelocityMode::bottom_eigvec: return "bottom-eigvec";
  }
  return "gaussian";
}

LaplacePosterior::LaplacePosterior(ParamVector mean, Kind kind, LowRankFactor factor, double eta,
                                   std::vector<Index> mask)
    : mean_(std::move(mean)), kind_(kind), factor_(std::move(factor)), eta_(eta), mask_(std::move(mask)) {
  if (factor_.lambda_plus.size() == 0) throw DegenerateCurvatureError("posterior has no positive curvature");
  if ((factor_.lambda_plus.array() <= 0.0).any())
    throw std::invalid_argument("retained eigenvalues must be strictly positive");
  set_eta(eta);
  basis_ = factor_.q * factor_.v_plus;
}

void LaplacePosterior::set_eta(double eta) {
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw std::invalid_argument("posterior scale must be finite and >= 0");
  eta_ = eta;
}

Matrix LaplacePosterior::covariance_sqrt() const {
  return basis_ * factor_.lambda_plus.cwiseSqrt().cwiseInverse().asDiagonal();
}

ParamVector LaplacePosterior::apply_inverse(const ParamVector& w) const {
  const Vector coeffs = basis_.transpose() * w;
  return basis_ * coeffs.cwiseQuotient(factor_.lambda_plus);
}

Matrix LaplacePosterior::covariance() const {
  const Matrix s = covariance_sqrt();
  return s * s.transpose();
}

namespace {

SpectrumReport make_report(const Vector& ascending, double floor) {
  SpectrumReport report;
  report.eigenvalues = ascending.reverse();
  report.floor = floor;
  for (Index i = 0; i < ascending.size(); ++i) {
    if (ascending[i] > floor) ++report.n_positive;
  }
  report.n_truncated = ascending.size() - report.n_positive;
  return report;
}

double relative_floor(const Vector& eigenvalues) {
  const double top = eigenvalues.size() ? eigenvalues.maxCoeff() : 0.0;
  return top > 0.0 ? kRelativeEigenFloor * top : 0.0;
}

// Keeps eigenpairs of a symmetric matrix above the floor, ordered by descending value.
void retain_positive(const Eigen::SelfAdjointEigenSolver<Matrix>& eig, double floor,
                     Matrix& vectors, Vector& values) {
  const Vector& ev = eig.eigenvalues();
  Index r = 0;
  for (Index i = 0; i < ev.size(); ++i) r += ev[i] > floor ? 1 : 0;
  if (r == 0) {
    std::ostringstream msg;
    msg << "all " << ev.size() << " curvature eigenvalues are <= " << floor
        << "; cannot build a Laplace covariance";
    throw DegenerateCurvatureError(msg.str());
  }
  vectors.resize(eig.eigenvectors().rows(), r);
  values.resize(r);
  Index out = 0;
  for (Index i = ev.size(); i-- > 0;) {
    if (ev[i] > floor) {
      vectors.col(out) = eig.eigenvectors().col(i);
      values[out] = ev[i];
      ++out;
    }
  }
}

}  // namespace

PosteriorBuild build_dense(const LossManifold& manifold, const ParamVector& theta_star, double eta,
                           Index dense_limit) {
  const Matrix h = autodiff::hessian_dense(manifold.objective(), theta_star, dense_limit,
                                           manifold.hvp_method());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(h);
  if (eig.info() != Eigen::Success) throw NumericalError("dense Hessian eigendecomposition failed");
  const double floor = relative_floor(eig.eigenvalues());
  SpectrumReport report = make_report(eig.eigenvalues(), floor);
  LowRankFactor factor;
  retain_positive(eig, floor, factor.q, factor.lambda_plus);
  if (manifold.masked()) {
    for (Index c = 0; c < factor.q.cols(); ++c) factor.q.col(c) = manifold.project(factor.q.col(c));
  }
  factor.v_plus = Matrix::Identity(factor.lambda_plus.size(), factor.lambda_plus.size());
  return {LaplacePosterior(theta_star, LaplacePosterior::Kind::dense, std::move(factor), eta,
                           manifold.mask()),
          std::move(report)};
}

LanczosResult lanczos_lowrank(const LossManifold& manifold, const ParamVector& theta_star, Index k,
                              std::uint64_t seed, std::uint64_t substream) {
  const Index dim = manifold.dimension();
  const Index active = manifold.masked() ? static_cast<Index>(manifold.mask().size()) : dim;
  if (k < 1 || k > active) {
    std::ostringstream msg;
    msg << "Lanczos needs 1 <= k <= " << active << " (got " << k << ")";
    throw std::invalid_argument(msg.str());
  }
  auto rng = data::rng_stream(seed, data::StreamId::lanczos_start, substream);
  ParamVector start = manifold.project(rng.normal_vector(dim));
  start /= start.norm();

  LanczosResult out;
  out.q.resize(dim, k);
  out.alpha.resize(k);
  out.beta.resize(std::max<Index>(k - 1, 0));
  out.q.col(0) = start;
  constexpr double kBreakdown = 1e-12;
  Index m = 0;
  for (Index j = 0; j < k; ++j) {
    ParamVector w = manifold.hvp(theta_star, out.q.col(j));
    out.alpha[j] = out.q.col(j).dot(w);
    w -= out.alpha[j] * out.q.col(j);
    if (j > 0) w -= out.beta[j - 1] * out.q.col(j - 1);
    // Full re-orthogonalisation against every stored vector; applied twice.
    for (int pass = 0; pass < 2; ++pass) {
      const Vector coeffs = out.q.leftCols(j + 1).transpose() * w;
      w -= out.q.leftCols(j + 1) * coeffs;
    }
    m = j + 1;
    if (j + 1 == k) break;
    const double b = w.norm();
    if (b < kBreakdown) {
      out.breakdown = true;
      break;
    }
    out.beta[j] = b;
    out.q.col(j + 1) = w / b;
  }
  out.achieved = m;
  out.q.conservativeResize(dim, m);
  out.alpha.conservativeResize(m);
  out.beta.conservativeResize(std::max<Index>(m - 1, 0));
  return out;
}

TruncatedFactor truncate_psd(const LanczosResult& lanczos) {
  if (lanczos.achieved < 1) throw std::invalid_argument("empty Lanczos decomposition");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(lanczos.tridiagonal());
  if (eig.info() != Eigen::Success) throw NumericalError("tridiagonal eigendecomposition failed");
  const double floor = relative_floor(eig.eigenvalues());
  TruncatedFactor out{{lanczos.q, Matrix(), Vector()}, make_report(eig.eigenvalues(), floor)};
  retain_positive(eig, floor, out.factor.v_plus, out.factor.lambda_plus);
  return out;
}

PosteriorBuild build_lanczos(const LossManifold& manifold, const ParamVector& theta_star, Index k,
                             std::uint64_t seed, double eta, std::uint64_t substream) {
  TruncatedFactor t = truncate_psd(lanczos_lowrank(manifold, theta_star, k, seed, substream));
  return {LaplacePosterior(theta_star, LaplacePosterior::Kind::low_rank, std::move(t.factor), eta,
                           manifold.mask()),
          std::move(t.spectrum)};
}

namespace {

ParamVector restrict_to_mask(const LaplacePosterior& post, ParamVector v) {
  if (post.mask().empty()) return v;
  ParamVector out = ParamVector::Zero(v.size());
  for (Index i : post.mask()) out[i] = v[i];
  return out;
}

ParamVector draw_velocity(const LaplacePosterior& post, std::uint64_t seed, std::uint64_t substream,
                          VelocityMode mode) {
  auto rng = data::rng_stream(seed, data::StreamId::posterior, substream);
  const Matrix& basis = post.basis();
  const Vector& lambda = post.factor().lambda_plus;
  switch (mode) {
    case VelocityMode::gaussian: {
      const Vector eps = rng.normal_vector(post.rank());
      return post.eta() * (basis * eps.cwiseQuotient(lambda.cwiseSqrt()));
    }
    case VelocityMode::top_eigvec:
      return post.eta() * rng.normal() / std::sqrt(lambda[0]) * basis.col(0);
    case VelocityMode::bottom_eigvec: {
      const Index last = post.rank() - 1;
      return post.eta() * rng.normal() / std::sqrt(lambda[last]) * basis.col(last);
    }
  }
  return ParamVector::Zero(post.dimension());
}

}  // namespace

ParamVector sample_velocity(const LaplacePosterior& post, std::uint64_t seed, std::uint64_t substream,
                            VelocityMode mode) {
  if (post.eta() == 0.0) return ParamVector::Zero(post.dimension());
  return restrict_to_mask(post, draw_velocity(post, seed, substream, mode));
}

ParamVector sample_euclidean(const LaplacePosterior& post, std::uint64_t seed, std::uint64_t substream,
                             VelocityMode mode) {
  return post.mean() + sample_velocity(post, seed, substream, mode);
}

}  // namespace geoflow::laplace
