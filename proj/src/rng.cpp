#include "geoflow/data/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace geoflow {

void require_finite(const Eigen::Ref<const Vector>& v, const char* what) {
  for (Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      std::ostringstream msg;
      msg << what << ": non-finite value at index " << i;
      throw NumericalError(msg.str(), i);
    }
  }
}

}  // namespace geoflow

namespace geoflow::data {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::string_view stream_name(StreamId id) {
  switch (id) {
    case StreamId::init: return "init";
    case StreamId::pairing_noise: return "pairing_noise";
    case StreamId::training: return "training";
    case StreamId::posterior: return "posterior";
    case StreamId::base_samples: return "base_samples";
    case StreamId::lanczos_start: return "lanczos_start";
    case StreamId::target_samples: return "target_samples";
    case StreamId::kl_resampling: return "kl_resampling";
    case StreamId::test: return "test";
  }
  return "unknown";
}

CounterRng::CounterRng(std::uint64_t seed, StreamId stream, std::uint64_t substream) {
  std::uint64_t k = mix64(seed + kGolden);
  k = mix64(k ^ (static_cast<std::uint64_t>(stream) * 0xd1b54a32d192ed03ULL));
  key_ = mix64(k ^ (substream * 0x8cb92ba72f3d8dd7ULL + 1));
}

CounterRng::result_type CounterRng::operator()() {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

double CounterRng::uniform() {
  return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
}

// Box-Muller; implemented here so sequences do not depend on the standard library's
// distribution algorithms.
double CounterRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double phi = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(phi);
  has_spare_ = true;
  return r * std::cos(phi);
}

Vector CounterRng::normal_vector(Index n) {
  Vector out(n);
  for (Index i = 0; i < n; ++i) out[i] = normal();
  return out;
}

CounterRng rng_stream(std::uint64_t seed, StreamId stream, std::uint64_t substream) {
  return CounterRng(seed, stream, substream);
}

}  // namespace geoflow::data
