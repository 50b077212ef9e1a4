#pragma once

#include "geoflow/common.hpp"

#include <cstdint>
#include <limits>
#include <random>
#include <string_view>

namespace geoflow::data {

/// Registry of every randomness consumer. A (seed, stream, substream) triple fully
/// determines the sequence; stream ids are stable and must never be renumbered.
enum class StreamId : std::uint64_t {
  init = 1,              // parameter initialisation
  pairing_noise = 2,     // base samples paired with training targets
  training = 3,          // optimiser-internal randomness (minibatch order)
  posterior = 4,         // velocity draws, substream = posterior sample index
  base_samples = 5,      // generation base points x0
  lanczos_start = 6,     // Lanczos start vector, substream = batch index
  target_samples = 7,    // draws from the analytic target
  kl_resampling = 8,     // subset resampling for KL error bars
  test = 99,             // reserved for unit tests
};

std::string_view stream_name(StreamId id);

/// Counter-based generator: the n-th output is a bijective mix of (key, n), so streams
/// are splittable and need no shared state. Satisfies UniformRandomBitGenerator.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, StreamId stream, std::uint64_t substream = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

  double uniform();  // in [0, 1)
  double normal();

  /// Fills a vector with independent standard normals.
  Vector normal_vector(Index n);

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

CounterRng rng_stream(std::uint64_t seed, StreamId stream, std::uint64_t substream = 0);

}  // namespace geoflow::data
