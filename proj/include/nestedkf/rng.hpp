#pragma once

#include <cstdint>
#include <random>

namespace nkf {

// What a stream is used for. Part of the derivation key so that, e.g., the
// observation noise of replicate 3 never shares draws with its priors.
enum class Purpose : std::uint32_t {
  NatureNoise = 1,
  Observation = 2,
  Prior = 3,
  InitialPick = 4,
  ForecastNoise = 5,
  Generic = 6,
};

struct StreamKey {
  std::uint32_t replicate = 0;
  std::uint32_t ensemble = 0;
  std::uint32_t member = 0;
  Purpose purpose = Purpose::Generic;
};

// A random stream: engine plus the standard-normal sampler that draws from it.
// Copying a stream copies its full state, including the sampler's cached
// variate, so copies replay identically.
class Stream {
 public:
  using engine_type = std::mt19937_64;

  Stream() = default;
  explicit Stream(std::seed_seq& seq) : engine_(seq) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  engine_type& engine() { return engine_; }

 private:
  engine_type engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// Deterministic stream derivation from a master seed and an index tuple.
// seed_seq mixes every word of the key, so tuples that differ in any index
// give unrelated engine states.
inline Stream seed_stream(std::uint64_t master, const StreamKey& key) {
  std::seed_seq seq{static_cast<std::uint32_t>(master & 0xffffffffu),
                    static_cast<std::uint32_t>(master >> 32),
                    key.replicate,
                    key.ensemble,
                    key.member,
                    static_cast<std::uint32_t>(key.purpose),
                    0x6e6b6600u};
  return Stream(seq);
}

}  // namespace nkf
