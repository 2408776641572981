#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace alab {

/// Engine used for every random draw in the library.
using Rng = std::mt19937_64;

/// Purpose tags for seed-stream derivation. Values are part of the on-disk
/// reproducibility contract; never renumber them.
enum class Stream : std::uint64_t {
  family = 1,
  parameters = 2,
  label_init = 3,
  network_init = 4,
  shuffle = 5,
  dropout = 6,
  split = 7,
  perturbation = 8,
  landscape = 9,
};

/// Derives an independent stream seed from (seed, purpose, index) by chained
/// SplitMix64 finalization. Results do not depend on the order in which streams
/// are requested, which keeps parallel work reproducible.
std::uint64_t derive_seed(std::uint64_t seed, Stream purpose, std::uint64_t index = 0);

inline Rng make_rng(std::uint64_t seed, Stream purpose, std::uint64_t index = 0) {
  return Rng(derive_seed(seed, purpose, index));
}

/// Standard normal draw via Box-Muller on the engine's raw output, so the
/// sequence is identical across standard library implementations.
double standard_normal(Rng& rng);

/// Uniform draw on [lo, hi) built from 53 random bits.
double uniform(Rng& rng, double lo, double hi);

}  // namespace alab
