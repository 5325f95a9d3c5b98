#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace ope {

using Rng = std::mt19937_64;

/// Derives an independent seed from a root seed and a stream coordinate.
/// Every trajectory, replication and bootstrap draw gets its own coordinate,
/// so results do not depend on scheduling order.
std::uint64_t substream_seed(std::uint64_t root, std::uint64_t stream);
std::uint64_t substream_seed(std::uint64_t root, std::uint64_t a, std::uint64_t b);

Rng make_rng(std::uint64_t seed);

/// Draws an index from a probability vector by inverting the CDF.
int sample_categorical(std::span<const double> probs, Rng& rng);

double uniform01(Rng& rng);

}  // namespace ope
