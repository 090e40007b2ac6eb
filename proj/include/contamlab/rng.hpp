// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace contamlab {

/// Generator used for every random draw in the library. Distributions come
/// from the standard library, so bit-exact replay assumes the same standard
/// library implementation; the identifier below is written into run manifests.
using Rng = std::mt19937_64;

inline constexpr std::string_view kRngAlgorithm = "mt19937_64+std-distributions";

/// Derives an independent seed for a named sub-stream (splitmix64 finalizer).
std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream);

// Stream ids used by the experiment runner.
namespace streams {
inline constexpr std::uint64_t kDictionary = 1;
inline constexpr std::uint64_t kInit = 2;
inline constexpr std::uint64_t kTrain = 3;
inline constexpr std::uint64_t kEval = 4;
inline constexpr std::uint64_t kProbe = 5;
inline constexpr std::uint64_t kVerify = 6;
}  // namespace streams

}  // namespace contamlab
