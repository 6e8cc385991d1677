// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

// The 32-bit and 64-bit builds live in distinct inline namespaces so one
// program can link both.
#if defined(DUALVAE_USE_DOUBLE) && DUALVAE_USE_DOUBLE
#define DUALVAE_ABI f64
#define DUALVAE_REAL double
#else
#define DUALVAE_ABI f32
#define DUALVAE_REAL float
#endif

namespace dualvae::inline DUALVAE_ABI {

using real = DUALVAE_REAL;

inline constexpr bool kDoublePrecision = sizeof(real) == sizeof(double);

/// All randomness in the engine flows through this generator type.
using Rng = std::mt19937_64;

}  // namespace dualvae
