// SPDX-License-Identifier: Apache-2.0
//
// Numerical checks of the Laplace likelihood identity, the reverse-Lipschitz
// feature bound and the explicit/implicit ELBO ordering, on constructed maps.
// Used by the `verify-math` subcommand.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dualvae/elbo.hpp"

namespace dualvae::inline DUALVAE_ABI {

struct MathCheck {
    std::string name;
    bool passed = false;
    std::size_t trials = 0;
    std::size_t violations = 0;
    double worst = 0.0;  // check-specific: largest error, smallest slack or ratio
    std::string detail;
};

struct VerifyMathSettings {
    int laplace_pairs = 1000;
    int bound_tuples = 10000;
    int elbo_draws = 1000;
    int feature_dim = 6;  // per latent family
    double identity_tolerance = 1e-9;
    double elbo_sigma_margin = 3.0;
};

/// logp(x1, mu) - logp(x2, mu) against the difference of explicitly
/// normalised unit-scale Laplace log densities, for random (x, mu).
MathCheck check_laplace_identity(int pairs, int dim, double tolerance, Rng& rng);

/// D_X = identity must hold with ratio 1; D_X = identity / 2 must fail with ratio 2.
MathCheck check_lipschitz_examples(Rng& rng);

/// The feature bound chain on random tuples through a random permutation
/// plus offset map. Every value lies on a 2^-10 grid so the arithmetic is
/// exact and the triangle step can be checked without tolerance.
MathCheck check_feature_bound_chain(int tuples, int dim, Rng& rng);

/// implicit <= explicit over common draws: fails only when the mean
/// difference is below -margin standard errors.
MathCheck check_elbo_ordering(int draws, int dim, double sigma_margin, Rng& rng);

std::vector<MathCheck> verify_math(const VerifyMathSettings& settings, Rng& rng);

/// A random 1-reverse-Lipschitz toy model over feature vectors of length `dim`.
ElboToyModel make_isometric_toy_model(int dim, Rng& rng);

}  // namespace dualvae
