// SPDX-License-Identifier: Apache-2.0
//
// Numerical checks of the bound relating the explicit ELBO (feature-space
// reconstruction terms) and the implicit ELBO (image-space terms) that the
// DualVAE objective maximises. Everything here works on plain double vectors
// so the maps under test can be constructed exactly.

#pragma once

#include <functional>
#include <vector>

#include "dualvae/real.hpp"
#include "dualvae/tensor.hpp"

namespace dualvae::inline DUALVAE_ABI {

using Vec = std::vector<double>;

double l1_distance(const Vec& a, const Vec& b);

/// Unnormalised Laplace log-density with unit scale: -||x - mu||_1. The
/// normalising constant is never formed.
double laplace_logprob(const Vec& x, const Vec& mu);
double laplace_logprob(const Tensor& x, const Tensor& mu);

struct LipschitzConfig {
    double C = 1.0;
};

struct ReverseLipschitzResult {
    bool holds = false;
    double ratio = 0.0;  // ||a - b||_1 / ||DX(a) - DX(b)||_1
};

/// Tests ||a - b||_1 <= C * ||DX(a) - DX(b)||_1 for one pair.
ReverseLipschitzResult check_reverse_lipschitz(const std::function<Vec(const Vec&)>& dx, const Vec& a, const Vec& b,
                                               const LipschitzConfig& config);

/// Decoders of a vector-valued toy DualVAE. D_X acts on the concatenation
/// [geometry, colour].
struct ElboToyModel {
    std::function<Vec(const Vec& g, const Vec& c)> decode_x;
    std::function<Vec(const Vec& z_g)> decode_g;
    std::function<Vec(const Vec& z_c)> decode_c;
};

struct DiagonalGaussian {
    Vec mean;
    Vec logvar;
};

double diagonal_gaussian_kl(const DiagonalGaussian& q);

struct ElboInputs {
    Vec x;
    Vec f_g;
    Vec f_c;
    DiagonalGaussian q_g;  // q(z_g | F_g)
    DiagonalGaussian q_c;  // q(z_c | F_c)
};

struct McEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    int samples = 0;
};

/// Monte Carlo estimate (constants dropped) of
/// -||X - D_X(F_g,F_c)||_1 - E||F_g - D_G(z_g)||_1 - E||F_c - D_C(z_c)||_1 - KL_g - KL_c.
McEstimate explicit_elbo_estimate(const ElboInputs& in, const ElboToyModel& model, int n_samples, Rng& rng);

/// Monte Carlo estimate (constants dropped) of
/// -2||X - D_X(F_g,F_c)||_1 - E||X - D_X(D_G(z_g), D_C(z_c))||_1 - KL_g - KL_c.
McEstimate implicit_elbo_estimate(const ElboInputs& in, const ElboToyModel& model, int n_samples, Rng& rng);

/// Both estimators on common latent draws; `difference` is explicit - implicit.
struct ElboComparison {
    McEstimate explicit_elbo;
    McEstimate implicit_elbo;
    McEstimate difference;
};
ElboComparison compare_elbos(const ElboInputs& in, const ElboToyModel& model, int n_samples, Rng& rng);

/// Terms of the feature-space bound for one tuple (F_g, F_c, z_g, z_c, X).
struct FeatureBoundCheck {
    double feature_error = 0.0;  // ||F_g - D_G(z_g)||_1 + ||F_c - D_C(z_c)||_1
    double decoded_gap = 0.0;    // ||D_X(F_g,F_c) - D_X(D_G(z_g),D_C(z_c))||_1
    double image_error = 0.0;    // ||D_X(F_g,F_c) - X||_1 + ||D_X(D_G(z_g),D_C(z_c)) - X||_1
    bool reverse_lipschitz = false;  // feature_error <= C * decoded_gap
    bool triangle = false;           // decoded_gap <= image_error
    bool bound = false;              // feature_error <= C * image_error
};
FeatureBoundCheck check_feature_bound(const ElboToyModel& model, const Vec& x, const Vec& f_g, const Vec& f_c,
                                      const Vec& z_g, const Vec& z_c, const LipschitzConfig& config);

/// D_X(a, b) = P[a, b] + offset for a permutation P; an L1 isometry and hence
/// 1-reverse-Lipschitz.
std::function<Vec(const Vec&, const Vec&)> permutation_offset_map(std::vector<int> permutation, Vec offset);

}  // namespace dualvae
