// SPDX-License-Identifier: Apache-2.0
//
// Training objectives. Reconstruction terms are per-image L1 sums averaged
// over the batch; the KL is the per-image sum averaged over the batch.

#pragma once

#include <string>

#include "dualvae/model.hpp"

namespace dualvae::inline DUALVAE_ABI {

struct LossWeights {
    double w_F = 2.0;   // regularization path D_X(F_g, F_c)
    double w_z = 1.0;   // latent path D_X(D_G(z_g), D_C(z_c))
    double w_vq = 1.0;
    double w_kl = 1.0;
    double beta = 0.25;  // commitment weight inside the VQ term
};

/// ReDualVAE path weights: the colour-latent path counts twice, the
/// encoder-feature path once.
inline constexpr double kRedualLatentWeight = 2.0;
inline constexpr double kRedualFeatureWeight = 1.0;

struct LossBreakdown {
    double recon_F = 0.0;
    double recon_z = 0.0;
    double vq_latent = 0.0;
    double gauss_kl = 0.0;
    LossWeights weights;
    double total = 0.0;
};

/// Everything a loss evaluation computed, for EMA updates and diagnostics.
struct ForwardState {
    Tensor structure;
    GeometryEncoding geometry;
    ColourEncoding colour;
    QuantizeResult quant;  // empty for ReDualVAE
    Tensor noise;
    Tensor z_c;
    Tensor recon_feature_path;  // D_X(F_g, F_c)
    Tensor recon_latent_path;   // D_X(D_G(z_g), D_C(z_c)) or D_X(F_g, D_C(z_c))
};

struct LossResult {
    LossBreakdown breakdown;
    Tensor objective;  // scalar to backpropagate
    ForwardState state;
};

/// Optional overrides, used by finite-difference checks to hold the random
/// and discrete choices of a base evaluation fixed.
struct LossOptions {
    const Tensor* noise = nullptr;                // reparameterization noise [N, d_c]
    const QuantizeResult* frozen_quant = nullptr;  // with frozen_pre
    const Tensor* frozen_pre = nullptr;
};

/// DualVAE objective: w_F·recon_F + w_z·recon_z + w_vq·commitment + w_kl·KL.
/// A zero-weight term is still evaluated for reporting but kept off the tape.
LossResult dualvae_loss(const DualVaeModel& model, const Tensor& images, Rng& rng, const LossWeights& weights,
                        const LossOptions& options = {});

/// ReDualVAE objective: 2·||X − D_X(F_g, D_C(z_c))||₁ + ||X − D_X(F_g, F_c)||₁ + w_kl·KL.
/// recon_z holds the colour-latent path and vq_latent is 0.
LossResult redualvae_loss(const DualVaeModel& model, const Tensor& images, Rng& rng, const LossWeights& weights,
                          const LossOptions& options = {});

/// Dispatches on the model variant.
LossResult model_loss(const DualVaeModel& model, const Tensor& images, Rng& rng, const LossWeights& weights,
                      const LossOptions& options = {});

}  // namespace dualvae
