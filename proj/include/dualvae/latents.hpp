// SPDX-License-Identifier: Apache-2.0
//
// Geometry latent: nearest-neighbour vector quantization against an EMA
// codebook, with a straight-through gradient. Colour latent: diagonal Gaussian
// with the reparameterization trick and closed-form KL to N(0, I).

#pragma once

#include <cstdint>
#include <vector>

#include "dualvae/tensor.hpp"

namespace dualvae::inline DUALVAE_ABI {

/// h x w grid of codebook indices in raster (row-major) order.
struct TokenGrid {
    int height = 0;
    int width = 0;
    std::vector<int> indices;

    int at(int row, int col) const { return indices.at(static_cast<std::size_t>(row * width + col)); }
    bool operator==(const TokenGrid&) const = default;
};

struct VqSettings {
    double decay = 0.99;    // gamma
    double epsilon = 1e-5;  // laplace smoothing
    bool data_init = true;  // seed the entries from encoder outputs before the first step
};

class Codebook {
public:
    Codebook() = default;
    /// Entries start as standard-normal draws; each code begins with an EMA
    /// cluster size of 1 and an EMA sum equal to its embedding.
    Codebook(int size, int dim, VqSettings settings, Rng& rng);

    int size() const { return size_; }
    int dim() const { return dim_; }
    const VqSettings& settings() const { return settings_; }
    void set_decay(double decay) { settings_.decay = decay; }

    Tensor& embeddings() { return embeddings_; }  // [size, dim], never tracked
    const Tensor& embeddings() const { return embeddings_; }
    std::vector<real>& ema_cluster_size() { return ema_size_; }
    const std::vector<real>& ema_cluster_size() const { return ema_size_; }
    std::vector<real>& ema_sum() { return ema_sum_; }
    const std::vector<real>& ema_sum() const { return ema_sum_; }
    std::vector<std::int64_t>& usage() { return usage_; }
    const std::vector<std::int64_t>& usage() const { return usage_; }

    /// Index of the nearest entry in squared L2; ties go to the lowest index.
    int nearest(std::span<const real> vector) const;

private:
    int size_ = 0;
    int dim_ = 0;
    VqSettings settings_;
    Tensor embeddings_;
    std::vector<real> ema_size_;
    std::vector<real> ema_sum_;
    std::vector<std::int64_t> usage_;
};

struct QuantizeResult {
    std::vector<TokenGrid> tokens;  // one grid per batch item
    Tensor quantized;               // [N,D,h,w] code vectors, untracked
    Tensor z_q;                     // forward = quantized, gradient passes to pre_quant
    Tensor commit_loss;             // beta * mean over positions of ||pre - sg(z_q)||^2
};

/// pre_quant: [N,D,h,w].
QuantizeResult quantize(const Tensor& pre_quant, const Codebook& codebook, real beta);

/// Re-evaluates a quantization with the assignment and the stop-gradient
/// targets frozen from `frozen`: z_q = pre_quant + (frozen.quantized - pre_at_freeze)
/// with the bracket held constant. At the freeze point this equals quantize();
/// nearby it is smooth in pre_quant, which is what finite differences need.
QuantizeResult quantize_frozen(const Tensor& pre_quant, const QuantizeResult& frozen, const Tensor& pre_at_freeze,
                               real beta);

/// Looks up code vectors for token grids: returns [N,D,h,w].
Tensor embed_tokens(const Codebook& codebook, const std::vector<TokenGrid>& tokens);

/// Replaces every entry with a distinct randomly chosen position of
/// pre_quant [N,D,h,w] (with replacement when there are fewer positions than
/// entries) and resets the EMA statistics to match. Usage counts are kept.
void init_from_vectors(Codebook& codebook, const Tensor& pre_quant, Rng& rng);

/// One EMA step from the assignments of a batch. Unused codes keep their
/// embedding direction (the smoothed size never reaches zero). Updates usage.
void ema_update(Codebook& codebook, const std::vector<TokenGrid>& assignments, const Tensor& pre_quant);

Tensor standard_normal(const Shape& shape, Rng& rng);

/// mu + exp(logvar / 2) * noise, differentiable in mu and logvar.
Tensor reparameterize(const Tensor& mu, const Tensor& logvar, const Tensor& noise);

/// Batch mean of 1/2 sum_i (mu_i^2 + exp(logvar_i) - 1 - logvar_i); mu and logvar are [N,d].
Tensor gaussian_kl(const Tensor& mu, const Tensor& logvar);

}  // namespace dualvae
