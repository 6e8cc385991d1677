// SPDX-License-Identifier: Apache-2.0
//
// Autoregressive prior over token grids flattened in raster order. A causal
// transformer: token + position embeddings, pre-norm attention/MLP blocks,
// and a zero-initialised output head (so an untrained prior is uniform).

#pragma once

#include <vector>

#include "dualvae/latents.hpp"
#include "dualvae/layers.hpp"
#include "dualvae/optim.hpp"

namespace dualvae::inline DUALVAE_ABI {

struct PriorConfig {
    int blocks = 2;
    int channels = 64;
    int heads = 4;
    double dropout = 0.1;
    int steps = 2000;
    int batch = 16;
    double lr = 5e-4;

    void validate() const;
    bool operator==(const PriorConfig&) const = default;
};

using TokenSequence = std::vector<int>;

/// Raster (row-major) flattening; the inverse of grid_from_sequence.
TokenSequence flatten_tokens(const TokenGrid& grid);
TokenGrid grid_from_sequence(const TokenSequence& sequence, int height, int width);

class ArPrior {
public:
    ArPrior(int vocab, int height, int width, const PriorConfig& config, Rng& rng);
    ArPrior(const ArPrior&) = delete;
    ArPrior& operator=(const ArPrior&) = delete;
    ArPrior(ArPrior&&) = default;
    ArPrior& operator=(ArPrior&&) = default;

    int vocab() const { return vocab_; }
    int height() const { return height_; }
    int width() const { return width_; }
    int length() const { return height_ * width_; }
    const PriorConfig& config() const { return config_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    /// Logits [B*T, V]; row b*T + t predicts token t of sequence b from
    /// tokens < t. `rng` enables dropout (training); nullptr disables it.
    Tensor logits(const std::vector<TokenSequence>& sequences, Rng* rng = nullptr) const;

    /// Mean next-token cross entropy, tracked for training.
    Tensor loss(const std::vector<TokenSequence>& sequences, Rng* rng) const;

    /// Mean negative log-likelihood in nats per token, evaluated in double
    /// precision without dropout.
    double nll(const std::vector<TokenSequence>& sequences) const;

    /// Ancestral sampling from softmax(logits / temperature).
    TokenGrid sample(double temperature, Rng& rng) const;

private:
    struct Block {
        LayerNormLayer ln_attn;
        LinearLayer query, key, value, proj;
        LayerNormLayer ln_mlp;
        LinearLayer fc1, fc2;
    };

    void check_sequence(const TokenSequence& s) const;

    int vocab_ = 0;
    int height_ = 0;
    int width_ = 0;
    PriorConfig config_;
    ParamStore params_;
    Tensor token_table_;  // [V + 1, C]; row V is the start token
    Tensor position_table_;  // [T, C]
    std::vector<Block> blocks_;
    LayerNormLayer ln_out_;
    LinearLayer head_;
};

struct PriorTrainStats {
    std::vector<double> losses;  // per step
};

/// Adam on the next-token loss over random mini-batches of `data`.
PriorTrainStats train_prior(ArPrior& prior, const std::vector<TokenGrid>& data, Rng& rng);

}  // namespace dualvae
