// SPDX-License-Identifier: Apache-2.0
#include "dualvae/prior.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace dualvae::inline DUALVAE_ABI {

void PriorConfig::validate() const {
    DUALVAE_REQUIRE(blocks >= 0, "prior.blocks must be non-negative");
    DUALVAE_REQUIRE(channels > 0 && heads > 0 && channels % heads == 0,
                    "prior.channels must be a positive multiple of prior.heads");
    DUALVAE_REQUIRE(dropout >= 0.0 && dropout < 1.0, "prior.dropout must lie in [0, 1)");
    DUALVAE_REQUIRE(steps >= 0 && batch > 0 && lr > 0.0, "prior training settings must be positive");
}

TokenSequence flatten_tokens(const TokenGrid& grid) {
    DUALVAE_REQUIRE(grid.indices.size() == static_cast<std::size_t>(grid.height) * grid.width,
                    "token grid size does not match its extents");
    return grid.indices;
}

TokenGrid grid_from_sequence(const TokenSequence& sequence, int height, int width) {
    DUALVAE_REQUIRE(sequence.size() == static_cast<std::size_t>(height) * width,
                    "sequence length does not match the grid");
    return TokenGrid{height, width, sequence};
}

namespace {

Tensor scaled_normal(const Shape& shape, double stddev, Rng& rng) {
    Tensor t = standard_normal(shape, rng);
    for (auto& v : t.data()) v = static_cast<real>(v * stddev);
    return t;
}

}  // namespace

ArPrior::ArPrior(int vocab, int height, int width, const PriorConfig& config, Rng& rng)
    : vocab_(vocab), height_(height), width_(width), config_(config) {
    config_.validate();
    DUALVAE_REQUIRE(vocab > 0 && height > 0 && width > 0, "prior needs a positive vocabulary and grid");
    const int c = config_.channels;
    token_table_ = params_.add("prior.token_embedding", scaled_normal({vocab + 1, c}, 0.02, rng));
    position_table_ = params_.add("prior.position_embedding", scaled_normal({length(), c}, 0.02, rng));
    for (int b = 0; b < config_.blocks; ++b) {
        const std::string name = "prior.block" + std::to_string(b);
        Block blk;
        blk.ln_attn = LayerNormLayer(params_, name + ".ln_attn", c, -1);
        blk.query = LinearLayer(params_, name + ".query", c, c, rng);
        blk.key = LinearLayer(params_, name + ".key", c, c, rng);
        blk.value = LinearLayer(params_, name + ".value", c, c, rng);
        blk.proj = LinearLayer(params_, name + ".proj", c, c, rng);
        blk.ln_mlp = LayerNormLayer(params_, name + ".ln_mlp", c, -1);
        blk.fc1 = LinearLayer(params_, name + ".fc1", c, 4 * c, rng);
        blk.fc2 = LinearLayer(params_, name + ".fc2", 4 * c, c, rng);
        blocks_.push_back(std::move(blk));
    }
    ln_out_ = LayerNormLayer(params_, "prior.ln_out", c, -1);
    head_ = LinearLayer(params_, "prior.head", c, vocab, rng);
    std::fill(head_.weight.data().begin(), head_.weight.data().end(), real(0));
}

void ArPrior::check_sequence(const TokenSequence& s) const {
    DUALVAE_REQUIRE(static_cast<int>(s.size()) == length(),
                    "token sequence length " + std::to_string(s.size()) + " != " + std::to_string(length()));
    for (int t : s) {
        DUALVAE_REQUIRE(t >= 0 && t < vocab_, "token " + std::to_string(t) + " outside the vocabulary of " +
                                                  std::to_string(vocab_));
    }
}

Tensor ArPrior::logits(const std::vector<TokenSequence>& sequences, Rng* rng) const {
    DUALVAE_REQUIRE(!sequences.empty(), "prior needs at least one sequence");
    const int batch = static_cast<int>(sequences.size()), len = length(), c = config_.channels;
    std::vector<int> inputs, positions;
    inputs.reserve(static_cast<std::size_t>(batch) * len);
    for (const auto& s : sequences) {
        check_sequence(s);
        inputs.push_back(vocab_);  // start token
        inputs.insert(inputs.end(), s.begin(), s.end() - 1);
        for (int t = 0; t < len; ++t) positions.push_back(t);
    }
    const real rate = rng != nullptr ? static_cast<real>(config_.dropout) : real(0);
    auto drop = [&](const Tensor& x) { return rate > 0 ? dropout(x, rate, *rng) : x; };

    Tensor h = add(embedding(token_table_, inputs), embedding(position_table_, positions));  // [B*T, C]
    h = drop(h);
    for (const auto& blk : blocks_) {
        const Tensor n = blk.ln_attn(h);
        const Shape seq{batch, len, c};
        const Tensor attn = causal_attention(reshape(blk.query(n), seq), reshape(blk.key(n), seq),
                                             reshape(blk.value(n), seq), config_.heads);
        h = add(h, drop(blk.proj(reshape(attn, {batch * len, c}))));
        h = add(h, drop(blk.fc2(leaky_relu(blk.fc1(blk.ln_mlp(h))))));
    }
    return head_(ln_out_(h));
}

Tensor ArPrior::loss(const std::vector<TokenSequence>& sequences, Rng* rng) const {
    std::vector<int> targets;
    for (const auto& s : sequences) targets.insert(targets.end(), s.begin(), s.end());
    return cross_entropy(logits(sequences, rng), targets);
}

double ArPrior::nll(const std::vector<TokenSequence>& sequences) const {
    NoTapeScope off;
    const Tensor lg = logits(sequences, nullptr);
    const auto v = lg.data();
    // A running mean, so equal per-token losses average to exactly that value.
    double mean_nll = 0.0;
    std::size_t row = 0;
    for (const auto& s : sequences) {
        for (int target : s) {
            const real* r = v.data() + row * vocab_;
            double mx = r[0];
            for (int j = 1; j < vocab_; ++j) mx = std::max(mx, static_cast<double>(r[j]));
            double z = 0.0;
            for (int j = 0; j < vocab_; ++j) z += std::exp(r[j] - mx);
            ++row;
            mean_nll += (mx + std::log(z) - r[target] - mean_nll) / static_cast<double>(row);
        }
    }
    return mean_nll;
}

TokenGrid ArPrior::sample(double temperature, Rng& rng) const {
    DUALVAE_REQUIRE(temperature > 0.0, "sampling temperature must be positive");
    NoTapeScope off;
    TokenSequence seq(static_cast<std::size_t>(length()), 0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::vector<double> p(static_cast<std::size_t>(vocab_));
    for (int t = 0; t < length(); ++t) {
        // Later positions hold placeholders; causality keeps them out of row t.
        const Tensor lg = logits({seq}, nullptr);
        const real* r = lg.data().data() + static_cast<std::size_t>(t) * vocab_;
        double mx = r[0];
        for (int j = 1; j < vocab_; ++j) mx = std::max(mx, static_cast<double>(r[j]));
        double z = 0.0;
        for (int j = 0; j < vocab_; ++j) {
            p[static_cast<std::size_t>(j)] = std::exp((r[j] - mx) / temperature);
            z += p[static_cast<std::size_t>(j)];
        }
        const double u = uniform(rng) * z;
        double acc = 0.0;
        int chosen = vocab_ - 1;
        for (int j = 0; j < vocab_; ++j) {
            acc += p[static_cast<std::size_t>(j)];
            if (u < acc) {
                chosen = j;
                break;
            }
        }
        // Guard against u landing on a zero-probability tail entry through rounding.
        while (p[static_cast<std::size_t>(chosen)] == 0.0 && chosen > 0) --chosen;
        seq[static_cast<std::size_t>(t)] = chosen;
    }
    return grid_from_sequence(seq, height_, width_);
}

PriorTrainStats train_prior(ArPrior& prior, const std::vector<TokenGrid>& data, Rng& rng) {
    DUALVAE_REQUIRE(!data.empty(), "prior training needs at least one token grid");
    std::vector<TokenSequence> sequences;
    for (const auto& g : data) {
        DUALVAE_REQUIRE(g.height == prior.height() && g.width == prior.width(), "token grid shape mismatch");
        for (int t : g.indices) {
            DUALVAE_REQUIRE(t >= 0 && t < prior.vocab(), "token " + std::to_string(t) + " outside the vocabulary of " +
                                                             std::to_string(prior.vocab()));
        }
        sequences.push_back(flatten_tokens(g));
    }
    const PriorConfig& cfg = prior.config();
    AdamSettings adam_settings;
    adam_settings.lr = cfg.lr;
    Adam adam(prior.params(), adam_settings);
    std::uniform_int_distribution<std::size_t> pick(0, sequences.size() - 1);
    PriorTrainStats stats;
    Tape tape;
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<TokenSequence> batch;
        for (int b = 0; b < cfg.batch; ++b) batch.push_back(sequences[pick(rng)]);
        tape.reset();
        Tensor loss;
        {
            TapeScope scope(tape);
            loss = prior.loss(batch, &rng);
        }
        tape.backward(loss);
        adam.step();
        stats.losses.push_back(loss.item());
    }
    return stats;
}

}  // namespace dualvae
