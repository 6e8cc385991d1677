// SPDX-License-Identifier: Apache-2.0
//
// Flat "section.key = value" configuration. Lines starting with '#' are
// comments. Every key has a default; unknown keys are rejected.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dualvae/model_config.hpp"
#include "dualvae/objective.hpp"
#include "dualvae/optim.hpp"
#include "dualvae/prior.hpp"

namespace dualvae::inline DUALVAE_ABI {

struct TrainSettings {
    int steps = 3000;
    int batch = 8;
    int log_every = 50;
    int checkpoint_every = 500;
    int keep_checkpoints = 3;

    bool operator==(const TrainSettings&) const = default;
};

struct DataConfig {
    std::string path;  // empty: synthetic shapes
    int count = 2000;  // synthetic image count
    int shapes = 8;
    int colours = 8;
    std::uint64_t split_seed = 0;

    bool operator==(const DataConfig&) const = default;
};

struct EvalConfig {
    int histogram_bins = 32;
    int samples_per_exemplar = 4;
    int exemplars = 50;
    int baseline_pairs = 1000;
    double temperature = 1.0;
    bool symmetric = false;

    bool operator==(const EvalConfig&) const = default;
};

struct TrainConfig {
    ModelConfig model;
    VqSettings vq;
    LossWeights loss;
    std::string extra_recon;  // reserved hook for perceptual terms; must be empty
    AdamSettings optim;
    TrainSettings train;
    PriorConfig prior;
    DataConfig data;
    EvalConfig eval;
    std::uint64_t seed = 0;

    void validate() const;
};

bool operator==(const VqSettings& a, const VqSettings& b);
bool operator==(const LossWeights& a, const LossWeights& b);
bool operator==(const AdamSettings& a, const AdamSettings& b);
bool operator==(const TrainConfig& a, const TrainConfig& b);

/// Parses text on top of the defaults. Throws ConfigError naming the line.
TrainConfig parse_config(const std::string& text);
/// Emits every key, one per line, in a stable order; parse_config inverts it.
std::string serialize_config(const TrainConfig& config);
TrainConfig load_config(const std::filesystem::path& path);

/// All recognised keys, in serialization order.
std::vector<std::string> config_keys();

}  // namespace dualvae
