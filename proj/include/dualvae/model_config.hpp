// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "dualvae/real.hpp"

namespace dualvae::inline DUALVAE_ABI {

enum class Variant {
    dual,    // geometry tokens + colour Gaussian, generative
    redual,  // colour Gaussian only, geometry features passed straight to the merge decoder
};

std::string to_string(Variant v);
Variant parse_variant(const std::string& text);

struct ModelConfig {
    int image_size = 32;
    int downsample = 8;  // f; the token grid is (image_size / f)^2
    int embed_dim = 32;  // D
    int n_embed = 64;    // codebook entries
    int colour_dim = 64;  // d_c
    std::vector<int> widths{32, 64, 128};
    int geometry_layers = 3;
    int geometry_channels = 16;
    int colour_hidden = 128;
    Variant variant = Variant::dual;

    /// K = log2(f): number of stride-2 blocks. Pyramids hold K + 1 levels.
    int levels() const;
    /// Channels of pyramid level k (0 = full resolution).
    int level_width(int k) const;
    /// Spatial extent of pyramid level k.
    int level_size(int k) const { return image_size >> k; }
    int token_grid_size() const { return image_size / downsample; }
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

}  // namespace dualvae
