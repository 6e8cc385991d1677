// SPDX-License-Identifier: Apache-2.0
//
// Learned intensity transform: a stack of 3x3 stride-1 reflect-padded
// convolutions followed by an average over channels. Maps an RGB batch
// [N,3,H,W] to a single-channel structure estimate [N,1,H,W].

#pragma once

#include <string>
#include <vector>

#include "dualvae/layers.hpp"

namespace dualvae::inline DUALVAE_ABI {

class GeometryModule {
public:
    GeometryModule() = default;
    /// layers >= 1. The first conv maps 3 -> hidden, the last maps hidden -> 3;
    /// leaky-relu follows every conv except the last.
    GeometryModule(ParamStore& store, const std::string& prefix, int layers, int hidden, Rng& rng);

    Tensor operator()(const Tensor& images) const;

    std::vector<Conv2dLayer>& convs() { return convs_; }
    const std::vector<Conv2dLayer>& convs() const { return convs_; }

    /// Sets every kernel to a channel passthrough (centre tap 1 on matching
    /// channels) with zero biases. The module then computes mean(R,G,B).
    void set_passthrough();

private:
    std::vector<Conv2dLayer> convs_;
};

}  // namespace dualvae
