// SPDX-License-Identifier: Apache-2.0
#include "dualvae/geometry.hpp"

#include <algorithm>

namespace dualvae::inline DUALVAE_ABI {

GeometryModule::GeometryModule(ParamStore& store, const std::string& prefix, int layers, int hidden, Rng& rng) {
    DUALVAE_REQUIRE(layers >= 1 && hidden >= 1, "geometry module needs at least one layer and one channel");
    for (int i = 0; i < layers; ++i) {
        const int in = i == 0 ? 3 : hidden;
        const int out = i == layers - 1 ? 3 : hidden;
        convs_.emplace_back(store, prefix + ".conv" + std::to_string(i), in, out, 3, 1, rng);
    }
}

Tensor GeometryModule::operator()(const Tensor& images) const {
    DUALVAE_REQUIRE(images.rank() == 4 && images.dim(1) == 3, "structure estimate expects [N,3,H,W] images");
    ensure_finite(images.data(), "structure_estimate input");
    Tensor h = images;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        h = convs_[i](h);
        if (i + 1 < convs_.size()) h = leaky_relu(h);
    }
    return channel_mean(h);
}

void GeometryModule::set_passthrough() {
    for (auto& conv : convs_) {
        auto w = conv.weight.data();
        std::fill(w.begin(), w.end(), real(0));
        const int out = conv.weight.dim(0), in = conv.weight.dim(1);
        for (int c = 0; c < std::min(out, in); ++c) {
            // centre tap of a 3x3 kernel
            w[((static_cast<std::size_t>(c) * in + c) * 3 + 1) * 3 + 1] = real(1);
        }
        auto b = conv.bias.data();
        std::fill(b.begin(), b.end(), real(0));
    }
}

}  // namespace dualvae
