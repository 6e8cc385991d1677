// SPDX-License-Identifier: Apache-2.0
#include "dualvae/model.hpp"

namespace dualvae::inline DUALVAE_ABI {

DualVaeModel::DualVaeModel(const ModelConfig& config, const VqSettings& vq, Rng& rng) : config_(config) {
    config_.validate();
    const bool dual = is_dual();
    geometry_ = GeometryModule(params_, "geometry", config_.geometry_layers, config_.geometry_channels, rng);
    enc_g_ = GeometryEncoder(params_, "enc_g", config_, dual, rng);
    enc_c_ = ColourEncoder(params_, "enc_c", config_, rng);
    if (dual) dec_g_ = GeometrySkipDecoder(params_, "dec_g", config_, rng);
    dec_c_ = ColourSkipDecoder(params_, "dec_c", config_, rng);
    dec_x_ = MergeDecoder(params_, "dec_x", config_, rng);
    if (dual) codebook_ = Codebook(config_.n_embed, config_.embed_dim, vq, rng);
}

Codebook& DualVaeModel::codebook() {
    DUALVAE_REQUIRE(is_dual(), "the ReDualVAE variant has no codebook");
    return codebook_;
}

const Codebook& DualVaeModel::codebook() const {
    DUALVAE_REQUIRE(is_dual(), "the ReDualVAE variant has no codebook");
    return codebook_;
}

FeaturePyramid DualVaeModel::skip_decode_geometry(const Tensor& z_q) const {
    DUALVAE_REQUIRE(is_dual(), "the ReDualVAE variant has no geometry skip decoder");
    return dec_g_(z_q);
}

}  // namespace dualvae
