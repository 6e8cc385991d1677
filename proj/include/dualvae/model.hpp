// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "dualvae/geometry.hpp"
#include "dualvae/latents.hpp"
#include "dualvae/networks.hpp"

namespace dualvae::inline DUALVAE_ABI {

/// All stage-1 parameters. The DualVAE variant owns E_G's quantizer head, D_G
/// and a codebook; the ReDualVAE variant omits them.
///
/// Parameter names are prefixed "geometry.", "enc_g.", "enc_c.", "dec_g.",
/// "dec_c." and "dec_x.".
class DualVaeModel {
public:
    DualVaeModel(const ModelConfig& config, const VqSettings& vq, Rng& rng);
    DualVaeModel(const DualVaeModel&) = delete;
    DualVaeModel& operator=(const DualVaeModel&) = delete;
    DualVaeModel(DualVaeModel&&) = default;
    DualVaeModel& operator=(DualVaeModel&&) = default;

    const ModelConfig& config() const { return config_; }
    bool is_dual() const { return config_.variant == Variant::dual; }

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    Codebook& codebook();
    const Codebook& codebook() const;

    GeometryModule& geometry_module() { return geometry_; }
    const MergeDecoder& merge_decoder() const { return dec_x_; }

    Tensor structure_estimate(const Tensor& images) const { return geometry_(images); }
    GeometryEncoding encode_geometry(const Tensor& structure) const { return enc_g_(structure); }
    ColourEncoding encode_colour(const Tensor& images) const { return enc_c_(images); }
    FeaturePyramid skip_decode_geometry(const Tensor& z_q) const;
    FeaturePyramid skip_decode_colour(const Tensor& z_c) const { return dec_c_(z_c); }
    Tensor merge_decode(const FeaturePyramid& geometry, const FeaturePyramid& colour,
                        std::vector<std::string>* trace = nullptr) const {
        return dec_x_(geometry, colour, trace);
    }

private:
    ModelConfig config_;
    ParamStore params_;
    GeometryModule geometry_;
    GeometryEncoder enc_g_;
    ColourEncoder enc_c_;
    GeometrySkipDecoder dec_g_;
    ColourSkipDecoder dec_c_;
    MergeDecoder dec_x_;
    Codebook codebook_;
};

}  // namespace dualvae
