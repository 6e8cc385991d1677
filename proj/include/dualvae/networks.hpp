// SPDX-License-Identifier: Apache-2.0
//
// Encoders E_C and E_G, skip decoders D_C and D_G, and the merge decoder D_X.
// Pyramid level 0 is the full-resolution stem output; level k (1..K) follows
// the k-th stride-2 block, so a pyramid for f = 2^K holds K + 1 levels.

#pragma once

#include <string>
#include <vector>

#include "dualvae/layers.hpp"
#include "dualvae/model_config.hpp"

namespace dualvae::inline DUALVAE_ABI {

enum class PyramidOrigin { encoder, skip_decoder };

struct FeaturePyramid {
    std::vector<Tensor> levels;  // [N, C_k, S_k, S_k], finest first
    PyramidOrigin origin = PyramidOrigin::encoder;

    int size() const { return static_cast<int>(levels.size()); }
    const Tensor& operator[](int k) const { return levels.at(static_cast<std::size_t>(k)); }
};

/// Throws ContractViolation unless adjacent levels halve spatially.
void check_pyramid(const FeaturePyramid& p);
/// Throws ContractViolation unless both pyramids have equal level count and
/// equal per-level batch and spatial extents.
void check_level_compatible(const FeaturePyramid& a, const FeaturePyramid& b);

/// Stem conv followed by K stride-2 blocks; every conv is followed by leaky-relu.
class EncoderBody {
public:
    EncoderBody() = default;
    EncoderBody(ParamStore& store, const std::string& prefix, int in_channels, const ModelConfig& cfg, Rng& rng);
    FeaturePyramid operator()(const Tensor& x) const;

private:
    Conv2dLayer stem_;
    std::vector<Conv2dLayer> downs_;
};

struct ColourEncoding {
    Tensor mu;      // [N, d_c]
    Tensor logvar;  // [N, d_c]
    FeaturePyramid features;
};

class ColourEncoder {
public:
    ColourEncoder() = default;
    ColourEncoder(ParamStore& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng);
    ColourEncoding operator()(const Tensor& images) const;

private:
    EncoderBody body_;
    LinearLayer mu_head_;
    LinearLayer logvar_head_;
};

struct GeometryEncoding {
    Tensor pre_quant;  // [N, D, h, w]; undefined when the encoder has no head
    FeaturePyramid features;
};

class GeometryEncoder {
public:
    GeometryEncoder() = default;
    /// with_head = false builds only the feature body (ReDualVAE).
    GeometryEncoder(ParamStore& store, const std::string& prefix, const ModelConfig& cfg, bool with_head, Rng& rng);
    GeometryEncoding operator()(const Tensor& structure) const;

private:
    EncoderBody body_;
    Conv2dLayer head_;
    bool with_head_ = false;
};

/// D_G: from the quantized grid back up to the encoder pyramid shapes.
class GeometrySkipDecoder {
public:
    GeometrySkipDecoder() = default;
    GeometrySkipDecoder(ParamStore& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng);
    FeaturePyramid operator()(const Tensor& z_q) const;

private:
    int levels_ = 0;
    int embed_dim_ = 0;
    std::vector<Conv2dLayer> convs_;  // index k produces level k
};

/// D_C: a shared hidden projection of z_c, then one linear map per level
/// broadcast over the level's spatial grid.
class ColourSkipDecoder {
public:
    ColourSkipDecoder() = default;
    ColourSkipDecoder(ParamStore& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng);
    FeaturePyramid operator()(const Tensor& z_c) const;

private:
    int colour_dim_ = 0;
    std::vector<int> sizes_;
    LinearLayer hidden_;
    std::vector<LinearLayer> heads_;
};

/// D_X. Stages run from the deepest level to level 0. At each stage the
/// geometry skip is concatenated, layer-normalised and convolved, then the
/// colour skip likewise, then the result is upsampled (except at level 0).
/// A final conv and sigmoid give the RGB image.
class MergeDecoder {
public:
    MergeDecoder() = default;
    MergeDecoder(ParamStore& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng);

    /// When `trace` is non-null, the sequence of operations applied is
    /// appended as "L<k>:<op>" strings.
    Tensor operator()(const FeaturePyramid& geometry, const FeaturePyramid& colour,
                      std::vector<std::string>* trace = nullptr) const;

    int levels() const { return static_cast<int>(stages_.size()); }

private:
    struct Stage {
        LayerNormLayer ln_geometry;
        Conv2dLayer conv_geometry;
        LayerNormLayer ln_colour;
        Conv2dLayer conv_colour;
    };
    std::vector<Stage> stages_;  // index k is level k
    Conv2dLayer out_;
};

}  // namespace dualvae
