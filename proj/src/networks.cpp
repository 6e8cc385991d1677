// SPDX-License-Identifier: Apache-2.0
#include "dualvae/networks.hpp"

#include <algorithm>
#include <array>
#include <bit>

namespace dualvae::inline DUALVAE_ABI {

std::string to_string(Variant v) {
    return v == Variant::dual ? "dual" : "redual";
}

Variant parse_variant(const std::string& text) {
    if (text == "dual") return Variant::dual;
    if (text == "redual") return Variant::redual;
    throw ContractViolation("unknown model variant '" + text + "' (expected dual or redual)");
}

int ModelConfig::levels() const {
    return std::countr_zero(static_cast<unsigned>(downsample));
}

int ModelConfig::level_width(int k) const {
    DUALVAE_REQUIRE(!widths.empty(), "model.widths is empty");
    const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(k), widths.size() - 1);
    return widths[i];
}

void ModelConfig::validate() const {
    DUALVAE_REQUIRE(downsample >= 2 && std::has_single_bit(static_cast<unsigned>(downsample)),
                    "model.downsample must be a power of two >= 2");
    DUALVAE_REQUIRE(image_size > 0 && image_size % downsample == 0,
                    "model.image_size must be a positive multiple of model.downsample");
    DUALVAE_REQUIRE(embed_dim > 0 && n_embed > 0 && colour_dim > 0, "latent sizes must be positive");
    DUALVAE_REQUIRE(!widths.empty(), "model.widths must list at least one width");
    for (int w : widths) DUALVAE_REQUIRE(w > 0, "model.widths entries must be positive");
    DUALVAE_REQUIRE(geometry_layers >= 1 && geometry_channels >= 1, "geometry module size must be positive");
    DUALVAE_REQUIRE(colour_hidden >= 1, "model.colour_hidden must be positive");
}

void check_pyramid(const FeaturePyramid& p) {
    DUALVAE_REQUIRE(!p.levels.empty(), "empty feature pyramid");
    for (int k = 0; k < p.size(); ++k) {
        DUALVAE_REQUIRE(p[k].rank() == 4, "pyramid levels must be [N,C,H,W]");
        if (k > 0) {
            DUALVAE_REQUIRE(p[k - 1].dim(2) == 2 * p[k].dim(2) && p[k - 1].dim(3) == 2 * p[k].dim(3),
                            "adjacent pyramid levels must differ by 2x spatially");
        }
    }
}

void check_level_compatible(const FeaturePyramid& a, const FeaturePyramid& b) {
    DUALVAE_REQUIRE(a.size() == b.size(), "pyramid level counts differ: " + std::to_string(a.size()) + " vs " +
                                              std::to_string(b.size()));
    for (int k = 0; k < a.size(); ++k) {
        DUALVAE_REQUIRE(a[k].dim(0) == b[k].dim(0) && a[k].dim(2) == b[k].dim(2) && a[k].dim(3) == b[k].dim(3),
                        "pyramid level " + std::to_string(k) + " shapes differ: " + shape_str(a[k].shape()) +
                            " vs " + shape_str(b[k].shape()));
    }
}

EncoderBody::EncoderBody(ParamStore& store, const std::string& prefix, int in_channels, const ModelConfig& cfg,
                         Rng& rng) {
    stem_ = Conv2dLayer(store, prefix + ".stem", in_channels, cfg.level_width(0), 3, 1, rng);
    for (int k = 1; k <= cfg.levels(); ++k) {
        downs_.emplace_back(store, prefix + ".down" + std::to_string(k), cfg.level_width(k - 1), cfg.level_width(k),
                            3, 2, rng);
    }
}

FeaturePyramid EncoderBody::operator()(const Tensor& x) const {
    FeaturePyramid p;
    p.origin = PyramidOrigin::encoder;
    Tensor h = leaky_relu(stem_(x));
    p.levels.push_back(h);
    for (const auto& down : downs_) {
        h = leaky_relu(down(h));
        p.levels.push_back(h);
    }
    return p;
}

ColourEncoder::ColourEncoder(ParamStore& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng)
    : body_(store, prefix, 3, cfg, rng) {
    const int deepest = cfg.level_width(cfg.levels());
    mu_head_ = LinearLayer(store, prefix + ".mu", deepest, cfg.colour_dim, rng);
    logvar_head_ = LinearLayer(store, prefix + ".logvar", deepest, cfg.colour_dim, rng);
}

ColourEncoding ColourEncoder::operator()(const Tensor& images) const {
    DUALVAE_REQUIRE(images.rank() == 4 && images.dim(1) == 3, "colour encoder expects [N,3,H,W] images");
    ColourEncoding out;
    out.features = body_(images);
    const Tensor pooled = spatial_mean(out.features.levels.back());
    out.mu = mu_head_(pooled);
    out.logvar = logvar_head_(pooled);
    return out;
}

GeometryEncoder::GeometryEncoder(ParamStore& store, const std::string& prefix, const ModelConfig& cfg,
                                 bool with_head, Rng& rng)
    : body_(store, prefix, 1, cfg, rng), with_head_(with_head) {
    if (with_head_) {
        head_ = Conv2dLayer(store, prefix + ".head", cfg.level_width(cfg.levels()), cfg.embed_dim, 1, 1, rng);
    }
}

GeometryEncoding GeometryEncoder::operator()(const Tensor& structure) const {
    DUALVAE_REQUIRE(structure.rank() == 4 && structure.dim(1) == 1, "geometry encoder expects [N,1,H,W] input");
    GeometryEncoding out;
    out.features = body_(structure);
    if (with_head_) out.pre_quant = head_(out.features.levels.back());
    return out;
}

GeometrySkipDecoder::GeometrySkipDecoder(ParamStore& store, const std::string& prefix, const ModelConfig& cfg,
                                         Rng& rng)
    : levels_(cfg.levels()), embed_dim_(cfg.embed_dim) {
    for (int k = 0; k <= levels_; ++k) {
        const int in = k == levels_ ? cfg.embed_dim : cfg.level_width(k + 1);
        convs_.emplace_back(store, prefix + ".level" + std::to_string(k), in, cfg.level_width(k), 3, 1, rng);
    }
}

FeaturePyramid GeometrySkipDecoder::operator()(const Tensor& z_q) const {
    DUALVAE_REQUIRE(z_q.rank() == 4 && z_q.dim(1) == embed_dim_,
                    "geometry skip decoder expects [N," + std::to_string(embed_dim_) + ",h,w], got " +
                        shape_str(z_q.shape()));
    FeaturePyramid p;
    p.origin = PyramidOrigin::skip_decoder;
    p.levels.resize(static_cast<std::size_t>(levels_ + 1));
    Tensor h = leaky_relu(convs_[static_cast<std::size_t>(levels_)](z_q));
    p.levels[static_cast<std::size_t>(levels_)] = h;
    for (int k = levels_ - 1; k >= 0; --k) {
        h = leaky_relu(convs_[static_cast<std::size_t>(k)](upsample_nearest2x(h)));
        p.levels[static_cast<std::size_t>(k)] = h;
    }
    return p;
}

ColourSkipDecoder::ColourSkipDecoder(ParamStore& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng)
    : colour_dim_(cfg.colour_dim) {
    hidden_ = LinearLayer(store, prefix + ".hidden", cfg.colour_dim, cfg.colour_hidden, rng);
    for (int k = 0; k <= cfg.levels(); ++k) {
        heads_.emplace_back(store, prefix + ".level" + std::to_string(k), cfg.colour_hidden, cfg.level_width(k), rng);
        sizes_.push_back(cfg.level_size(k));
    }
}

FeaturePyramid ColourSkipDecoder::operator()(const Tensor& z_c) const {
    DUALVAE_REQUIRE(z_c.rank() == 2 && z_c.dim(1) == colour_dim_,
                    "colour skip decoder expects [N," + std::to_string(colour_dim_) + "], got " +
                        shape_str(z_c.shape()));
    FeaturePyramid p;
    p.origin = PyramidOrigin::skip_decoder;
    const Tensor hidden = leaky_relu(hidden_(z_c));
    for (std::size_t k = 0; k < heads_.size(); ++k) {
        p.levels.push_back(leaky_relu(broadcast_spatial(heads_[k](hidden), sizes_[k], sizes_[k])));
    }
    return p;
}

MergeDecoder::MergeDecoder(ParamStore& store, const std::string& prefix, const ModelConfig& cfg, Rng& rng) {
    const int levels = cfg.levels();
    for (int k = 0; k <= levels; ++k) {
        const std::string name = prefix + ".level" + std::to_string(k);
        const int width = cfg.level_width(k);
        const int geometry_in = k == levels ? width : cfg.level_width(k + 1) + width;
        Stage s;
        s.ln_geometry = LayerNormLayer(store, name + ".ln_geometry", geometry_in, 1);
        s.conv_geometry = Conv2dLayer(store, name + ".conv_geometry", geometry_in, width, 3, 1, rng);
        s.ln_colour = LayerNormLayer(store, name + ".ln_colour", 2 * width, 1);
        s.conv_colour = Conv2dLayer(store, name + ".conv_colour", 2 * width, width, 3, 1, rng);
        stages_.push_back(std::move(s));
    }
    out_ = Conv2dLayer(store, prefix + ".out", cfg.level_width(0), 3, 3, 1, rng);
}

Tensor MergeDecoder::operator()(const FeaturePyramid& geometry, const FeaturePyramid& colour,
                                std::vector<std::string>* trace) const {
    check_level_compatible(geometry, colour);
    DUALVAE_REQUIRE(geometry.size() == levels(), "merge decoder expects " + std::to_string(levels()) +
                                                     " pyramid levels, got " + std::to_string(geometry.size()));
    auto note = [trace](int k, const char* op) {
        if (trace) trace->push_back("L" + std::to_string(k) + ":" + op);
    };
    Tensor h;
    for (int k = levels() - 1; k >= 0; --k) {
        const Stage& s = stages_[static_cast<std::size_t>(k)];
        if (h.defined()) {
            const std::array<Tensor, 2> parts{h, geometry[k]};
            h = concat_channels(parts);
            note(k, "concat_geometry");
        } else {
            h = geometry[k];
            note(k, "inject_geometry");
        }
        h = leaky_relu(s.conv_geometry(s.ln_geometry(h)));
        note(k, "layer_norm");
        note(k, "conv");
        const std::array<Tensor, 2> parts{h, colour[k]};
        h = concat_channels(parts);
        note(k, "concat_colour");
        h = leaky_relu(s.conv_colour(s.ln_colour(h)));
        note(k, "layer_norm");
        note(k, "conv");
        if (k > 0) {
            h = upsample_nearest2x(h);
            note(k, "upsample");
        }
    }
    return sigmoid(out_(h));
}

}  // namespace dualvae
