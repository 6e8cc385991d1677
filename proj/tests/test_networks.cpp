// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dualvae/model.hpp"
#include "dualvae/objective.hpp"
#include "support.hpp"

using namespace dualvae;
using test_support::random_tensor;

namespace {

ModelConfig small_config(Variant variant = Variant::dual) {
    ModelConfig cfg;
    cfg.image_size = 32;
    cfg.downsample = 8;
    cfg.embed_dim = 32;
    cfg.n_embed = 16;
    cfg.colour_dim = 8;
    cfg.widths = {8, 8, 16, 16};
    cfg.geometry_channels = 4;
    cfg.colour_hidden = 16;
    cfg.variant = variant;
    return cfg;
}

double grad_l1(const Tensor& t) {
    double s = 0;
    for (real v : t.grad()) s += std::abs(static_cast<double>(v));
    return s;
}

}  // namespace

TEST_CASE("colour encoder pyramid sizes and head shapes") {
    Rng rng(21);
    const DualVaeModel model(small_config(), VqSettings{}, rng);
    const ColourEncoding enc = model.encode_colour(random_tensor({2, 3, 32, 32}, rng, 0, 1));
    REQUIRE(enc.features.size() == 4);
    const int sizes[] = {32, 16, 8, 4};
    for (int k = 0; k < 4; ++k) {
        CHECK(enc.features[k].dim(0) == 2);
        CHECK(enc.features[k].dim(2) == sizes[k]);
        CHECK(enc.features[k].dim(3) == sizes[k]);
    }
    CHECK(enc.mu.shape() == Shape{2, 8});
    CHECK(enc.logvar.shape() == Shape{2, 8});
}

TEST_CASE("geometry encoder pre-quantization grid is [D, 4, 4] for 32x32 at f=8") {
    Rng rng(22);
    const DualVaeModel model(small_config(), VqSettings{}, rng);
    const Tensor structure = model.structure_estimate(random_tensor({1, 3, 32, 32}, rng, 0, 1));
    const GeometryEncoding enc = model.encode_geometry(structure);
    CHECK(enc.pre_quant.shape() == Shape{1, 32, 4, 4});
    CHECK(enc.features.size() == 4);
}

TEST_CASE("encoders are deterministic and constant input gives finite pre-quantization") {
    Rng rng(23);
    const DualVaeModel model(small_config(), VqSettings{}, rng);
    const Tensor x = random_tensor({1, 3, 32, 32}, rng, 0, 1);
    const ColourEncoding a = model.encode_colour(x), b = model.encode_colour(x);
    CHECK(test_support::to_doubles(a.mu) == test_support::to_doubles(b.mu));
    CHECK(test_support::to_doubles(a.logvar) == test_support::to_doubles(b.logvar));

    const Tensor constant = Tensor::full({1, 1, 32, 32}, real(0.3));
    const Tensor p1 = model.encode_geometry(constant).pre_quant;
    const Tensor p2 = model.encode_geometry(constant).pre_quant;
    CHECK(test_support::to_doubles(p1) == test_support::to_doubles(p2));
    for (real v : p1.data()) CHECK(std::isfinite(v));
}

TEST_CASE("perturbing one pixel changes the deepest colour feature level") {
    Rng rng(24);
    const DualVaeModel model(small_config(), VqSettings{}, rng);
    const Tensor x = random_tensor({1, 3, 32, 32}, rng, 0, 1);
    Tensor y = x.clone();
    y.data()[3 * 32 + 5] += real(0.25);
    const Tensor deep_x = model.encode_colour(x).features[3];
    const Tensor deep_y = model.encode_colour(y).features[3];
    CHECK(test_support::max_abs_diff(deep_x, deep_y) > 0);
}

TEST_CASE("skip decoders reproduce the encoder pyramid shapes for several configs") {
    for (int f : {2, 4, 8}) {
        ModelConfig cfg = small_config();
        cfg.downsample = f;
        cfg.image_size = 16;
        cfg.widths = {4, 6, 8, 10};
        cfg.widths.resize(static_cast<std::size_t>(cfg.levels()));
        Rng rng(25);
        const DualVaeModel model(cfg, VqSettings{}, rng);
        const Tensor x = random_tensor({2, 3, 16, 16}, rng, 0, 1);
        const GeometryEncoding g = model.encode_geometry(model.structure_estimate(x));
        const ColourEncoding c = model.encode_colour(x);
        const FeaturePyramid dg = model.skip_decode_geometry(g.pre_quant);
        const FeaturePyramid dc = model.skip_decode_colour(c.mu);
        REQUIRE(dg.size() == g.features.size());
        REQUIRE(dc.size() == c.features.size());
        for (int k = 0; k < dg.size(); ++k) {
            CHECK(dg[k].shape() == g.features[k].shape());
            CHECK(dc[k].shape() == c.features[k].shape());
        }
        const Tensor out = model.merge_decode(dg, dc);
        CHECK(out.shape() == x.shape());
    }
}

TEST_CASE("z_c = 0 gives the bias-only colour pyramid") {
    Rng rng(26);
    const DualVaeModel model(small_config(), VqSettings{}, rng);
    const FeaturePyramid a = model.skip_decode_colour(Tensor::zeros({1, 8}));
    const FeaturePyramid b = model.skip_decode_colour(Tensor::zeros({1, 8}));
    // With zero input the hidden layer sees only its bias (zero at init), so
    // every head returns its bias broadcast over the grid.
    for (int k = 0; k < a.size(); ++k) {
        CHECK(test_support::to_doubles(a[k]) == test_support::to_doubles(b[k]));
        const std::string name = "dec_c.level" + std::to_string(k) + ".bias";
        if (model.params().contains(name)) {
            const Tensor& bias = model.params().get(name);
            const int hw = a[k].dim(2) * a[k].dim(3);
            for (int ch = 0; ch < a[k].dim(1); ++ch) {
                CHECK(a[k].at(static_cast<std::size_t>(ch * hw)) == bias.at(static_cast<std::size_t>(ch)));
            }
        }
    }
}

TEST_CASE("swapping z_c between two images swaps their colour pyramids") {
    Rng rng(27);
    const DualVaeModel model(small_config(), VqSettings{}, rng);
    const Tensor z = random_tensor({2, 8}, rng);
    Tensor swapped = Tensor::zeros({2, 8});
    for (std::size_t i = 0; i < 8; ++i) {
        swapped.data()[i] = z.at(8 + i);
        swapped.data()[8 + i] = z.at(i);
    }
    const FeaturePyramid a = model.skip_decode_colour(z), b = model.skip_decode_colour(swapped);
    for (int k = 0; k < a.size(); ++k) {
        const std::size_t per = a[k].numel() / 2;
        for (std::size_t i = 0; i < per; ++i) {
            CHECK(a[k].at(i) == b[k].at(per + i));
            CHECK(a[k].at(per + i) == b[k].at(i));
        }
    }
}

TEST_CASE("merge decoder injects geometry before colour with two layer-norm sites per level") {
    Rng rng(28);
    const DualVaeModel model(small_config(), VqSettings{}, rng);
    const Tensor x = random_tensor({1, 3, 32, 32}, rng, 0, 1);
    const GeometryEncoding g = model.encode_geometry(model.structure_estimate(x));
    const ColourEncoding c = model.encode_colour(x);
    std::vector<std::string> trace;
    const Tensor out = model.merge_decode(g.features, c.features, &trace);
    CHECK(out.shape() == Shape{1, 3, 32, 32});
    for (real v : out.data()) {
        CHECK(v >= 0);
        CHECK(v <= 1);
    }
    for (int k = 0; k < 4; ++k) {
        const std::string tag = "L" + std::to_string(k) + ":";
        std::vector<std::string> ops;
        for (const auto& t : trace) {
            if (t.rfind(tag, 0) == 0) ops.push_back(t.substr(tag.size()));
        }
        const auto geometry = std::find_if(ops.begin(), ops.end(),
                                           [](const std::string& s) { return s.find("geometry") != std::string::npos; });
        const auto colour = std::find(ops.begin(), ops.end(), "concat_colour");
        REQUIRE(geometry != ops.end());
        REQUIRE(colour != ops.end());
        CHECK(geometry < colour);
        CHECK(std::count(ops.begin(), ops.end(), "layer_norm") == 2);
        CHECK(std::count(ops.begin(), ops.end(), "upsample") == (k > 0 ? 1 : 0));
    }
    // Deepest level first.
    CHECK(trace.front().rfind("L3:", 0) == 0);
    CHECK(trace.back().rfind("L0:", 0) == 0);
}

TEST_CASE("merge decoder rejects incompatible pyramids") {
    Rng rng(29);
    const DualVaeModel model(small_config(), VqSettings{}, rng);
    const Tensor x = random_tensor({1, 3, 32, 32}, rng, 0, 1);
    const ColourEncoding c = model.encode_colour(x);
    FeaturePyramid short_pyramid = c.features;
    short_pyramid.levels.pop_back();
    CHECK_THROWS_AS(model.merge_decode(short_pyramid, short_pyramid), ContractViolation);
    FeaturePyramid other = model.encode_colour(random_tensor({2, 3, 32, 32}, rng, 0, 1)).features;
    CHECK_THROWS_AS(model.merge_decode(c.features, other), ContractViolation);
}

TEST_CASE("both reconstruction paths share the merge decoder parameters") {
    Rng rng(30);
    const DualVaeModel model(small_config(), VqSettings{}, rng);
    const Tensor x = random_tensor({2, 3, 32, 32}, rng, 0, 1);
    const auto dec_x = model.params().with_prefix("dec_x.");
    REQUIRE(!dec_x.empty());

    auto grads_with = [&](double w_F, double w_z) {
        ParamStore& store = const_cast<DualVaeModel&>(model).params();
        store.zero_grad();
        Rng loss_rng(99);
        LossWeights w;
        w.w_F = w_F;
        w.w_z = w_z;
        w.w_vq = 0;
        w.w_kl = 0;
        Tape tape;
        {
            TapeScope scope(tape);
            const LossResult r = dualvae_loss(model, x, loss_rng, w);
            tape.backward(r.objective);
        }
        std::vector<std::vector<double>> out;
        for (const auto& p : dec_x) out.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
        return out;
    };
    const auto feature_only = grads_with(1, 0);
    const auto latent_only = grads_with(0, 1);
    const auto both = grads_with(1, 1);
    double f_norm = 0, z_norm = 0, worst = 0, scale = 0;
    for (std::size_t p = 0; p < dec_x.size(); ++p) {
        for (std::size_t i = 0; i < both[p].size(); ++i) {
            f_norm += std::abs(feature_only[p][i]);
            z_norm += std::abs(latent_only[p][i]);
            worst = std::max(worst, std::abs(both[p][i] - feature_only[p][i] - latent_only[p][i]));
            scale = std::max(scale, std::abs(both[p][i]));
        }
    }
    CHECK(f_norm > 0);
    CHECK(z_norm > 0);
    CHECK(worst <= 1e-4 * std::max(scale, 1.0));
}

TEST_CASE("gradient reaches the geometry module through the geometry encoder") {
    Rng rng(31);
    DualVaeModel model(small_config(), VqSettings{}, rng);
    const Tensor x = random_tensor({2, 3, 32, 32}, rng, 0, 1);
    Tape tape;
    {
        TapeScope scope(tape);
        const GeometryEncoding g = model.encode_geometry(model.structure_estimate(x));
        tape.backward(sq_l2_norm(g.pre_quant));
    }
    for (const auto& p : model.params().with_prefix("geometry.")) CHECK_MESSAGE(grad_l1(p.tensor) > 0, p.name);
}

TEST_CASE("ReDualVAE has no quantizer head, skip decoder or codebook") {
    Rng rng(32);
    const DualVaeModel model(small_config(Variant::redual), VqSettings{}, rng);
    CHECK(model.params().with_prefix("dec_g.").empty());
    CHECK_THROWS_AS(model.codebook(), ContractViolation);
    const GeometryEncoding g =
        model.encode_geometry(model.structure_estimate(random_tensor({1, 3, 32, 32}, rng, 0, 1)));
    CHECK_FALSE(g.pre_quant.defined());
}

TEST_CASE("model config validation") {
    ModelConfig cfg = small_config();
    CHECK_NOTHROW(cfg.validate());
    cfg.downsample = 6;
    CHECK_THROWS_AS(cfg.validate(), ContractViolation);
    cfg = small_config();
    cfg.image_size = 36;
    CHECK_THROWS_AS(cfg.validate(), ContractViolation);
    cfg = small_config();
    CHECK(cfg.levels() == 3);
    CHECK(cfg.level_size(3) == 4);
}
