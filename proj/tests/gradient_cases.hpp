// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference gradient cases shared by the gradient unit tests and the
// acceptance run. Include only from translation units built with 64-bit reals.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dualvae/grad_check.hpp"
#include "dualvae/latents.hpp"
#include "dualvae/objective.hpp"
#include "dualvae/ops.hpp"
#include "support.hpp"

namespace gradient_cases {

using namespace dualvae;

static_assert(kDoublePrecision, "gradient cases need the 64-bit build");

struct PrimitiveCase {
    std::string name;
    std::vector<NamedTensor> inputs;
    std::function<Tensor()> loss;
};

// sum(w * t) with w a fixed pseudo-random tensor of t's shape, so every output
// coordinate contributes with an O(1) weight.
inline Tensor readout(const Tensor& t, std::uint64_t seed) {
    Rng rng(seed);
    return sum(mul(t, test_support::random_tensor(t.shape(), rng, -1.0, 1.0)));
}

inline NamedTensor input(const std::string& name, const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    return {name, test_support::random_tensor(shape, rng, lo, hi, true)};
}

/// One case per differentiable primitive (and per interesting mode). Each
/// case's loss is a deterministic function of the current input values.
inline std::vector<PrimitiveCase> primitive_cases(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<PrimitiveCase> cases;
    auto add_case = [&](std::string name, std::vector<NamedTensor> inputs,
                        std::function<Tensor(const std::vector<NamedTensor>&)> f) {
        const std::uint64_t readout_seed = seed * 1000 + cases.size();
        auto loss = [inputs, f, readout_seed] { return readout(f(inputs), readout_seed); };
        cases.push_back({std::move(name), std::move(inputs), std::move(loss)});
    };
    auto t = [](const std::vector<NamedTensor>& in, std::size_t i) -> const Tensor& { return in[i].tensor; };

    for (int stride : {1, 2}) {
        for (Padding pad : {Padding::reflect, Padding::zero}) {
            const std::string name = std::string("conv2d_s") + std::to_string(stride) +
                                     (pad == Padding::reflect ? "_reflect" : "_zero");
            add_case(name,
                     {input("x", {2, 2, 5, 6}, rng), input("kernel", {3, 2, 3, 3}, rng), input("bias", {3}, rng)},
                     [stride, pad, t](const auto& in) { return conv2d(t(in, 0), t(in, 1), t(in, 2), stride, pad); });
        }
    }
    add_case("conv2d_1x5", {input("x", {1, 2, 4, 7}, rng), input("kernel", {2, 2, 1, 5}, rng)},
             [t](const auto& in) { return conv2d(t(in, 0), t(in, 1), Tensor(), 1); });
    add_case("linear", {input("x", {3, 4}, rng), input("weight", {5, 4}, rng), input("bias", {5}, rng)},
             [t](const auto& in) { return linear(t(in, 0), t(in, 1), t(in, 2)); });
    add_case("matmul", {input("a", {3, 4}, rng), input("b", {4, 2}, rng)},
             [t](const auto& in) { return matmul(t(in, 0), t(in, 1)); });
    add_case("layer_norm_last", {input("x", {3, 5}, rng), input("gain", {5}, rng), input("bias", {5}, rng)},
             [t](const auto& in) { return layer_norm(t(in, 0), t(in, 1), t(in, 2), 1e-5); });
    add_case("layer_norm_channels",
             {input("x", {2, 4, 2, 3}, rng), input("gain", {4}, rng), input("bias", {4}, rng)},
             [t](const auto& in) { return layer_norm(t(in, 0), t(in, 1), t(in, 2), 1e-5, 1); });
    add_case("upsample_nearest2x", {input("x", {1, 2, 3, 2}, rng)},
             [t](const auto& in) { return upsample_nearest2x(t(in, 0)); });
    add_case("avg_pool2x", {input("x", {2, 2, 4, 6}, rng)}, [t](const auto& in) { return avg_pool2x(t(in, 0)); });
    add_case("channel_mean", {input("x", {2, 3, 3, 2}, rng)}, [t](const auto& in) { return channel_mean(t(in, 0)); });
    add_case("spatial_mean", {input("x", {2, 3, 3, 2}, rng)}, [t](const auto& in) { return spatial_mean(t(in, 0)); });
    add_case("broadcast_spatial", {input("x", {2, 3}, rng)},
             [t](const auto& in) { return broadcast_spatial(t(in, 0), 2, 3); });
    add_case("concat_channels", {input("a", {2, 1, 2, 2}, rng), input("b", {2, 3, 2, 2}, rng)}, [t](const auto& in) {
        const std::vector<Tensor> parts{t(in, 0), t(in, 1)};
        return concat_channels(parts);
    });
    add_case("reshape", {input("x", {2, 6}, rng)}, [t](const auto& in) { return reshape(t(in, 0), {3, 4}); });
    add_case("leaky_relu", {input("x", {4, 5}, rng)}, [t](const auto& in) { return leaky_relu(t(in, 0)); });
    add_case("sigmoid", {input("x", {4, 5}, rng, -3, 3)}, [t](const auto& in) { return sigmoid(t(in, 0)); });
    add_case("tanh", {input("x", {4, 5}, rng, -2, 2)}, [t](const auto& in) { return dualvae::tanh(t(in, 0)); });
    add_case("exp", {input("x", {4, 5}, rng)}, [t](const auto& in) { return dualvae::exp(t(in, 0)); });
    add_case("add_broadcast", {input("a", {3, 4}, rng), input("b", {4}, rng)},
             [t](const auto& in) { return add(t(in, 0), t(in, 1)); });
    add_case("sub", {input("a", {3, 4}, rng), input("b", {3, 4}, rng)},
             [t](const auto& in) { return sub(t(in, 0), t(in, 1)); });
    add_case("mul_broadcast", {input("a", {2, 3, 4}, rng), input("b", {3, 4}, rng)},
             [t](const auto& in) { return mul(t(in, 0), t(in, 1)); });
    add_case("scale", {input("x", {3, 3}, rng)}, [t](const auto& in) { return scale(t(in, 0), 1.7); });
    add_case("add_scalar", {input("x", {3, 3}, rng)}, [t](const auto& in) { return add_scalar(t(in, 0), -0.3); });
    add_case("sum", {input("x", {3, 4}, rng)}, [t](const auto& in) { return scale(sum(t(in, 0)), 0.5); });
    add_case("mean", {input("x", {3, 4}, rng)}, [t](const auto& in) { return mean(t(in, 0)); });
    add_case("l1_norm", {input("x", {3, 4}, rng)}, [t](const auto& in) { return l1_norm(t(in, 0)); });
    add_case("sq_l2_norm", {input("x", {3, 4}, rng)}, [t](const auto& in) { return sq_l2_norm(t(in, 0)); });
    add_case("cross_entropy", {input("logits", {4, 6}, rng, -2, 2)}, [t](const auto& in) {
        const std::vector<int> targets{0, 5, 2, 2};
        return cross_entropy(t(in, 0), targets);
    });
    add_case("embedding", {input("table", {5, 3}, rng)}, [t](const auto& in) {
        const std::vector<int> idx{4, 0, 4, 2};
        return embedding(t(in, 0), idx);
    });
    add_case("dropout", {input("x", {4, 6}, rng)}, [t, seed](const auto& in) {
        Rng mask_rng(seed + 17);  // the same mask on every evaluation
        return dropout(t(in, 0), 0.3, mask_rng);
    });
    add_case("causal_attention",
             {input("q", {2, 4, 6}, rng), input("k", {2, 4, 6}, rng), input("v", {2, 4, 6}, rng)},
             [t](const auto& in) { return causal_attention(t(in, 0), t(in, 1), t(in, 2), 2); });
    add_case("reparameterize", {input("mu", {2, 3}, rng), input("logvar", {2, 3}, rng)}, [t, seed](const auto& in) {
        Rng noise_rng(seed + 29);
        return reparameterize(t(in, 0), t(in, 1), standard_normal({2, 3}, noise_rng));
    });
    add_case("gaussian_kl", {input("mu", {2, 3}, rng), input("logvar", {2, 3}, rng)},
             [t](const auto& in) { return gaussian_kl(t(in, 0), t(in, 1)); });
    return cases;
}

struct CaseResult {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t kinks = 0;
};

// A step of 1e-4 balances the O(eps^2) truncation error against the
// O(machine epsilon / eps) cancellation error for coordinates whose true
// gradient is small.
inline CaseResult run_case(const PrimitiveCase& c, double eps) {
    CaseResult r;
    r.name = c.name;
    for (const auto& p : grad_check_params(c.loss, c.inputs, eps)) {
        r.max_rel_error = std::max(r.max_rel_error, p.report.max_rel_error);
        r.checked += p.report.checked;
        r.kinks += p.report.kinks.size();
    }
    return r;
}

inline ModelConfig toy_model_config() {
    ModelConfig cfg;
    cfg.image_size = 8;
    cfg.downsample = 2;  // one stride-2 block: a two-level pyramid
    cfg.embed_dim = 3;
    cfg.n_embed = 6;
    cfg.colour_dim = 3;
    cfg.widths = {3, 4};
    cfg.geometry_layers = 2;
    cfg.geometry_channels = 3;
    cfg.colour_hidden = 4;
    return cfg;
}

struct FullLossResult {
    double max_rel_error = 0.0;
    std::string worst_tensor;
    std::size_t checked = 0;
    std::size_t kinks = 0;
    std::size_t tensors = 0;
};

/// Checks every parameter of a toy DualVAE against central differences of the
/// full loss, with the reparameterization noise and the codebook assignment
/// held at their values from a base evaluation.
inline FullLossResult check_full_loss(std::uint64_t seed, double eps, Variant variant = Variant::dual) {
    ModelConfig cfg = toy_model_config();
    cfg.variant = variant;
    Rng rng(seed);
    DualVaeModel model(cfg, VqSettings{}, rng);
    const Tensor images = test_support::random_tensor({2, 3, 8, 8}, rng, 0.0, 1.0);
    const Tensor noise = standard_normal({2, cfg.colour_dim}, rng);
    const LossWeights weights;

    LossOptions base_opts;
    base_opts.noise = &noise;
    Rng unused(0);
    QuantizeResult frozen;
    Tensor frozen_pre;
    if (model.is_dual()) {
        NoTapeScope off;
        const LossResult base = dualvae_loss(model, images, unused, weights, base_opts);
        frozen = base.state.quant;
        frozen_pre = base.state.geometry.pre_quant.detach();
    }
    LossOptions opts = base_opts;
    if (model.is_dual()) {
        opts.frozen_quant = &frozen;
        opts.frozen_pre = &frozen_pre;
    }
    auto loss = [&] { return model_loss(model, images, unused, weights, opts).objective; };

    FullLossResult out;
    for (const auto& p : grad_check_params(loss, model.params().entries(), eps)) {
        ++out.tensors;
        out.checked += p.report.checked;
        out.kinks += p.report.kinks.size();
        if (p.report.max_rel_error >= out.max_rel_error) {
            out.max_rel_error = p.report.max_rel_error;
            out.worst_tensor = p.name;
        }
    }
    return out;
}

}  // namespace gradient_cases
