// SPDX-License-Identifier: Apache-2.0
#include "dualvae/objective.hpp"

#include <cmath>

namespace dualvae::inline DUALVAE_ABI {

namespace {

Tensor batch_l1(const Tensor& images, const Tensor& recon) {
    return scale(l1_norm(sub(images, recon)), real(1) / static_cast<real>(images.dim(0)));
}

double checked_value(const Tensor& t, const char* component) {
    const double v = t.item();
    if (!std::isfinite(v)) throw NumericFault(std::string("non-finite loss component: ") + component);
    return v;
}

// Evaluates `fn` with the tape suspended when the term does not contribute
// to the objective.
template <typename Fn>
auto maybe_untracked(bool tracked, Fn&& fn) {
    if (tracked) return fn();
    NoTapeScope off;
    return fn();
}

Tensor colour_noise(const ColourEncoding& colour, Rng& rng, const LossOptions& options) {
    if (options.noise != nullptr) {
        DUALVAE_REQUIRE(options.noise->shape() == colour.mu.shape(), "fixed noise shape does not match mu");
        return *options.noise;
    }
    return standard_normal(colour.mu.shape(), rng);
}

Tensor weighted_total(std::initializer_list<std::pair<double, const Tensor*>> terms) {
    Tensor total;
    for (const auto& [w, t] : terms) {
        if (w == 0.0) continue;
        const Tensor term = scale(*t, static_cast<real>(w));
        total = total.defined() ? add(total, term) : term;
    }
    return total.defined() ? total : Tensor::scalar(real(0));
}

void check_images(const Tensor& images, const DualVaeModel& model) {
    const int s = model.config().image_size;
    DUALVAE_REQUIRE(images.rank() == 4 && images.dim(1) == 3 && images.dim(2) == s && images.dim(3) == s,
                    "loss expects [N,3," + std::to_string(s) + "," + std::to_string(s) + "] images, got " +
                        shape_str(images.shape()));
}

}  // namespace

LossResult dualvae_loss(const DualVaeModel& model, const Tensor& images, Rng& rng, const LossWeights& weights,
                        const LossOptions& options) {
    DUALVAE_REQUIRE(model.is_dual(), "dualvae_loss needs the DualVAE variant");
    check_images(images, model);
    LossResult r;
    ForwardState& s = r.state;
    s.structure = model.structure_estimate(images);
    s.geometry = model.encode_geometry(s.structure);
    s.colour = model.encode_colour(images);

    const real beta = static_cast<real>(weights.beta);
    if (options.frozen_quant != nullptr) {
        DUALVAE_REQUIRE(options.frozen_pre != nullptr, "frozen quantization needs the frozen pre_quant");
        s.quant = quantize_frozen(s.geometry.pre_quant, *options.frozen_quant, *options.frozen_pre, beta);
    } else {
        s.quant = quantize(s.geometry.pre_quant, model.codebook(), beta);
    }
    s.noise = colour_noise(s.colour, rng, options);
    s.z_c = reparameterize(s.colour.mu, s.colour.logvar, s.noise);

    const Tensor recon_F = maybe_untracked(weights.w_F != 0.0, [&] {
        s.recon_feature_path = model.merge_decode(s.geometry.features, s.colour.features);
        return batch_l1(images, s.recon_feature_path);
    });
    const Tensor recon_z = maybe_untracked(weights.w_z != 0.0, [&] {
        s.recon_latent_path =
            model.merge_decode(model.skip_decode_geometry(s.quant.z_q), model.skip_decode_colour(s.z_c));
        return batch_l1(images, s.recon_latent_path);
    });
    const Tensor kl = gaussian_kl(s.colour.mu, s.colour.logvar);

    LossBreakdown& b = r.breakdown;
    b.weights = weights;
    b.recon_F = checked_value(recon_F, "recon_F");
    b.recon_z = checked_value(recon_z, "recon_z");
    b.vq_latent = checked_value(s.quant.commit_loss, "vq_latent");
    b.gauss_kl = checked_value(kl, "gauss_kl");
    r.objective = weighted_total({{weights.w_F, &recon_F},
                                  {weights.w_z, &recon_z},
                                  {weights.w_vq, &s.quant.commit_loss},
                                  {weights.w_kl, &kl}});
    b.total = checked_value(r.objective, "total");
    return r;
}

LossResult redualvae_loss(const DualVaeModel& model, const Tensor& images, Rng& rng, const LossWeights& weights,
                          const LossOptions& options) {
    DUALVAE_REQUIRE(!model.is_dual(), "redualvae_loss needs the ReDualVAE variant");
    check_images(images, model);
    LossResult r;
    ForwardState& s = r.state;
    s.structure = model.structure_estimate(images);
    s.geometry = model.encode_geometry(s.structure);
    s.colour = model.encode_colour(images);
    s.noise = colour_noise(s.colour, rng, options);
    s.z_c = reparameterize(s.colour.mu, s.colour.logvar, s.noise);

    s.recon_feature_path = model.merge_decode(s.geometry.features, s.colour.features);
    const Tensor recon_F = batch_l1(images, s.recon_feature_path);
    s.recon_latent_path = model.merge_decode(s.geometry.features, model.skip_decode_colour(s.z_c));
    const Tensor recon_z = batch_l1(images, s.recon_latent_path);
    const Tensor kl = gaussian_kl(s.colour.mu, s.colour.logvar);

    LossBreakdown& b = r.breakdown;
    b.weights = weights;
    b.weights.w_F = kRedualFeatureWeight;
    b.weights.w_z = kRedualLatentWeight;
    b.weights.w_vq = 0.0;
    b.recon_F = checked_value(recon_F, "recon_F");
    b.recon_z = checked_value(recon_z, "recon_z");
    b.vq_latent = 0.0;
    b.gauss_kl = checked_value(kl, "gauss_kl");
    r.objective = weighted_total({{b.weights.w_F, &recon_F}, {b.weights.w_z, &recon_z}, {weights.w_kl, &kl}});
    b.total = checked_value(r.objective, "total");
    return r;
}

LossResult model_loss(const DualVaeModel& model, const Tensor& images, Rng& rng, const LossWeights& weights,
                      const LossOptions& options) {
    return model.is_dual() ? dualvae_loss(model, images, rng, weights, options)
                           : redualvae_loss(model, images, rng, weights, options);
}

}  // namespace dualvae
