// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "dualvae/objective.hpp"
#include "dualvae/verify.hpp"
#include "support.hpp"

using namespace dualvae;
using test_support::random_tensor;

namespace {

ModelConfig toy_config(Variant variant = Variant::dual) {
    ModelConfig cfg;
    cfg.image_size = 8;
    cfg.downsample = 2;
    cfg.embed_dim = 4;
    cfg.n_embed = 8;
    cfg.colour_dim = 3;
    cfg.widths = {4, 6};
    cfg.geometry_layers = 2;
    cfg.geometry_channels = 3;
    cfg.colour_hidden = 5;
    cfg.variant = variant;
    return cfg;
}

void zero_prefix(DualVaeModel& model, const std::string& prefix) {
    for (auto p : model.params().with_prefix(prefix)) std::fill(p.tensor.data().begin(), p.tensor.data().end(), 0);
}

// Every decoder output is sigmoid(0) = 0.5, the colour heads emit (0, 0) and
// the quantizer head emits 0, which is made a codebook entry.
void make_degenerate(DualVaeModel& model) {
    zero_prefix(model, "dec_x.");
    zero_prefix(model, "enc_c.mu.");
    zero_prefix(model, "enc_c.logvar.");
    if (model.is_dual()) {
        zero_prefix(model, "enc_g.head.");
        auto e = model.codebook().embeddings().data();
        std::fill(e.begin(), e.begin() + model.codebook().dim(), 0);
    }
}

double weighted_sum(const LossBreakdown& b) {
    return b.weights.w_F * b.recon_F + b.weights.w_z * b.recon_z + b.weights.w_vq * b.vq_latent +
           b.weights.w_kl * b.gauss_kl;
}

}  // namespace

TEST_CASE("loss breakdown total is the weighted sum of nonnegative components") {
    Rng rng(61);
    const DualVaeModel model(toy_config(), VqSettings{}, rng);
    const Tensor x = random_tensor({3, 3, 8, 8}, rng, 0, 1);
    for (double w_F : {2.0, 0.0, 0.5}) {
        LossWeights w;
        w.w_F = w_F;
        const LossBreakdown b = dualvae_loss(model, x, rng, w).breakdown;
        CHECK(b.recon_F > 0);
        CHECK(b.recon_z > 0);
        CHECK(b.vq_latent >= 0);
        CHECK(b.gauss_kl >= 0);
        CHECK(b.total == doctest::Approx(weighted_sum(b)).epsilon(1e-6));
    }
}

TEST_CASE("degenerate exact-reconstruction model has zero total") {
    Rng rng(62);
    DualVaeModel model(toy_config(), VqSettings{}, rng);
    make_degenerate(model);
    const Tensor x = Tensor::full({2, 3, 8, 8}, real(0.5));
    const LossBreakdown b = dualvae_loss(model, x, rng, LossWeights{}).breakdown;
    CHECK(b.recon_F == 0);
    CHECK(b.recon_z == 0);
    CHECK(b.vq_latent == 0);
    CHECK(b.gauss_kl == 0);
    CHECK(b.total == 0);
}

TEST_CASE("w_F = 0 keeps recon_F reported but off the objective and off the tape") {
    Rng rng(63);
    DualVaeModel model(toy_config(), VqSettings{}, rng);
    const Tensor x = random_tensor({2, 3, 8, 8}, rng, 0, 1);
    LossWeights w;
    w.w_F = 0.0;
    Rng a(5), b(5);
    const LossBreakdown with_reg = dualvae_loss(model, x, a, LossWeights{}).breakdown;
    model.params().zero_grad();
    Tape tape;
    LossBreakdown without;
    {
        TapeScope scope(tape);
        const LossResult r = dualvae_loss(model, x, b, w);
        without = r.breakdown;
        tape.backward(r.objective);
    }
    CHECK(without.recon_F == with_reg.recon_F);
    CHECK(without.total == doctest::Approx(without.recon_z + without.vq_latent + without.gauss_kl).epsilon(1e-6));
    // Encoder C features only reach the loss through the regularization path,
    // apart from the deepest level that feeds the mu/logvar heads.
    double stem_grad = 0;
    for (real g : model.params().get("enc_c.stem.weight").grad()) stem_grad += std::abs(g);
    CHECK(stem_grad > 0);
}

TEST_CASE("ReDualVAE loss has no VQ term and fixed path weights") {
    Rng rng(64);
    const DualVaeModel model(toy_config(Variant::redual), VqSettings{}, rng);
    const Tensor x = random_tensor({2, 3, 8, 8}, rng, 0, 1);
    const LossBreakdown b = redualvae_loss(model, x, rng, LossWeights{}).breakdown;
    CHECK(b.vq_latent == 0);
    CHECK(b.weights.w_F == kRedualFeatureWeight);
    CHECK(b.weights.w_z == kRedualLatentWeight);
    CHECK(b.total == doctest::Approx(weighted_sum(b)).epsilon(1e-6));
    CHECK_THROWS_AS(dualvae_loss(model, x, rng, LossWeights{}), ContractViolation);
}

TEST_CASE("ReDualVAE with a perfect decoder and z_c at the mean reduces to the KL") {
    Rng rng(65);
    DualVaeModel model(toy_config(Variant::redual), VqSettings{}, rng);
    make_degenerate(model);
    auto mu_bias = model.params().get("enc_c.mu.bias");
    const std::vector<real> bias{0.5f, -1.0f, 0.25f};
    std::copy(bias.begin(), bias.end(), mu_bias.data().begin());
    const Tensor x = Tensor::full({2, 3, 8, 8}, real(0.5));
    const Tensor zero_noise = Tensor::zeros({2, 3});
    LossOptions opts;
    opts.noise = &zero_noise;
    const LossBreakdown b = redualvae_loss(model, x, rng, LossWeights{}, opts).breakdown;
    CHECK(b.gauss_kl == doctest::Approx(0.5 * (0.25 + 1.0 + 0.0625)).epsilon(1e-6));
    CHECK(b.total == doctest::Approx(b.gauss_kl).epsilon(1e-6));
}

TEST_CASE("wrong image shapes are contract violations") {
    Rng rng(66);
    const DualVaeModel model(toy_config(), VqSettings{}, rng);
    CHECK_THROWS_AS(dualvae_loss(model, Tensor::zeros({1, 3, 16, 16}), rng, LossWeights{}), ContractViolation);
    CHECK_THROWS_AS(dualvae_loss(model, Tensor::zeros({1, 1, 8, 8}), rng, LossWeights{}), ContractViolation);
}

TEST_CASE("laplace_logprob examples") {
    const Vec mu{0.5, -1.0, 2.0};
    CHECK(laplace_logprob(mu, mu) == 0);
    const Vec x1{1.0, -1.0, 0.0}, x2{0.5, 0.0, 2.5};
    CHECK(laplace_logprob(x1, mu) == -2.5);
    CHECK(laplace_logprob(x1, mu) - laplace_logprob(x2, mu) == l1_distance(x2, mu) - l1_distance(x1, mu));
    const Tensor tx = Tensor::from({3}, {1, -1, 0}), tmu = Tensor::from({3}, {0.5f, -1, 2});
    CHECK(laplace_logprob(tx, tmu) == doctest::Approx(-2.5));
}

TEST_CASE("laplace identity against normalised densities") {
    Rng rng(67);
    const MathCheck c = check_laplace_identity(1000, 4, 1e-9, rng);
    CHECK(c.passed);
    CHECK(c.violations == 0);
    CHECK(c.trials == 1000);
}

TEST_CASE("reverse-Lipschitz examples") {
    const auto identity = [](const Vec& v) { return v; };
    const auto half = [](const Vec& v) {
        Vec out = v;
        for (auto& x : out) x *= 0.5;
        return out;
    };
    const Vec a{1, 2, -3}, b{0, 0.5, 1};
    const ReverseLipschitzResult id = check_reverse_lipschitz(identity, a, b, LipschitzConfig{});
    CHECK(id.holds);
    CHECK(id.ratio == 1.0);
    const ReverseLipschitzResult h = check_reverse_lipschitz(half, a, b, LipschitzConfig{});
    CHECK_FALSE(h.holds);
    CHECK(h.ratio == 2.0);
    Rng rng(68);
    CHECK(check_lipschitz_examples(rng).passed);
}

TEST_CASE("feature bound chain holds on isometric maps and fails on a contraction") {
    Rng rng(69);
    const MathCheck c = check_feature_bound_chain(2000, 4, rng);
    CHECK(c.passed);
    CHECK(c.violations == 0);

    // A contraction D_X = P/4 breaks the reverse-Lipschitz step on some tuples.
    ElboToyModel contraction = make_isometric_toy_model(4, rng);
    const auto iso = contraction.decode_x;
    contraction.decode_x = [iso](const Vec& g, const Vec& c2) {
        Vec out = iso(g, c2);
        for (auto& v : out) v *= 0.25;
        return out;
    };
    std::normal_distribution<double> normal;
    auto vec = [&](int n) {
        Vec v(static_cast<std::size_t>(n));
        for (auto& x : v) x = normal(rng);
        return v;
    };
    int failures = 0;
    for (int t = 0; t < 200; ++t) {
        const FeatureBoundCheck r =
            check_feature_bound(contraction, vec(8), vec(4), vec(4), vec(4), vec(4), LipschitzConfig{});
        CHECK(r.triangle);
        failures += !r.reverse_lipschitz;
    }
    CHECK(failures > 0);
}

TEST_CASE("ELBO estimators reduce to minus the KL terms for a zero-error model") {
    const Vec x{0.1, 0.2, 0.3, 0.4}, f_g{1, 2}, f_c{-1, 0.5};
    ElboToyModel m;
    m.decode_x = [x](const Vec&, const Vec&) { return x; };
    m.decode_g = [f_g](const Vec&) { return f_g; };
    m.decode_c = [f_c](const Vec&) { return f_c; };
    ElboInputs in{x, f_g, f_c, {{0.3, -0.2}, {0.1, -0.5}}, {{1.0, 0.0}, {0.2, 0.0}}};
    const double kl = diagonal_gaussian_kl(in.q_g) + diagonal_gaussian_kl(in.q_c);
    Rng rng(70);
    CHECK(explicit_elbo_estimate(in, m, 50, rng).mean == doctest::Approx(-kl).epsilon(1e-12));
    CHECK(implicit_elbo_estimate(in, m, 50, rng).mean == doctest::Approx(-kl).epsilon(1e-12));
    CHECK_THROWS_AS(explicit_elbo_estimate(in, m, 0, rng), ContractViolation);
}

TEST_CASE("ELBO estimator variance scales as 1/n") {
    Rng rng(71);
    const ElboToyModel m = make_isometric_toy_model(3, rng);
    ElboInputs in{{0.1, -0.2, 0.3, 0.0, 0.5, -0.5}, {0.2, 0.1, 0}, {-0.3, 0.4, 0.2},
                  {{0, 0.1, -0.1}, {0, -0.5, 0.2}}, {{0.2, 0, 0}, {0.1, 0.1, -0.3}}};
    auto variance_of = [&](int n) {
        const int reps = 600;
        std::vector<double> v;
        for (int r = 0; r < reps; ++r) v.push_back(implicit_elbo_estimate(in, m, n, rng).mean);
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / reps;
        double s = 0;
        for (double e : v) s += (e - mean) * (e - mean);
        return s / (reps - 1);
    };
    const double ratio = variance_of(8) / variance_of(32);
    // The ratio of two 600-replicate sample variances has a relative standard
    // error near sqrt(2 * 2 / 600), about 8%, so 4 +- 30% is over 3 sigma.
    CHECK(ratio > 4 * 0.7);
    CHECK(ratio < 4 * 1.3);
}

TEST_CASE("implicit ELBO does not exceed the explicit ELBO on isometric maps") {
    Rng rng(72);
    const MathCheck c = check_elbo_ordering(1000, 4, 3.0, rng);
    CHECK(c.passed);
}

TEST_CASE("verify_math runs every check") {
    Rng rng(73);
    VerifyMathSettings s;
    s.bound_tuples = 500;
    s.elbo_draws = 200;
    const auto checks = verify_math(s, rng);
    CHECK(checks.size() == 4);
    for (const auto& c : checks) CHECK_MESSAGE(c.passed, c.name << ": " << c.detail);
}
