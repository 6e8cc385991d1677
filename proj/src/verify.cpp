// SPDX-License-Identifier: Apache-2.0
#include "dualvae/verify.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "dualvae/errors.hpp"

namespace dualvae::inline DUALVAE_ABI {

namespace {

// Multiples of 2^-10 in [-2, 2]; sums and differences of these stay exact.
Vec grid_vector(int n, Rng& rng) {
    std::uniform_int_distribution<int> pick(-2048, 2048);
    Vec v(static_cast<std::size_t>(n));
    for (auto& x : v) x = pick(rng) / 1024.0;
    return v;
}

Vec normal_vector(int n, Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Vec v(static_cast<std::size_t>(n));
    for (auto& x : v) x = normal(rng);
    return v;
}

double normalised_laplace_logpdf(const Vec& x, const Vec& mu) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += -std::log(2.0) - std::abs(x[i] - mu[i]);
    return s;
}

std::string format_detail(const char* fmt, double a, double b = 0.0) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), fmt, a, b);
    return buf;
}

}  // namespace

ElboToyModel make_isometric_toy_model(int dim, Rng& rng) {
    DUALVAE_REQUIRE(dim >= 1, "toy model needs a positive feature dimension");
    std::vector<int> permutation(static_cast<std::size_t>(2 * dim));
    std::iota(permutation.begin(), permutation.end(), 0);
    std::shuffle(permutation.begin(), permutation.end(), rng);
    const Vec offset_x = grid_vector(2 * dim, rng);
    const Vec offset_g = grid_vector(dim, rng);
    const Vec offset_c = grid_vector(dim, rng);
    ElboToyModel m;
    m.decode_x = permutation_offset_map(permutation, offset_x);
    m.decode_g = [offset_g](const Vec& z) {
        Vec out(z.size());
        for (std::size_t i = 0; i < z.size(); ++i) out[i] = 0.5 * z[z.size() - 1 - i] + offset_g[i];
        return out;
    };
    m.decode_c = [offset_c](const Vec& z) {
        Vec out(z.size());
        for (std::size_t i = 0; i < z.size(); ++i) out[i] = offset_c[i] - z[i];
        return out;
    };
    return m;
}

MathCheck check_laplace_identity(int pairs, int dim, double tolerance, Rng& rng) {
    DUALVAE_REQUIRE(pairs >= 1 && dim >= 1, "laplace check needs pairs and a dimension");
    MathCheck c;
    c.name = "laplace_identity";
    for (int i = 0; i < pairs; ++i) {
        const Vec mu = normal_vector(dim, rng), x1 = normal_vector(dim, rng), x2 = normal_vector(dim, rng);
        const double ours = laplace_logprob(x1, mu) - laplace_logprob(x2, mu);
        const double normalised = normalised_laplace_logpdf(x1, mu) - normalised_laplace_logpdf(x2, mu);
        const double l1 = l1_distance(x2, mu) - l1_distance(x1, mu);
        const double err = std::max(std::abs(ours - normalised), std::abs(ours - l1));
        c.worst = std::max(c.worst, err);
        if (err > tolerance) ++c.violations;
        ++c.trials;
    }
    c.passed = c.violations == 0;
    c.detail = format_detail("max |difference error| = %.3g (tolerance %.1g)", c.worst, tolerance);
    return c;
}

MathCheck check_lipschitz_examples(Rng& rng) {
    MathCheck c;
    c.name = "reverse_lipschitz_examples";
    const LipschitzConfig unit{1.0};
    const auto identity = [](const Vec& v) { return v; };
    const auto half = [](const Vec& v) {
        Vec out(v);
        for (auto& x : out) x *= 0.5;
        return out;
    };
    double worst_identity = 0.0, worst_half = 0.0;
    for (int i = 0; i < 100; ++i) {
        const Vec a = grid_vector(8, rng), b = grid_vector(8, rng);
        if (a == b) continue;
        const auto id = check_reverse_lipschitz(identity, a, b, unit);
        const auto hf = check_reverse_lipschitz(half, a, b, unit);
        worst_identity = std::max(worst_identity, std::abs(id.ratio - 1.0));
        worst_half = std::max(worst_half, std::abs(hf.ratio - 2.0));
        if (!id.holds || hf.holds) ++c.violations;
        ++c.trials;
    }
    c.worst = std::max(worst_identity, worst_half);
    c.passed = c.violations == 0 && c.worst == 0.0;
    c.detail = format_detail("identity ratio error %.3g, half-identity ratio error %.3g", worst_identity, worst_half);
    return c;
}

MathCheck check_feature_bound_chain(int tuples, int dim, Rng& rng) {
    DUALVAE_REQUIRE(tuples >= 1, "bound check needs at least one tuple");
    MathCheck c;
    c.name = "feature_bound_chain";
    const LipschitzConfig unit{1.0};
    double min_slack = INFINITY;
    std::size_t lipschitz_fail = 0, triangle_fail = 0, bound_fail = 0;
    for (int i = 0; i < tuples; ++i) {
        const ElboToyModel model = make_isometric_toy_model(dim, rng);
        const Vec x = grid_vector(2 * dim, rng), f_g = grid_vector(dim, rng), f_c = grid_vector(dim, rng);
        const Vec z_g = grid_vector(dim, rng), z_c = grid_vector(dim, rng);
        const FeatureBoundCheck r = check_feature_bound(model, x, f_g, f_c, z_g, z_c, unit);
        lipschitz_fail += !r.reverse_lipschitz;
        triangle_fail += !r.triangle;
        bound_fail += !r.bound;
        if (!r.reverse_lipschitz || !r.triangle || !r.bound) ++c.violations;
        min_slack = std::min(min_slack, r.image_error - r.feature_error);
        ++c.trials;
    }
    c.worst = min_slack;
    c.passed = c.violations == 0;
    std::ostringstream d;
    d << "violations: reverse-lipschitz " << lipschitz_fail << ", triangle " << triangle_fail << ", bound "
      << bound_fail << "; min slack " << min_slack;
    c.detail = d.str();
    return c;
}

MathCheck check_elbo_ordering(int draws, int dim, double sigma_margin, Rng& rng) {
    MathCheck c;
    c.name = "elbo_ordering";
    const ElboToyModel model = make_isometric_toy_model(dim, rng);
    ElboInputs in;
    in.x = normal_vector(2 * dim, rng);
    in.f_g = normal_vector(dim, rng);
    in.f_c = normal_vector(dim, rng);
    std::uniform_real_distribution<double> logvar(-2.0, 0.5);
    for (DiagonalGaussian* q : {&in.q_g, &in.q_c}) {
        q->mean = normal_vector(dim, rng);
        q->logvar.resize(static_cast<std::size_t>(dim));
        for (auto& v : q->logvar) v = logvar(rng);
    }
    const ElboComparison cmp = compare_elbos(in, model, draws, rng);
    c.trials = static_cast<std::size_t>(draws);
    c.worst = cmp.difference.mean;
    c.passed = cmp.difference.mean >= -sigma_margin * cmp.difference.std_error;
    c.violations = c.passed ? 0 : 1;
    char buf[200];
    std::snprintf(buf, sizeof(buf), "explicit %.4f (se %.4f), implicit %.4f (se %.4f), difference %.4f (se %.4f)",
                  cmp.explicit_elbo.mean, cmp.explicit_elbo.std_error, cmp.implicit_elbo.mean,
                  cmp.implicit_elbo.std_error, cmp.difference.mean, cmp.difference.std_error);
    c.detail = buf;
    return c;
}

std::vector<MathCheck> verify_math(const VerifyMathSettings& s, Rng& rng) {
    return {
        check_laplace_identity(s.laplace_pairs, s.feature_dim, s.identity_tolerance, rng),
        check_lipschitz_examples(rng),
        check_feature_bound_chain(s.bound_tuples, s.feature_dim, rng),
        check_elbo_ordering(s.elbo_draws, s.feature_dim, s.elbo_sigma_margin, rng),
    };
}

}  // namespace dualvae
