// SPDX-License-Identifier: Apache-2.0
#include "dualvae/elbo.hpp"

#include <cmath>
#include <random>

#include "dualvae/errors.hpp"

namespace dualvae::inline DUALVAE_ABI {

double l1_distance(const Vec& a, const Vec& b) {
    DUALVAE_REQUIRE(a.size() == b.size(), "l1_distance needs equal lengths");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s;
}

double laplace_logprob(const Vec& x, const Vec& mu) {
    return -l1_distance(x, mu);
}

double laplace_logprob(const Tensor& x, const Tensor& mu) {
    DUALVAE_REQUIRE(x.shape() == mu.shape(), "laplace_logprob needs equal shapes");
    double s = 0.0;
    const auto a = x.data(), b = mu.data();
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(static_cast<double>(a[i]) - b[i]);
    return -s;
}

ReverseLipschitzResult check_reverse_lipschitz(const std::function<Vec(const Vec&)>& dx, const Vec& a, const Vec& b,
                                               const LipschitzConfig& config) {
    DUALVAE_REQUIRE(config.C > 0.0, "Lipschitz constant C must be positive");
    const double in = l1_distance(a, b);
    const double out = l1_distance(dx(a), dx(b));
    ReverseLipschitzResult r;
    r.holds = in <= config.C * out;
    r.ratio = out > 0.0 ? in / out : (in > 0.0 ? INFINITY : 1.0);
    return r;
}

double diagonal_gaussian_kl(const DiagonalGaussian& q) {
    DUALVAE_REQUIRE(q.mean.size() == q.logvar.size(), "posterior mean and log-variance lengths differ");
    double s = 0.0;
    for (std::size_t i = 0; i < q.mean.size(); ++i) {
        s += q.mean[i] * q.mean[i] + std::exp(q.logvar[i]) - 1.0 - q.logvar[i];
    }
    return 0.5 * s;
}

namespace {

Vec concat(const Vec& a, const Vec& b) {
    Vec out(a);
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

Vec sample(const DiagonalGaussian& q, std::normal_distribution<double>& normal, Rng& rng) {
    Vec z(q.mean.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = q.mean[i] + std::exp(0.5 * q.logvar[i]) * normal(rng);
    return z;
}

class Accumulator {
public:
    void add(double v) {
        ++n_;
        const double delta = v - mean_;
        mean_ += delta / n_;
        m2_ += delta * (v - mean_);
    }
    McEstimate result() const {
        McEstimate e;
        e.mean = mean_;
        e.samples = n_;
        e.std_error = n_ > 1 ? std::sqrt(m2_ / (n_ - 1) / n_) : 0.0;
        return e;
    }

private:
    int n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

}  // namespace

ElboComparison compare_elbos(const ElboInputs& in, const ElboToyModel& model, int n_samples, Rng& rng) {
    DUALVAE_REQUIRE(n_samples >= 1, "ELBO estimates need at least one sample");
    const double kl = diagonal_gaussian_kl(in.q_g) + diagonal_gaussian_kl(in.q_c);
    const double feature_recon = l1_distance(in.x, model.decode_x(in.f_g, in.f_c));
    std::normal_distribution<double> normal(0.0, 1.0);
    Accumulator ex, im, diff;
    for (int s = 0; s < n_samples; ++s) {
        const Vec z_g = sample(in.q_g, normal, rng);
        const Vec z_c = sample(in.q_c, normal, rng);
        const Vec dg = model.decode_g(z_g);
        const Vec dc = model.decode_c(z_c);
        const double e = -feature_recon - l1_distance(in.f_g, dg) - l1_distance(in.f_c, dc) - kl;
        const double i = -2.0 * feature_recon - l1_distance(in.x, model.decode_x(dg, dc)) - kl;
        ex.add(e);
        im.add(i);
        diff.add(e - i);
    }
    return {ex.result(), im.result(), diff.result()};
}

McEstimate explicit_elbo_estimate(const ElboInputs& in, const ElboToyModel& model, int n_samples, Rng& rng) {
    return compare_elbos(in, model, n_samples, rng).explicit_elbo;
}

McEstimate implicit_elbo_estimate(const ElboInputs& in, const ElboToyModel& model, int n_samples, Rng& rng) {
    return compare_elbos(in, model, n_samples, rng).implicit_elbo;
}

FeatureBoundCheck check_feature_bound(const ElboToyModel& model, const Vec& x, const Vec& f_g, const Vec& f_c,
                                      const Vec& z_g, const Vec& z_c, const LipschitzConfig& config) {
    DUALVAE_REQUIRE(config.C > 0.0, "Lipschitz constant C must be positive");
    const Vec dg = model.decode_g(z_g);
    const Vec dc = model.decode_c(z_c);
    const Vec x_feature = model.decode_x(f_g, f_c);
    const Vec x_latent = model.decode_x(dg, dc);
    FeatureBoundCheck r;
    r.feature_error = l1_distance(concat(f_g, f_c), concat(dg, dc));
    r.decoded_gap = l1_distance(x_feature, x_latent);
    r.image_error = l1_distance(x_feature, x) + l1_distance(x_latent, x);
    r.reverse_lipschitz = r.feature_error <= config.C * r.decoded_gap;
    r.triangle = r.decoded_gap <= r.image_error;
    r.bound = r.feature_error <= config.C * r.image_error;
    return r;
}

std::function<Vec(const Vec&, const Vec&)> permutation_offset_map(std::vector<int> permutation, Vec offset) {
    DUALVAE_REQUIRE(permutation.size() == offset.size(), "permutation and offset lengths differ");
    std::vector<bool> seen(permutation.size(), false);
    for (int p : permutation) {
        DUALVAE_REQUIRE(p >= 0 && static_cast<std::size_t>(p) < permutation.size() && !seen[static_cast<std::size_t>(p)],
                        "not a permutation");
        seen[static_cast<std::size_t>(p)] = true;
    }
    return [permutation = std::move(permutation), offset = std::move(offset)](const Vec& a, const Vec& b) {
        const Vec ab = concat(a, b);
        DUALVAE_REQUIRE(ab.size() == permutation.size(), "input length does not match the map");
        Vec out(ab.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = ab[static_cast<std::size_t>(permutation[i])] + offset[i];
        return out;
    };
}

}  // namespace dualvae
