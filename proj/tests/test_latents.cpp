// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "dualvae/latents.hpp"
#include "dualvae/ops.hpp"
#include "support.hpp"

using namespace dualvae;
using test_support::random_tensor;

namespace {

// Writes v into spatial position p of a [1,D,h,w] grid.
void put_vector(Tensor& grid, int p, std::span<const real> v) {
    const int plane = grid.dim(2) * grid.dim(3);
    for (std::size_t j = 0; j < v.size(); ++j) grid.data()[j * static_cast<std::size_t>(plane) + p] = v[j];
}

std::span<const real> row(const Codebook& cb, int i) {
    return cb.embeddings().data().subspan(static_cast<std::size_t>(i) * cb.dim(), static_cast<std::size_t>(cb.dim()));
}

}  // namespace

TEST_CASE("a vector equal to entry 7 quantizes to token 7 with zero commitment") {
    Rng rng(41);
    const Codebook cb(16, 4, VqSettings{}, rng);
    Tensor pre = Tensor::zeros({1, 4, 1, 1});
    put_vector(pre, 0, row(cb, 7));
    const QuantizeResult q = quantize(pre, cb, real(0.25));
    CHECK(q.tokens[0].indices == std::vector<int>{7});
    CHECK(q.commit_loss.item() == 0);
}

TEST_CASE("nearest-neighbour assignment agrees with a brute-force scan") {
    Rng rng(42);
    const Codebook cb(64, 8, VqSettings{}, rng);
    const Tensor pre = random_tensor({10, 8, 10, 10}, rng, -2.5, 2.5);  // 1000 vectors
    const QuantizeResult q = quantize(pre, cb, real(0.25));
    int mismatches = 0;
    for (int n = 0; n < 10; ++n) {
        for (int p = 0; p < 100; ++p) {
            int best = -1;
            double best_d = 0;
            for (int i = 0; i < 64; ++i) {
                double d = 0;
                for (int j = 0; j < 8; ++j) {
                    const double diff = pre.at(static_cast<std::size_t>((n * 8 + j) * 100 + p)) - row(cb, i)[j];
                    d += diff * diff;
                }
                if (best < 0 || d < best_d) {
                    best = i;
                    best_d = d;
                }
            }
            if (q.tokens[static_cast<std::size_t>(n)].indices[static_cast<std::size_t>(p)] != best) ++mismatches;
        }
    }
    CHECK(mismatches == 0);
}

TEST_CASE("quantized values are the selected code vectors") {
    Rng rng(43);
    const Codebook cb(8, 3, VqSettings{}, rng);
    const Tensor pre = random_tensor({2, 3, 2, 2}, rng);
    const QuantizeResult q = quantize(pre, cb, real(0.25));
    const Tensor looked_up = embed_tokens(cb, q.tokens);
    CHECK(test_support::to_doubles(looked_up) == test_support::to_doubles(q.quantized));
    CHECK(test_support::to_doubles(q.z_q) == test_support::to_doubles(q.quantized));
}

TEST_CASE("quantize is idempotent") {
    Rng rng(44);
    const Codebook cb(32, 4, VqSettings{}, rng);
    const QuantizeResult first = quantize(random_tensor({3, 4, 3, 3}, rng, -2, 2), cb, real(0.25));
    const QuantizeResult second = quantize(first.quantized, cb, real(0.25));
    CHECK(second.tokens == first.tokens);
    CHECK(second.commit_loss.item() == 0);
}

TEST_CASE("straight-through: gradient wrt pre_quant equals gradient wrt z_q") {
    Rng rng(45);
    const Codebook cb(16, 4, VqSettings{}, rng);
    Tensor pre = random_tensor({2, 4, 3, 3}, rng, -1, 1, true);
    const Tensor weights = random_tensor({2, 4, 3, 3}, rng);
    Tape tape;
    Tensor z_q;
    {
        TapeScope scope(tape);
        z_q = quantize(pre, cb, real(0.25)).z_q;
        tape.backward(sum(mul(leaky_relu(z_q), weights)));
    }
    REQUIRE(z_q.has_grad());
    CHECK(test_support::to_doubles(Tensor::from(pre.shape(), {pre.grad().begin(), pre.grad().end()})) ==
          test_support::to_doubles(Tensor::from(z_q.shape(), {z_q.grad().begin(), z_q.grad().end()})));
}

TEST_CASE("commitment loss is beta times the mean squared distance") {
    Rng rng(46);
    const Codebook cb(4, 2, VqSettings{}, rng);
    const Tensor pre = random_tensor({2, 2, 2, 3}, rng);
    const QuantizeResult q = quantize(pre, cb, real(0.25));
    double sq = 0;
    for (std::size_t i = 0; i < pre.numel(); ++i) sq += std::pow(pre.at(i) - q.quantized.at(i), 2);
    CHECK(q.commit_loss.item() == doctest::Approx(0.25 * sq / 12).epsilon(1e-5));
}

TEST_CASE("empty or mismatched codebooks are contract violations") {
    Rng rng(47);
    CHECK_THROWS_AS(Codebook(0, 4, VqSettings{}, rng), ContractViolation);
    const Codebook cb(4, 3, VqSettings{}, rng);
    CHECK_THROWS_AS(quantize(Tensor::zeros({1, 2, 2, 2}), cb, real(0.25)), ContractViolation);
    const Codebook empty;
    CHECK_THROWS_AS(empty.nearest(std::vector<real>{}), ContractViolation);
}

TEST_CASE("EMA update converges to a single cluster mean as the geometric series predicts") {
    Rng rng(48);
    Codebook cb(4, 3, VqSettings{0.99, 1e-5}, rng);
    const std::vector<double> m{0.5, -1.25, 2.0};
    // 64 vectors per step, spread symmetrically about m, all assigned to code 2.
    Tensor pre = Tensor::zeros({1, 3, 8, 8});
    for (int p = 0; p < 64; ++p) {
        const double delta = (p % 2 == 0 ? 0.1 : -0.1);
        for (int j = 0; j < 3; ++j) pre.data()[static_cast<std::size_t>(j * 64 + p)] = static_cast<real>(m[j] + delta);
    }
    TokenGrid grid{8, 8, std::vector<int>(64, 2)};
    const std::vector<double> e0(row(cb, 2).begin(), row(cb, 2).end());
    const int steps = 500;
    for (int t = 0; t < steps; ++t) ema_update(cb, {grid}, pre);

    // Closed form ignoring smoothing: (g^T e0 + (1-g^T) 64 m) / (g^T + (1-g^T) 64).
    const double gT = std::pow(0.99, steps);
    for (int j = 0; j < 3; ++j) {
        const double oracle = (gT * e0[j] + (1 - gT) * 64 * m[j]) / (gT + (1 - gT) * 64);
        CHECK(row(cb, 2)[j] == doctest::Approx(oracle).epsilon(1e-4));
        CHECK(std::abs(row(cb, 2)[j] - m[j]) <= 1e-3);
    }
    CHECK(cb.usage()[2] == 64 * steps);
    CHECK(cb.usage()[0] == 0);
}

TEST_CASE("EMA with decay 0 jumps to the batch cluster mean") {
    Rng rng(49);
    Codebook cb(3, 2, VqSettings{0.0, 1e-5}, rng);
    const Tensor pre = Tensor::from({1, 2, 1, 2}, {1, 3, -2, 4});  // vectors (1,-2) and (3,4)
    ema_update(cb, {TokenGrid{1, 2, {1, 1}}}, pre);
    CHECK(row(cb, 1)[0] == doctest::Approx(2.0).epsilon(1e-4));
    CHECK(row(cb, 1)[1] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("unused codes keep their direction and stay finite") {
    Rng rng(50);
    Codebook cb(3, 2, VqSettings{0.99, 1e-5}, rng);
    const std::vector<double> before(row(cb, 0).begin(), row(cb, 0).end());
    const Tensor pre = Tensor::from({1, 2, 1, 1}, {1, 1});
    for (int t = 0; t < 2000; ++t) ema_update(cb, {TokenGrid{1, 1, {2}}}, pre);
    const auto after = row(cb, 0);
    for (real v : cb.embeddings().data()) CHECK(std::isfinite(v));
    const double cross = before[0] * after[1] - before[1] * after[0];
    const double dot = before[0] * after[0] + before[1] * after[1];
    CHECK(std::abs(cross) <= 1e-4 * std::max(1.0, std::abs(dot)));
    CHECK(dot > 0);
    for (real s : cb.ema_cluster_size()) CHECK(s >= 0);
}

TEST_CASE("reparameterize examples") {
    const Tensor mu = Tensor::from({1, 3}, {0.5f, -1, 2});
    const Tensor logvar = Tensor::from({1, 3}, {0.3f, -0.7f, 1.1f});
    CHECK(test_support::to_doubles(reparameterize(mu, logvar, Tensor::zeros({1, 3}))) == test_support::to_doubles(mu));
    const Tensor n = Tensor::from({1, 3}, {0.25f, -1.5f, 1});
    const Tensor s = reparameterize(mu, Tensor::zeros({1, 3}), n);
    for (std::size_t i = 0; i < 3; ++i) CHECK(s.at(i) == doctest::Approx(mu.at(i) + n.at(i)));
}

TEST_CASE("reparameterized samples have the requested mean and standard deviation") {
    Rng rng(51);
    const int n = 100000;
    const double mu = 0.7, logvar = -0.4, sigma = std::exp(logvar / 2);
    const Tensor noise = standard_normal({n, 1}, rng);
    const Tensor s = reparameterize(Tensor::full({n, 1}, real(mu)), Tensor::full({n, 1}, real(logvar)), noise);
    double m = 0, v = 0;
    for (real x : s.data()) m += x;
    m /= n;
    for (real x : s.data()) v += (x - m) * (x - m);
    v /= (n - 1);
    CHECK(std::abs(m - mu) <= 3 * sigma / std::sqrt(n));
    // Standard error of the sample std of a normal is sigma / sqrt(2(n-1)).
    CHECK(std::abs(std::sqrt(v) - sigma) <= 3 * sigma / std::sqrt(2.0 * (n - 1)));
}

TEST_CASE("gaussian_kl closed-form examples") {
    CHECK(gaussian_kl(Tensor::zeros({1, 5}), Tensor::zeros({1, 5})).item() == 0);
    CHECK(gaussian_kl(Tensor::full({1, 1}, 1), Tensor::zeros({1, 1})).item() == doctest::Approx(0.5));
    Rng rng(52);
    for (int t = 0; t < 20; ++t) {
        const Tensor mu = random_tensor({2, 4}, rng, -2, 2), lv = random_tensor({2, 4}, rng, -2, 2);
        CHECK(gaussian_kl(mu, lv).item() > 0);
    }
}

TEST_CASE("gaussian_kl matches a Monte Carlo estimate of E_q[log q - log p]") {
    Rng rng(53);
    const int d = 3, n = 100000;
    for (int t = 0; t < 5; ++t) {
        const Tensor mu = random_tensor({1, d}, rng, -1, 1), lv = random_tensor({1, d}, rng, -1, 1);
        const double closed = gaussian_kl(mu, lv).item();
        std::normal_distribution<double> normal;
        double sum = 0, sum_sq = 0;
        for (int i = 0; i < n; ++i) {
            double log_ratio = 0;
            for (int j = 0; j < d; ++j) {
                const double e = normal(rng);
                const double z = mu.at(static_cast<std::size_t>(j)) + std::exp(lv.at(static_cast<std::size_t>(j)) / 2) * e;
                log_ratio += -0.5 * lv.at(static_cast<std::size_t>(j)) - 0.5 * e * e + 0.5 * z * z;
            }
            sum += log_ratio;
            sum_sq += log_ratio * log_ratio;
        }
        const double mean = sum / n, se = std::sqrt((sum_sq / n - mean * mean) / n);
        CHECK(std::abs(mean - closed) <= 3 * se + 1e-6);
    }
}
