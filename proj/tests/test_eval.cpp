// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dualvae/dataset.hpp"
#include "dualvae/eval.hpp"
#include "dualvae/pipeline.hpp"
#include "support.hpp"

using namespace dualvae;

namespace {

Image solid(real r, real g, real b, int size = 8) {
    Image im = Image::blank(3, size, size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            im.at(0, y, x) = r;
            im.at(1, y, x) = g;
            im.at(2, y, x) = b;
        }
    }
    return im;
}

Image random_image(Rng& rng, int size = 8) {
    std::uniform_real_distribution<double> u(0, 1);
    Image im = Image::blank(3, size, size);
    for (auto& v : im.data) v = static_cast<real>(u(rng));
    return im;
}

Image rotate90(const Image& im) {
    Image out = Image::blank(im.channels, im.width, im.height);
    for (int c = 0; c < im.channels; ++c) {
        for (int y = 0; y < im.height; ++y) {
            for (int x = 0; x < im.width; ++x) out.at(c, x, im.height - 1 - y) = im.at(c, y, x);
        }
    }
    return out;
}

void check_same(const ColourHistogram& a, const ColourHistogram& b) {
    REQUIRE(a.weights.size() == b.weights.size());
    for (std::size_t i = 0; i < a.weights.size(); ++i) CHECK(a.weights[i] == doctest::Approx(b.weights[i]).epsilon(1e-12));
}

}  // namespace

TEST_CASE("histogram of a solid colour puts all unsmoothed mass in one bin") {
    const HistogramSettings s;
    const ColourHistogram h = colour_histogram(solid(0.8f, 0.4f, 0.2f), s);
    const double norm = 1.0 + s.bins * s.bins * s.floor;
    int heavy = 0;
    for (double w : h.weights) {
        if (w > 0.5) {
            ++heavy;
            CHECK(w == doctest::Approx((1.0 + s.floor) / norm).epsilon(1e-12));
        } else {
            CHECK(w == doctest::Approx(s.floor / norm).epsilon(1e-12));
        }
    }
    CHECK(heavy == 1);
    CHECK(std::accumulate(h.weights.begin(), h.weights.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("histogram bin of a known chroma") {
    // (R,G,B) = (0.5, 0.5, 0.5): u = v = 0, which is bin 16 of 32 over [-3, 3].
    const ColourHistogram h = colour_histogram(solid(0.5f, 0.5f, 0.5f));
    CHECK(h.at(16, 16) > 0.99);
}

TEST_CASE("histogram is invariant to rotation and pixel permutation") {
    Rng rng(101);
    const Image im = random_image(rng, 9);
    check_same(colour_histogram(im), colour_histogram(rotate90(im)));

    Image shuffled = im;
    std::vector<int> perm(81);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int c = 0; c < 3; ++c) {
        for (int p = 0; p < 81; ++p) shuffled.at(c, p / 9, p % 9) = im.at(c, perm[p] / 9, perm[p] % 9);
    }
    check_same(colour_histogram(im), colour_histogram(shuffled));
}

TEST_CASE("a 50/50 split of two equal-intensity colours fills two bins equally") {
    Image im = solid(1, 0, 0);
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 8; ++x) {
            im.at(0, y, x) = 0;
            im.at(2, y, x) = 1;
        }
    }
    const ColourHistogram h = colour_histogram(im);
    std::vector<double> sorted = h.weights;
    std::sort(sorted.rbegin(), sorted.rend());
    CHECK(sorted[0] == sorted[1]);
    CHECK(sorted[0] == doctest::Approx((0.5 + 1e-6) / (1 + 1024e-6)).epsilon(1e-12));
    CHECK(sorted[2] < 1e-5);
}

TEST_CASE("an all-black image gives the uniform histogram") {
    const ColourHistogram h = colour_histogram(solid(0, 0, 0));
    for (double w : h.weights) CHECK(w == 1.0 / 1024);
}

TEST_CASE("histogram KL examples and direct-sum oracle") {
    Rng rng(102);
    const ColourHistogram red = colour_histogram(solid(1, 0, 0)), blue = colour_histogram(solid(0, 0, 1));
    CHECK(histogram_kl(red, red) == 0);
    CHECK(histogram_kl(red, blue) > 0);
    for (int t = 0; t < 10; ++t) {
        const ColourHistogram p = colour_histogram(random_image(rng)), q = colour_histogram(random_image(rng));
        long double oracle = 0;
        for (std::size_t i = 0; i < p.weights.size(); ++i) {
            oracle += static_cast<long double>(p.weights[i]) * std::log(static_cast<long double>(p.weights[i]) / q.weights[i]);
        }
        CHECK(std::abs(histogram_kl(p, q) - static_cast<double>(oracle)) <= 1e-9);
        CHECK(histogram_kl(p, q) >= 0);
        CHECK(symmetric_histogram_kl(p, q) ==
              doctest::Approx((histogram_kl(p, q) + histogram_kl(q, p)) / 2).epsilon(1e-12));
    }
}

TEST_CASE("pairwise baseline is positive for distinct colours and zero for identical images") {
    Rng rng(103);
    const std::vector<Image> same(4, solid(0.2f, 0.6f, 0.3f));
    CHECK(pairwise_baseline_kl(same, 50, rng) == 0);
    const std::vector<Image> mixed{solid(1, 0, 0), solid(0, 1, 0), solid(0, 0, 1)};
    CHECK(pairwise_baseline_kl(mixed, 50, rng) > 1);
    CHECK_THROWS_AS(pairwise_baseline_kl({solid(1, 0, 0)}, 5, rng), ContractViolation);
}

TEST_CASE("identical models in both ablation arms give identical columns") {
    TrainConfig cfg;
    cfg.model.image_size = 16;
    cfg.model.downsample = 4;
    cfg.model.embed_dim = 8;
    cfg.model.n_embed = 16;
    cfg.model.colour_dim = 4;
    cfg.model.widths = {6, 8, 8};
    cfg.model.geometry_channels = 4;
    cfg.model.colour_hidden = 8;
    cfg.train.steps = 5;
    cfg.train.batch = 4;
    cfg.prior.blocks = 1;
    cfg.prior.channels = 8;
    cfg.prior.heads = 2;
    cfg.prior.steps = 5;
    SyntheticShapesSpec spec;
    spec.size = 16;
    spec.count = 12;
    const auto images = synth_shapes(spec).images;
    const DualVaeModel model = build_and_train(cfg, images);
    Rng rng(104);
    const ArPrior prior = build_and_train_prior(model, cfg, images, rng);
    AblationSettings s;
    s.samples_per_exemplar = 2;
    s.baseline_pairs = 20;
    const std::vector<Image> test(images.begin(), images.begin() + 4);
    const auto rows = ablation_report("toy", {&model, &prior}, {&model, &prior}, test, s, rng);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].mean_kl == rows[1].mean_kl);
    CHECK(rows[0].std_error == rows[1].std_error);
    CHECK(rows[0].n == 4);
    const std::string csv = ablation_csv(rows);
    CHECK(csv.rfind("model,arm,mean_kl,stderr,n\n", 0) == 0);
}

TEST_CASE("Frechet distance of a set with itself is zero and the distance is symmetric") {
    Rng rng(105);
    std::vector<Image> a, b;
    for (int i = 0; i < 40; ++i) a.push_back(random_image(rng, 16));
    for (int i = 0; i < 40; ++i) b.push_back(solid(static_cast<real>(i) / 40, 0.5f, 0.2f, 16));
    CHECK(std::abs(frechet_proxy(a, a, 7)) <= 1e-6);
    CHECK(frechet_proxy(a, b, 7) == doctest::Approx(frechet_proxy(b, a, 7)).epsilon(1e-6));
    CHECK(frechet_proxy(a, b, 7) > 0);
}

TEST_CASE("1-D Frechet distance matches the closed form for Gaussians") {
    Rng rng(106);
    const int n = 20000;
    const double mu_a = 0.5, sd_a = 1.0, mu_b = -1.0, sd_b = 2.0;
    std::normal_distribution<double> na(mu_a, sd_a), nb(mu_b, sd_b);
    Eigen::MatrixXd a(n, 1), b(n, 1);
    for (int i = 0; i < n; ++i) {
        a(i, 0) = na(rng);
        b(i, 0) = nb(rng);
    }
    const double closed = std::pow(mu_a - mu_b, 2) + std::pow(sd_a - sd_b, 2);
    // Sampling error of the squared mean gap and of the sd gap at n = 20000 is
    // about 0.03 in total; 0.1 is over 3 sigma.
    CHECK(std::abs(frechet_distance(a, b).distance - closed) <= 0.1);
}

TEST_CASE("matrix square roots reconstruct their products") {
    Rng rng(107);
    std::normal_distribution<double> normal;
    for (int trial = 0; trial < 5; ++trial) {
        Eigen::MatrixXd a(200, 6), b(200, 6);
        for (int i = 0; i < a.size(); ++i) a.data()[i] = normal(rng);
        for (int i = 0; i < b.size(); ++i) b.data()[i] = normal(rng) * (1 + i % 3);
        CHECK(frechet_distance(a, b).sqrt_residual <= 1e-4);
    }
    Eigen::MatrixXd m(2, 2);
    m << 4, 0, 0, 9;
    const Eigen::MatrixXd r = psd_sqrt(m);
    CHECK(r(0, 0) == doctest::Approx(2.0));
    CHECK(r(1, 1) == doctest::Approx(3.0));
}
