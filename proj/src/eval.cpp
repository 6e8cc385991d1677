// SPDX-License-Identifier: Apache-2.0
#include "dualvae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "dualvae/layers.hpp"
#include "dualvae/pipeline.hpp"

namespace dualvae::inline DUALVAE_ABI {

ColourHistogram colour_histogram(const Image& image, const HistogramSettings& s) {
    DUALVAE_REQUIRE(image.channels == 3, "colour histogram needs an RGB image");
    DUALVAE_REQUIRE(s.bins >= 1 && s.hi > s.lo && s.eps > 0 && s.floor > 0, "invalid histogram settings");
    ColourHistogram h;
    h.bins = s.bins;
    h.weights.assign(static_cast<std::size_t>(s.bins) * s.bins, 0.0);
    auto bin_of = [&s](double value) {
        const int b = static_cast<int>(std::floor((value - s.lo) / (s.hi - s.lo) * s.bins));
        return std::clamp(b, 0, s.bins - 1);
    };
    double total = 0.0;
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const double r = image.at(0, y, x), g = image.at(1, y, x), b = image.at(2, y, x);
            const double weight = std::sqrt(r * r + g * g + b * b);
            if (weight == 0.0) continue;
            const double u = std::log((r + s.eps) / (g + s.eps));
            const double v = std::log((b + s.eps) / (g + s.eps));
            h.weights[static_cast<std::size_t>(bin_of(u)) * s.bins + bin_of(v)] += weight;
            total += weight;
        }
    }
    const double norm = 1.0 + s.bins * s.bins * s.floor;
    for (auto& w : h.weights) w = ((total > 0.0 ? w / total : 0.0) + s.floor) / norm;
    if (total == 0.0) {
        // An all-black image carries no chroma; it becomes the uniform histogram.
        for (auto& w : h.weights) w = 1.0 / static_cast<double>(h.weights.size());
    }
    return h;
}

double histogram_kl(const ColourHistogram& p, const ColourHistogram& q) {
    DUALVAE_REQUIRE(p.bins == q.bins && p.weights.size() == q.weights.size(), "histograms must share a bin layout");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.weights.size(); ++i) {
        DUALVAE_REQUIRE(q.weights[i] > 0.0, "histogram_kl needs a smoothed q");
        if (p.weights[i] > 0.0) kl += p.weights[i] * std::log(p.weights[i] / q.weights[i]);
    }
    return std::max(kl, 0.0);
}

double symmetric_histogram_kl(const ColourHistogram& p, const ColourHistogram& q) {
    return 0.5 * (histogram_kl(p, q) + histogram_kl(q, p));
}

double pairwise_baseline_kl(const std::vector<Image>& images, int n_pairs, Rng& rng, bool symmetric,
                            const HistogramSettings& settings) {
    DUALVAE_REQUIRE(images.size() >= 2 && n_pairs >= 1, "pairwise baseline needs two images and one pair");
    std::vector<ColourHistogram> hist;
    for (const auto& img : images) hist.push_back(colour_histogram(img, settings));
    std::uniform_int_distribution<std::size_t> pick(0, images.size() - 1);
    double sum = 0.0;
    for (int i = 0; i < n_pairs; ++i) {
        const std::size_t a = pick(rng);
        std::size_t b = pick(rng);
        while (b == a) b = pick(rng);
        sum += symmetric ? symmetric_histogram_kl(hist[a], hist[b]) : histogram_kl(hist[a], hist[b]);
    }
    return sum / n_pairs;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = std::string(kAblationCsvHeader) + "\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%.6f,%d\n", r.model.c_str(), r.arm.c_str(), r.mean_kl,
                      r.std_error, r.n);
        out += buf;
    }
    return out;
}

namespace {

AblationRow summarise(const std::string& model, const std::string& arm, const std::vector<double>& values) {
    AblationRow row{model, arm, 0.0, 0.0, static_cast<int>(values.size())};
    if (values.empty()) return row;
    double sum = 0.0;
    for (double v : values) sum += v;
    row.mean_kl = sum / values.size();
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - row.mean_kl) * (v - row.mean_kl);
        row.std_error = std::sqrt(ss / (values.size() - 1) / values.size());
    }
    return row;
}

std::vector<double> conditional_kl_seeded(const ConditionalModel& m, const std::vector<Image>& exemplars,
                                          const AblationSettings& settings, const std::vector<std::uint64_t>& seeds) {
    DUALVAE_REQUIRE(m.model != nullptr && m.prior != nullptr, "conditional model needs a model and a prior");
    std::vector<double> out;
    for (std::size_t e = 0; e < exemplars.size(); ++e) {
        Rng rng(seeds[e]);
        const auto generated =
            generate_conditional(*m.model, *m.prior, exemplars[e], settings.samples_per_exemplar, settings.temperature, rng);
        const ColourHistogram ref = colour_histogram(exemplars[e], settings.histogram);
        double sum = 0.0;
        for (const auto& g : generated) {
            const ColourHistogram h = colour_histogram(g, settings.histogram);
            sum += settings.symmetric ? symmetric_histogram_kl(ref, h) : histogram_kl(ref, h);
        }
        out.push_back(sum / static_cast<double>(generated.size()));
    }
    return out;
}

std::vector<std::uint64_t> draw_seeds(std::size_t n, Rng& rng) {
    std::vector<std::uint64_t> seeds(n);
    for (auto& s : seeds) s = rng();
    return seeds;
}

}  // namespace

std::vector<double> conditional_kl(const ConditionalModel& m, const std::vector<Image>& exemplars,
                                   const AblationSettings& settings, Rng& rng) {
    return conditional_kl_seeded(m, exemplars, settings, draw_seeds(exemplars.size(), rng));
}

std::vector<AblationRow> ablation_report(const std::string& model_name, const ConditionalModel& with_reg,
                                         const ConditionalModel& without_reg, const std::vector<Image>& test_images,
                                         const AblationSettings& settings, Rng& rng) {
    DUALVAE_REQUIRE(!test_images.empty(), "ablation needs test images");
    const auto seeds = draw_seeds(test_images.size(), rng);
    std::vector<AblationRow> rows;
    rows.push_back(summarise(model_name, "with_regularization", conditional_kl_seeded(with_reg, test_images, settings, seeds)));
    rows.push_back(
        summarise(model_name, "without_regularization", conditional_kl_seeded(without_reg, test_images, settings, seeds)));
    AblationRow baseline{model_name, "pairwise_baseline", 0.0, 0.0, settings.baseline_pairs};
    if (test_images.size() >= 2) {
        baseline.mean_kl = pairwise_baseline_kl(test_images, settings.baseline_pairs, rng, settings.symmetric,
                                                settings.histogram);
    }
    rows.push_back(baseline);
    return rows;
}

RandomFeatureExtractor::RandomFeatureExtractor(std::uint64_t seed, int width) {
    DUALVAE_REQUIRE(width >= 1, "feature width must be positive");
    Rng rng(seed);
    w1_ = kaiming_normal({width, 3, 3, 3}, 27, rng);
    b1_ = Tensor::zeros({width});
    w2_ = kaiming_normal({2 * width, width, 3, 3}, 9 * width, rng);
    b2_ = Tensor::zeros({2 * width});
}

Eigen::MatrixXd RandomFeatureExtractor::features(const std::vector<Image>& images) const {
    DUALVAE_REQUIRE(!images.empty(), "no images to featurise");
    NoTapeScope off;
    const Tensor x = stack_images(images);
    const Tensor h = leaky_relu(conv2d(leaky_relu(conv2d(x, w1_, b1_, 2)), w2_, b2_, 2));
    const Tensor pooled = spatial_mean(h);
    Eigen::MatrixXd out(pooled.dim(0), pooled.dim(1));
    for (int i = 0; i < pooled.dim(0); ++i) {
        for (int j = 0; j < pooled.dim(1); ++j) out(i, j) = pooled.at(static_cast<std::size_t>(i) * pooled.dim(1) + j);
    }
    return out;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    const Eigen::VectorXd roots = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().transpose();
}

namespace {

Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& mean) {
    const Eigen::MatrixXd centred = x.rowwise() - mean;
    return centred.transpose() * centred / std::max<Eigen::Index>(1, x.rows() - 1);
}

Eigen::MatrixXd psd_inverse_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    const double cutoff = 1e-12 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
    Eigen::VectorXd inv(es.eigenvalues().size());
    for (Eigen::Index i = 0; i < inv.size(); ++i) {
        const double e = es.eigenvalues()(i);
        inv(i) = e > cutoff ? 1.0 / std::sqrt(e) : 0.0;
    }
    return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

FrechetResult frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    DUALVAE_REQUIRE(a.cols() == b.cols() && a.rows() >= 2 && b.rows() >= 2,
                    "Frechet distance needs two feature sets of equal width with at least two rows");
    const Eigen::RowVectorXd mu_a = a.colwise().mean(), mu_b = b.colwise().mean();
    const Eigen::MatrixXd sa = covariance(a, mu_a), sb = covariance(b, mu_b);
    const Eigen::MatrixXd root_a = psd_sqrt(sa);
    const Eigen::MatrixXd middle = psd_sqrt(root_a * sb * root_a);
    FrechetResult r;
    const double d = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * middle.trace();
    r.distance = std::max(d, 0.0);
    const Eigen::MatrixXd root = root_a * middle * psd_inverse_sqrt(sa);
    const Eigen::MatrixXd product = sa * sb;
    const double scale = product.norm();
    r.sqrt_residual = scale > 0.0 ? (root * root - product).norm() / scale : 0.0;
    return r;
}

double frechet_proxy(const std::vector<Image>& set_a, const std::vector<Image>& set_b, std::uint64_t extractor_seed) {
    const RandomFeatureExtractor extractor(extractor_seed);
    return frechet_distance(extractor.features(set_a), extractor.features(set_b)).distance;
}

}  // namespace dualvae
