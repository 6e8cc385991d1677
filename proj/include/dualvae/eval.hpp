// SPDX-License-Identifier: Apache-2.0
//
// Log-chroma colour histograms and their KL divergence, the exemplar-guided
// colour-control report, and a Frechet distance over features of a fixed
// random conv net (a desk-scale stand-in for FID, not comparable to it).

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dualvae/image.hpp"
#include "dualvae/model.hpp"
#include "dualvae/prior.hpp"

namespace dualvae::inline DUALVAE_ABI {

struct HistogramSettings {
    int bins = 32;
    double lo = -3.0;
    double hi = 3.0;
    double eps = 1e-4;    // inside the log ratios
    double floor = 1e-6;  // smoothing mass added per bin before renormalising
};

/// bins x bins weights over (u, v) = (log((R+e)/(G+e)), log((B+e)/(G+e))),
/// each pixel weighted by sqrt(R^2 + G^2 + B^2). Values outside [lo, hi]
/// land in the edge bins. Row index is u, column index is v.
struct ColourHistogram {
    int bins = 0;
    std::vector<double> weights;

    double at(int u, int v) const { return weights[static_cast<std::size_t>(u) * bins + v]; }
};

ColourHistogram colour_histogram(const Image& image, const HistogramSettings& settings = {});

/// sum p log(p / q). Both histograms are already smoothed, so q > 0.
double histogram_kl(const ColourHistogram& p, const ColourHistogram& q);
/// (KL(p||q) + KL(q||p)) / 2.
double symmetric_histogram_kl(const ColourHistogram& p, const ColourHistogram& q);

/// Mean KL over n_pairs uniformly drawn ordered pairs of distinct images.
double pairwise_baseline_kl(const std::vector<Image>& images, int n_pairs, Rng& rng, bool symmetric = false,
                            const HistogramSettings& settings = {});

struct AblationRow {
    std::string model;
    std::string arm;
    double mean_kl = 0.0;
    double std_error = 0.0;
    int n = 0;
};

inline constexpr const char* kAblationCsvHeader = "model,arm,mean_kl,stderr,n";
std::string ablation_csv(const std::vector<AblationRow>& rows);

struct ConditionalModel {
    const DualVaeModel* model = nullptr;
    const ArPrior* prior = nullptr;
};

struct AblationSettings {
    int samples_per_exemplar = 4;
    int baseline_pairs = 1000;
    double temperature = 1.0;
    bool symmetric = false;
    HistogramSettings histogram;
};

/// Mean per-exemplar KL(exemplar || generated) for each arm, where every arm
/// generates conditionally on each test image as exemplar from the same
/// rng state, plus the pairwise baseline over the test images.
std::vector<AblationRow> ablation_report(const std::string& model_name, const ConditionalModel& with_reg,
                                         const ConditionalModel& without_reg, const std::vector<Image>& test_images,
                                         const AblationSettings& settings, Rng& rng);

/// Mean KL(exemplar || generated) over exemplars for one model; each entry of
/// the returned vector is one exemplar's mean over its samples.
std::vector<double> conditional_kl(const ConditionalModel& m, const std::vector<Image>& exemplars,
                                   const AblationSettings& settings, Rng& rng);

/// Fixed random feature extractor: two strided 3x3 convs with leaky-relu,
/// then global average pooling.
class RandomFeatureExtractor {
public:
    explicit RandomFeatureExtractor(std::uint64_t seed, int width = 16);
    Eigen::MatrixXd features(const std::vector<Image>& images) const;  // [n, 2*width]

private:
    Tensor w1_, b1_, w2_, b2_;
};

struct FrechetResult {
    double distance = 0.0;
    double sqrt_residual = 0.0;  // ||R R - Sa Sb||_F / ||Sa Sb||_F for the computed root R
};

/// Frechet distance between Gaussians fitted to two feature sets (rows are
/// samples). The cross term uses Tr((Sa^1/2 Sb Sa^1/2)^1/2).
FrechetResult frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

double frechet_proxy(const std::vector<Image>& set_a, const std::vector<Image>& set_b, std::uint64_t extractor_seed);

/// Symmetric PSD square root via eigen-decomposition (negative eigenvalues clipped).
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m);

}  // namespace dualvae
