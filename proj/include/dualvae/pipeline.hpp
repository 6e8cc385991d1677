// SPDX-License-Identifier: Apache-2.0
//
// Training loops for both stages and the generation procedures.

#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "dualvae/config.hpp"
#include "dualvae/dataset.hpp"
#include "dualvae/image.hpp"
#include "dualvae/model.hpp"
#include "dualvae/prior.hpp"

namespace dualvae::inline DUALVAE_ABI {

struct Stage1Options {
    /// When set, writes loss.csv, codebook_usage.csv and periodic checkpoints
    /// (ckpt_<step>.dvae, the newest `keep_checkpoints` retained) plus final.dvae.
    std::optional<std::filesystem::path> out_dir;
    std::function<void(int step, const LossBreakdown&)> on_step;
};

struct Stage1Result {
    std::vector<LossBreakdown> history;  // one entry per step
};

/// Adam on the variant's objective over random mini-batches drawn by an
/// epoch-wise shuffle, with an EMA codebook update after every step (DualVAE).
/// A NumericFault aborts training; checkpoints already written are kept.
Stage1Result train_stage1(DualVaeModel& model, const std::vector<Image>& train, const TrainConfig& config, Rng& rng,
                          const Stage1Options& options = {});

/// The CSV header for training logs.
inline constexpr const char* kLossCsvHeader = "step,recon_F,recon_z,vq,kl,total";
std::string loss_csv_row(int step, const LossBreakdown& b);

/// Quantized token grids of images, in batches of `batch`.
std::vector<TokenGrid> encode_tokens(const DualVaeModel& model, const std::vector<Image>& images, int batch = 32);

/// Posterior means of the colour latent, [N, d_c].
Tensor colour_means(const DualVaeModel& model, const std::vector<Image>& images);

/// D_X(D_G(embed(tokens)), D_C(z_c)) for a batch; z_c is [N, d_c].
std::vector<Image> decode_latents(const DualVaeModel& model, const std::vector<TokenGrid>& tokens, const Tensor& z_c);

/// z_g from the prior, z_c ~ N(0, I).
std::vector<Image> generate_unconditional(const DualVaeModel& model, const ArPrior& prior, int n, double temperature,
                                          Rng& rng);

/// z_g sampled n times from the prior; z_c is the exemplar's posterior mean,
/// shared by every output. The rng drives token sampling only.
std::vector<Image> generate_conditional(const DualVaeModel& model, const ArPrior& prior, const Image& exemplar, int n,
                                        double temperature, Rng& rng);

/// Accepts an RGB image or a single-channel grayscale image (replicated to RGB).
Image as_rgb(const Image& image);

/// ReDualVAE: F_g from the source, z_c ~ N(0, I) per output.
std::vector<Image> recolour(const DualVaeModel& model, const Image& source, int k, Rng& rng);

/// ReDualVAE: F_g from the source, z_c = posterior mean of the exemplar.
Image colour_transfer(const DualVaeModel& model, const Image& source, const Image& exemplar);

/// ReDualVAE: z_c(t) = (1-t) mu_L + t mu_R for t = 0, 1/(steps-1), ..., 1.
std::vector<Image> interpolate_colour(const DualVaeModel& model, const Image& source, const Image& exemplar_left,
                                      const Image& exemplar_right, int steps);

/// Training images for a config: synthetic shapes when data.path is empty.
SplitDataset prepare_data(const TrainConfig& config);

/// Builds a fresh model and trains it (stage 1), returning the model.
DualVaeModel build_and_train(const TrainConfig& config, const std::vector<Image>& train,
                             const Stage1Options& options = {});

/// Trains a prior on the model's token grids of `train`.
ArPrior build_and_train_prior(const DualVaeModel& model, const TrainConfig& config, const std::vector<Image>& train,
                              Rng& rng, PriorTrainStats* stats = nullptr);

}  // namespace dualvae
