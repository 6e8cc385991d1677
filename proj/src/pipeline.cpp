// SPDX-License-Identifier: Apache-2.0
#include "dualvae/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <deque>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dualvae/checkpoint.hpp"
#include "dualvae/optim.hpp"

namespace dualvae::inline DUALVAE_ABI {

std::string loss_csv_row(int step, const LossBreakdown& b) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g", step, b.recon_F, b.recon_z, b.vq_latent,
                  b.gauss_kl, b.total);
    return buf;
}

namespace {

class BatchSampler {
public:
    BatchSampler(std::size_t n, Rng& rng) : order_(n), rng_(rng) {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        std::shuffle(order_.begin(), order_.end(), rng_);
    }
    std::vector<std::size_t> next(int batch) {
        std::vector<std::size_t> out;
        for (int i = 0; i < batch; ++i) {
            if (pos_ == order_.size()) {
                std::shuffle(order_.begin(), order_.end(), rng_);
                pos_ = 0;
            }
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    std::vector<std::size_t> order_;
    Rng& rng_;
    std::size_t pos_ = 0;
};

void write_usage_csv(const std::filesystem::path& path, const Codebook& cb) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "code,count\n";
    for (int i = 0; i < cb.size(); ++i) out << i << "," << cb.usage()[static_cast<std::size_t>(i)] << "\n";
}

std::vector<Image> batch_slice(const std::vector<Image>& images, std::size_t begin, std::size_t end) {
    return std::vector<Image>(images.begin() + static_cast<std::ptrdiff_t>(begin),
                              images.begin() + static_cast<std::ptrdiff_t>(end));
}

}  // namespace

Stage1Result train_stage1(DualVaeModel& model, const std::vector<Image>& train, const TrainConfig& config, Rng& rng,
                          const Stage1Options& options) {
    DUALVAE_REQUIRE(!train.empty(), "stage-1 training needs a nonempty dataset");
    config.validate();
    Adam adam(model.params(), config.optim);
    BatchSampler sampler(train.size(), rng);
    Stage1Result result;

    std::ofstream csv;
    std::deque<std::filesystem::path> kept;
    if (options.out_dir) {
        std::filesystem::create_directories(*options.out_dir);
        csv.open(*options.out_dir / "loss.csv");
        if (!csv) throw IoError("cannot write loss.csv in " + options.out_dir->string());
        csv << kLossCsvHeader << "\n";
    }

    if (model.is_dual() && config.vq.data_init && config.train.steps > 0) {
        // Enough images that every code can take a distinct encoder output.
        const int grid = model.config().token_grid_size();
        const int needed = (model.config().n_embed + grid * grid - 1) / (grid * grid);
        std::vector<Image> sample;
        for (std::size_t i : sampler.next(std::max(config.train.batch, needed))) sample.push_back(train[i]);
        NoTapeScope off;
        const Tensor images = stack_images(sample);
        init_from_vectors(model.codebook(), model.encode_geometry(model.structure_estimate(images)).pre_quant, rng);
    }

    Tape tape;
    for (int step = 1; step <= config.train.steps; ++step) {
        std::vector<Image> batch;
        for (std::size_t i : sampler.next(config.train.batch)) batch.push_back(train[i]);
        const Tensor images = stack_images(batch);

        tape.reset();
        LossResult loss;
        {
            TapeScope scope(tape);
            loss = model_loss(model, images, rng, config.loss);
        }
        tape.backward(loss.objective);
        adam.step();
        if (model.is_dual()) ema_update(model.codebook(), loss.state.quant.tokens, loss.state.geometry.pre_quant);

        result.history.push_back(loss.breakdown);
        if (options.on_step) options.on_step(step, loss.breakdown);
        if (csv.is_open()) csv << loss_csv_row(step, loss.breakdown) << "\n";
        if (options.out_dir && step % config.train.checkpoint_every == 0) {
            const auto path = *options.out_dir / ("ckpt_" + std::to_string(step) + ".dvae");
            save_checkpoint(path, config, model, step, &adam);
            kept.push_back(path);
            while (static_cast<int>(kept.size()) > config.train.keep_checkpoints) {
                std::filesystem::remove(kept.front());
                kept.pop_front();
            }
        }
    }
    if (options.out_dir) {
        save_checkpoint(*options.out_dir / "final.dvae", config, model, config.train.steps, &adam);
        if (model.is_dual()) write_usage_csv(*options.out_dir / "codebook_usage.csv", model.codebook());
    }
    return result;
}

std::vector<TokenGrid> encode_tokens(const DualVaeModel& model, const std::vector<Image>& images, int batch) {
    DUALVAE_REQUIRE(batch > 0, "batch must be positive");
    NoTapeScope off;
    std::vector<TokenGrid> out;
    for (std::size_t b = 0; b < images.size(); b += static_cast<std::size_t>(batch)) {
        const auto slice = batch_slice(images, b, std::min(images.size(), b + static_cast<std::size_t>(batch)));
        const Tensor x = stack_images(slice);
        const GeometryEncoding g = model.encode_geometry(model.structure_estimate(x));
        auto q = quantize(g.pre_quant, model.codebook(), real(0));
        for (auto& t : q.tokens) out.push_back(std::move(t));
    }
    return out;
}

Tensor colour_means(const DualVaeModel& model, const std::vector<Image>& images) {
    NoTapeScope off;
    std::vector<real> values;
    int d = model.config().colour_dim;
    for (std::size_t b = 0; b < images.size(); b += 32) {
        const auto slice = batch_slice(images, b, std::min(images.size(), b + 32));
        const ColourEncoding c = model.encode_colour(stack_images(slice));
        values.insert(values.end(), c.mu.data().begin(), c.mu.data().end());
    }
    return Tensor::from({static_cast<int>(images.size()), d}, std::move(values));
}

std::vector<Image> decode_latents(const DualVaeModel& model, const std::vector<TokenGrid>& tokens, const Tensor& z_c) {
    DUALVAE_REQUIRE(z_c.rank() == 2 && z_c.dim(0) == static_cast<int>(tokens.size()),
                    "one colour latent per token grid is required");
    NoTapeScope off;
    const Tensor z_q = embed_tokens(model.codebook(), tokens);
    return unstack_images(model.merge_decode(model.skip_decode_geometry(z_q), model.skip_decode_colour(z_c)));
}

std::vector<Image> generate_unconditional(const DualVaeModel& model, const ArPrior& prior, int n, double temperature,
                                          Rng& rng) {
    DUALVAE_REQUIRE(n >= 1, "generate at least one image");
    std::vector<TokenGrid> tokens;
    for (int i = 0; i < n; ++i) tokens.push_back(prior.sample(temperature, rng));
    const Tensor z_c = standard_normal({n, model.config().colour_dim}, rng);
    return decode_latents(model, tokens, z_c);
}

std::vector<Image> generate_conditional(const DualVaeModel& model, const ArPrior& prior, const Image& exemplar, int n,
                                        double temperature, Rng& rng) {
    DUALVAE_REQUIRE(n >= 1, "generate at least one image");
    const Tensor mu = colour_means(model, {as_rgb(exemplar)});
    const int d = model.config().colour_dim;
    std::vector<real> repeated;
    for (int i = 0; i < n; ++i) repeated.insert(repeated.end(), mu.data().begin(), mu.data().end());
    std::vector<TokenGrid> tokens;
    for (int i = 0; i < n; ++i) tokens.push_back(prior.sample(temperature, rng));
    return decode_latents(model, tokens, Tensor::from({n, d}, std::move(repeated)));
}

Image as_rgb(const Image& image) {
    if (image.channels == 3) return image;
    DUALVAE_REQUIRE(image.channels == 1, "expected an RGB or single-channel image");
    return replicate_channels(image);
}

namespace {

std::vector<Image> decode_with_source(const DualVaeModel& model, const Image& source, const Tensor& z_c) {
    DUALVAE_REQUIRE(!model.is_dual(), "recolouring uses the ReDualVAE variant");
    NoTapeScope off;
    const int n = z_c.dim(0);
    const Image rgb = as_rgb(source);
    const int s = model.config().image_size;
    DUALVAE_REQUIRE(rgb.height == s && rgb.width == s, "source image must match the model's image size");
    const GeometryEncoding g = model.encode_geometry(model.structure_estimate(stack_images({rgb})));
    FeaturePyramid tiled;
    for (const Tensor& level : g.features.levels) {
        Shape shape = level.shape();
        shape[0] = n;
        std::vector<real> values;
        for (int i = 0; i < n; ++i) values.insert(values.end(), level.data().begin(), level.data().end());
        tiled.levels.push_back(Tensor::from(shape, std::move(values)));
    }
    return unstack_images(model.merge_decode(tiled, model.skip_decode_colour(z_c)));
}

}  // namespace

std::vector<Image> recolour(const DualVaeModel& model, const Image& source, int k, Rng& rng) {
    DUALVAE_REQUIRE(k >= 1, "recolour needs k >= 1");
    return decode_with_source(model, source, standard_normal({k, model.config().colour_dim}, rng));
}

Image colour_transfer(const DualVaeModel& model, const Image& source, const Image& exemplar) {
    return decode_with_source(model, source, colour_means(model, {as_rgb(exemplar)})).front();
}

std::vector<Image> interpolate_colour(const DualVaeModel& model, const Image& source, const Image& exemplar_left,
                                      const Image& exemplar_right, int steps) {
    DUALVAE_REQUIRE(steps >= 2, "interpolation needs at least two steps");
    const Tensor mu = colour_means(model, {as_rgb(exemplar_left), as_rgb(exemplar_right)});
    const int d = model.config().colour_dim;
    const auto m = mu.data();
    std::vector<real> values;
    for (int i = 0; i < steps; ++i) {
        const double t = static_cast<double>(i) / (steps - 1);
        for (int j = 0; j < d; ++j) {
            // Endpoints are copied so t = 0 and t = 1 match colour_transfer exactly.
            const real left = m[static_cast<std::size_t>(j)], right = m[static_cast<std::size_t>(d + j)];
            values.push_back(i == 0 ? left : i == steps - 1 ? right : static_cast<real>((1 - t) * left + t * right));
        }
    }
    return decode_with_source(model, source, Tensor::from({steps, d}, std::move(values)));
}

SplitDataset prepare_data(const TrainConfig& config) {
    if (!config.data.path.empty()) {
        return load_dataset(config.data.path, config.model.image_size, config.data.split_seed);
    }
    SyntheticShapesSpec spec;
    spec.size = config.model.image_size;
    spec.count = config.data.count;
    spec.shapes = config.data.shapes;
    spec.palette.resize(static_cast<std::size_t>(config.data.colours));
    spec.seed = config.data.split_seed;
    return split_dataset(synth_shapes(spec), config.data.split_seed);
}

DualVaeModel build_and_train(const TrainConfig& config, const std::vector<Image>& train,
                             const Stage1Options& options) {
    Rng rng(config.seed);
    DualVaeModel model(config.model, config.vq, rng);
    train_stage1(model, train, config, rng, options);
    return model;
}

ArPrior build_and_train_prior(const DualVaeModel& model, const TrainConfig& config, const std::vector<Image>& train,
                              Rng& rng, PriorTrainStats* stats) {
    const int grid = model.config().token_grid_size();
    ArPrior prior(model.config().n_embed, grid, grid, config.prior, rng);
    PriorTrainStats s = train_prior(prior, encode_tokens(model, train), rng);
    if (stats) *stats = std::move(s);
    return prior;
}

}  // namespace dualvae
