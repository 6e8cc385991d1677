// SPDX-License-Identifier: Apache-2.0
//
// dualvae: train, sample and evaluate DualVAE / ReDualVAE models.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dualvae/checkpoint.hpp"
#include "dualvae/config.hpp"
#include "dualvae/eval.hpp"
#include "dualvae/image.hpp"
#include "dualvae/pipeline.hpp"
#include "dualvae/verify.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dualvae;

namespace {

struct CommonOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--config", o.config, "Configuration file (key = value lines)");
    cmd->add_option("--seed", o.seed, "Overrides the configured seed");
    cmd->add_option("--out", o.out, "Output directory")->capture_default_str();
}

// Settings for a run. A checkpoint fixes the model section; a config file,
// when given, supplies everything else and must agree on the model.
TrainConfig resolve_config(const CommonOptions& o, const TrainConfig* from_checkpoint = nullptr) {
    TrainConfig cfg = from_checkpoint ? *from_checkpoint : TrainConfig{};
    if (!o.config.empty()) {
        TrainConfig file = load_config(o.config);
        if (from_checkpoint && !(file.model == from_checkpoint->model)) {
            throw ConfigError("model settings in " + o.config + " differ from the checkpoint's");
        }
        cfg = std::move(file);
    }
    if (o.seed) cfg.seed = *o.seed;
    cfg.validate();
    return cfg;
}

fs::path output_dir(const CommonOptions& o) {
    fs::path dir(o.out);
    fs::create_directories(dir);
    return dir;
}

CheckpointData open_checkpoint(const std::string& path, bool need_prior) {
    CheckpointData data = load_checkpoint(path);
    if (need_prior && !data.prior) throw IoError(path + " has no prior section; run train-prior first");
    return data;
}

int columns_for(std::size_t n) {
    return std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n)))));
}

// One row per exemplar, then its samples in rows of `columns`.
Image exemplar_grid(const std::vector<Image>& exemplars, const std::vector<std::vector<Image>>& blocks, int columns) {
    std::vector<Image> cells;
    const Image& first = exemplars.front();
    const Image blank = Image::blank(first.channels, first.height, first.width);
    for (std::size_t e = 0; e < exemplars.size(); ++e) {
        cells.push_back(exemplars[e]);
        for (int c = 1; c < columns; ++c) cells.push_back(blank);
        for (const auto& img : blocks[e]) cells.push_back(img);
        while (cells.size() % static_cast<std::size_t>(columns) != 0) cells.push_back(blank);
    }
    return tile_images(cells, columns);
}

Image load_input(const std::string& path, int size) {
    Image img = read_png(path);
    if (img.height != size || img.width != size) img = resize_bilinear(img, size, size);
    return img;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
}

void report(const std::string& command, const json& outputs) {
    std::cout << json{{"command", command}, {"status", "ok"}, {"outputs", outputs}}.dump() << "\n";
}

int fail(const std::string& kind, const std::string& message, int code) {
    std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
    return code;
}

// --- subcommands ---------------------------------------------------------

void run_train(const CommonOptions& o) {
    const TrainConfig cfg = resolve_config(o);
    const fs::path dir = output_dir(o);
    write_text(dir / "config.txt", serialize_config(cfg));
    const SplitDataset data = prepare_data(cfg);
    std::cerr << "train: " << data.train.size() << " train / " << data.test.size() << " test images, "
              << to_string(cfg.model.variant) << ", " << cfg.train.steps << " steps\n";
    Stage1Options options;
    options.out_dir = dir;
    options.on_step = [&cfg](int step, const LossBreakdown& b) {
        if (step % cfg.train.log_every == 0 || step == cfg.train.steps) {
            std::cerr << loss_csv_row(step, b) << "\n";
        }
    };
    build_and_train(cfg, data.train.images, options);
    report("train", {{"checkpoint", (dir / "final.dvae").string()}, {"loss_csv", (dir / "loss.csv").string()}});
}

void run_train_prior(const CommonOptions& o, const std::string& checkpoint) {
    CheckpointData ck = open_checkpoint(checkpoint, false);
    if (!ck.model->is_dual()) throw ConfigError("the token prior needs a DualVAE checkpoint, not ReDualVAE");
    const TrainConfig cfg = resolve_config(o, &ck.config);
    const fs::path dir = output_dir(o);
    const SplitDataset data = prepare_data(cfg);
    Rng rng(cfg.seed);
    PriorTrainStats stats;
    const ArPrior prior = build_and_train_prior(*ck.model, cfg, data.train.images, rng, &stats);
    std::string csv = "step,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < stats.losses.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", i + 1, stats.losses[i]);
        csv += buf;
    }
    write_text(dir / "prior_loss.csv", csv);
    const double test_nll = data.test.size() > 0 ? [&] {
        std::vector<TokenSequence> seqs;
        for (const auto& g : encode_tokens(*ck.model, data.test.images)) seqs.push_back(flatten_tokens(g));
        return prior.nll(seqs);
    }() : NAN;
    save_checkpoint(dir / "prior.dvae", cfg, *ck.model, ck.step, nullptr, &prior);
    report("train-prior", {{"checkpoint", (dir / "prior.dvae").string()},
                           {"test_nll", test_nll},
                           {"uniform_nll", std::log(static_cast<double>(prior.vocab()))}});
}

void run_sample(const CommonOptions& o, const std::string& checkpoint, int n, std::optional<double> temperature) {
    CheckpointData ck = open_checkpoint(checkpoint, true);
    const TrainConfig cfg = resolve_config(o, &ck.config);
    Rng rng(cfg.seed);
    const auto images = generate_unconditional(*ck.model, *ck.prior, n, temperature.value_or(cfg.eval.temperature), rng);
    const fs::path path = output_dir(o) / "samples.png";
    write_png(path, tile_images(images, columns_for(images.size())));
    report("sample", {{"grid", path.string()}, {"n", n}});
}

void run_sample_cond(const CommonOptions& o, const std::string& checkpoint, const std::vector<std::string>& exemplars,
                     int n, std::optional<double> temperature) {
    CheckpointData ck = open_checkpoint(checkpoint, true);
    const TrainConfig cfg = resolve_config(o, &ck.config);
    Rng rng(cfg.seed);
    std::vector<Image> inputs;
    std::vector<std::vector<Image>> blocks;
    for (const auto& path : exemplars) {
        inputs.push_back(as_rgb(load_input(path, cfg.model.image_size)));
        blocks.push_back(generate_conditional(*ck.model, *ck.prior, inputs.back(), n,
                                              temperature.value_or(cfg.eval.temperature), rng));
    }
    const fs::path path = output_dir(o) / "conditional.png";
    write_png(path, exemplar_grid(inputs, blocks, std::min(n, 8)));
    report("sample-cond", {{"grid", path.string()}, {"exemplars", exemplars.size()}, {"n", n}});
}

void run_recolour(const CommonOptions& o, const std::string& checkpoint, const std::string& source, int k,
                  bool grayscale) {
    CheckpointData ck = open_checkpoint(checkpoint, false);
    const TrainConfig cfg = resolve_config(o, &ck.config);
    Rng rng(cfg.seed);
    Image input = load_input(source, cfg.model.image_size);
    if (grayscale && input.channels == 3) input = to_grayscale(input);
    const auto outputs = recolour(*ck.model, input, k, rng);
    const fs::path path = output_dir(o) / "recolour.png";
    write_png(path, exemplar_grid({as_rgb(input)}, {outputs}, std::min(k, 8)));
    report("recolour", {{"grid", path.string()}, {"k", k}});
}

void run_transfer(const CommonOptions& o, const std::string& checkpoint, const std::string& source,
                  const std::string& exemplar) {
    CheckpointData ck = open_checkpoint(checkpoint, false);
    const TrainConfig cfg = resolve_config(o, &ck.config);
    const Image src = as_rgb(load_input(source, cfg.model.image_size));
    const Image ex = as_rgb(load_input(exemplar, cfg.model.image_size));
    const Image result = colour_transfer(*ck.model, src, ex);
    const fs::path dir = output_dir(o);
    write_png(dir / "transfer.png", result);
    write_png(dir / "transfer_grid.png", tile_images({src, ex, result}, 3));
    report("transfer", {{"image", (dir / "transfer.png").string()}, {"grid", (dir / "transfer_grid.png").string()}});
}

void run_interpolate(const CommonOptions& o, const std::string& checkpoint, const std::string& source,
                     const std::string& left, const std::string& right, int steps) {
    CheckpointData ck = open_checkpoint(checkpoint, false);
    const TrainConfig cfg = resolve_config(o, &ck.config);
    const Image l = as_rgb(load_input(left, cfg.model.image_size));
    const Image r = as_rgb(load_input(right, cfg.model.image_size));
    std::vector<Image> row{l};
    for (auto& img : interpolate_colour(*ck.model, load_input(source, cfg.model.image_size), l, r, steps)) {
        row.push_back(std::move(img));
    }
    row.push_back(r);
    const fs::path path = output_dir(o) / "interpolate.png";
    write_png(path, tile_images(row, static_cast<int>(row.size())));
    report("interpolate", {{"grid", path.string()}, {"steps", steps}});
}

void run_eval_ablation(const CommonOptions& o, const std::string& with_path, const std::string& without_path,
                       const std::string& name) {
    CheckpointData with = open_checkpoint(with_path, true);
    CheckpointData without = open_checkpoint(without_path, true);
    if (!(with.config.model == without.config.model)) {
        throw ConfigError("the two ablation arms must share model settings");
    }
    const TrainConfig cfg = resolve_config(o, &with.config);
    const SplitDataset data = prepare_data(cfg);
    std::vector<Image> test = data.test.images;
    if (static_cast<int>(test.size()) > cfg.eval.exemplars) test.resize(static_cast<std::size_t>(cfg.eval.exemplars));
    AblationSettings settings;
    settings.samples_per_exemplar = cfg.eval.samples_per_exemplar;
    settings.baseline_pairs = cfg.eval.baseline_pairs;
    settings.temperature = cfg.eval.temperature;
    settings.symmetric = cfg.eval.symmetric;
    settings.histogram.bins = cfg.eval.histogram_bins;
    Rng rng(cfg.seed);
    const auto rows = ablation_report(name, {with.model.get(), with.prior.get()},
                                      {without.model.get(), without.prior.get()}, test, settings, rng);
    const std::string csv = ablation_csv(rows);
    const fs::path path = output_dir(o) / "ablation.csv";
    write_text(path, csv);
    std::cerr << csv;
    report("eval-ablation", {{"csv", path.string()}});
}

void run_dump_structure(const CommonOptions& o, const std::string& checkpoint, std::vector<std::string> images) {
    CheckpointData ck = open_checkpoint(checkpoint, false);
    const TrainConfig cfg = resolve_config(o, &ck.config);
    const fs::path dir = output_dir(o);
    std::vector<Image> inputs;
    std::vector<std::string> names;
    if (images.empty()) {
        const SplitDataset data = prepare_data(cfg);
        for (std::size_t i = 0; i < std::min<std::size_t>(8, data.test.size()); ++i) {
            inputs.push_back(data.test.images[i]);
            names.push_back("test" + std::to_string(i));
        }
    }
    for (const auto& p : images) {
        inputs.push_back(as_rgb(load_input(p, cfg.model.image_size)));
        names.push_back(fs::path(p).stem().string());
    }
    if (inputs.empty()) throw IoError("no images to process");
    NoTapeScope off;
    const auto maps = unstack_images(ck.model->structure_estimate(stack_images(inputs)));
    json written = json::array();
    std::vector<Image> tiles;
    for (std::size_t i = 0; i < maps.size(); ++i) {
        const fs::path path = dir / ("structure_" + names[i] + ".png");
        tiles.push_back(normalize_min_max(maps[i]));
        write_png(path, tiles.back());
        written.push_back(path.string());
    }
    write_png(dir / "structure_grid.png", tile_images(tiles, columns_for(tiles.size())));
    report("dump-structure", {{"images", written}});
}

bool run_verify_math(const CommonOptions& o, const VerifyMathSettings& settings) {
    const TrainConfig cfg = resolve_config(o);
    Rng rng(cfg.seed);
    const auto checks = verify_math(settings, rng);
    json out = json::array();
    bool all = true;
    for (const auto& c : checks) {
        std::cerr << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
        out.push_back({{"name", c.name},
                       {"passed", c.passed},
                       {"trials", c.trials},
                       {"violations", c.violations},
                       {"worst", c.worst},
                       {"detail", c.detail}});
        all = all && c.passed;
    }
    const fs::path path = output_dir(o) / "verify_math.json";
    write_text(path, out.dump(2) + "\n");
    report("verify-math", {{"report", path.string()}, {"all_passed", all}});
    return all;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DualVAE / ReDualVAE training, generation and evaluation"};
    app.require_subcommand(1);
    CommonOptions common;

    auto* train = app.add_subcommand("train", "Train stage 1 (the variant comes from model.variant)");
    add_common(train, common);

    std::string checkpoint;
    auto* train_prior = app.add_subcommand("train-prior", "Train the token prior on a DualVAE checkpoint");
    add_common(train_prior, common);
    train_prior->add_option("--checkpoint", checkpoint, "Stage-1 checkpoint")->required();

    int n = 16;
    std::optional<double> temperature;
    auto* sample = app.add_subcommand("sample", "Unconditional generation");
    add_common(sample, common);
    sample->add_option("--checkpoint", checkpoint, "Checkpoint with a prior")->required();
    sample->add_option("--n", n, "Number of images")->check(CLI::PositiveNumber);
    sample->add_option("--temperature", temperature)->check(CLI::PositiveNumber);

    std::vector<std::string> exemplars;
    auto* sample_cond = app.add_subcommand("sample-cond", "Generation with colour from exemplar images");
    add_common(sample_cond, common);
    sample_cond->add_option("--checkpoint", checkpoint, "Checkpoint with a prior")->required();
    sample_cond->add_option("--exemplar", exemplars, "Exemplar PNG (repeatable)")->required()->check(CLI::ExistingFile);
    sample_cond->add_option("--n", n, "Samples per exemplar")->check(CLI::PositiveNumber);
    sample_cond->add_option("--temperature", temperature)->check(CLI::PositiveNumber);

    std::string source;
    int k = 8;
    bool grayscale = false;
    auto* recolour_cmd = app.add_subcommand("recolour", "Recolour an image with colour latents from the prior");
    add_common(recolour_cmd, common);
    recolour_cmd->add_option("--checkpoint", checkpoint, "ReDualVAE checkpoint")->required();
    recolour_cmd->add_option("--source", source, "Source PNG (RGB or grayscale)")->required()->check(CLI::ExistingFile);
    recolour_cmd->add_option("--k", k, "Number of colourisations")->check(CLI::PositiveNumber);
    recolour_cmd->add_flag("--grayscale", grayscale, "Convert the source to grayscale first");

    std::string exemplar;
    auto* transfer = app.add_subcommand("transfer", "Colour transfer from an exemplar");
    add_common(transfer, common);
    transfer->add_option("--checkpoint", checkpoint, "ReDualVAE checkpoint")->required();
    transfer->add_option("--source", source)->required()->check(CLI::ExistingFile);
    transfer->add_option("--exemplar", exemplar)->required()->check(CLI::ExistingFile);

    std::string left, right;
    int steps = 5;
    auto* interpolate = app.add_subcommand("interpolate", "Interpolate colour between two exemplars");
    add_common(interpolate, common);
    interpolate->add_option("--checkpoint", checkpoint, "ReDualVAE checkpoint")->required();
    interpolate->add_option("--source", source)->required()->check(CLI::ExistingFile);
    interpolate->add_option("--left", left)->required()->check(CLI::ExistingFile);
    interpolate->add_option("--right", right)->required()->check(CLI::ExistingFile);
    interpolate->add_option("--steps", steps)->check(CLI::Range(2, 1000));

    std::string with_path, without_path, model_name = "dualvae";
    auto* ablation = app.add_subcommand("eval-ablation", "Exemplar-guided colour control with and without w_F");
    add_common(ablation, common);
    ablation->add_option("--with", with_path, "Checkpoint trained with the regularization term")->required();
    ablation->add_option("--without", without_path, "Checkpoint trained with loss.w_F = 0")->required();
    ablation->add_option("--name", model_name, "Model column of the report");

    std::vector<std::string> images;
    auto* dump = app.add_subcommand("dump-structure", "Write structure estimates as grayscale PNGs");
    add_common(dump, common);
    dump->add_option("--checkpoint", checkpoint)->required();
    dump->add_option("--image", images, "Input PNG (repeatable); default: 8 test images")->check(CLI::ExistingFile);

    VerifyMathSettings verify;
    auto* verify_cmd = app.add_subcommand("verify-math", "Check the likelihood identity and the ELBO bounds");
    add_common(verify_cmd, common);
    verify_cmd->add_option("--tuples", verify.bound_tuples)->check(CLI::PositiveNumber);
    verify_cmd->add_option("--draws", verify.elbo_draws)->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what(), 2);
    }

    try {
        if (train->parsed()) run_train(common);
        if (train_prior->parsed()) run_train_prior(common, checkpoint);
        if (sample->parsed()) run_sample(common, checkpoint, n, temperature);
        if (sample_cond->parsed()) run_sample_cond(common, checkpoint, exemplars, n, temperature);
        if (recolour_cmd->parsed()) run_recolour(common, checkpoint, source, k, grayscale);
        if (transfer->parsed()) run_transfer(common, checkpoint, source, exemplar);
        if (interpolate->parsed()) run_interpolate(common, checkpoint, source, left, right, steps);
        if (ablation->parsed()) run_eval_ablation(common, with_path, without_path, model_name);
        if (dump->parsed()) run_dump_structure(common, checkpoint, images);
        if (verify_cmd->parsed() && !run_verify_math(common, verify)) {
            return fail("verification", "one or more checks failed; see verify_math.json", 1);
        }
    } catch (const ConfigError& e) {
        return fail("config", e.what(), 2);
    } catch (const IoError& e) {
        return fail("io", e.what(), 3);
    } catch (const NumericFault& e) {
        return fail("numeric", e.what(), 4);
    } catch (const ContractViolation& e) {
        return fail("contract", e.what(), 5);
    } catch (const std::exception& e) {
        return fail("internal", e.what(), 1);
    }
    return 0;
}
