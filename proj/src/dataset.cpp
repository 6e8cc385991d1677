// SPDX-License-Identifier: Apache-2.0
#include "dualvae/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <thread>

#include "dualvae/errors.hpp"

namespace dualvae::inline DUALVAE_ABI {

namespace {

Dataset subset(const Dataset& all, const std::vector<std::size_t>& order, std::size_t begin, std::size_t end) {
    Dataset out;
    for (std::size_t i = begin; i < end; ++i) {
        const std::size_t k = order[i];
        out.images.push_back(all.images[k]);
        if (all.labelled()) {
            out.shape_labels.push_back(all.shape_labels[k]);
            out.colour_labels.push_back(all.colour_labels[k]);
        }
        if (!all.masks.empty()) out.masks.push_back(all.masks[k]);
    }
    return out;
}

}  // namespace

SplitDataset split_dataset(const Dataset& all, std::uint64_t split_seed) {
    std::vector<std::size_t> order(all.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(split_seed);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n_test = all.size() / 20;
    SplitDataset out;
    out.test = subset(all, order, 0, n_test);
    out.train = subset(all, order, n_test, all.size());
    return out;
}

int worker_count() {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (const char* env = std::getenv("DUALVAE_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v >= 1) n = static_cast<int>(std::min<long>(v, 256));
    }
    return std::max(n, 1);
}

SplitDataset load_dataset(const std::filesystem::path& dir, int image_size, std::uint64_t split_seed) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    // Decode in parallel; results land in per-file slots so the order stays sorted.
    std::vector<std::optional<Image>> decoded(files.size());
    std::vector<std::string> errors(files.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < files.size(); i = next++) {
            try {
                decoded[i] = resize_bilinear(read_png(files[i]), image_size, image_size);
            } catch (const IoError& e) {
                errors[i] = e.what();
            }
        }
    };
    const int workers = std::min<int>(worker_count(), static_cast<int>(std::max<std::size_t>(files.size(), 1)));
    std::vector<std::thread> pool;
    for (int t = 1; t < workers; ++t) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();

    Dataset all;
    int skipped = 0;
    for (std::size_t i = 0; i < files.size(); ++i) {
        if (decoded[i]) {
            all.images.push_back(std::move(*decoded[i]));
        } else {
            ++skipped;
            std::cerr << "warning: skipping " << files[i].string() << ": " << errors[i] << "\n";
        }
    }
    if (all.images.empty()) throw IoError("no readable PNG images under " + dir.string());
    SplitDataset out = split_dataset(all, split_seed);
    out.skipped = skipped;
    return out;
}

std::string shape_name(ShapeKind kind) {
    static const char* names[] = {"square", "circle", "triangle", "ring", "diamond", "cross", "frame", "bar"};
    return names[static_cast<int>(kind)];
}

const std::vector<Rgb>& default_palette() {
    static const std::vector<Rgb> palette{
        Rgb{0.85f, 0.20f, 0.20f}, Rgb{0.20f, 0.75f, 0.25f}, Rgb{0.20f, 0.30f, 0.85f}, Rgb{0.85f, 0.80f, 0.20f},
        Rgb{0.20f, 0.75f, 0.80f}, Rgb{0.80f, 0.20f, 0.75f}, Rgb{0.90f, 0.50f, 0.15f}, Rgb{0.50f, 0.20f, 0.80f},
    };
    return palette;
}

bool shape_contains(const ShapePlacement& p, double x, double y) {
    double dx = (x - p.cx) / p.radius;
    double dy = (y - p.cy) / p.radius;
    const double ax = std::abs(dx), ay = std::abs(dy);
    switch (p.kind) {
        case ShapeKind::square:
            return ax <= 1.0 && ay <= 1.0;
        case ShapeKind::circle:
            return dx * dx + dy * dy <= 1.0;
        case ShapeKind::triangle:
            if (p.vertical) dy = -dy;
            return dy >= -1.0 && dy <= 1.0 && ax <= (dy + 1.0) / 2.0;
        case ShapeKind::ring: {
            const double r2 = dx * dx + dy * dy;
            return r2 <= 1.0 && r2 >= 0.55 * 0.55;
        }
        case ShapeKind::diamond:
            return ax + ay <= 1.0;
        case ShapeKind::cross:
            return (ax <= 0.3 && ay <= 1.0) || (ay <= 0.3 && ax <= 1.0);
        case ShapeKind::frame:
            return ax <= 1.0 && ay <= 1.0 && (ax >= 0.6 || ay >= 0.6);
        case ShapeKind::bar:
            return p.vertical ? (ax <= 0.35 && ay <= 1.0) : (ax <= 1.0 && ay <= 0.35);
    }
    return false;
}

Image render_shape(const ShapePlacement& p, const Rgb& colour, const Rgb& background, int size, int supersample,
                   Image* mask) {
    DUALVAE_REQUIRE(size > 0 && supersample >= 1, "render needs a positive size and supersampling factor");
    Image img = Image::blank(3, size, size);
    if (mask) *mask = Image::blank(1, size, size);
    const double step = 1.0 / supersample;
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            int inside = 0;
            for (int sy = 0; sy < supersample; ++sy) {
                for (int sx = 0; sx < supersample; ++sx) {
                    inside += shape_contains(p, x + (sx + 0.5) * step, y + (sy + 0.5) * step) ? 1 : 0;
                }
            }
            const double frac = static_cast<double>(inside) / (supersample * supersample);
            for (int c = 0; c < 3; ++c) {
                img.at(c, y, x) = frac == 1.0   ? colour[static_cast<std::size_t>(c)]
                                  : frac == 0.0 ? background[static_cast<std::size_t>(c)]
                                                : static_cast<real>(frac * colour[static_cast<std::size_t>(c)] +
                                                                    (1.0 - frac) * background[static_cast<std::size_t>(c)]);
            }
            if (mask) mask->at(0, y, x) = shape_contains(p, x + 0.5, y + 0.5) ? real(1) : real(0);
        }
    }
    return img;
}

Dataset synth_shapes(const SyntheticShapesSpec& spec) {
    DUALVAE_REQUIRE(spec.shapes >= 1 && spec.shapes <= kShapeKinds, "synthetic shape count must be in [1, 8]");
    DUALVAE_REQUIRE(!spec.palette.empty() && !spec.backgrounds.empty(), "palette and backgrounds must be nonempty");
    DUALVAE_REQUIRE(spec.count >= 0 && spec.size >= 8, "synthetic images need size >= 8");
    Rng rng(spec.seed);
    std::uniform_int_distribution<int> pick_shape(0, spec.shapes - 1);
    std::uniform_int_distribution<int> pick_colour(0, static_cast<int>(spec.palette.size()) - 1);
    std::uniform_int_distribution<int> pick_background(0, static_cast<int>(spec.backgrounds.size()) - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Dataset out;
    for (int i = 0; i < spec.count; ++i) {
        ShapePlacement p;
        const int shape = pick_shape(rng);
        const int colour = pick_colour(rng);
        const int background = pick_background(rng);
        p.kind = static_cast<ShapeKind>(shape);
        p.radius = spec.size * (0.22 + 0.14 * unit(rng));
        const double margin = p.radius + 1.0;
        p.cx = margin + (spec.size - 2.0 * margin) * unit(rng);
        p.cy = margin + (spec.size - 2.0 * margin) * unit(rng);
        p.vertical = unit(rng) < 0.5;
        Image mask;
        out.images.push_back(render_shape(p, spec.palette[static_cast<std::size_t>(colour)],
                                          spec.backgrounds[static_cast<std::size_t>(background)], spec.size,
                                          spec.supersample, &mask));
        out.masks.push_back(std::move(mask));
        out.shape_labels.push_back(shape);
        out.colour_labels.push_back(colour);
    }
    return out;
}

}  // namespace dualvae
