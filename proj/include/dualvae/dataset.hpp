// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dualvae/image.hpp"

namespace dualvae::inline DUALVAE_ABI {

struct Dataset {
    std::vector<Image> images;
    std::vector<int> shape_labels;   // synthetic data only
    std::vector<int> colour_labels;  // synthetic data only
    std::vector<Image> masks;        // synthetic data only: hard foreground masks

    std::size_t size() const { return images.size(); }
    bool labelled() const { return !colour_labels.empty(); }
};

struct SplitDataset {
    Dataset train;
    Dataset test;
    int skipped = 0;  // unreadable files
};

/// Seeded shuffle, then the first 5% (rounded down) go to test and the rest
/// to train. Labels and masks follow their images.
SplitDataset split_dataset(const Dataset& all, std::uint64_t split_seed);

/// Worker threads for parallel work: DUALVAE_THREADS when set to a positive
/// integer, otherwise the hardware concurrency.
int worker_count();

/// Recursively loads every *.png under `dir` in sorted path order, resized to
/// image_size x image_size, and splits it. Unreadable files are counted and
/// skipped; a directory with no readable image is an IoError. Files are decoded
/// by up to worker_count() threads.
SplitDataset load_dataset(const std::filesystem::path& dir, int image_size, std::uint64_t split_seed);

using Rgb = std::array<real, 3>;

enum class ShapeKind { square, circle, triangle, ring, diamond, cross, frame, bar };
inline constexpr int kShapeKinds = 8;
std::string shape_name(ShapeKind kind);

/// Default palette: red, green, blue, yellow, cyan, magenta, orange, purple.
const std::vector<Rgb>& default_palette();

struct SyntheticShapesSpec {
    int size = 32;
    int count = 2000;
    int shapes = kShapeKinds;  // uses the first `shapes` kinds
    std::vector<Rgb> palette = default_palette();
    // Dark gray rather than black: an L1 target of exactly 0 behind a sigmoid
    // output has no finite optimum and drives the decoder into saturation.
    std::vector<Rgb> backgrounds{Rgb{0.1f, 0.1f, 0.1f}};
    int supersample = 4;  // 1 disables anti-aliasing
    std::uint64_t seed = 0;
};

struct ShapePlacement {
    ShapeKind kind = ShapeKind::square;
    double cx = 0, cy = 0;  // centre in pixels
    double radius = 0;      // half extent in pixels
    bool vertical = false;  // orientation of the bar and triangle
};

/// True when the point (x, y) in pixel coordinates lies inside the shape.
bool shape_contains(const ShapePlacement& p, double x, double y);

/// Renders one shape; the mask marks pixels whose centre lies inside.
Image render_shape(const ShapePlacement& p, const Rgb& colour, const Rgb& background, int size, int supersample,
                   Image* mask = nullptr);

/// Shape kind, colour and placement are drawn independently per image.
Dataset synth_shapes(const SyntheticShapesSpec& spec);

}  // namespace dualvae
