// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dualvae/tensor.hpp"

namespace dualvae::inline DUALVAE_ABI {

/// Planar image with values in [0,1]; data is channel-major [C,H,W].
struct Image {
    int channels = 3;
    int height = 0;
    int width = 0;
    std::vector<real> data;

    static Image blank(int channels, int height, int width, real fill = real(0));
    real& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    real at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    bool operator==(const Image&) const = default;
};

/// Decodes a PNG of any bit depth and colour type into 8-bit RGB values
/// scaled to [0,1]. 16-bit samples are reduced to 8 bits by v >> 8, gray is
/// replicated to three channels and alpha is dropped. Throws IoError.
Image read_png(const std::filesystem::path& path);

/// Writes an 8-bit PNG (gray for 1 channel, RGB for 3). Values are clamped to
/// [0,1] and rounded.
void write_png(const std::filesystem::path& path, const Image& image);

/// Bilinear resize with half-pixel centres.
Image resize_bilinear(const Image& image, int height, int width);

/// Quantises to 8 bits and back, as a write/read round trip would.
Image quantize_8bit(const Image& image);

/// Stacks same-sized images into [N,C,H,W].
Tensor stack_images(const std::vector<Image>& images);
/// Splits [N,C,H,W] back into images.
std::vector<Image> unstack_images(const Tensor& batch);

/// Tiles images row-major into a grid with a `pad`-pixel black gutter.
Image tile_images(const std::vector<Image>& images, int columns, int pad = 1);

/// Per-image min-max normalisation of a single-channel map to [0,1].
Image normalize_min_max(const Image& image);

/// Single-channel mean of the colour channels.
Image to_grayscale(const Image& image);
/// Repeats a single-channel image over three channels.
Image replicate_channels(const Image& gray);

}  // namespace dualvae
