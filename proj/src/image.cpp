// SPDX-License-Identifier: Apache-2.0
#include "dualvae/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>

#include "dualvae/errors.hpp"

namespace dualvae::inline DUALVAE_ABI {

Image Image::blank(int channels, int height, int width, real fill) {
    DUALVAE_REQUIRE(channels > 0 && height > 0 && width > 0, "image extents must be positive");
    Image img;
    img.channels = channels;
    img.height = height;
    img.width = width;
    img.data.assign(static_cast<std::size_t>(channels) * height * width, fill);
    return img;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t to_byte(real v) {
    const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

}  // namespace

Image read_png(const std::filesystem::path& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw IoError("cannot open " + path.string());
    png_byte header[8];
    if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
        throw IoError("not a PNG file: " + path.string());
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng read struct allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng info struct allocation failed");
    }
    std::vector<png_byte> pixels;
    std::vector<png_bytep> rows;
    png_uint_32 width = 0, height = 0;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("corrupt PNG: " + path.string());
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const int colour_type = png_get_color_type(png, info);
    const int bit_depth = png_get_bit_depth(png, info);
    if (bit_depth == 16) png_set_strip_16(png);
    if (colour_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (colour_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (colour_type == PNG_COLOR_TYPE_GRAY || colour_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (colour_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    width = png_get_image_width(png, info);
    height = png_get_image_height(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    if (stride != static_cast<std::size_t>(width) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("unsupported PNG layout: " + path.string());
    }
    pixels.resize(stride * height);
    rows.resize(height);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Image img = Image::blank(3, static_cast<int>(height), static_cast<int>(width));
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                img.at(c, y, x) = static_cast<real>(pixels[static_cast<std::size_t>(y) * stride + x * 3 + c] / 255.0);
            }
        }
    }
    return img;
}

void write_png(const std::filesystem::path& path, const Image& image) {
    DUALVAE_REQUIRE(image.channels == 1 || image.channels == 3, "PNG output needs 1 or 3 channels");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw IoError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng write struct allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng info struct allocation failed");
    }
    const std::size_t stride = static_cast<std::size_t>(image.width) * image.channels;
    std::vector<png_byte> pixels(stride * image.height);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < image.channels; ++c) {
                pixels[static_cast<std::size_t>(y) * stride + x * image.channels + c] = to_byte(image.at(c, y, x));
            }
        }
    }
    std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
    for (int y = 0; y < image.height; ++y) rows[static_cast<std::size_t>(y)] = pixels.data() + y * stride;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG encoding failed: " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image resize_bilinear(const Image& image, int height, int width) {
    DUALVAE_REQUIRE(height > 0 && width > 0, "resize target must be positive");
    if (image.height == height && image.width == width) return image;
    Image out = Image::blank(image.channels, height, width);
    const double sy = static_cast<double>(image.height) / height;
    const double sx = static_cast<double>(image.width) / width;
    for (int y = 0; y < height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, image.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, image.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < image.channels; ++c) {
                const double top = (1 - wx) * image.at(c, y0, x0) + wx * image.at(c, y0, x1);
                const double bottom = (1 - wx) * image.at(c, y1, x0) + wx * image.at(c, y1, x1);
                out.at(c, y, x) = static_cast<real>((1 - wy) * top + wy * bottom);
            }
        }
    }
    return out;
}

Image quantize_8bit(const Image& image) {
    Image out = image;
    for (auto& v : out.data) v = static_cast<real>(to_byte(v) / 255.0);
    return out;
}

Tensor stack_images(const std::vector<Image>& images) {
    DUALVAE_REQUIRE(!images.empty(), "cannot stack an empty image list");
    const Image& first = images.front();
    Tensor out = Tensor::zeros({static_cast<int>(images.size()), first.channels, first.height, first.width});
    auto dst = out.data();
    std::size_t offset = 0;
    for (const auto& img : images) {
        DUALVAE_REQUIRE(img.channels == first.channels && img.height == first.height && img.width == first.width,
                        "stacked images must share one shape");
        std::copy(img.data.begin(), img.data.end(), dst.begin() + static_cast<std::ptrdiff_t>(offset));
        offset += img.data.size();
    }
    return out;
}

std::vector<Image> unstack_images(const Tensor& batch) {
    DUALVAE_REQUIRE(batch.rank() == 4, "unstack expects [N,C,H,W]");
    std::vector<Image> out;
    const auto src = batch.data();
    const std::size_t per = static_cast<std::size_t>(batch.dim(1)) * batch.dim(2) * batch.dim(3);
    for (int n = 0; n < batch.dim(0); ++n) {
        Image img;
        img.channels = batch.dim(1);
        img.height = batch.dim(2);
        img.width = batch.dim(3);
        img.data.assign(src.begin() + static_cast<std::ptrdiff_t>(n * per),
                        src.begin() + static_cast<std::ptrdiff_t>((n + 1) * per));
        out.push_back(std::move(img));
    }
    return out;
}

Image tile_images(const std::vector<Image>& images, int columns, int pad) {
    DUALVAE_REQUIRE(!images.empty() && columns > 0 && pad >= 0, "tile needs images and a positive column count");
    const Image& first = images.front();
    const int n = static_cast<int>(images.size());
    const int rows = (n + columns - 1) / columns;
    const int cols = std::min(columns, n);
    Image out = Image::blank(first.channels, rows * first.height + (rows + 1) * pad,
                             cols * first.width + (cols + 1) * pad);
    for (int i = 0; i < n; ++i) {
        const Image& img = images[static_cast<std::size_t>(i)];
        DUALVAE_REQUIRE(img.channels == first.channels && img.height == first.height && img.width == first.width,
                        "tiled images must share one shape");
        const int oy = pad + (i / columns) * (first.height + pad);
        const int ox = pad + (i % columns) * (first.width + pad);
        for (int c = 0; c < img.channels; ++c) {
            for (int y = 0; y < img.height; ++y) {
                for (int x = 0; x < img.width; ++x) out.at(c, oy + y, ox + x) = img.at(c, y, x);
            }
        }
    }
    return out;
}

Image normalize_min_max(const Image& image) {
    Image out = image;
    if (out.data.empty()) return out;
    const auto [lo, hi] = std::minmax_element(out.data.begin(), out.data.end());
    const real a = *lo, range = *hi - *lo;
    for (auto& v : out.data) v = range > 0 ? (v - a) / range : real(0);
    return out;
}

Image to_grayscale(const Image& image) {
    Image out = Image::blank(1, image.height, image.width);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            double s = 0.0;
            for (int c = 0; c < image.channels; ++c) s += image.at(c, y, x);
            out.at(0, y, x) = static_cast<real>(s / image.channels);
        }
    }
    return out;
}

Image replicate_channels(const Image& gray) {
    DUALVAE_REQUIRE(gray.channels == 1, "channel replication expects a single-channel image");
    Image out = Image::blank(3, gray.height, gray.width);
    for (int c = 0; c < 3; ++c) std::copy(gray.data.begin(), gray.data.end(), out.data.begin() + c * gray.data.size());
    return out;
}

}  // namespace dualvae
