#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace vhgnn {

/// Decoded image: row-major, RGB interleaved, values in [0,1] right after
/// decoding (normalize_signed maps them to [-1,1]).
struct Micrograph {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> data; // height * width * 3

    float at(std::size_t y, std::size_t x, std::size_t c) const {
        return data[(y * width + x) * 3 + c];
    }
    float& at(std::size_t y, std::size_t x, std::size_t c) {
        return data[(y * width + x) * 3 + c];
    }
};

Micrograph make_micrograph(std::size_t height, std::size_t width, float fill = 0.f);

/// Sniffs the container from magic bytes (PNG, JPEG, BMP) and decodes.
/// Grayscale sources are replicated across the three channels.
Micrograph decode_image(const std::string& path);
Micrograph decode_image(std::span<const std::uint8_t> bytes, const std::string& origin);

void write_png(const std::string& path, const Micrograph& img);
void write_bmp(const std::string& path, const Micrograph& img); // 24-bit uncompressed
void write_jpeg(const std::string& path, const Micrograph& img, int quality = 95);

/// In place: v -> (v - 0.5) / 0.5, taking [0,1] to [-1,1].
void normalize_signed(Micrograph& img);

/// Bilinear resampling with half-pixel centers; border samples clamp.
Micrograph resize_bilinear(const Micrograph& img, std::size_t out_h, std::size_t out_w);

/// Non-overlapping square patches in raster order. Each patch flattens to
/// patch*patch*3 features, pixels raster within the patch, channels
/// interleaved per pixel.
struct PatchGrid {
    std::size_t rows = 0;  // patches per column
    std::size_t cols = 0;  // patches per row
    std::size_t patch = 0; // side length in pixels
    std::vector<float> features; // num_patches() x feature_dim(), row-major

    std::size_t num_patches() const { return rows * cols; }
    std::size_t feature_dim() const { return patch * patch * 3; }
};

PatchGrid patchify(const Micrograph& img, std::size_t patch);
Micrograph unpatchify(const PatchGrid& grid);

} // namespace vhgnn
