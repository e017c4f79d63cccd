#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "vtonlab/tensor.hpp"

// Images are (C, H, W) tensors with values in [0, 1]; C is 3 (RGB) or 1.
namespace vtonlab {

enum class PngChannels { rgb, gray };

Tensor read_png(const std::filesystem::path& path, PngChannels channels = PngChannels::rgb);

// Quantises to 8 bits (round-to-nearest after clamping) and writes atomically
// through a temporary file in the same directory.
void write_png(const std::filesystem::path& path, const Tensor& image);

// Raw 8-bit samples of a PNG, (C, H, W) order; used for binarity checks.
struct RawImage {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> samples;
};
RawImage read_png_raw(const std::filesystem::path& path);

std::vector<std::uint8_t> quantize_8bit(const Tensor& image);

// Horizontal stack of equally tall images, used for comparison grids.
Tensor hstack_images(std::span<const Tensor> images);
Tensor vstack_images(std::span<const Tensor> images);
Tensor gray_to_rgb(const Tensor& image);

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace vtonlab
