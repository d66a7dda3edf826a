#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fpba/tensor.hpp"

namespace fpba {

/// 8-bit image, interleaved HWC.
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;
};

/// Rounds [0,1] values to 8 bits (clamping out-of-range values).
Image8 to_image8(const Tensor& batch, std::size_t index);
/// Converts to a single-image CHW tensor with values k/255.
Tensor from_image8(const Image8& img);

void write_png(const std::filesystem::path& path, const Image8& img);
Image8 read_png(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_jpeg(const Image8& img, int quality);
Image8 decode_jpeg(std::span<const std::uint8_t> bytes);

/// Decodes PNG or JPEG by signature. Throws FormatError when neither.
Image8 read_image(const std::filesystem::path& path);

/// Writes a [0,1] scalar field as an RGB heatmap (blue -> red).
void write_heatmap_png(const std::filesystem::path& path, std::span<const double> values, std::size_t height,
                       std::size_t width);

}  // namespace fpba
