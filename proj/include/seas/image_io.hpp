#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "seas/tensor.hpp"

namespace seas {

/// (3, H, W) in [0, 1] -> 8-bit RGB PNG; values are rounded to the nearest k/255.
void write_png_rgb(const std::filesystem::path& path, const Tensor<float>& image);
/// (H, W) binary -> 8-bit grayscale PNG with values {0, 255}.
void write_png_mask(const std::filesystem::path& path, const Tensor<float>& mask);

/// RGB PNG -> (3, H, W) in [0, 1].
Tensor<float> read_png_rgb(const std::filesystem::path& path);
/// Grayscale PNG -> (H, W) with 1 where the value exceeds 127.
Tensor<float> read_png_mask(const std::filesystem::path& path);
/// Raw 8-bit grayscale pixels, row-major.
std::vector<std::uint8_t> read_png_gray_bytes(const std::filesystem::path& path);

/// Rounds every value to the nearest multiple of 1/255 within [0, 1].
void quantize_to_8bit(Tensor<float>& image);

/// Lowercase hex SHA-256 of a byte string / a file's contents.
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace seas
