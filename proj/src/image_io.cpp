#include "seas/image_io.hpp"

#include <png.h>
#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>
#include <vector>

namespace seas {

namespace {

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

void write_png(const std::filesystem::path& path, int width, int height, png_uint_32 format,
               const std::vector<std::uint8_t>& pixels) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (!png_image_write_to_file(&image, path.c_str(), 0, pixels.data(), 0, nullptr))
    throw IoError("cannot write " + path.string() + ": " + image.message);
}

std::vector<std::uint8_t> read_png(const std::filesystem::path& path, png_uint_32 format, int& width, int& height) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw IoError("cannot read " + path.string() + ": " + image.message);
  image.format = format;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr))
    throw IoError("cannot decode " + path.string() + ": " + image.message);
  width = static_cast<int>(image.width);
  height = static_cast<int>(image.height);
  return pixels;
}

}  // namespace

void write_png_rgb(const std::filesystem::path& path, const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("RGB image must be (3, H, W), got " + shape_string(image.shape()));
  const int h = image.dim(1), w = image.dim(2);
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(3 * h * w));
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < h * w; ++i) pixels[static_cast<std::size_t>(3 * i + c)] = to_byte(image[c * h * w + i]);
  write_png(path, w, h, PNG_FORMAT_RGB, pixels);
}

void write_png_mask(const std::filesystem::path& path, const Tensor<float>& mask) {
  if (mask.rank() != 2) throw DimensionError("mask must be (H, W), got " + shape_string(mask.shape()));
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(mask.size()));
  for (Eigen::Index i = 0; i < mask.size(); ++i) pixels[static_cast<std::size_t>(i)] = mask[i] > 0.5f ? 255 : 0;
  write_png(path, mask.dim(1), mask.dim(0), PNG_FORMAT_GRAY, pixels);
}

Tensor<float> read_png_rgb(const std::filesystem::path& path) {
  int w = 0, h = 0;
  const auto pixels = read_png(path, PNG_FORMAT_RGB, w, h);
  Tensor<float> image({3, h, w});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < h * w; ++i) image[c * h * w + i] = pixels[static_cast<std::size_t>(3 * i + c)] / 255.0f;
  return image;
}

Tensor<float> read_png_mask(const std::filesystem::path& path) {
  int w = 0, h = 0;
  const auto pixels = read_png(path, PNG_FORMAT_GRAY, w, h);
  Tensor<float> mask({h, w});
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask[i] = pixels[static_cast<std::size_t>(i)] > 127 ? 1.0f : 0.0f;
  return mask;
}

std::vector<std::uint8_t> read_png_gray_bytes(const std::filesystem::path& path) {
  int w = 0, h = 0;
  return read_png(path, PNG_FORMAT_GRAY, w, h);
}

void quantize_to_8bit(Tensor<float>& image) {
  for (Eigen::Index i = 0; i < image.size(); ++i) image[i] = to_byte(image[i]) / 255.0f;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr))
    throw IoError("SHA-256 computation failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return sha256_hex(std::string(std::istreambuf_iterator<char>(in), {}));
}

}  // namespace seas
