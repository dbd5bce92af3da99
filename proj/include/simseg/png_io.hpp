#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace simseg {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB triplets
};

// 8-bit PNG files. Failures throw DataError naming the path.
void write_png(const std::filesystem::path& path, const GrayImage& img);
void write_png(const std::filesystem::path& path, const RgbImage& img);
GrayImage read_png_gray(const std::filesystem::path& path);

}  // namespace simseg
