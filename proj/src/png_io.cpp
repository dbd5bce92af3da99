#include "simseg/png_io.hpp"

#include <png.h>

#include <cstring>

#include "simseg/errors.hpp"

namespace simseg {
namespace {

void write_image(const std::filesystem::path& path, int width, int height,
                 png_uint_32 format, const std::uint8_t* data,
                 std::size_t expected) {
  if (width <= 0 || height <= 0)
    throw DataError("cannot write empty image to " + path.string());
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (PNG_IMAGE_SIZE(image) != expected)
    throw DataError("pixel buffer size mismatch for " + path.string());
  if (!png_image_write_to_file(&image, path.c_str(), 0, data, 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw DataError("failed to write " + path.string() + ": " + msg);
  }
}

}  // namespace

void write_png(const std::filesystem::path& path, const GrayImage& img) {
  write_image(path, img.width, img.height, PNG_FORMAT_GRAY, img.pixels.data(),
              img.pixels.size());
}

void write_png(const std::filesystem::path& path, const RgbImage& img) {
  write_image(path, img.width, img.height, PNG_FORMAT_RGB, img.pixels.data(),
              img.pixels.size());
}

GrayImage read_png_gray(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw DataError("failed to read " + path.string() + ": " + image.message);
  image.format = PNG_FORMAT_GRAY;
  GrayImage out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw DataError("failed to decode " + path.string() + ": " + msg);
  }
  return out;
}

}  // namespace simseg
