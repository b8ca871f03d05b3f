#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dunet/common.hpp"
#include "dunet/tensor.hpp"

namespace dunet {

// ---------------------------------------------------------------------------
// 8-bit RGB PNG I/O (libpng simplified API)
// ---------------------------------------------------------------------------
//
// Images cross this boundary as (1, 3, H, W) tensors with values in [0, 1];
// writing clamps and quantises to 8 bits, reading maps 0..255 back to [0, 1].
// Grayscale or paletted files are expanded to RGB on read.

template <typename T>
void write_png_rgb(const std::string& path, const Tensor<T>& img) {
  if (img.n() != 1 || img.c() != 3) {
    throw ShapeError("channels", "write_png_rgb: expected a (1,3,H,W) tensor");
  }
  const int h = img.h(), w = img.w();
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h) * w * 3);
  for (int c = 0; c < 3; ++c) {
    const T* plane = img.data() + static_cast<std::size_t>(c) * img.plane();
    for (int i = 0; i < h * w; ++i) {
      const double v = std::min(1.0, std::max(0.0, static_cast<double>(plane[i])));
      rgb[static_cast<std::size_t>(i) * 3 + c] =
          static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(w);
  pi.height = static_cast<png_uint_32>(h);
  pi.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&pi, path.c_str(), 0, rgb.data(), w * 3, nullptr)) {
    throw IoError("png: write failed for " + path + ": " + pi.message);
  }
}

inline Tensor<float> read_png_rgb(const std::string& path) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.c_str())) {
    throw IoError("png: cannot read " + path + ": " + pi.message);
  }
  pi.format = PNG_FORMAT_RGB;
  const int h = static_cast<int>(pi.height), w = static_cast<int>(pi.width);
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h) * w * 3);
  if (!png_image_finish_read(&pi, nullptr, rgb.data(), w * 3, nullptr)) {
    throw IoError("png: cannot read " + path + ": " + pi.message);
  }
  Tensor<float> img(1, 3, h, w);
  for (int c = 0; c < 3; ++c) {
    float* plane = img.data() + static_cast<std::size_t>(c) * img.plane();
    for (int i = 0; i < h * w; ++i) {
      plane[i] = static_cast<float>(rgb[static_cast<std::size_t>(i) * 3 + c]) / 255.0f;
    }
  }
  return img;
}

}  // namespace dunet
