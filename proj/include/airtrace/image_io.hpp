#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "airtrace/raster.hpp"

namespace airtrace {

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pix;  // row-major RGB triples

  RgbImage() = default;
  RgbImage(int w, int h)
      : width(w), height(h), pix(static_cast<size_t>(w) * h * 3, 0) {}

  uint8_t* at(int row, int col) {
    return pix.data() + (static_cast<size_t>(row) * width + col) * 3;
  }
  const uint8_t* at(int row, int col) const {
    return pix.data() + (static_cast<size_t>(row) * width + col) * 3;
  }
};

// round(v * 255), clamped to [0, 255]
uint8_t to_byte(float v);

// Binary 8-bit PGM (P5) of one channel.
void write_pgm_file(const std::string& path, const FrameImage& img,
                    int channel = 0);

// 8-bit PNGs (zlib-compressed, filter 0 scanlines).
void write_png_gray_file(const std::string& path, const FrameImage& img,
                         int channel = 0);
void write_png_rgb_file(const std::string& path, const RgbImage& img);

}  // namespace airtrace
