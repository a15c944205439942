#include "airtrace/image_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <cstring>

#include "airtrace/errors.hpp"

namespace airtrace {

uint8_t to_byte(float v) {
  long q = std::lround(static_cast<double>(v) * 255.0);
  if (q < 0) q = 0;
  if (q > 255) q = 255;
  return static_cast<uint8_t>(q);
}

namespace {

void write_file(const std::string& path, const std::string& bytes) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("image_io: cannot open " + path + " for writing");
  size_t n = std::fwrite(bytes.data(), 1, bytes.size(), f);
  int rc = std::fclose(f);
  if (n != bytes.size() || rc != 0)
    throw IoError("image_io: short write to " + path);
}

void check_channel(const FrameImage& img, int channel) {
  if (img.width <= 0 || img.height <= 0)
    throw ContractError("image_io: empty image");
  if (channel < 0 || channel >= img.channels)
    throw ContractError("image_io: channel out of range");
}

void put_u32be(std::string& s, uint32_t v) {
  s.push_back(static_cast<char>((v >> 24) & 0xff));
  s.push_back(static_cast<char>((v >> 16) & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
  s.push_back(static_cast<char>(v & 0xff));
}

void put_chunk(std::string& out, const char type[4], const std::string& data) {
  put_u32be(out, static_cast<uint32_t>(data.size()));
  size_t start = out.size();
  out.append(type, 4);
  out += data;
  uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(out.data() + start),
                    static_cast<uInt>(out.size() - start));
  put_u32be(out, static_cast<uint32_t>(crc));
}

// Scanlines with a leading 0 (no-op) filter byte per row, zlib-compressed.
std::string deflate_scanlines(const std::string& raw) {
  uLongf cap = compressBound(static_cast<uLong>(raw.size()));
  std::string out(cap, '\0');
  int rc = compress2(reinterpret_cast<Bytef*>(out.data()), &cap,
                     reinterpret_cast<const Bytef*>(raw.data()),
                     static_cast<uLong>(raw.size()), Z_BEST_COMPRESSION);
  if (rc != Z_OK) throw IoError("image_io: deflate failed");
  out.resize(cap);
  return out;
}

// color_type 0 = grayscale, 2 = RGB; 8 bits per sample.
std::string png_bytes(int width, int height, int color_type,
                      const std::string& scanlines) {
  static const char sig[8] = {'\x89', 'P', 'N', 'G', '\r', '\n', '\x1a', '\n'};
  std::string out(sig, 8);

  std::string ihdr;
  put_u32be(ihdr, static_cast<uint32_t>(width));
  put_u32be(ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);                            // bit depth
  ihdr.push_back(static_cast<char>(color_type));
  ihdr.push_back(0);                            // compression
  ihdr.push_back(0);                            // filter method
  ihdr.push_back(0);                            // no interlace
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", deflate_scanlines(scanlines));
  put_chunk(out, "IEND", "");
  return out;
}

}  // namespace

void write_pgm_file(const std::string& path, const FrameImage& img,
                    int channel) {
  check_channel(img, channel);
  std::string out = "P5\n" + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + static_cast<size_t>(img.width) * img.height);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      out.push_back(static_cast<char>(to_byte(img.at(channel, r, c))));
  write_file(path, out);
}

void write_png_gray_file(const std::string& path, const FrameImage& img,
                         int channel) {
  check_channel(img, channel);
  std::string raw;
  raw.reserve(static_cast<size_t>(img.height) * (1 + img.width));
  for (int r = 0; r < img.height; ++r) {
    raw.push_back('\0');
    for (int c = 0; c < img.width; ++c)
      raw.push_back(static_cast<char>(to_byte(img.at(channel, r, c))));
  }
  write_file(path, png_bytes(img.width, img.height, 0, raw));
}

void write_png_rgb_file(const std::string& path, const RgbImage& img) {
  if (img.width <= 0 || img.height <= 0)
    throw ContractError("image_io: empty image");
  std::string raw;
  raw.reserve(static_cast<size_t>(img.height) * (1 + 3 * img.width));
  for (int r = 0; r < img.height; ++r) {
    raw.push_back('\0');
    const uint8_t* row = img.at(r, 0);
    raw.append(reinterpret_cast<const char*>(row),
               static_cast<size_t>(img.width) * 3);
  }
  write_file(path, png_bytes(img.width, img.height, 2, raw));
}

}  // namespace airtrace
