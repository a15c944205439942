#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "airtrace/adsb.hpp"
#include "airtrace/ingest.hpp"
#include "airtrace/projection.hpp"

namespace airtrace {

// One aircraft's footprint in a slice: an arrow from its first to its last
// observed position, pointing along its final heading.
struct ArrowGlyph {
  double start_col = 0.0, start_row = 0.0;  // fractional pixels, m_1
  double end_col = 0.0, end_row = 0.0;      // fractional pixels, m_k
  double heading_deg = 0.0;                 // m_k heading
  double size = 0.0;        // glyph scale in (0,1], from altitude
  double intensity = 1.0;   // [0,1], from anomaly scores when present
};

struct FrameImage {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<float> pix;  // channel-major, then row-major; values in [0,1]

  FrameImage() = default;
  FrameImage(int w, int h, int c)
      : width(w), height(h), channels(c),
        pix(static_cast<size_t>(w) * h * c, 0.0f) {}

  float& at(int c, int row, int col) {
    return pix[(static_cast<size_t>(c) * height + row) * width + col];
  }
  float at(int c, int row, int col) const {
    return pix[(static_cast<size_t>(c) * height + row) * width + col];
  }
  size_t plane_size() const { return static_cast<size_t>(width) * height; }
  bool operator==(const FrameImage& o) const {
    return width == o.width && height == o.height && channels == o.channels &&
           pix == o.pix;
  }
};

// s consecutive images forming one model input.
struct FrameSequence {
  std::vector<FrameImage> images;
  std::vector<int64_t> start_ms;
};

struct RasterOptions {
  int channels = 1;            // 1 or 2 (base + anomaly intensity)
  double stroke_halfwidth = 1.0;  // px at size=1
  double head_len = 3.0;          // px at size=1
  double barb_angle_deg = 150.0;  // barb direction relative to heading
  double min_size = 0.1;
};

// Inclusive pixel rectangle; empty when x1 < x0 (the default).
struct PixelBox {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;

  bool empty() const { return x1 < x0 || y1 < y0; }
  bool contains(int col, int row) const {
    return col >= x0 && col <= x1 && row >= y0 && row <= y1;
  }
  void merge(const PixelBox& o) {
    if (o.empty()) return;
    if (empty()) { *this = o; return; }
    x0 = std::min(x0, o.x0);
    y0 = std::min(y0, o.y0);
    x1 = std::max(x1, o.x1);
    y1 = std::max(y1, o.y1);
  }
  bool operator==(const PixelBox&) const = default;
};

double altitude_size(double alt_ft);

// Every pixel the glyph's coverage can touch, clipped to the image bounds;
// empty when the glyph lies fully outside.
PixelBox glyph_pixel_box(const ArrowGlyph& g, int width_px, int height_px,
                         const RasterOptions& opt = {});

ArrowGlyph build_glyph(const std::vector<AdsbMessage>& track,
                       const LccProjection& proj, const Viewport& vp,
                       const RasterOptions& opt = {});

FrameImage render_frame(const TimeSlice& slice, const LccProjection& proj,
                        const Viewport& vp, const RasterOptions& opt = {});

void draw_glyph(FrameImage& img, const ArrowGlyph& g, const RasterOptions& opt);

std::vector<FrameSequence> render_stream(const std::vector<TimeSlice>& slices,
                                         int s, const LccProjection& proj,
                                         const Viewport& vp,
                                         const RasterOptions& opt = {});

}  // namespace airtrace
