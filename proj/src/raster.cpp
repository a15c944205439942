#include "airtrace/raster.hpp"

#include <algorithm>
#include <cmath>

#include "airtrace/errors.hpp"

namespace airtrace {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

struct Seg {
  double x0, y0, x1, y1;
};

double point_seg_dist(double px, double py, const Seg& s) {
  double vx = s.x1 - s.x0, vy = s.y1 - s.y0;
  double wx = px - s.x0, wy = py - s.y0;
  double vv = vx * vx + vy * vy;
  double t = vv > 0.0 ? std::clamp((wx * vx + wy * vy) / vv, 0.0, 1.0) : 0.0;
  double dx = wx - t * vx, dy = wy - t * vy;
  return std::sqrt(dx * dx + dy * dy);
}

// The glyph's three capsule spines: body, then the two head barbs pointing
// back at +-barb_angle from the heading. Headings are compass bearings:
// 0 = north (up the image), 90 = east, so the pixel-space direction is
// (sin h, -cos h) with rows growing downward.
double glyph_segments(const ArrowGlyph& g, const RasterOptions& opt,
                      Seg segs[3]) {
  double hw = opt.stroke_halfwidth * g.size;
  double hl = opt.head_len * g.size;
  double hr = g.heading_deg * kPi / 180.0;
  double dir_c = std::sin(hr), dir_r = -std::cos(hr);

  segs[0] = {g.start_col, g.start_row, g.end_col, g.end_row};
  double ba = opt.barb_angle_deg * kPi / 180.0;
  for (int i = 0; i < 2; i++) {
    double a = i == 0 ? ba : -ba;
    double bc = dir_c * std::cos(a) - dir_r * std::sin(a);
    double br = dir_c * std::sin(a) + dir_r * std::cos(a);
    segs[1 + i] = {g.end_col, g.end_row, g.end_col + bc * hl, g.end_row + br * hl};
  }
  return hw;
}

void segs_extent(const Seg segs[3], double* min_c, double* max_c,
                 double* min_r, double* max_r) {
  *min_c = *max_c = segs[0].x0;
  *min_r = *max_r = segs[0].y0;
  for (int i = 0; i < 3; i++) {
    *min_c = std::min({*min_c, segs[i].x0, segs[i].x1});
    *max_c = std::max({*max_c, segs[i].x0, segs[i].x1});
    *min_r = std::min({*min_r, segs[i].y0, segs[i].y1});
    *max_r = std::max({*max_r, segs[i].y0, segs[i].y1});
  }
}

}  // namespace

double altitude_size(double alt_ft) {
  double s = std::log1p(std::max(alt_ft, 0.0)) / std::log1p(kMaxAltitudeFt);
  return std::clamp(s, 0.1, 1.0);
}

ArrowGlyph build_glyph(const std::vector<AdsbMessage>& track,
                       const LccProjection& proj, const Viewport& vp,
                       const RasterOptions& opt) {
  if (track.empty()) throw ContractError("build_glyph: empty track");
  const AdsbMessage& first = track.front();
  const AdsbMessage& last = track.back();

  ArrowGlyph g;
  double x, y;
  proj.project(first.lat, first.lon, &x, &y);
  vp.to_pixel(x, y, &g.start_col, &g.start_row);
  proj.project(last.lat, last.lon, &x, &y);
  vp.to_pixel(x, y, &g.end_col, &g.end_row);
  g.heading_deg = last.heading_deg;
  g.size = std::clamp(altitude_size(last.alt_ft), opt.min_size, 1.0);

  double best = -1.0;
  for (const AdsbMessage& m : track) {
    if (m.anomaly_score) best = std::max(best, static_cast<double>(*m.anomaly_score));
  }
  g.intensity = best >= 0.0 ? std::clamp(best, 0.0, 1.0) : 1.0;
  return g;
}

PixelBox glyph_pixel_box(const ArrowGlyph& g, int width_px, int height_px,
                         const RasterOptions& opt) {
  Seg segs[3];
  double hw = glyph_segments(g, opt, segs);
  double min_c, max_c, min_r, max_r;
  segs_extent(segs, &min_c, &max_c, &min_r, &max_r);

  // Coverage is positive only where a pixel center lies within hw + 0.5 of a
  // spine; pixel centers sit at integer + 0.5.
  double rs = hw + 0.5;
  PixelBox b;
  b.x0 = std::max(0, static_cast<int>(std::floor(min_c - rs - 0.5)));
  b.x1 = std::min(width_px - 1, static_cast<int>(std::ceil(max_c + rs - 0.5)));
  b.y0 = std::max(0, static_cast<int>(std::floor(min_r - rs - 0.5)));
  b.y1 = std::min(height_px - 1, static_cast<int>(std::ceil(max_r + rs - 0.5)));
  if (b.x0 > b.x1 || b.y0 > b.y1) return PixelBox{};
  return b;
}

void draw_glyph(FrameImage& img, const ArrowGlyph& g, const RasterOptions& opt) {
  Seg segs[3];
  double hw = glyph_segments(g, opt, segs);

  double margin = hw + 1.0;
  double min_c, max_c, min_r, max_r;
  segs_extent(segs, &min_c, &max_c, &min_r, &max_r);
  int c0 = std::max(0, static_cast<int>(std::floor(min_c - margin)));
  int c1 = std::min(img.width - 1, static_cast<int>(std::ceil(max_c + margin)));
  int r0 = std::max(0, static_cast<int>(std::floor(min_r - margin)));
  int r1 = std::min(img.height - 1, static_cast<int>(std::ceil(max_r + margin)));
  if (c0 > c1 || r0 > r1) return;  // fully outside

  for (int r = r0; r <= r1; r++) {
    for (int c = c0; c <= c1; c++) {
      double pc = c + 0.5, pr = r + 0.5;
      double d = point_seg_dist(pc, pr, segs[0]);
      d = std::min(d, point_seg_dist(pc, pr, segs[1]));
      d = std::min(d, point_seg_dist(pc, pr, segs[2]));
      double cov = std::clamp(hw + 0.5 - d, 0.0, 1.0);
      if (cov <= 0.0) continue;
      float& base = img.at(0, r, c);
      base = std::max(base, static_cast<float>(cov));
      if (img.channels > 1) {
        float& a = img.at(1, r, c);
        a = std::max(a, static_cast<float>(cov * g.intensity));
      }
    }
  }
}

FrameImage render_frame(const TimeSlice& slice, const LccProjection& proj,
                        const Viewport& vp, const RasterOptions& opt) {
  if (opt.channels != 1 && opt.channels != 2) {
    throw ConfigError("render: channels must be 1 or 2");
  }
  FrameImage img(vp.width_px, vp.height_px, opt.channels);
  for (const auto& [callsign, track] : slice.per_aircraft) {
    if (track.empty()) continue;
    ArrowGlyph g = build_glyph(track, proj, vp, opt);
    draw_glyph(img, g, opt);
  }
  return img;
}

std::vector<FrameSequence> render_stream(const std::vector<TimeSlice>& slices,
                                         int s, const LccProjection& proj,
                                         const Viewport& vp,
                                         const RasterOptions& opt) {
  if (s < 1) throw ContractError("render_stream: s must be >= 1");
  std::vector<FrameSequence> out;
  size_t n_full = slices.size() / static_cast<size_t>(s);
  out.reserve(n_full);
  for (size_t g = 0; g < n_full; g++) {
    FrameSequence seq;
    seq.images.reserve(s);
    seq.start_ms.reserve(s);
    for (int i = 0; i < s; i++) {
      const TimeSlice& sl = slices[g * s + i];
      seq.images.push_back(render_frame(sl, proj, vp, opt));
      seq.start_ms.push_back(sl.start_ms);
    }
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace airtrace
