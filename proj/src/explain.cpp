#include "airtrace/explain.hpp"

#include <algorithm>
#include <cmath>

#include "airtrace/errors.hpp"

namespace airtrace {

WorstPick worst_image(const WindowVerdict& verdict,
                      const std::vector<FrameScore>& window_frames) {
  if (!verdict.anomalous)
    throw ContractError("explain: window is not anomalous");
  if (window_frames.size() != verdict.scores.size())
    throw ContractError("explain: frame list does not match the verdict");
  if (window_frames.empty())
    throw ContractError("explain: empty window");

  WorstPick pick;
  bool found = false;
  size_t flat = 0;
  for (size_t f = 0; f < window_frames.size(); ++f) {
    const auto& scores = window_frames[f].image_scores;
    if (scores.empty())
      throw ContractError("explain: frame without per-image scores");
    for (size_t i = 0; i < scores.size(); ++i, ++flat) {
      if (!found || scores[i] < pick.score) {
        pick = {f, i, flat, scores[i]};
        found = true;
      }
    }
  }
  return pick;
}

namespace {

FrameImage crop_tile(const FrameImage& img, int tile_h, int tile_w, int row,
                     int col) {
  FrameImage out(tile_w, tile_h, img.channels);
  for (int ch = 0; ch < img.channels; ++ch)
    for (int r = 0; r < tile_h; ++r)
      for (int c = 0; c < tile_w; ++c)
        out.at(ch, r, c) = img.at(ch, row * tile_h + r, col * tile_w + c);
  return out;
}

}  // namespace

TileHeatmap tile_scores(const FrameImage& in, const FrameImage& out, int n,
                        const SsimParams& base) {
  if (in.width != out.width || in.height != out.height ||
      in.channels != out.channels)
    throw ContractError("explain: image shapes differ");
  if (n <= 0) throw ConfigError("explain: grid order must be positive");
  if (in.width % n != 0 || in.height % n != 0)
    throw ConfigError("explain: image dimensions not divisible by grid order");

  const int tile_w = in.width / n;
  const int tile_h = in.height / n;
  SsimParams params = base;
  params.window = std::min({base.window, tile_w, tile_h});

  TileHeatmap map;
  map.n = n;
  map.scores.resize(size_t(n) * n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      double s = ssim(crop_tile(in, tile_h, tile_w, r, c),
                      crop_tile(out, tile_h, tile_w, r, c), params);
      map.scores[size_t(r) * n + c] = s;
      if (s < map.at(map.worst_row, map.worst_col)) {
        map.worst_row = r;
        map.worst_col = c;
      }
    }
  }
  return map;
}

void heatmap_color(double score, double rgb[3]) {
  static constexpr double kAlert[3] = {106.0, 0.0, 168.0};
  static constexpr double kMid[3] = {128.0, 128.0, 128.0};
  static constexpr double kCalm[3] = {253.0, 231.0, 37.0};

  double t = std::clamp((score + 1.0) / 2.0, 0.0, 1.0);
  const double* a = kAlert;
  const double* b = kMid;
  double u = t * 2.0;
  if (t >= 0.5) {
    a = kMid;
    b = kCalm;
    u = t * 2.0 - 1.0;
  }
  for (int i = 0; i < 3; ++i) rgb[i] = a[i] + (b[i] - a[i]) * u;
}

namespace {

// Tint keeps glyph structure visible: the tile color scaled by pixel value.
void tint_half(RgbImage& dst, int col0, const FrameImage& src,
               const TileHeatmap& map) {
  const int tile_w = src.width / map.n;
  const int tile_h = src.height / map.n;
  for (int r = 0; r < src.height; ++r) {
    for (int c = 0; c < src.width; ++c) {
      double rgb[3];
      heatmap_color(map.at(r / tile_h, c / tile_w), rgb);
      double shade = 0.30 + 0.70 * std::clamp(src.at(0, r, c), 0.0f, 1.0f);
      uint8_t* px = dst.at(r, col0 + c);
      for (int i = 0; i < 3; ++i) {
        long q = std::lround(rgb[i] * shade);
        px[i] = static_cast<uint8_t>(std::clamp(q, 0L, 255L));
      }
    }
  }
}

}  // namespace

RgbImage render_heatmap(const FrameImage& in, const FrameImage& out,
                        const TileHeatmap& map) {
  if (in.width != out.width || in.height != out.height)
    throw ContractError("explain: image shapes differ");
  if (map.n <= 0 || in.width % map.n != 0 || in.height % map.n != 0)
    throw ContractError("explain: heatmap grid does not fit the image");

  RgbImage canvas(in.width * 2 + 1, in.height);
  tint_half(canvas, 0, in, map);
  tint_half(canvas, in.width + 1, out, map);
  for (int r = 0; r < in.height; ++r) {
    uint8_t* px = canvas.at(r, in.width);
    px[0] = px[1] = px[2] = 255;
  }
  return canvas;
}

std::string explain_filename(size_t window_end_index, size_t image_flat) {
  return "explain_" + std::to_string(window_end_index) + "_" +
         std::to_string(image_flat) + ".png";
}

}  // namespace airtrace
