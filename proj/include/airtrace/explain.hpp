#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "airtrace/detector.hpp"
#include "airtrace/image_io.hpp"
#include "airtrace/raster.hpp"

namespace airtrace {

// Per-tile reconstruction scores for one input/output image pair, on an
// n x n grid (row-major).
struct TileHeatmap {
  int n = 0;
  size_t image_index = 0;  // flat index of the scored image within its window
  std::vector<double> scores;
  int worst_row = 0;
  int worst_col = 0;

  double at(int row, int col) const { return scores[size_t(row) * n + col]; }
  bool operator==(const TileHeatmap&) const = default;
};

// Worst-reconstructed image of an anomalous window.
struct WorstPick {
  size_t frame = 0;  // frame offset within the window
  size_t image = 0;  // image offset within that frame
  size_t flat = 0;   // frame-major flat index across the window's images
  double score = 0.0;
};

// Argmin of the per-image scores across the window's frames; ties resolve to
// the earliest image. The verdict must be anomalous and must cover exactly
// window_frames (ContractError otherwise).
WorstPick worst_image(const WindowVerdict& verdict,
                      const std::vector<FrameScore>& window_frames);

// Scores each tile of the n x n partition with SSIM, window shrunk to
// min(base.window, tile side). Image dimensions must be divisible by n
// (ConfigError otherwise); input and output must have equal shape.
TileHeatmap tile_scores(const FrameImage& in, const FrameImage& out, int n = 4,
                        const SsimParams& base = {});

// Two-ended tile colormap over score in [-1, 1]: the alert end (low score)
// is purple (106, 0, 168), the midpoint gray (128, 128, 128), the calm end
// (high score) yellow (253, 231, 37). Components in [0, 255].
void heatmap_color(double score, double rgb[3]);

// Side-by-side rendering: tinted input on the left, identically tinted
// reconstruction on the right, separated by a 1-px white column.
RgbImage render_heatmap(const FrameImage& in, const FrameImage& out,
                        const TileHeatmap& map);

// "explain_<window>_<image>.png"
std::string explain_filename(size_t window_end_index, size_t image_flat);

}  // namespace airtrace
