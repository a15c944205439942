#pragma once

#include <iosfwd>
#include <vector>

#include "airtrace/raster.hpp"

namespace airtrace {

struct SsimParams {
  int window = 8;      // square sliding patch, stride 1, uniform weights
  double L = 1.0;      // dynamic range of the pixel values
  double k1 = 0.01;
  double k2 = 0.03;

  double c1() const { return (k1 * L) * (k1 * L); }
  double c2() const { return (k2 * L) * (k2 * L); }
};

// Mean local SSIM over all window positions; multi-channel images average
// the per-channel scores. Variances are population form over the window.
double ssim(const FrameImage& a, const FrameImage& b,
            const SsimParams& params = {});

struct FrameScore {
  size_t sequence_index = 0;
  double score = 0.0;  // mean SSIM over the s image pairs
  bool suspicious = false;
  std::vector<double> image_scores;  // per-pair SSIM, kept for explanation
};

FrameScore frame_score(const std::vector<FrameImage>& input_seq,
                       const std::vector<FrameImage>& output_seq, double t1,
                       const SsimParams& params = {});

// Fifth percentile of the validation scores, linear interpolation between
// order statistics (index p*(n-1)).
double calibrate_t1(std::vector<double> validation_scores, double pct = 0.05);

struct WindowVerdict {
  size_t window_end_index = 0;  // index of the last frame in the window
  std::vector<double> scores;   // the w frame scores, oldest first
  int suspicious_count = 0;
  bool anomalous = false;  // suspicious_count > t2, strict
};

std::vector<WindowVerdict> detect(const std::vector<FrameScore>& scores, int w,
                                  int t2);

// Streaming form of detect: feed frames one at a time, verdicts appear once
// w frames have been seen.
class Detector {
 public:
  Detector(int w, int t2);
  // Returns a verdict once at least w scores have been pushed.
  bool push(const FrameScore& score, WindowVerdict* out);

 private:
  int w_;
  int t2_;
  std::vector<FrameScore> buf_;  // last w scores
  size_t seen_ = 0;
};

void write_verdicts_csv(std::ostream& out,
                        const std::vector<WindowVerdict>& verdicts);

}  // namespace airtrace
