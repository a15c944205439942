#include <cmath>

#include "airtrace/detector.hpp"
#include "airtrace/errors.hpp"

namespace airtrace {

namespace {

// Integral image over one channel plane: I[r][c] = sum of pix[0..r)[0..c).
void integral(const float* plane, int w, int h, std::vector<double>& out,
              bool squared, const float* other) {
  out.assign(static_cast<size_t>(w + 1) * (h + 1), 0.0);
  for (int r = 0; r < h; r++) {
    double row_sum = 0.0;
    for (int c = 0; c < w; c++) {
      double v = plane[r * w + c];
      if (squared) v *= v;
      if (other) v = static_cast<double>(plane[r * w + c]) * other[r * w + c];
      row_sum += v;
      out[(r + 1) * (w + 1) + (c + 1)] = out[r * (w + 1) + (c + 1)] + row_sum;
    }
  }
}

double box(const std::vector<double>& I, int w, int r, int c, int win) {
  const int W = w + 1;
  return I[(r + win) * W + (c + win)] - I[r * W + (c + win)] -
         I[(r + win) * W + c] + I[r * W + c];
}

}  // namespace

double ssim(const FrameImage& a, const FrameImage& b, const SsimParams& params) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels) {
    throw ContractError("ssim: image dimensions differ");
  }
  const int win = params.window;
  if (win < 1 || win > a.width || win > a.height) {
    throw ContractError("ssim: window does not fit the image");
  }
  const double c1 = params.c1();
  const double c2 = params.c2();
  const double n = static_cast<double>(win) * win;

  double channel_sum = 0.0;
  std::vector<double> Ia, Ib, Iaa, Ibb, Iab;
  for (int ch = 0; ch < a.channels; ch++) {
    const float* pa = a.pix.data() + ch * a.plane_size();
    const float* pb = b.pix.data() + ch * b.plane_size();
    integral(pa, a.width, a.height, Ia, false, nullptr);
    integral(pb, a.width, a.height, Ib, false, nullptr);
    integral(pa, a.width, a.height, Iaa, true, nullptr);
    integral(pb, a.width, a.height, Ibb, true, nullptr);
    integral(pa, a.width, a.height, Iab, false, pb);

    double acc = 0.0;
    const int rows = a.height - win + 1;
    const int cols = a.width - win + 1;
    for (int r = 0; r < rows; r++) {
      for (int c = 0; c < cols; c++) {
        double mu_a = box(Ia, a.width, r, c, win) / n;
        double mu_b = box(Ib, a.width, r, c, win) / n;
        double var_a = box(Iaa, a.width, r, c, win) / n - mu_a * mu_a;
        double var_b = box(Ibb, a.width, r, c, win) / n - mu_b * mu_b;
        double cov = box(Iab, a.width, r, c, win) / n - mu_a * mu_b;
        double num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
        double den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
        acc += num / den;
      }
    }
    channel_sum += acc / (static_cast<double>(rows) * cols);
  }
  return channel_sum / a.channels;
}

}  // namespace airtrace
