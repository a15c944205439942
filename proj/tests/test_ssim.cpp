#include <doctest.h>

#include <cmath>

#include "airtrace/detector.hpp"
#include "airtrace/errors.hpp"
#include "airtrace/rng.hpp"

using namespace airtrace;

namespace {

// Independent direct-formula SSIM: per window, explicit two-pass mean /
// variance / covariance loops, no integral images.
double ssim_naive(const FrameImage& a, const FrameImage& b,
                  const SsimParams& p) {
  double c1 = p.c1(), c2 = p.c2();
  double total = 0.0;
  for (int ch = 0; ch < a.channels; ch++) {
    double acc = 0.0;
    int count = 0;
    for (int r = 0; r + p.window <= a.height; r++) {
      for (int c = 0; c + p.window <= a.width; c++) {
        double ma = 0, mb = 0;
        for (int i = 0; i < p.window; i++) {
          for (int j = 0; j < p.window; j++) {
            ma += a.at(ch, r + i, c + j);
            mb += b.at(ch, r + i, c + j);
          }
        }
        int n = p.window * p.window;
        ma /= n;
        mb /= n;
        double va = 0, vb = 0, cov = 0;
        for (int i = 0; i < p.window; i++) {
          for (int j = 0; j < p.window; j++) {
            double da = a.at(ch, r + i, c + j) - ma;
            double db = b.at(ch, r + i, c + j) - mb;
            va += da * da;
            vb += db * db;
            cov += da * db;
          }
        }
        va /= n;
        vb /= n;
        cov /= n;
        acc += ((2 * ma * mb + c1) * (2 * cov + c2)) /
               ((ma * ma + mb * mb + c1) * (va + vb + c2));
        count++;
      }
    }
    total += acc / count;
  }
  return total / a.channels;
}

FrameImage random_img(Rng& rng, int w, int h, int ch = 1) {
  FrameImage img(w, h, ch);
  for (float& v : img.pix) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST_SUITE_BEGIN("ssim");

TEST_CASE("identical images score 1") {
  Rng rng(5);
  for (int k = 0; k < 5; k++) {
    auto img = random_img(rng, 64, 64);
    CHECK(std::abs(ssim(img, img) - 1.0) < 1e-9);
  }
}

TEST_CASE("all-zero vs all-one hits the constant-image closed form") {
  FrameImage zero(64, 64, 1);
  FrameImage one(64, 64, 1);
  for (float& v : one.pix) v = 1.0f;
  // mu_a=0, mu_b=1, variances 0: score = c1/(1+c1) with c1 = 1e-4.
  double expect = 1e-4 / (1.0 + 1e-4);
  CHECK(ssim(zero, one) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("agrees with the naive double-precision oracle") {
  Rng rng(31337);
  SsimParams p;
  for (int k = 0; k < 20; k++) {
    auto a = random_img(rng, 32, 32);
    auto b = random_img(rng, 32, 32);
    double fast = ssim(a, b, p);
    double slow = ssim_naive(a, b, p);
    REQUIRE(std::abs(fast - slow) < 1e-6);
  }
  // Also structured (non-random) content: disjoint squares.
  FrameImage a(32, 32, 1), b(32, 32, 1);
  for (int r = 4; r < 12; r++)
    for (int c = 4; c < 12; c++) a.at(0, r, c) = 1.0f;
  for (int r = 18; r < 27; r++)
    for (int c = 16; c < 25; c++) b.at(0, r, c) = 0.8f;
  CHECK(std::abs(ssim(a, b, p) - ssim_naive(a, b, p)) < 1e-6);
}

TEST_CASE("symmetric in its arguments") {
  Rng rng(99);
  for (int k = 0; k < 5; k++) {
    auto a = random_img(rng, 40, 40);
    auto b = random_img(rng, 40, 40);
    CHECK(std::abs(ssim(a, b) - ssim(b, a)) < 1e-9);
  }
}

TEST_CASE("multi-channel averages per-channel scores") {
  Rng rng(7);
  auto a2 = random_img(rng, 32, 32, 2);
  auto b2 = random_img(rng, 32, 32, 2);
  FrameImage a0(32, 32, 1), a1(32, 32, 1), b0(32, 32, 1), b1(32, 32, 1);
  for (int r = 0; r < 32; r++) {
    for (int c = 0; c < 32; c++) {
      a0.at(0, r, c) = a2.at(0, r, c);
      a1.at(0, r, c) = a2.at(1, r, c);
      b0.at(0, r, c) = b2.at(0, r, c);
      b1.at(0, r, c) = b2.at(1, r, c);
    }
  }
  double expect = 0.5 * (ssim(a0, b0) + ssim(a1, b1));
  CHECK(ssim(a2, b2) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("less similar content scores lower") {
  FrameImage base(64, 64, 1), close(64, 64, 1), far(64, 64, 1);
  for (int r = 20; r < 28; r++)
    for (int c = 20; c < 28; c++) base.at(0, r, c) = 1.0f;
  for (int r = 21; r < 29; r++)
    for (int c = 20; c < 28; c++) close.at(0, r, c) = 1.0f;  // shifted 1 px
  for (int r = 40; r < 48; r++)
    for (int c = 48; c < 56; c++) far.at(0, r, c) = 1.0f;  // elsewhere
  CHECK(ssim(base, close) > ssim(base, far));
  CHECK(ssim(base, base) > ssim(base, close));
}

TEST_CASE("dimension mismatch throws") {
  FrameImage a(32, 32, 1), b(16, 32, 1), c(32, 32, 2);
  CHECK_THROWS_AS(ssim(a, b), ContractError);
  CHECK_THROWS_AS(ssim(a, c), ContractError);
  SsimParams p;
  p.window = 40;
  CHECK_THROWS_AS(ssim(a, a, p), ContractError);
}

TEST_SUITE_END();
