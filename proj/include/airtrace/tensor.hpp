#pragma once

#include <cstddef>
#include <cstdlib>
#include <new>
#include <vector>

#include "airtrace/errors.hpp"

namespace airtrace {

// 64-byte aligned allocator for every buffer that SIMD kernels touch. With
// a fixed base alignment the vectorized loop peeling (and so the floating
// point reduction order) is identical from run to run, which the bit-exact
// reproducibility contract depends on.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
  }
  void deallocate(T* p, size_t) noexcept { ::operator delete(p, kAlign); }
  bool operator==(const AlignedAllocator&) const { return true; }
};

template <typename S>
using AVec = std::vector<S, AlignedAllocator<S>>;

// Dense (channels, height, width) tensor, w fastest. Scalar is float on the
// production path and double in gradient-check mode.
template <typename S>
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  AVec<S> data;

  Tensor3() = default;
  Tensor3(int c, int h, int w)
      : channels(c), height(h), width(w),
        data(static_cast<size_t>(c) * h * w, S(0)) {}

  S& at(int c, int h, int w) {
    return data[(static_cast<size_t>(c) * height + h) * width + w];
  }
  S at(int c, int h, int w) const {
    return data[(static_cast<size_t>(c) * height + h) * width + w];
  }
  S* plane(int c) { return data.data() + static_cast<size_t>(c) * height * width; }
  const S* plane(int c) const {
    return data.data() + static_cast<size_t>(c) * height * width;
  }
  size_t size() const { return data.size(); }
  size_t plane_size() const { return static_cast<size_t>(height) * width; }

  void zero() { std::fill(data.begin(), data.end(), S(0)); }

  bool same_shape(const Tensor3& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

// Patch matrix for 3x3-style same convolution: row (c*k+dy)*k+dx holds the
// input channel c shifted by (dy-pad, dx-pad), flattened over pixels. Layout
// is row-major [C*k*k, H*W].
template <typename S>
void im2col(const Tensor3<S>& x, int k, AVec<S>& out) {
  const int H = x.height, W = x.width, pad = k / 2;
  const size_t hw = x.plane_size();
  out.assign(static_cast<size_t>(x.channels) * k * k * hw, S(0));
  for (int c = 0; c < x.channels; c++) {
    const S* src = x.plane(c);
    for (int dy = 0; dy < k; dy++) {
      for (int dx = 0; dx < k; dx++) {
        S* row = out.data() + ((static_cast<size_t>(c) * k + dy) * k + dx) * hw;
        int sh = dy - pad, sw = dx - pad;
        for (int r = 0; r < H; r++) {
          int rr = r + sh;
          if (rr < 0 || rr >= H) continue;
          int c_lo = std::max(0, -sw);
          int c_hi = std::min(W, W - sw);
          if (c_lo >= c_hi) continue;
          const S* s = src + static_cast<size_t>(rr) * W + (c_lo + sw);
          S* d = row + static_cast<size_t>(r) * W + c_lo;
          std::copy(s, s + (c_hi - c_lo), d);
        }
      }
    }
  }
}

// Transpose scatter of im2col: accumulates the patch-matrix gradient back
// into an input-shaped tensor. dx must be pre-shaped; it is overwritten.
template <typename S>
void col2im(const AVec<S>& col, int channels, int height, int width,
            int k, Tensor3<S>& dx) {
  const int pad = k / 2;
  const size_t hw = static_cast<size_t>(height) * width;
  dx.channels = channels;
  dx.height = height;
  dx.width = width;
  dx.data.assign(static_cast<size_t>(channels) * hw, S(0));
  for (int c = 0; c < channels; c++) {
    S* dst = dx.plane(c);
    for (int dy = 0; dy < k; dy++) {
      for (int dx_ = 0; dx_ < k; dx_++) {
        const S* row =
            col.data() + ((static_cast<size_t>(c) * k + dy) * k + dx_) * hw;
        int sh = dy - pad, sw = dx_ - pad;
        for (int r = 0; r < height; r++) {
          int rr = r + sh;
          if (rr < 0 || rr >= height) continue;
          int c_lo = std::max(0, -sw);
          int c_hi = std::min(width, width - sw);
          if (c_lo >= c_hi) continue;
          const S* s = row + static_cast<size_t>(r) * width + c_lo;
          S* d = dst + static_cast<size_t>(rr) * width + (c_lo + sw);
          for (int i = 0; i < c_hi - c_lo; i++) d[i] += s[i];
        }
      }
    }
  }
}

}  // namespace airtrace
