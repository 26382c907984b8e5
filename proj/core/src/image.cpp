// SPDX-License-Identifier: Apache-2.0
#include "genclip/image.hpp"

#include <algorithm>
#include <cmath>

#include "genclip/error.hpp"

namespace genclip {

BilinearTaps bilinear_taps(int in_size, int out_size) {
  if (in_size <= 0 || out_size <= 0) throw ShapeError("bilinear_taps: sizes must be positive");
  BilinearTaps t;
  t.lo.resize(out_size);
  t.hi.resize(out_size);
  t.frac.resize(out_size);
  const double scale = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    src = std::max(src, 0.0);
    int lo = static_cast<int>(std::floor(src));
    lo = std::min(lo, in_size - 1);
    const int hi = std::min(lo + 1, in_size - 1);
    t.lo[o] = lo;
    t.hi[o] = hi;
    t.frac[o] = hi == lo ? 0.0 : src - lo;
  }
  return t;
}

Image resize_bilinear(const Image& src, int out_h, int out_w) {
  if (src.empty()) throw ShapeError("resize_bilinear: empty image");
  if (src.height == out_h && src.width == out_w) return src;
  const auto ty = bilinear_taps(src.height, out_h);
  const auto tx = bilinear_taps(src.width, out_w);
  Image out(out_h, out_w, src.channels);
  for (int y = 0; y < out_h; ++y) {
    const double fy = ty.frac[y];
    for (int x = 0; x < out_w; ++x) {
      const double fx = tx.frac[x];
      for (int c = 0; c < src.channels; ++c) {
        const double top = (1 - fx) * src.at(ty.lo[y], tx.lo[x], c) + fx * src.at(ty.lo[y], tx.hi[x], c);
        const double bot = (1 - fx) * src.at(ty.hi[y], tx.lo[x], c) + fx * src.at(ty.hi[y], tx.hi[x], c);
        out.at(y, x, c) = (1 - fy) * top + fy * bot;
      }
    }
  }
  return out;
}

Grid resize_bilinear(const Grid& src, int out_h, int out_w) {
  Image tmp;
  tmp.height = src.height;
  tmp.width = src.width;
  tmp.channels = 1;
  tmp.data = src.values;
  Image r = resize_bilinear(tmp, out_h, out_w);
  Grid out;
  out.height = out_h;
  out.width = out_w;
  out.values = std::move(r.data);
  return out;
}

Grid resize_nearest(const Grid& src, int out_h, int out_w) {
  if (src.size() == 0) throw ShapeError("resize_nearest: empty grid");
  if (out_h <= 0 || out_w <= 0) throw ShapeError("resize_nearest: sizes must be positive");
  Grid out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const int sy = std::min(static_cast<int>(static_cast<long long>(y) * src.height / out_h), src.height - 1);
    for (int x = 0; x < out_w; ++x) {
      const int sx = std::min(static_cast<int>(static_cast<long long>(x) * src.width / out_w), src.width - 1);
      out.at(y, x) = src.at(sy, sx);
    }
  }
  return out;
}

}  // namespace genclip
