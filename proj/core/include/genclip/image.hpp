// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

namespace genclip {

/// Interleaved HWC image with double samples. Loaded images hold values in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  double at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  bool empty() const { return data.empty(); }
};

/// Single-channel row-major grid. Used for masks and score maps.
struct Grid {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  Grid() = default;
  Grid(int h, int w, double fill = 0.0)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return values.size(); }
  bool same_shape(const Grid& other) const { return height == other.height && width == other.width; }
};

/// Bilinear resampling with half-pixel centers and edge clamping
/// (align_corners = false). Works per channel.
Image resize_bilinear(const Image& src, int out_h, int out_w);
Grid resize_bilinear(const Grid& src, int out_h, int out_w);

/// Nearest-neighbour resampling: source index = floor(dst * in / out).
Grid resize_nearest(const Grid& src, int out_h, int out_w);

/// Precomputed 1-D bilinear taps for one axis.
struct BilinearTaps {
  std::vector<int> lo;
  std::vector<int> hi;
  std::vector<double> frac;  // weight of `hi`
};
BilinearTaps bilinear_taps(int in_size, int out_size);

}  // namespace genclip
