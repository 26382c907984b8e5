// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "genclip/image.hpp"
#include "genclip/rng.hpp"
#include "oracles.hpp"

using namespace genclip;

TEST(Resize, BilinearMatchesPerPixelOracle) {
  Rng rng(3);
  Grid g(5, 7);
  for (auto& v : g.values) v = rng.uniform();
  for (auto [h, w] : {std::pair{11, 13}, {5, 7}, {3, 2}, {32, 32}}) {
    const Grid a = resize_bilinear(g, h, w);
    const Grid b = oracle::bilinear(g, h, w);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-12);
  }
}

TEST(Resize, BilinearSameSizeIsIdentity) {
  Grid g(4, 4);
  for (std::size_t i = 0; i < g.size(); ++i) g.values[i] = static_cast<double>(i);
  EXPECT_EQ(resize_bilinear(g, 4, 4).values, g.values);
}

TEST(Resize, BilinearImagePerChannel) {
  Image img(2, 2, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<double>(i % 3);
  const Image out = resize_bilinear(img, 6, 6);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x)
      for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(out.at(y, x, c), c);
}

TEST(Resize, NearestFloorRule) {
  Grid g(4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) g.at(y, x) = (x + y) % 2;
  const Grid d = resize_nearest(g, 2, 2);
  // floor(dst * 4 / 2) picks source rows/cols 0 and 2.
  EXPECT_EQ(d.at(0, 0), g.at(0, 0));
  EXPECT_EQ(d.at(0, 1), g.at(0, 2));
  EXPECT_EQ(d.at(1, 0), g.at(2, 0));
  EXPECT_EQ(d.at(1, 1), g.at(2, 2));
  const Grid u = resize_nearest(g, 8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) EXPECT_EQ(u.at(y, x), g.at(y / 2, x / 2));
}
