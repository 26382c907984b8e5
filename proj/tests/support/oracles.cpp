// SPDX-License-Identifier: Apache-2.0
#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace genclip::oracle {

double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] == 0) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1.0;
      if (s[i] > s[j]) num += 1.0;
      else if (s[i] == s[j]) num += 0.5;
    }
  }
  return num / pairs;
}

double brute_force_ap(const std::vector<double>& s, const std::vector<int>& y) {
  const std::size_t n = s.size();
  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = 1;
    for (std::size_t j = 0; j < n; ++j)
      if (s[j] > s[i] || (s[j] == s[i] && j < i)) ++r;
    rank[i] = r;
  }
  double ap = 0.0, positives = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (y[i] == 0) continue;
    positives += 1.0;
    double hits = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (y[j] != 0 && rank[j] <= rank[i]) hits += 1.0;
    ap += hits / static_cast<double>(rank[i]);
  }
  return ap / positives;
}

namespace {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(static_cast<std::size_t>(n)) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int a) {
    while (parent[static_cast<std::size_t>(a)] != a) a = parent[static_cast<std::size_t>(a)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
    return a;
  }
  void unite(int a, int b) { parent[static_cast<std::size_t>(find(a))] = find(b); }
};

}  // namespace

double dense_aupro(const std::vector<Grid>& maps, const std::vector<Grid>& masks, double fpr_limit, int steps) {
  // Regions as lists of (image, pixel).
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> regions;
  for (std::size_t m = 0; m < masks.size(); ++m) {
    const Grid& g = masks[m];
    UnionFind uf(static_cast<int>(g.size()));
    for (int y = 0; y < g.height; ++y)
      for (int x = 0; x < g.width; ++x) {
        if (g.at(y, x) <= 0.5) continue;
        for (int dy = 0; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if (dy == 0 && dx <= 0) continue;
            const int ny = y + dy, nx = x + dx;
            if (ny >= g.height || nx < 0 || nx >= g.width || g.at(ny, nx) <= 0.5) continue;
            uf.unite(y * g.width + x, ny * g.width + nx);
          }
      }
    std::vector<int> index(g.size(), -1);
    for (std::size_t p = 0; p < g.size(); ++p) {
      if (g.values[p] <= 0.5) continue;
      const auto root = static_cast<std::size_t>(uf.find(static_cast<int>(p)));
      if (index[root] < 0) {
        index[root] = static_cast<int>(regions.size());
        regions.emplace_back();
      }
      regions[static_cast<std::size_t>(index[root])].emplace_back(m, p);
    }
  }
  double lo = INFINITY, hi = -INFINITY, normal = 0.0;
  for (std::size_t m = 0; m < maps.size(); ++m)
    for (std::size_t p = 0; p < maps[m].size(); ++p) {
      lo = std::min(lo, maps[m].values[p]);
      hi = std::max(hi, maps[m].values[p]);
      if (masks[m].values[p] <= 0.5) normal += 1.0;
    }
  std::vector<std::pair<double, double>> curve{{0.0, 0.0}};
  for (int k = steps; k >= 0; --k) {
    const double t = lo + (hi - lo) * k / static_cast<double>(steps);
    double fp = 0.0;
    for (std::size_t m = 0; m < maps.size(); ++m)
      for (std::size_t p = 0; p < maps[m].size(); ++p)
        if (masks[m].values[p] <= 0.5 && maps[m].values[p] >= t) fp += 1.0;
    double pro = 0.0;
    for (const auto& r : regions) {
      double hit = 0.0;
      for (const auto& [m, p] : r)
        if (maps[m].values[p] >= t) hit += 1.0;
      pro += hit / static_cast<double>(r.size());
    }
    curve.emplace_back(fp / normal, pro / static_cast<double>(regions.size()));
  }
  double area = 0.0;
  std::size_t i = 1;
  for (; i < curve.size() && curve[i].first <= fpr_limit; ++i)
    area += (curve[i].first - curve[i - 1].first) * (curve[i].second + curve[i - 1].second) / 2.0;
  area += (fpr_limit - curve[i - 1].first) * curve[i - 1].second;
  return area / fpr_limit;
}

Grid convolve_gaussian(const Grid& g, double sigma) {
  if (sigma == 0.0) return g;
  const int r = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> k1;
  for (int i = -r; i <= r; ++i) k1.push_back(std::exp(-(i * i) / (2.0 * sigma * sigma)));
  const double s1 = std::accumulate(k1.begin(), k1.end(), 0.0);
  // Mirror: index -1 -> 0, -2 -> 1, n -> n-1, n+1 -> n-2; repeated for long kernels.
  auto mirror = [](int i, int n) {
    for (;;) {
      if (i < 0) i = -i - 1;
      else if (i >= n) i = 2 * n - i - 1;
      else return i;
    }
  };
  Grid out(g.height, g.width);
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) {
      double acc = 0.0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
          acc += k1[static_cast<std::size_t>(dy + r)] * k1[static_cast<std::size_t>(dx + r)] / (s1 * s1) *
                 g.at(mirror(y + dy, g.height), mirror(x + dx, g.width));
      out.at(y, x) = acc;
    }
  return out;
}

double top_mean(std::vector<double> v, int n) {
  std::sort(v.begin(), v.end(), std::greater<>());
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += v[static_cast<std::size_t>(i)];
  return s / n;
}

void image_score(const std::vector<double>& values, int n1, int n2, double& s_det, double& w) {
  std::vector<double> v = values;
  std::sort(v.begin(), v.end(), std::greater<>());
  n1 = std::min<int>(n1, static_cast<int>(v.size()));
  n2 = std::min<int>(n2, static_cast<int>(v.size()));
  double e1 = 0.0, e2 = 0.0, m1 = 0.0;
  for (int i = 0; i < n1; ++i) {
    e1 += std::exp(v[static_cast<std::size_t>(i)]);
    m1 += v[static_cast<std::size_t>(i)];
  }
  for (int i = 0; i < n2; ++i) e2 += std::exp(v[static_cast<std::size_t>(i)]);
  w = n1 == n2 ? 1.0 : (e1 / n1) / (e2 / n2);
  s_det = w * m1 / n1;
}

namespace {

Mat layer_step(const SyntheticWeights::Layer& l, const Mat& x) {
  Mat out(x.rows(), l.self_mix.cols());
  RowVec mean = RowVec::Zero(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) mean += x.row(r);
  mean /= static_cast<double>(x.rows());
  const RowVec ctx = mean * l.context_mix + l.bias;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const RowVec pre = x.row(r) * l.self_mix + ctx;
    const RowVec base = l.skip.size() == 0 ? RowVec(x.row(r)) : RowVec(x.row(r) * l.skip);
    for (Eigen::Index c = 0; c < pre.size(); ++c) out(r, c) = base(c) + std::tanh(pre(c));
  }
  return out;
}

}  // namespace

RowVec replay_text(const SyntheticEncoder& enc, const TokenSequence& seq, const Mat* deep) {
  const auto& w = enc.weights();
  const int eot = seq.eot_position + (deep ? 1 : 0);
  Mat x(eot + 1, enc.spec().text_dim);
  for (int p = 0; p < seq.eot_position; ++p) {
    RowVec e = enc.token_embedding(seq.token_ids[static_cast<std::size_t>(p)]);
    for (const auto& s : seq.soft_slots)
      if (s.position == p) e = s.value;
    x.row(p) = e + w.text_pos.row(p);
  }
  if (deep) x.row(eot - 1).setZero();
  x.row(eot) = enc.token_embedding(Tokenizer::kEot) + w.text_pos.row(eot);
  for (std::size_t l = 0; l < w.text_layers.size(); ++l) {
    if (deep) x.row(eot - 1) = deep->row(static_cast<Eigen::Index>(l));
    x = layer_step(w.text_layers[l], x);
  }
  RowVec out = x.row(eot) * w.text_proj;
  return out / out.norm();
}

PatchFeatureStack replay_image(const SyntheticEncoder& enc, const Image& image) {
  const auto& w = enc.weights();
  const auto& spec = enc.spec();
  const int p = spec.patch_size, g = spec.grid_side();
  Mat x(g * g + 1, w.patch_embed.cols());
  x.row(0) = w.class_embed;
  for (int r = 0; r < g; ++r)
    for (int c = 0; c < g; ++c) {
      RowVec flat(3 * p * p);
      int k = 0;
      for (int dy = 0; dy < p; ++dy)
        for (int dx = 0; dx < p; ++dx)
          for (int ch = 0; ch < 3; ++ch) flat(k++) = (image.at(r * p + dy, c * p + dx, ch) - 0.5) / 0.25;
      x.row(1 + r * g + c) = flat * w.patch_embed + w.vision_pos.row(r * g + c);
    }
  PatchFeatureStack out;
  out.grid_h = out.grid_w = g;
  for (int l = 1; l <= spec.num_vision_layers; ++l) {
    x = layer_step(w.vision_layers[static_cast<std::size_t>(l - 1)], x);
    if (std::find(spec.selected_layers.begin(), spec.selected_layers.end(), l) != spec.selected_layers.end())
      out.layers.push_back(LayerFeatures{l, x.row(0), x.bottomRows(g * g)});
  }
  RowVec e = x.row(0) * w.image_proj;
  out.image_embedding = e / e.norm();
  return out;
}

Grid bilinear(const Grid& src, int out_h, int out_w) {
  Grid out(out_h, out_w);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      double sy = (y + 0.5) * src.height / out_h - 0.5;
      double sx = (x + 0.5) * src.width / out_w - 0.5;
      sy = std::clamp(sy, 0.0, static_cast<double>(src.height - 1));
      sx = std::clamp(sx, 0.0, static_cast<double>(src.width - 1));
      const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
      const int y1 = std::min(y0 + 1, src.height - 1), x1 = std::min(x0 + 1, src.width - 1);
      const double fy = sy - y0, fx = sx - x0;
      out.at(y, x) = (1 - fy) * ((1 - fx) * src.at(y0, x0) + fx * src.at(y0, x1)) +
                     fy * ((1 - fx) * src.at(y1, x0) + fx * src.at(y1, x1));
    }
  return out;
}

}  // namespace genclip::oracle
