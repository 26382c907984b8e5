// SPDX-License-Identifier: Apache-2.0
#include "genclip/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "genclip/error.hpp"
#include "genclip/parallel.hpp"

namespace genclip {

std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw ShapeError("roc_auc: " + std::to_string(scores.size()) + " scores, " + std::to_string(labels.size()) +
                     " labels");
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  double pos = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[idx[k]] != 0) {
        pos_rank_sum += avg_rank;
        pos += 1.0;
      }
    i = j;
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) return std::nullopt;
  return (pos_rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

std::optional<double> average_precision(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw ShapeError("average_precision: " + std::to_string(scores.size()) + " scores, " +
                     std::to_string(labels.size()) + " labels");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double tp = 0.0, sum = 0.0;
  for (std::size_t r = 0; r < idx.size(); ++r)
    if (labels[idx[r]] != 0) {
      tp += 1.0;
      sum += tp / static_cast<double>(r + 1);
    }
  if (tp == 0.0) return std::nullopt;
  return sum / tp;
}

std::vector<int> label_regions(const Grid& mask, int& num_regions) {
  const int h = mask.height, w = mask.width;
  std::vector<int> lab(mask.size(), 0);
  num_regions = 0;
  std::vector<int> stack;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * w + x;
      if (mask.values[p] <= 0.5 || lab[p] != 0) continue;
      const int id = ++num_regions;
      lab[p] = id;
      stack.assign(1, static_cast<int>(p));
      while (!stack.empty()) {
        const int q = stack.back();
        stack.pop_back();
        const int qy = q / w, qx = q % w;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = qy + dy, nx = qx + dx;
            if ((dy == 0 && dx == 0) || ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
            const std::size_t np = static_cast<std::size_t>(ny) * w + nx;
            if (mask.values[np] > 0.5 && lab[np] == 0) {
              lab[np] = id;
              stack.push_back(static_cast<int>(np));
            }
          }
      }
    }
  return lab;
}

std::vector<double> pro_thresholds(std::span<const Grid> score_maps, int num_thresholds) {
  if (num_thresholds < 2) throw ConfigError("aupro: num_thresholds must be >= 2");
  std::vector<double> all;
  for (const Grid& g : score_maps) all.insert(all.end(), g.values.begin(), g.values.end());
  if (all.empty()) return {};
  std::sort(all.begin(), all.end());
  std::vector<double> distinct = all;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<double> t;
  if (distinct.size() <= static_cast<std::size_t>(num_thresholds)) {
    t = distinct;
  } else {
    const std::size_t m = all.size();
    for (int k = 0; k < num_thresholds; ++k) {
      const auto i = static_cast<std::size_t>(static_cast<double>(k) * static_cast<double>(m - 1) /
                                              static_cast<double>(num_thresholds - 1));
      t.push_back(all[std::min(i, m - 1)]);
    }
    t.erase(std::unique(t.begin(), t.end()), t.end());
  }
  std::reverse(t.begin(), t.end());
  return t;
}

std::vector<ProPoint> pro_curve(std::span<const Grid> score_maps, std::span<const Grid> gt_masks,
                                std::span<const double> thresholds) {
  if (score_maps.size() != gt_masks.size())
    throw ShapeError("aupro: " + std::to_string(score_maps.size()) + " score maps, " +
                     std::to_string(gt_masks.size()) + " masks");
  struct Pixel {
    double score;
    int region;  // global region id, -1 for normal pixels
  };
  std::vector<Pixel> px;
  std::vector<double> region_size;
  double normal = 0.0;
  for (std::size_t i = 0; i < score_maps.size(); ++i) {
    if (!score_maps[i].same_shape(gt_masks[i]))
      throw ShapeError("aupro: map " + std::to_string(i) + " is " + std::to_string(score_maps[i].height) + "x" +
                       std::to_string(score_maps[i].width) + ", mask " + std::to_string(gt_masks[i].height) + "x" +
                       std::to_string(gt_masks[i].width));
    int n = 0;
    const auto lab = label_regions(gt_masks[i], n);
    const int base = static_cast<int>(region_size.size());
    region_size.resize(region_size.size() + static_cast<std::size_t>(n), 0.0);
    for (std::size_t p = 0; p < lab.size(); ++p) {
      if (lab[p] == 0) {
        px.push_back({score_maps[i].values[p], -1});
        normal += 1.0;
      } else {
        px.push_back({score_maps[i].values[p], base + lab[p] - 1});
        region_size[static_cast<std::size_t>(base + lab[p] - 1)] += 1.0;
      }
    }
  }
  const double regions = static_cast<double>(region_size.size());
  std::sort(px.begin(), px.end(), [](const Pixel& a, const Pixel& b) { return a.score > b.score; });

  std::vector<ProPoint> curve;
  double fp = 0.0, pro_sum = 0.0;
  std::size_t next = 0;
  for (double t : thresholds) {
    while (next < px.size() && px[next].score >= t) {
      if (px[next].region < 0)
        fp += 1.0;
      else
        pro_sum += 1.0 / region_size[static_cast<std::size_t>(px[next].region)];
      ++next;
    }
    curve.push_back({t, normal > 0.0 ? fp / normal : 0.0, regions > 0.0 ? pro_sum / regions : 0.0});
  }
  return curve;
}

double integrate_pro(std::span<const ProPoint> curve, double fpr_limit) {
  if (!(fpr_limit > 0.0 && fpr_limit <= 1.0)) throw ConfigError("aupro: fpr_limit must be in (0,1]");
  double area = 0.0;
  double px = 0.0, py = 0.0;
  for (const ProPoint& p : curve) {
    if (p.fpr > fpr_limit) break;
    area += (p.fpr - px) * (p.pro + py) / 2.0;
    px = p.fpr;
    py = p.pro;
  }
  area += (fpr_limit - px) * py;
  return area / fpr_limit;
}

std::optional<double> aupro(std::span<const Grid> score_maps, std::span<const Grid> gt_masks,
                            const AuproOptions& options) {
  bool any_pos = false, any_neg = false;
  for (const Grid& m : gt_masks)
    for (double v : m.values) (v > 0.5 ? any_pos : any_neg) = true;
  if (!any_pos || !any_neg) return std::nullopt;
  const auto t = pro_thresholds(score_maps, options.num_thresholds);
  const auto curve = pro_curve(score_maps, gt_masks, t);
  return integrate_pro(curve, options.fpr_limit);
}

namespace {

MetricRow metrics_for(const std::string& name, std::span<const EvalRecord* const> recs, const AuproOptions& ao) {
  MetricRow row;
  row.name = name;
  std::vector<double> ps, is;
  std::vector<int> pl, il;
  std::vector<Grid> maps, masks;
  for (const EvalRecord* r : recs) {
    if (!r->scores.same_shape(r->gt))
      throw ShapeError("evaluate: " + r->key + " prediction is " + std::to_string(r->scores.height) + "x" +
                       std::to_string(r->scores.width) + ", mask " + std::to_string(r->gt.height) + "x" +
                       std::to_string(r->gt.width));
    ps.insert(ps.end(), r->scores.values.begin(), r->scores.values.end());
    for (double g : r->gt.values) pl.push_back(g > 0.5 ? 1 : 0);
    is.push_back(r->image_score);
    il.push_back(r->image_label);
    maps.push_back(r->scores);
    masks.push_back(r->gt);
  }
  row.pixel_auroc = roc_auc(ps, pl);
  row.pixel_pro = aupro(maps, masks, ao);
  row.image_auroc = roc_auc(is, il);
  row.image_ap = average_precision(is, il);
  return row;
}

std::optional<double> mean_defined(const std::vector<MetricRow>& rows, std::optional<double> MetricRow::*field) {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : rows)
    if (r.*field) {
      sum += *(r.*field);
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / n;
}

}  // namespace

MetricReport evaluate_records(std::span<const EvalRecord> records, const EvalConfig& config) {
  if (records.empty()) throw Error("evaluate: no records");
  std::map<std::string, std::vector<const EvalRecord*>> by_class;
  for (const auto& r : records) by_class[r.class_name].push_back(&r);
  std::vector<std::string> names;
  for (const auto& [name, recs] : by_class) names.push_back(name);

  MetricReport report;
  report.rows.resize(names.size());
  parallel_for(names.size(), config.workers, [&](std::size_t i) {
    report.rows[i] = metrics_for(names[i], by_class.at(names[i]), config.aupro);
  });
  MetricRow mean;
  if (config.pooling == EvalConfig::Pooling::global) {
    std::vector<const EvalRecord*> all;
    for (const auto& r : records) all.push_back(&r);
    mean = metrics_for("mean", all, config.aupro);
  } else {
    mean.name = "mean";
    mean.pixel_auroc = mean_defined(report.rows, &MetricRow::pixel_auroc);
    mean.pixel_pro = mean_defined(report.rows, &MetricRow::pixel_pro);
    mean.image_auroc = mean_defined(report.rows, &MetricRow::image_auroc);
    mean.image_ap = mean_defined(report.rows, &MetricRow::image_ap);
  }
  report.rows.push_back(mean);
  return report;
}

std::string MetricReport::to_csv() const {
  std::ostringstream out;
  out << "class,pixel_auroc,pixel_pro,image_auroc,image_ap\n";
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string("NA");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", *v * 100.0);
    return std::string(buf);
  };
  for (const auto& r : rows)
    out << r.name << ',' << cell(r.pixel_auroc) << ',' << cell(r.pixel_pro) << ',' << cell(r.image_auroc) << ','
        << cell(r.image_ap) << '\n';
  return out.str();
}

const MetricRow* MetricReport::find(const std::string& name) const {
  for (const auto& r : rows)
    if (r.name == name) return &r;
  return nullptr;
}

Grid load_gt_mask(const ManifestEntry& entry, int height, int width) {
  if (!entry.mask_path) return Grid(height, width, 0.0);
  Grid g = resize_nearest(read_gray(*entry.mask_path), height, width);
  for (double& v : g.values) v = v >= 0.5 ? 1.0 : 0.0;
  return g;
}

MetricReport evaluate(std::span<const ManifestEntry> test_entries, const std::map<std::string, Prediction>& predictions,
                      const EvalConfig& config) {
  std::vector<std::string> missing;
  for (const auto& e : test_entries)
    if (!predictions.count(e.key())) missing.push_back(e.key());
  if (!missing.empty()) {
    std::string msg = "evaluate: " + std::to_string(missing.size()) + " test image(s) have no prediction:";
    for (const auto& k : missing) msg += "\n  " + k;
    throw Error(msg);
  }
  std::vector<EvalRecord> records(test_entries.size());
  parallel_for(records.size(), config.workers, [&](std::size_t i) {
    const ManifestEntry& e = test_entries[i];
    const Prediction& p = predictions.at(e.key());
    EvalRecord& r = records[i];
    r.key = e.key();
    r.class_name = e.class_name;
    r.scores = p.s_seg;
    r.gt = load_gt_mask(e, p.s_seg.height, p.s_seg.width);
    r.image_score = p.s_det;
    r.image_label = e.is_good() ? 0 : 1;
  });
  return evaluate_records(records, config);
}

}  // namespace genclip
