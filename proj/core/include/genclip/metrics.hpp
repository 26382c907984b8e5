// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "genclip/data.hpp"
#include "genclip/image.hpp"

namespace genclip {

/// Rank-statistic AUROC (ties count one half). nullopt unless both labels occur.
std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Step-wise AP over the descending ranking, ties broken by index.
/// nullopt when there are no positives.
std::optional<double> average_precision(std::span<const double> scores, std::span<const int> labels);

struct AuproOptions {
  double fpr_limit = 0.3;
  int num_thresholds = 200;
};

/// Per-region overlap curve point.
struct ProPoint {
  double threshold;
  double fpr;
  double pro;
};

/// 8-connected components of `mask > 0.5`. Returns labels (0 = background,
/// 1..n regions) and writes the region count.
std::vector<int> label_regions(const Grid& mask, int& num_regions);

/// Threshold set: every distinct score when there are at most
/// num_thresholds of them, otherwise num_thresholds quantiles of all pixel
/// scores (deduplicated). Descending.
std::vector<double> pro_thresholds(std::span<const Grid> score_maps, int num_thresholds);

/// PRO / FPR at each threshold (descending thresholds, prediction = score >= t).
std::vector<ProPoint> pro_curve(std::span<const Grid> score_maps, std::span<const Grid> gt_masks,
                                std::span<const double> thresholds);

/// Integrates a curve from FPR 0 to the limit and divides by the limit. The
/// origin is prepended; points beyond the limit are dropped and the last PRO
/// at or below the limit is held flat up to it.
double integrate_pro(std::span<const ProPoint> curve, double fpr_limit);

/// nullopt when there is no anomalous or no normal pixel.
std::optional<double> aupro(std::span<const Grid> score_maps, std::span<const Grid> gt_masks,
                            const AuproOptions& options = {});

struct MetricRow {
  std::string name;
  std::optional<double> pixel_auroc;
  std::optional<double> pixel_pro;
  std::optional<double> image_auroc;
  std::optional<double> image_ap;
};

struct MetricReport {
  std::vector<MetricRow> rows;  // one per class (sorted), then "mean"

  /// class,pixel_auroc,pixel_pro,image_auroc,image_ap as percentages with two
  /// decimals; NA where undefined.
  std::string to_csv() const;
  const MetricRow* find(const std::string& name) const;
};

struct EvalRecord {
  std::string key;
  std::string class_name;
  Grid scores;
  Grid gt;
  double image_score = 0.0;
  int image_label = 0;
};

struct EvalConfig {
  enum class Pooling { per_class, global };
  Pooling pooling = Pooling::per_class;
  AuproOptions aupro;
  int workers = 1;
};

/// Per-class metrics. The mean row is the unweighted class mean, or with
/// global pooling the metrics over all records at once.
MetricReport evaluate_records(std::span<const EvalRecord> records, const EvalConfig& config = {});

struct Prediction {
  Grid s_seg;
  double s_det = 0.0;
};

/// Ground truth is read from the manifest at each prediction's resolution.
/// Throws listing every test entry with no prediction.
MetricReport evaluate(std::span<const ManifestEntry> test_entries, const std::map<std::string, Prediction>& predictions,
                      const EvalConfig& config = {});

/// Binary mask at the given size (zeros for entries without a mask).
Grid load_gt_mask(const ManifestEntry& entry, int height, int width);

}  // namespace genclip
