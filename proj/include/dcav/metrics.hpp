#pragma once

#include <map>
#include <string>
#include <vector>

#include "dcav/data.hpp"
#include "dcav/inference.hpp"

namespace dcav::metrics {

using Tokens = std::vector<std::string>;

/// Sentence BLEU@N: geometric mean of clipped n-gram precisions for n = 1..N
/// times the brevity penalty (closest reference length, shorter on ties).
/// Zero match counts are replaced by 1e-9.
double bleu_n(const Tokens& candidate, const std::vector<Tokens>& references, int n);

/// Length of the longest common subsequence.
std::size_t lcs_length(const Tokens& a, const Tokens& b);

/// LCS F-measure, β = 1.2. With several references the precision and recall
/// are each the maximum over references.
double rouge_l(const Tokens& candidate, const std::vector<Tokens>& references, double beta = 1.2);

struct CiderItem {
  Tokens candidate;
  std::vector<Tokens> references;
};

/// CIDEr-D per item (×10 scale, σ = 6, candidate counts clipped to the
/// reference). Document frequencies come from the items' reference sets, so
/// at least two items are required.
std::vector<double> cider_d(const std::vector<CiderItem>& items, double sigma = 6.0);
double cider(const std::vector<CiderItem>& items, double sigma = 6.0);

struct MetricScores {
  double bleu[4] = {0, 0, 0, 0};
  double rouge_l = 0;
  double cider = 0;
};

struct EvalReport {
  std::vector<double> thresholds;
  std::map<double, MetricScores> per_threshold;
  MetricScores mean;  // averaged over thresholds
  double miou = 0;
  std::size_t predictions = 0;
  std::size_t gt_events = 0;

  std::string to_json() const;  // scores ×100; METEOR and SPICE reserved as null
};

inline const std::vector<double> kDefaultThresholds{0.3, 0.5, 0.7, 0.9};

/// Interval IoU in seconds.
double interval_iou(double s0, double e0, double s1, double e1);

/// Mean over ground-truth events of the best tIoU against the predictions
/// of the same video (0 for videos without predictions).
double mean_iou(const inference::Predictions& predictions, const data::DatasetIndex& gt);

EvalReport evaluate_dense(const inference::Predictions& predictions, const data::DatasetIndex& gt,
                          const std::vector<double>& thresholds = kDefaultThresholds);

}  // namespace dcav::metrics
