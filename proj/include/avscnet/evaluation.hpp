#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "avscnet/geometry.hpp"

namespace avscnet {

struct LabeledBox {
  Box box;
  std::string label;
};

struct ClassCounts {
  long tp = 0;
  long fp = 0;
  long fn = 0;
};

// Outcome of matching one image's detections to its ground truth.
struct MatchResult {
  std::map<std::string, ClassCounts> per_class;
  // Aligned with the detection list: matched ground-truth index, or nullopt.
  std::vector<std::optional<std::size_t>> matched_gt;
};

struct PRPoint {
  double threshold = 0.0;
  double recall = 0.0;
  double precision = 0.0;
};

struct PRCurve {
  std::string label;
  std::vector<PRPoint> points;  // swept over distinct scores, descending
};

struct EvalReport {
  std::map<std::string, double> ap;
  std::map<std::string, std::optional<double>> ar;  // absent when no image has the class
  double map = 0.0;
  double mar = 0.0;
  int n_cls = 0;
  std::map<std::string, PRCurve> curves;
};

// Greedy per-class matching: detections in score order each take the
// unmatched ground truth of their class with highest IoU, provided
// IoU > a_min (Eq 8 is strict). Unmatched detections are FP, unmatched
// ground truths FN.
MatchResult match_detections(const std::vector<ScoredBox>& dets,
                             const std::vector<LabeledBox>& gts, double a_min);

// P = TP/(TP+FP), R = TP/(TP+FN); empty denominators give P = 0 and R = 1.
std::pair<double, double> precision_recall(const MatchResult& m,
                                           const std::string& label);

using DetsByImage = std::map<std::string, std::vector<ScoredBox>>;
using GtsByImage = std::map<std::string, std::vector<LabeledBox>>;

// Dataset-level curve for one class: thresholds swept at every distinct
// detection score (descending), cumulative TP/FP against total ground truths.
PRCurve pr_curve(const DetsByImage& dets, const GtsByImage& gts,
                 const std::string& label, double a_min);

// Area under the monotone precision envelope (all-points interpolation).
double average_precision(const PRCurve& curve);

// Per-class mean over images of the final-operating-point recall; images with
// no ground truth of the class are excluded. Returns nullopt for a class
// absent from every image.
std::map<std::string, std::optional<double>> average_recall(
    const std::vector<MatchResult>& per_image);

EvalReport evaluate(const DetsByImage& dets, const GtsByImage& gts,
                    double a_min);

}  // namespace avscnet
