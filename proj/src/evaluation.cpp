#include "avscnet/evaluation.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <stdexcept>

namespace avscnet {

namespace {

// Score-descending detection order with stable index tie-break.
std::vector<std::size_t> score_order(const std::vector<ScoredBox>& dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return a < b;
  });
  return order;
}

}  // namespace

MatchResult match_detections(const std::vector<ScoredBox>& dets,
                             const std::vector<LabeledBox>& gts, double a_min) {
  if (!(a_min > 0.0) || a_min > 1.0) {
    throw std::invalid_argument("match_detections: a_min outside (0,1]");
  }
  MatchResult res;
  res.matched_gt.assign(dets.size(), std::nullopt);
  for (const auto& g : gts) res.per_class[g.label];
  for (const auto& d : dets) res.per_class[d.label];

  std::vector<bool> gt_taken(gts.size(), false);
  for (std::size_t di : score_order(dets)) {
    const ScoredBox& det = dets[di];
    double best = 0.0;
    std::size_t best_gt = gts.size();
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
      if (gt_taken[gi] || gts[gi].label != det.label) continue;
      const double v = iou(det.box, gts[gi].box);
      if (v > best) {
        best = v;
        best_gt = gi;
      }
    }
    if (best_gt < gts.size() && best > a_min) {
      gt_taken[best_gt] = true;
      res.matched_gt[di] = best_gt;
      ++res.per_class[det.label].tp;
    } else {
      ++res.per_class[det.label].fp;
    }
  }
  for (std::size_t gi = 0; gi < gts.size(); ++gi) {
    if (!gt_taken[gi]) ++res.per_class[gts[gi].label].fn;
  }
  return res;
}

std::pair<double, double> precision_recall(const MatchResult& m,
                                           const std::string& label) {
  auto it = m.per_class.find(label);
  const ClassCounts c = it == m.per_class.end() ? ClassCounts{} : it->second;
  const double p = (c.tp + c.fp) > 0 ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0.0;
  const double r = (c.tp + c.fn) > 0 ? static_cast<double>(c.tp) / (c.tp + c.fn) : 1.0;
  return {p, r};
}

PRCurve pr_curve(const DetsByImage& dets, const GtsByImage& gts,
                 const std::string& label, double a_min) {
  PRCurve curve;
  curve.label = label;

  long total_gt = 0;
  for (const auto& [img, boxes] : gts) {
    for (const auto& g : boxes) {
      if (g.label == label) ++total_gt;
    }
  }

  // Flag every detection of the class TP/FP by greedy in-image matching,
  // then sweep the pooled score axis. A prefix of the score order matches
  // exactly like the full greedy run, so cumulative flags are sound.
  struct Flagged {
    double score;
    bool tp;
  };
  std::vector<Flagged> flagged;
  for (const auto& [img, boxes] : dets) {
    auto git = gts.find(img);
    static const std::vector<LabeledBox> kNoGt;
    const auto& gt_boxes = git == gts.end() ? kNoGt : git->second;
    const MatchResult m = match_detections(boxes, gt_boxes, a_min);
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (boxes[i].label != label) continue;
      flagged.push_back(Flagged{boxes[i].score, m.matched_gt[i].has_value()});
    }
  }
  std::sort(flagged.begin(), flagged.end(), [](const Flagged& a, const Flagged& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.tp && !b.tp;  // stable within a threshold: order is irrelevant
  });

  long tp = 0, fp = 0;
  for (std::size_t i = 0; i < flagged.size(); ++i) {
    tp += flagged[i].tp ? 1 : 0;
    fp += flagged[i].tp ? 0 : 1;
    const bool last_of_score =
        i + 1 == flagged.size() || flagged[i + 1].score != flagged[i].score;
    if (!last_of_score) continue;
    PRPoint pt;
    pt.threshold = flagged[i].score;
    pt.recall = total_gt > 0 ? static_cast<double>(tp) / total_gt : 1.0;
    pt.precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    curve.points.push_back(pt);
  }
  return curve;
}

double average_precision(const PRCurve& curve) {
  if (curve.points.empty()) return 0.0;
  const std::size_t n = curve.points.size();
  // Monotone precision envelope: max precision at this recall or greater.
  std::vector<double> envelope(n);
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    running = std::max(running, curve.points[i].precision);
    envelope[i] = running;
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (curve.points[i].recall - prev_recall) * envelope[i];
    prev_recall = curve.points[i].recall;
  }
  return ap;
}

std::map<std::string, std::optional<double>> average_recall(
    const std::vector<MatchResult>& per_image) {
  std::map<std::string, std::pair<double, long>> acc;  // sum of recalls, images
  for (const auto& m : per_image) {
    for (const auto& [label, c] : m.per_class) {
      if (c.tp + c.fn == 0) continue;  // image has no ground truth of the class
      auto& a = acc[label];
      a.first += static_cast<double>(c.tp) / (c.tp + c.fn);
      a.second += 1;
    }
  }
  std::map<std::string, std::optional<double>> out;
  for (const auto& m : per_image) {
    for (const auto& [label, c] : m.per_class) {
      if (out.count(label)) continue;
      auto it = acc.find(label);
      if (it == acc.end()) {
        out[label] = std::nullopt;
      } else {
        out[label] = it->second.first / it->second.second;
      }
    }
  }
  return out;
}

EvalReport evaluate(const DetsByImage& dets, const GtsByImage& gts,
                    double a_min) {
  std::set<std::string> classes;
  for (const auto& [img, boxes] : gts) {
    for (const auto& g : boxes) classes.insert(g.label);
  }
  for (const auto& [img, boxes] : dets) {
    for (const auto& d : boxes) classes.insert(d.label);
  }
  if (classes.empty()) {
    throw std::invalid_argument("evaluate: no classes present");
  }

  std::vector<MatchResult> per_image;
  for (const auto& [img, gt_boxes] : gts) {
    auto dit = dets.find(img);
    static const std::vector<ScoredBox> kNoDet;
    per_image.push_back(
        match_detections(dit == dets.end() ? kNoDet : dit->second, gt_boxes, a_min));
  }
  // Images that carry detections but no ground-truth entry.
  for (const auto& [img, det_boxes] : dets) {
    if (!gts.count(img)) {
      per_image.push_back(match_detections(det_boxes, {}, a_min));
    }
  }

  EvalReport report;
  report.n_cls = static_cast<int>(classes.size());
  const auto ar = average_recall(per_image);
  double ap_sum = 0.0;
  double ar_sum = 0.0;
  int ar_count = 0;
  for (const auto& label : classes) {
    PRCurve curve = pr_curve(dets, gts, label, a_min);
    const double ap = average_precision(curve);
    report.ap[label] = ap;
    ap_sum += ap;
    auto it = ar.find(label);
    if (it != ar.end() && it->second.has_value()) {
      report.ar[label] = it->second;
      ar_sum += *it->second;
      ++ar_count;
    } else {
      report.ar[label] = std::nullopt;
    }
    report.curves[label] = std::move(curve);
  }
  report.map = ap_sum / classes.size();
  report.mar = ar_count > 0 ? ar_sum / ar_count : 0.0;
  return report;
}

}  // namespace avscnet
