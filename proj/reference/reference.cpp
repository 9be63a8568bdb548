#include "reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace avscnet::reference {

double iou_serial(const Box& a, const Box& b) {
  const double ax = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ay = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ax * ay;
  const double area_a = (a.x2 - a.x1) * (a.y2 - a.y1);
  const double area_b = (b.x2 - b.x1) * (b.y2 - b.y1);
  const double uni = area_a + area_b - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<std::size_t> nms_serial(const std::vector<ScoredBox>& boxes,
                                    double threshold) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return boxes[a].score > boxes[b].score;
  });
  std::vector<bool> suppressed(boxes.size(), false);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (suppressed[i]) continue;
    keep.push_back(order[i]);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      if (suppressed[j]) continue;
      if (iou_serial(boxes[order[i]].box, boxes[order[j]].box) > threshold) {
        suppressed[j] = true;
      }
    }
  }
  return keep;
}

FeatureMap conv2d_serial(const FeatureMap& map, const std::vector<double>& weights,
                         const ConvSpec& spec) {
  const int ow = (map.w + 2 * spec.p - spec.k) / spec.s1 + 1;
  const int oh = (map.h + 2 * spec.p - spec.k) / spec.s2 + 1;
  FeatureMap out(spec.out_channels, oh, ow);
  for (int oc = 0; oc < spec.out_channels; ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (int ic = 0; ic < map.c; ++ic) {
          for (int ky = 0; ky < spec.k; ++ky) {
            for (int kx = 0; kx < spec.k; ++kx) {
              const int iy = oy * spec.s2 - spec.p + ky;
              const int ix = ox * spec.s1 - spec.p + kx;
              double v = 0.0;
              if (iy >= 0 && iy < map.h && ix >= 0 && ix < map.w) {
                v = map.at(ic, iy, ix);
              }
              const std::size_t widx =
                  ((static_cast<std::size_t>(oc) * map.c + ic) * spec.k + ky) *
                      spec.k +
                  kx;
              acc += v * weights[widx];
            }
          }
        }
        out.at(oc, oy, ox) = acc;
      }
    }
  }
  return out;
}

FeatureMap max_pool_serial(const FeatureMap& map, int k, int s) {
  const int ow = (map.w - k) / s + 1;
  const int oh = (map.h - k) / s + 1;
  FeatureMap out(map.c, oh, ow);
  for (int c = 0; c < map.c; ++c) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double m = -std::numeric_limits<double>::infinity();
        for (int dy = 0; dy < k; ++dy) {
          for (int dx = 0; dx < k; ++dx) {
            m = std::max(m, map.at(c, oy * s + dy, ox * s + dx));
          }
        }
        out.at(c, oy, ox) = m;
      }
    }
  }
  return out;
}

double bilinear_at(const FeatureMap& map, int ch, double x, double y) {
  if (x < 0.0) x = 0.0;
  if (y < 0.0) y = 0.0;
  if (x > map.w - 1) x = map.w - 1;
  if (y > map.h - 1) y = map.h - 1;
  int x0 = static_cast<int>(x);
  int y0 = static_cast<int>(y);
  if (x0 > map.w - 1) x0 = map.w - 1;
  if (y0 > map.h - 1) y0 = map.h - 1;
  const int x1 = std::min(x0 + 1, map.w - 1);
  const int y1 = std::min(y0 + 1, map.h - 1);
  const double u = x - x0;
  const double v = y - y0;
  const double f00 = map.at(ch, y0, x0);
  const double f10 = map.at(ch, y0, x1);
  const double f01 = map.at(ch, y1, x0);
  const double f11 = map.at(ch, y1, x1);
  // Incremental form of the bilinear surface.
  return f00 + u * (f10 - f00) + v * (f01 - f00) +
         u * v * (f00 + f11 - f10 - f01);
}

FeatureMap upsample_x2_serial(const FeatureMap& map) {
  FeatureMap out(map.c, 2 * map.h, 2 * map.w);
  const double sx = map.w > 1 ? (map.w - 1.0) / (2.0 * map.w - 1.0) : 0.0;
  const double sy = map.h > 1 ? (map.h - 1.0) / (2.0 * map.h - 1.0) : 0.0;
  for (int c = 0; c < map.c; ++c) {
    for (int y = 0; y < out.h; ++y) {
      for (int x = 0; x < out.w; ++x) {
        out.at(c, y, x) = bilinear_at(map, c, x * sx, y * sy);
      }
    }
  }
  return out;
}

std::vector<double> dense_bin_patch(const FeatureMap& map, double x1, double y1,
                                    double x2, double y2, int out, int g) {
  std::vector<double> patch(static_cast<std::size_t>(map.c) * out * out, 0.0);
  const double bw = (x2 - x1) / out;
  const double bh = (y2 - y1) / out;
  for (int ch = 0; ch < map.c; ++ch) {
    for (int by = 0; by < out; ++by) {
      for (int bx = 0; bx < out; ++bx) {
        double acc = 0.0;
        for (int sy = 0; sy < g; ++sy) {
          for (int sx = 0; sx < g; ++sx) {
            const double x = x1 + bw * (bx + (sx + 0.5) / g);
            const double y = y1 + bh * (by + (sy + 0.5) / g);
            acc += bilinear_at(map, ch, x, y);
          }
        }
        patch[(static_cast<std::size_t>(ch) * out + by) * out + bx] =
            acc / (static_cast<double>(g) * g);
      }
    }
  }
  return patch;
}

std::vector<double> bin_center_samples(const FeatureMap& map, double x1,
                                       double y1, double x2, double y2, int n) {
  std::vector<double> samples(static_cast<std::size_t>(map.c) * n * n, 0.0);
  const double bw = (x2 - x1) / n;
  const double bh = (y2 - y1) / n;
  for (int ch = 0; ch < map.c; ++ch) {
    for (int gy = 0; gy < n; ++gy) {
      for (int gx = 0; gx < n; ++gx) {
        samples[(static_cast<std::size_t>(ch) * n + gy) * n + gx] =
            bilinear_at(map, ch, x1 + bw * (gx + 0.5), y1 + bh * (gy + 0.5));
      }
    }
  }
  return samples;
}

double dense_region_mean(const FeatureMap& map, double x1, double y1, double x2,
                         double y2, int gx, int gy) {
  double acc = 0.0;
  for (int ch = 0; ch < map.c; ++ch) {
    for (int iy = 0; iy < gy; ++iy) {
      for (int ix = 0; ix < gx; ++ix) {
        const double x = x1 + (x2 - x1) * (ix + 0.5) / gx;
        const double y = y1 + (y2 - y1) * (iy + 0.5) / gy;
        acc += bilinear_at(map, ch, x, y);
      }
    }
  }
  return acc / (static_cast<double>(gx) * gy * std::max(map.c, 1));
}

namespace {

struct FlatDet {
  std::string image;
  ScoredBox det;
};

// Greedy match of one image's detections (already score-filtered) against its
// gts; returns per-class tp/fp and the matched gt flags for fn counting.
void match_image(const std::vector<ScoredBox>& dets,
                 const std::vector<LabeledBox>& gts, double a_min,
                 std::map<std::string, RefClassEval>& acc) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t oi : order) {
    const ScoredBox& d = dets[oi];
    double best = 0.0;
    std::size_t arg = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].label != d.label) continue;
      const double v = iou_serial(d.box, gts[g].box);
      if (v > best) {
        best = v;
        arg = g;
      }
    }
    if (arg < gts.size() && best > a_min) {
      taken[arg] = true;
      acc[d.label].tp += 1;
    } else {
      acc[d.label].fp += 1;
    }
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (!taken[g]) acc[gts[g].label].fn += 1;
  }
}

}  // namespace

RefEval evaluate_serial(const std::map<std::string, std::vector<ScoredBox>>& dets,
                        const std::map<std::string, std::vector<LabeledBox>>& gts,
                        double a_min) {
  std::set<std::string> classes;
  std::set<double> scores;
  for (const auto& [img, boxes] : gts) {
    for (const auto& g : boxes) classes.insert(g.label);
  }
  for (const auto& [img, boxes] : dets) {
    for (const auto& d : boxes) {
      classes.insert(d.label);
      scores.insert(d.score);
    }
  }
  std::set<std::string> images;
  for (const auto& [img, boxes] : gts) images.insert(img);
  for (const auto& [img, boxes] : dets) images.insert(img);

  std::map<std::string, long> total_gt;
  for (const auto& [img, boxes] : gts) {
    for (const auto& g : boxes) total_gt[g.label] += 1;
  }

  // Re-match from scratch at each threshold, highest first.
  std::vector<double> thresholds(scores.begin(), scores.end());
  std::sort(thresholds.rbegin(), thresholds.rend());

  struct PRRow {
    double recall = 0.0;
    double precision = 0.0;
  };
  std::map<std::string, std::vector<PRRow>> curve;
  std::map<std::string, RefClassEval> final_counts;
  for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
    const double tau = thresholds[ti];
    std::map<std::string, RefClassEval> acc;
    for (const auto& img : images) {
      std::vector<ScoredBox> kept;
      auto dit = dets.find(img);
      if (dit != dets.end()) {
        for (const auto& d : dit->second) {
          if (d.score >= tau) kept.push_back(d);
        }
      }
      auto git = gts.find(img);
      static const std::vector<LabeledBox> kEmpty;
      match_image(kept, git == gts.end() ? kEmpty : git->second, a_min, acc);
    }
    for (const auto& cls : classes) {
      const RefClassEval c = acc.count(cls) ? acc.at(cls) : RefClassEval{};
      PRRow row;
      const long tg = total_gt.count(cls) ? total_gt.at(cls) : 0;
      row.recall = tg > 0 ? static_cast<double>(c.tp) / tg : 1.0;
      row.precision = (c.tp + c.fp) > 0 ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0.0;
      curve[cls].push_back(row);
    }
    if (ti + 1 == thresholds.size()) final_counts = acc;
  }
  if (thresholds.empty()) {
    // No detections at all: everything is a miss.
    std::map<std::string, RefClassEval> acc;
    for (const auto& img : images) {
      auto git = gts.find(img);
      static const std::vector<LabeledBox> kEmpty;
      match_image({}, git == gts.end() ? kEmpty : git->second, a_min, acc);
    }
    final_counts = acc;
  }

  RefEval out;
  double ap_sum = 0.0;
  for (const auto& cls : classes) {
    RefClassEval e;
    if (final_counts.count(cls)) {
      e = final_counts.at(cls);
    } else if (total_gt.count(cls)) {
      e.fn = total_gt.at(cls);
    }
    double ap = 0.0;
    const auto& rows = curve[cls];
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      double env = 0.0;
      for (std::size_t j = i; j < rows.size(); ++j) {
        env = std::max(env, rows[j].precision);
      }
      ap += (rows[i].recall - prev_recall) * env;
      prev_recall = rows[i].recall;
    }
    e.ap = ap;
    ap_sum += ap;
    out.per_class[cls] = e;
  }
  out.map = classes.empty() ? 0.0 : ap_sum / classes.size();
  return out;
}

}  // namespace avscnet::reference
