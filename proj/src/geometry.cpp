#include "avscnet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace avscnet {

namespace {

// Largest log size ratio decode_deltas will exponentiate.
const double kMaxLogScale = std::log(1000.0 / 16.0);

bool all_finite(std::initializer_list<double> xs) {
  for (double x : xs) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace

bool Box::valid() const {
  return all_finite({x1, y1, x2, y2}) && x1 < x2 && y1 < y2;
}

bool BoxDelta::finite() const { return all_finite({tx, ty, tw, th}); }

double iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) {
    throw std::invalid_argument("iou: degenerate or non-finite box");
  }
  const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

std::vector<Box> generate_anchors(const std::vector<double>& ratios,
                                  const std::vector<double>& scales,
                                  double stride, int grid_w, int grid_h) {
  if (ratios.empty() || scales.empty()) {
    throw std::invalid_argument("generate_anchors: empty ratios or scales");
  }
  for (double r : ratios) {
    if (!(r > 0.0)) throw std::invalid_argument("generate_anchors: ratio <= 0");
  }
  for (double s : scales) {
    if (!(s > 0.0)) throw std::invalid_argument("generate_anchors: scale <= 0");
  }
  if (!(stride > 0.0)) {
    throw std::invalid_argument("generate_anchors: stride <= 0");
  }
  if (grid_w <= 0 || grid_h <= 0) return {};

  std::vector<Box> anchors;
  anchors.reserve(static_cast<std::size_t>(grid_w) * grid_h * ratios.size() *
                  scales.size());
  for (int row = 0; row < grid_h; ++row) {
    for (int col = 0; col < grid_w; ++col) {
      const double cx = (col + 0.5) * stride;
      const double cy = (row + 0.5) * stride;
      for (double r : ratios) {
        const double w = 1.0 / std::sqrt(r);
        const double h = std::sqrt(r);
        for (double s : scales) {
          anchors.push_back(Box{cx - 0.5 * s * w, cy - 0.5 * s * h,
                                cx + 0.5 * s * w, cy + 0.5 * s * h});
        }
      }
    }
  }
  return anchors;
}

BoxDelta encode_deltas(const Box& anchor, const Box& gt) {
  if (!anchor.valid() || !gt.valid()) {
    throw std::invalid_argument("encode_deltas: invalid box");
  }
  BoxDelta d;
  d.tx = (gt.cx() - anchor.cx()) / anchor.width();
  d.ty = (gt.cy() - anchor.cy()) / anchor.height();
  d.tw = std::log(gt.width() / anchor.width());
  d.th = std::log(gt.height() / anchor.height());
  return d;
}

Box decode_deltas(const Box& anchor, const BoxDelta& d,
                  std::optional<ImageSize> bounds) {
  if (!anchor.valid()) {
    throw std::invalid_argument("decode_deltas: invalid anchor");
  }
  if (!d.finite()) {
    throw std::invalid_argument("decode_deltas: non-finite delta");
  }
  const double cx = anchor.cx() + d.tx * anchor.width();
  const double cy = anchor.cy() + d.ty * anchor.height();
  const double w = anchor.width() * std::exp(std::min(d.tw, kMaxLogScale));
  const double h = anchor.height() * std::exp(std::min(d.th, kMaxLogScale));
  Box out{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  if (bounds) {
    out.x1 = std::clamp(out.x1, 0.0, bounds->w);
    out.x2 = std::clamp(out.x2, 0.0, bounds->w);
    out.y1 = std::clamp(out.y1, 0.0, bounds->h);
    out.y2 = std::clamp(out.y2, 0.0, bounds->h);
  }
  return out;
}

std::vector<std::size_t> nms(const std::vector<ScoredBox>& candidates,
                             double threshold) {
  for (const ScoredBox& c : candidates) {
    if (!(c.score >= 0.0 && c.score <= 1.0)) {
      throw std::invalid_argument("nms: score outside [0,1]");
    }
    if (!c.box.valid()) {
      throw std::invalid_argument("nms: invalid box");
    }
  }
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (candidates[a].score != candidates[b].score) {
      return candidates[a].score > candidates[b].score;
    }
    return a < b;  // equal scores: lower original index wins
  });

  std::vector<std::size_t> keep;
  for (std::size_t idx : order) {
    bool suppressed = false;
    for (std::size_t kept : keep) {
      if (iou(candidates[idx].box, candidates[kept].box) > threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) keep.push_back(idx);
  }
  return keep;
}

}  // namespace avscnet
