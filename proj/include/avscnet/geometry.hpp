#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace avscnet {

// Axis-aligned box in continuous pixel coordinates, origin top-left.
// Corner convention is half-open [x1,x2) x [y1,y2), so area = (x2-x1)*(y2-y1).
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }

  // Strictly positive area and finite coordinates.
  bool valid() const;
};

struct ScoredBox {
  Box box;
  std::string label;
  double score = 0.0;  // confidence in [0,1]
};

// Center offsets normalized by anchor size plus log size ratios.
struct BoxDelta {
  double tx = 0.0;
  double ty = 0.0;
  double tw = 0.0;
  double th = 0.0;

  bool finite() const;
};

struct ImageSize {
  double w = 0.0;
  double h = 0.0;
};

// |a∩b| / |a∪b|. Throws std::invalid_argument on degenerate boxes.
double iou(const Box& a, const Box& b);

// Anchors tiled over a grid of cells. Cell (row, col) centers its anchors at
// ((col+0.5)*stride, (row+0.5)*stride). For ratio r (height/width) and scale s
// the anchor has width s/sqrt(r) and height s*sqrt(r), preserving area s².
// Order: row-major cells, then ratios, then scales.
std::vector<Box> generate_anchors(const std::vector<double>& ratios,
                                  const std::vector<double>& scales,
                                  double stride, int grid_w, int grid_h);

BoxDelta encode_deltas(const Box& anchor, const Box& gt);

// Inverse of encode_deltas. tw/th are clamped to log(1000/16) before
// exponentiation. When bounds are given the corners are clipped into
// [0,w] x [0,h]; the result can then be degenerate and callers filter.
Box decode_deltas(const Box& anchor, const BoxDelta& d,
                  std::optional<ImageSize> bounds = std::nullopt);

// Greedy NMS: sort by score descending (ties: lower index first), keep a box
// iff its IoU with every already-kept box is <= threshold. Returns the kept
// original indices in keep order.
std::vector<std::size_t> nms(const std::vector<ScoredBox>& candidates,
                             double threshold);

}  // namespace avscnet
