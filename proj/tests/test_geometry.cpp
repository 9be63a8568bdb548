#include <cmath>
#include <stdexcept>

#include "avscnet/geometry.hpp"
#include "avscnet/rng.hpp"
#include "doctest.h"
#include "reference.hpp"

using namespace avscnet;

namespace {

Box random_box(Rng& rng, double extent) {
  const double x1 = rng.uniform(0.0, extent);
  const double y1 = rng.uniform(0.0, extent);
  return Box{x1, y1, x1 + rng.uniform(1.0, extent), y1 + rng.uniform(1.0, extent)};
}

}  // namespace

TEST_CASE("iou basics") {
  const Box a{0, 0, 10, 10};
  CHECK(iou(a, a) == doctest::Approx(1.0));
  CHECK(iou(a, Box{20, 20, 30, 30}) == 0.0);
  // inter = 50, union = 150
  CHECK(iou(a, Box{5, 0, 15, 10}) == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
  CHECK_THROWS_AS(iou(a, Box{5, 5, 5, 9}), std::invalid_argument);
  CHECK_THROWS_AS(iou(Box{0, 0, -1, 4}, a), std::invalid_argument);
}

TEST_CASE("iou properties over random boxes") {
  Rng rng(11);
  for (int i = 0; i < 2000; ++i) {
    const Box a = random_box(rng, 40.0);
    const Box b = random_box(rng, 40.0);
    const double ab = iou(a, b);
    CHECK(ab == iou(b, a));
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
    CHECK(ab == doctest::Approx(reference::iou_serial(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("generate_anchors counts and shapes") {
  const std::vector<double> ratios{0.5, 1.0, 2.0, 3.0};
  const std::vector<double> scales{64.0, 128.0, 256.0, 512.0};
  const auto one_cell = generate_anchors(ratios, scales, 16.0, 1, 1);
  CHECK(one_cell.size() == 16);

  const auto unit = generate_anchors({1.0}, {64.0}, 16.0, 1, 1);
  REQUIRE(unit.size() == 1);
  CHECK(unit[0].cx() == doctest::Approx(8.0));
  CHECK(unit[0].cy() == doctest::Approx(8.0));
  CHECK(unit[0].width() == doctest::Approx(64.0));
  CHECK(unit[0].height() == doctest::Approx(64.0));

  const auto tall = generate_anchors({2.0}, {64.0}, 16.0, 1, 1);
  REQUIRE(tall.size() == 1);
  CHECK(tall[0].width() == doctest::Approx(45.2548).epsilon(1e-4));
  CHECK(tall[0].height() == doctest::Approx(90.5097).epsilon(1e-4));
  // equal-area convention
  CHECK(tall[0].area() == doctest::Approx(64.0 * 64.0));

  CHECK(generate_anchors(ratios, scales, 16.0, 0, 4).empty());
  CHECK_THROWS_AS(generate_anchors({}, scales, 16.0, 2, 2), std::invalid_argument);
  CHECK_THROWS_AS(generate_anchors({-1.0}, scales, 16.0, 2, 2),
                  std::invalid_argument);

  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int gw = 1 + static_cast<int>(rng.index(6));
    const int gh = 1 + static_cast<int>(rng.index(6));
    const auto anchors = generate_anchors(ratios, scales, 8.0, gw, gh);
    CHECK(anchors.size() == static_cast<std::size_t>(gw) * gh * 16);
  }
}

TEST_CASE("encode/decode deltas") {
  const Box a{0, 0, 10, 10};
  const BoxDelta zero = encode_deltas(a, a);
  CHECK(zero.tx == doctest::Approx(0.0));
  CHECK(zero.ty == doctest::Approx(0.0));
  CHECK(zero.tw == doctest::Approx(0.0));
  CHECK(zero.th == doctest::Approx(0.0));

  const Box back = decode_deltas(a, BoxDelta{});
  CHECK(back.x1 == doctest::Approx(0.0));
  CHECK(back.y2 == doctest::Approx(10.0));

  const BoxDelta d = encode_deltas(a, Box{5, 5, 15, 15});
  CHECK(d.tx == doctest::Approx(0.5));
  CHECK(d.ty == doctest::Approx(0.5));
  CHECK(d.tw == doctest::Approx(0.0));
  CHECK(d.th == doctest::Approx(0.0));

  CHECK_THROWS_AS(decode_deltas(a, BoxDelta{std::nan(""), 0, 0, 0}),
                  std::invalid_argument);

  // Clamped log scale keeps adversarial deltas finite.
  const Box huge = decode_deltas(a, BoxDelta{0, 0, 500.0, 500.0});
  CHECK(std::isfinite(huge.x2));
  CHECK(huge.width() == doctest::Approx(10.0 * 1000.0 / 16.0));

  // Bounds clip the decoded box.
  const Box clipped = decode_deltas(a, BoxDelta{2.0, 0, 0, 0}, ImageSize{12, 12});
  CHECK(clipped.x2 == doctest::Approx(12.0));
}

TEST_CASE("encode/decode round-trip over 10000 random pairs") {
  Rng rng(17);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Box anchor = random_box(rng, 60.0);
    const Box gt = random_box(rng, 60.0);
    const Box back = decode_deltas(anchor, encode_deltas(anchor, gt));
    worst = std::max({worst, std::abs(back.x1 - gt.x1), std::abs(back.y1 - gt.y1),
                      std::abs(back.x2 - gt.x2), std::abs(back.y2 - gt.y2)});
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("nms basics") {
  std::vector<ScoredBox> two{{Box{0, 0, 10, 10}, "a", 0.9},
                             {Box{0, 0, 10, 10}, "a", 0.8}};
  const auto keep = nms(two, 0.7);
  REQUIRE(keep.size() == 1);
  CHECK(keep[0] == 0);

  std::vector<ScoredBox> disjoint{{Box{0, 0, 10, 10}, "a", 0.4},
                                  {Box{50, 50, 60, 60}, "a", 0.9}};
  const auto both = nms(disjoint, 0.5);
  REQUIRE(both.size() == 2);
  CHECK(both[0] == 1);  // higher score first
  CHECK(both[1] == 0);

  CHECK(nms({}, 0.5).empty());
  CHECK(nms({{Box{0, 0, 2, 2}, "a", 0.1}}, 0.0).size() == 1);
  CHECK_THROWS_AS(nms({{Box{0, 0, 2, 2}, "a", 1.5}}, 0.5), std::invalid_argument);
}

TEST_CASE("nms ties are broken by original index") {
  std::vector<ScoredBox> boxes{{Box{0, 0, 10, 10}, "a", 0.5},
                               {Box{1, 0, 11, 10}, "a", 0.5},
                               {Box{2, 0, 12, 10}, "a", 0.5}};
  const auto keep = nms(boxes, 0.95);
  REQUIRE(!keep.empty());
  CHECK(keep[0] == 0);
}

TEST_CASE("nms equals the serial reference on jittered boxes") {
  Rng rng(23);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<ScoredBox> boxes;
    for (int i = 0; i < 20; ++i) {
      const double cx = 20.0 + rng.uniform(-6.0, 6.0);
      const double cy = 20.0 + rng.uniform(-6.0, 6.0);
      const double w = rng.uniform(6.0, 14.0);
      const double h = rng.uniform(6.0, 14.0);
      boxes.push_back(ScoredBox{Box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2},
                                "a", rng.uniform(0.0, 1.0)});
    }
    const double thr = rng.uniform(0.1, 0.9);
    const auto keep = nms(boxes, thr);
    const auto ref = reference::nms_serial(boxes, thr);
    CHECK(keep == ref);

    // Kept set is an antichain.
    for (std::size_t i = 0; i < keep.size(); ++i) {
      for (std::size_t j = i + 1; j < keep.size(); ++j) {
        CHECK(iou(boxes[keep[i]].box, boxes[keep[j]].box) <= thr);
      }
    }
    // Threshold 1 keeps everything.
    CHECK(nms(boxes, 1.0).size() == boxes.size());
  }
}
