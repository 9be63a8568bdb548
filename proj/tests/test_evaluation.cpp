#include <algorithm>
#include <cmath>

#include "avscnet/evaluation.hpp"
#include "avscnet/rng.hpp"
#include "doctest.h"
#include "reference.hpp"

using namespace avscnet;

namespace {

// Boxes engineered so iou(det, gt) is exactly h/10 against a 10x10 gt.
Box gt_box(int slot) { return Box{slot * 1000.0, 0.0, slot * 1000.0 + 10.0, 10.0}; }

Box det_box(int slot, double target_iou) {
  if (target_iou <= 0.0) {
    return Box{slot * 1000.0 + 500.0, 0.0, slot * 1000.0 + 510.0, 10.0};
  }
  return Box{slot * 1000.0, 0.0, slot * 1000.0 + 10.0, 10.0 * target_iou};
}

}  // namespace

TEST_CASE("match_detections") {
  const std::vector<LabeledBox> gts{{gt_box(0), "Pm"}};

  SUBCASE("IoU above the threshold matches") {
    const std::vector<ScoredBox> dets{{det_box(0, 0.6), "Pm", 0.9}};
    const MatchResult m = match_detections(dets, gts, 0.5);
    CHECK(m.per_class.at("Pm").tp == 1);
    CHECK(m.per_class.at("Pm").fp == 0);
    CHECK(m.per_class.at("Pm").fn == 0);
    CHECK(m.matched_gt[0] == 0);
  }

  SUBCASE("IoU below the threshold is FP plus FN") {
    const std::vector<ScoredBox> dets{{det_box(0, 0.4), "Pm", 0.9}};
    const MatchResult m = match_detections(dets, gts, 0.5);
    CHECK(m.per_class.at("Pm").tp == 0);
    CHECK(m.per_class.at("Pm").fp == 1);
    CHECK(m.per_class.at("Pm").fn == 1);
  }

  SUBCASE("IoU exactly at the threshold fails the strict inequality") {
    const std::vector<ScoredBox> dets{{det_box(0, 0.5), "Pm", 0.9}};
    const MatchResult m = match_detections(dets, gts, 0.5);
    CHECK(m.per_class.at("Pm").tp == 0);
  }

  SUBCASE("each ground truth matches at most once") {
    const std::vector<ScoredBox> dets{{det_box(0, 1.0), "Pm", 0.9},
                                      {det_box(0, 0.8), "Pm", 0.7}};
    const MatchResult m = match_detections(dets, gts, 0.5);
    CHECK(m.per_class.at("Pm").tp == 1);
    CHECK(m.per_class.at("Pm").fp == 1);
  }

  SUBCASE("labels must agree") {
    const std::vector<ScoredBox> dets{{det_box(0, 1.0), "Nb", 0.9}};
    const MatchResult m = match_detections(dets, gts, 0.5);
    CHECK(m.per_class.at("Nb").fp == 1);
    CHECK(m.per_class.at("Pm").fn == 1);
  }
}

TEST_CASE("precision_recall") {
  MatchResult m;
  m.per_class["Pm"] = ClassCounts{8, 2, 2};
  const auto [p, r] = precision_recall(m, "Pm");
  CHECK(p == doctest::Approx(0.8));
  CHECK(r == doctest::Approx(0.8));

  MatchResult none;
  none.per_class["Pm"] = ClassCounts{0, 5, 0};
  CHECK(precision_recall(none, "Pm").first == 0.0);
  CHECK(precision_recall(none, "Pm").second == 1.0);  // no ground truths

  MatchResult perfect;
  perfect.per_class["Pm"] = ClassCounts{4, 0, 0};
  CHECK(precision_recall(perfect, "Pm").first == 1.0);
  CHECK(precision_recall(perfect, "Pm").second == 1.0);
}

TEST_CASE("pr_curve and average_precision hand case") {
  // 3 gts; detections: .9 TP, .8 FP, .7 TP, .6 FP
  GtsByImage gts;
  gts["img"] = {{gt_box(0), "Pm"}, {gt_box(1), "Pm"}, {gt_box(2), "Pm"}};
  DetsByImage dets;
  dets["img"] = {{det_box(0, 0.9), "Pm", 0.9},
                 {det_box(0, 0.0), "Pm", 0.8},
                 {det_box(1, 0.9), "Pm", 0.7},
                 {det_box(2, 0.3), "Pm", 0.6}};

  const PRCurve curve = pr_curve(dets, gts, "Pm", 0.5);
  REQUIRE(curve.points.size() == 4);
  CHECK(curve.points[0].recall == doctest::Approx(1.0 / 3));
  CHECK(curve.points[0].precision == doctest::Approx(1.0));
  CHECK(curve.points[1].recall == doctest::Approx(1.0 / 3));
  CHECK(curve.points[1].precision == doctest::Approx(0.5));
  CHECK(curve.points[2].recall == doctest::Approx(2.0 / 3));
  CHECK(curve.points[2].precision == doctest::Approx(2.0 / 3));
  CHECK(curve.points[3].recall == doctest::Approx(2.0 / 3));
  CHECK(curve.points[3].precision == doctest::Approx(0.5));

  CHECK(average_precision(curve) == doctest::Approx(5.0 / 9.0).epsilon(1e-9));
  CHECK(average_precision(curve) == doctest::Approx(0.5556).epsilon(1e-3));

  // Recall never decreases along the sweep.
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    CHECK(curve.points[i].recall >= curve.points[i - 1].recall);
  }
}

TEST_CASE("average_precision edge detectors") {
  GtsByImage gts;
  gts["img"] = {{gt_box(0), "Pm"}, {gt_box(1), "Pm"}};

  SUBCASE("perfect detector") {
    DetsByImage dets;
    dets["img"] = {{det_box(0, 1.0), "Pm", 0.9}, {det_box(1, 1.0), "Pm", 0.8}};
    const PRCurve curve = pr_curve(dets, gts, "Pm", 0.5);
    CHECK(average_precision(curve) == doctest::Approx(1.0));
    for (const auto& p : curve.points) CHECK(p.precision == doctest::Approx(1.0));
  }

  SUBCASE("all-wrong detector") {
    DetsByImage dets;
    dets["img"] = {{det_box(0, 0.0), "Pm", 0.9}, {det_box(1, 0.2), "Pm", 0.8}};
    const PRCurve curve = pr_curve(dets, gts, "Pm", 0.5);
    CHECK(average_precision(curve) == doctest::Approx(0.0));
    for (const auto& p : curve.points) CHECK(p.precision == doctest::Approx(0.0));
  }
}

TEST_CASE("average_recall") {
  std::vector<MatchResult> per_image(2);
  per_image[0].per_class["Pm"] = ClassCounts{2, 0, 0};  // recall 1.0
  per_image[1].per_class["Pm"] = ClassCounts{1, 0, 1};  // recall 0.5
  per_image[0].per_class["Nb"] = ClassCounts{0, 3, 0};  // no gts -> excluded
  const auto ar = average_recall(per_image);
  CHECK(ar.at("Pm").value() == doctest::Approx(0.75));
  CHECK(!ar.at("Nb").has_value());
}

TEST_CASE("evaluate") {
  SUBCASE("two classes average their APs") {
    GtsByImage gts;
    gts["img"] = {{gt_box(0), "Nb"}, {gt_box(1), "Pm"}};
    DetsByImage dets;
    dets["img"] = {{det_box(0, 1.0), "Nb", 0.9}, {det_box(1, 1.0), "Pm", 0.8}};
    const EvalReport rep = evaluate(dets, gts, 0.5);
    CHECK(rep.n_cls == 2);
    CHECK(rep.map == doctest::Approx(0.5 * (rep.ap.at("Nb") + rep.ap.at("Pm"))));
    CHECK(rep.map == doctest::Approx(1.0));
    CHECK(rep.mar == doctest::Approx(1.0));
  }

  SUBCASE("empty input is rejected") {
    CHECK_THROWS_AS(evaluate({}, {}, 0.5), std::invalid_argument);
  }

  SUBCASE("AP is invariant under monotone score transforms") {
    Rng rng(19);
    GtsByImage gts;
    DetsByImage dets;
    for (int img = 0; img < 5; ++img) {
      const std::string id = "img" + std::to_string(img);
      for (int g = 0; g < 3; ++g) {
        gts[id].push_back({gt_box(g), "Pm"});
        if (rng.bernoulli(0.8)) {
          dets[id].push_back({det_box(g, rng.uniform(0.3, 1.0)), "Pm",
                              rng.uniform(0.1, 0.9)});
        }
      }
      if (rng.bernoulli(0.5)) {
        dets[id].push_back({det_box(7, 0.0), "Pm", rng.uniform(0.1, 0.9)});
      }
    }
    const EvalReport a = evaluate(dets, gts, 0.5);
    DetsByImage squared = dets;
    for (auto& [img, boxes] : squared) {
      for (auto& d : boxes) d.score = d.score * d.score;  // order preserving
    }
    const EvalReport b = evaluate(squared, gts, 0.5);
    CHECK(a.ap.at("Pm") == doctest::Approx(b.ap.at("Pm")).epsilon(1e-12));
  }

  SUBCASE("a trailing zero-IoU false positive never increases AP") {
    GtsByImage gts;
    gts["img"] = {{gt_box(0), "Pm"}, {gt_box(1), "Pm"}};
    DetsByImage dets;
    dets["img"] = {{det_box(0, 0.9), "Pm", 0.9}, {det_box(1, 0.8), "Pm", 0.6}};
    const double before = evaluate(dets, gts, 0.5).ap.at("Pm");
    dets["img"].push_back({det_box(5, 0.0), "Pm", 0.05});
    const double after = evaluate(dets, gts, 0.5).ap.at("Pm");
    CHECK(after <= before + 1e-12);
  }

  SUBCASE("raising a_min never increases the TP count") {
    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<LabeledBox> gts;
      std::vector<ScoredBox> dets;
      for (int g = 0; g < 4; ++g) {
        gts.push_back({gt_box(g), "Pm"});
        dets.push_back({det_box(g, rng.uniform(0.0, 1.0)), "Pm",
                        rng.uniform(0.0, 1.0)});
      }
      const MatchResult lo = match_detections(dets, gts, 0.3);
      const MatchResult hi = match_detections(dets, gts, 0.7);
      CHECK(hi.per_class.at("Pm").tp <= lo.per_class.at("Pm").tp);
    }
  }

  SUBCASE("count identities hold per class") {
    Rng rng(23);
    GtsByImage gts;
    DetsByImage dets;
    long total_gt = 0, total_det = 0;
    for (int img = 0; img < 6; ++img) {
      const std::string id = "img" + std::to_string(img);
      gts[id] = {};
      const int ng = 1 + static_cast<int>(rng.index(3));
      for (int g = 0; g < ng; ++g) {
        gts[id].push_back({gt_box(g), "Pm"});
        ++total_gt;
      }
      const int nd = static_cast<int>(rng.index(4));
      for (int d = 0; d < nd; ++d) {
        dets[id].push_back({det_box(static_cast<int>(rng.index(4)),
                                    rng.uniform(0.0, 1.0)),
                            "Pm", rng.uniform(0.0, 1.0)});
        ++total_det;
      }
    }
    long tp = 0, fp = 0, fn = 0;
    for (const auto& [id, gt_boxes] : gts) {
      const MatchResult m = match_detections(
          dets.count(id) ? dets.at(id) : std::vector<ScoredBox>{}, gt_boxes, 0.5);
      tp += m.per_class.at("Pm").tp;
      fp += m.per_class.at("Pm").fp;
      fn += m.per_class.at("Pm").fn;
    }
    CHECK(tp + fn == total_gt);
    CHECK(tp + fp == total_det);
  }
}

TEST_CASE("evaluate matches the brute-force reference on tiny instances") {
  // Exhaustive sweep of small configurations: every detection either targets
  // one of the gts at IoU in {0.4, 0.6, 1.0} or is a zero-IoU background box;
  // scores are a fixed descending ladder assigned by permutation.
  const double ious[3] = {0.4, 0.6, 1.0};
  const double ladder[4] = {0.9, 0.8, 0.7, 0.6};
  int checked = 0;
  for (int n_gt = 0; n_gt <= 2; ++n_gt) {
    for (int n_det = 0; n_det <= 3; ++n_det) {
      // Each det picks a target in [0, n_gt*3]: gt*3 + iou level, or none.
      const int options = n_gt * 3 + 1;
      std::vector<int> choice(n_det, 0);
      while (true) {
        std::vector<int> perm(n_det);
        for (int i = 0; i < n_det; ++i) perm[i] = i;
        do {
          GtsByImage gts;
          DetsByImage dets;
          gts["img"] = {};
          for (int g = 0; g < n_gt; ++g) gts["img"].push_back({gt_box(g), "Pm"});
          dets["img"] = {};
          for (int d = 0; d < n_det; ++d) {
            const int c = choice[d];
            Box b = c == 0 ? det_box(50 + d, 0.0)
                           : det_box((c - 1) / 3, ious[(c - 1) % 3]);
            dets["img"].push_back({b, "Pm", ladder[perm[d]]});
          }
          if (n_gt > 0 || n_det > 0) {
            const EvalReport mine = evaluate(dets, gts, 0.5);
            const auto ref = reference::evaluate_serial(
                {{"img", dets["img"]}}, {{"img", gts["img"]}}, 0.5);
            const MatchResult m =
                match_detections(dets["img"], gts["img"], 0.5);
            const auto& rc = ref.per_class.at("Pm");
            CHECK(m.per_class.at("Pm").tp == rc.tp);
            CHECK(m.per_class.at("Pm").fp == rc.fp);
            CHECK(m.per_class.at("Pm").fn == rc.fn);
            CHECK(std::abs(mine.ap.at("Pm") - rc.ap) < 1e-12);
            ++checked;
          }
        } while (std::next_permutation(perm.begin(), perm.end()));
        // Advance the per-detection choice counter.
        int pos = 0;
        while (pos < n_det && ++choice[pos] == options) {
          choice[pos] = 0;
          ++pos;
        }
        if (pos == n_det) break;
        if (n_det == 0) break;
      }
    }
  }
  CHECK(checked > 1000);
}
