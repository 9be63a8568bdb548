#include <cmath>
#include <stdexcept>

#include "avscnet/detection_losses.hpp"
#include "avscnet/rng.hpp"
#include "doctest.h"

using namespace avscnet;

TEST_CASE("softmax cross entropy") {
  SUBCASE("uniform logits over 3 classes give ln 3") {
    const auto r = softmax_cross_entropy({0.4, 0.4, 0.4}, 1);
    CHECK(r.loss == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  }

  SUBCASE("saturated correct class has negligible loss") {
    const auto r = softmax_cross_entropy({100.0, 0.0, 0.0}, 0);
    CHECK(r.loss < 1e-6);
    CHECK(r.loss >= 0.0);
  }

  SUBCASE("large logits stay finite (max subtraction)") {
    const auto r = softmax_cross_entropy({1000.0, 999.0}, 1);
    CHECK(std::isfinite(r.loss));
    CHECK(r.loss == doctest::Approx(std::log(1.0 + std::exp(1.0))).epsilon(1e-9));
  }

  SUBCASE("gradient is softmax minus one-hot and matches finite differences") {
    Rng rng(3);
    for (int trial = 0; trial < 40; ++trial) {
      const int k = 2 + static_cast<int>(rng.index(4));
      std::vector<double> logits(k);
      for (double& v : logits) v = rng.uniform(-3.0, 3.0);
      const int label = static_cast<int>(rng.index(k));
      const auto r = softmax_cross_entropy(logits, label);
      const double step = 1e-5;
      for (int j = 0; j < k; ++j) {
        auto up = logits, dn = logits;
        up[j] += step;
        dn[j] -= step;
        const double fd = (softmax_cross_entropy(up, label).loss -
                           softmax_cross_entropy(dn, label).loss) /
                          (2.0 * step);
        CHECK(std::abs(fd - r.grad[j]) / std::max(std::abs(fd), 1e-6) < 1e-5);
      }
    }
  }

  SUBCASE("label out of range is rejected") {
    CHECK_THROWS_AS(softmax_cross_entropy({0.0, 0.0}, 2), std::invalid_argument);
    CHECK_THROWS_AS(softmax_cross_entropy({0.0, 0.0}, -1), std::invalid_argument);
    CHECK_THROWS_AS(softmax_cross_entropy({}, 0), std::invalid_argument);
  }
}

TEST_CASE("smooth l1") {
  SUBCASE("zero residual") {
    const BoxDelta d{0.1, -0.2, 0.3, 0.4};
    CHECK(smooth_l1(d, d).loss == 0.0);
  }

  SUBCASE("piecewise values") {
    CHECK(smooth_l1(BoxDelta{1.0, 0, 0, 0}, BoxDelta{}).loss ==
          doctest::Approx(0.5).epsilon(1e-12));
    CHECK(smooth_l1(BoxDelta{3.0, 0, 0, 0}, BoxDelta{}).loss ==
          doctest::Approx(2.5).epsilon(1e-12));
    CHECK(smooth_l1(BoxDelta{0.5, 0, 0, 0}, BoxDelta{}).loss ==
          doctest::Approx(0.125).epsilon(1e-12));
  }

  SUBCASE("continuous value and derivative at |x| = 1") {
    const double eps = 1e-7;
    const double below = smooth_l1(BoxDelta{1.0 - eps, 0, 0, 0}, BoxDelta{}).loss;
    const double above = smooth_l1(BoxDelta{1.0 + eps, 0, 0, 0}, BoxDelta{}).loss;
    CHECK(std::abs(above - below) < 1e-6);
    const double g_below =
        smooth_l1(BoxDelta{1.0 - eps, 0, 0, 0}, BoxDelta{}).grad.tx;
    const double g_above =
        smooth_l1(BoxDelta{1.0 + eps, 0, 0, 0}, BoxDelta{}).grad.tx;
    CHECK(std::abs(g_above - g_below) < 1e-6);
    CHECK(0.5 - smooth_l1(BoxDelta{1.0 - 1e-9, 0, 0, 0}, BoxDelta{}).loss < 1e-9);
    CHECK(smooth_l1(BoxDelta{1.0 + 1e-9, 0, 0, 0}, BoxDelta{}).loss - 0.5 < 1e-8);
  }

  SUBCASE("gradient matches finite differences away from the kink") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
      BoxDelta pred{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3),
                    rng.uniform(-3, 3)};
      const BoxDelta target{};
      for (double v : {pred.tx, pred.ty, pred.tw, pred.th}) {
        if (std::abs(std::abs(v) - 1.0) < 1e-2) pred.tx += 0.05;  // dodge kink
      }
      const auto r = smooth_l1(pred, target);
      const double step = 1e-5;
      auto up = pred, dn = pred;
      up.tx += step;
      dn.tx -= step;
      const double fd =
          (smooth_l1(up, target).loss - smooth_l1(dn, target).loss) / (2 * step);
      CHECK(std::abs(fd - r.grad.tx) < 1e-5);
    }
  }
}

TEST_CASE("detection loss") {
  SUBCASE("perfect confident predictions vanish") {
    const std::vector<std::vector<double>> logits{{30.0, 0.0}, {0.0, 30.0}};
    const std::vector<int> labels{0, 1};
    const std::vector<BoxDelta> deltas{{}, {}};
    const auto lb =
        detection_loss(logits, labels, deltas, deltas, {false, true}, 1.0, 2, 1);
    CHECK(lb.total < 1e-6);
    CHECK(lb.total == doctest::Approx(lb.cls / lb.n_cls + lb.lambda * lb.reg / lb.n_reg));
  }

  SUBCASE("all-background batch has zero regression term") {
    Rng rng(7);
    std::vector<std::vector<double>> logits(4, {0.3, -0.2});
    std::vector<int> labels(4, 0);
    std::vector<BoxDelta> pred(4), target(4);
    for (auto& d : pred) d = BoxDelta{rng.normal(), rng.normal(), 9.0, -3.0};
    const auto lb = detection_loss(logits, labels, pred, target,
                                   {false, false, false, false}, 1.0, 4, 1);
    CHECK(lb.reg == 0.0);
  }

  SUBCASE("total is linear in lambda") {
    const std::vector<std::vector<double>> logits{{0.1, 0.7}, {1.2, -0.4}};
    const std::vector<int> labels{1, 0};
    const std::vector<BoxDelta> pred{{0.5, 0.2, -0.1, 0.3}, {}};
    const std::vector<BoxDelta> target{{0.1, 0.0, 0.0, 0.0}, {}};
    const auto l1 =
        detection_loss(logits, labels, pred, target, {true, false}, 1.0, 2, 1);
    const auto l2 =
        detection_loss(logits, labels, pred, target, {true, false}, 2.0, 2, 1);
    const double cls_part = l1.cls / l1.n_cls;
    CHECK(std::abs((l2.total - cls_part) - 2.0 * (l1.total - cls_part)) < 1e-12);
  }

  SUBCASE("length mismatch is rejected") {
    CHECK_THROWS_AS(detection_loss({{0.0, 0.0}}, {0, 1}, {{}}, {{}}, {false},
                                   1.0, 1, 1),
                    std::invalid_argument);
  }
}

TEST_CASE("step_lr") {
  CHECK(step_lr(0) == doctest::Approx(0.001).epsilon(1e-12));
  CHECK(step_lr(59999) == doctest::Approx(0.001).epsilon(1e-12));
  CHECK(step_lr(60000) == doctest::Approx(0.0001).epsilon(1e-12));
  CHECK(step_lr(95000) == doctest::Approx(0.00001).epsilon(1e-12));
  CHECK(step_lr(129999) == doctest::Approx(0.000001).epsilon(1e-12));
  CHECK_THROWS_AS(step_lr(-1), std::invalid_argument);

  // Nonincreasing in iteration.
  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    const long a = static_cast<long>(rng.index(140000));
    const long b = a + static_cast<long>(rng.index(20000));
    CHECK(step_lr(b) <= step_lr(a));
  }
}

TEST_CASE("sgd momentum step") {
  SUBCASE("zero gradient and velocity leave params unchanged") {
    std::vector<double> p{1.0, 2.0}, g{0.0, 0.0}, v{0.0, 0.0};
    sgd_momentum_step(p, g, v, 0.1, 0.9);
    CHECK(p == std::vector<double>{1.0, 2.0});
  }

  SUBCASE("zero momentum is plain gradient descent") {
    std::vector<double> p{1.0}, g{2.0}, v{0.0};
    sgd_momentum_step(p, g, v, 0.1, 0.0);
    CHECK(p[0] == doctest::Approx(0.8).epsilon(1e-12));
  }

  SUBCASE("constant gradient converges to g/(1-momentum)") {
    std::vector<double> p{0.0}, v{0.0};
    const std::vector<double> g{0.5};
    for (int i = 0; i < 100; ++i) sgd_momentum_step(p, g, v, 0.0, 0.9);
    CHECK(v[0] == doctest::Approx(5.0).epsilon(0.01));
  }

  SUBCASE("shape mismatch is rejected") {
    std::vector<double> p{0.0}, g{0.5, 1.0}, v{0.0};
    CHECK_THROWS_AS(sgd_momentum_step(p, g, v, 0.1, 0.9), std::invalid_argument);
  }
}

namespace {

// Linearly separable two-class fixture with regression targets.
void make_separable(Rng& rng, int n, int dim,
                    std::vector<std::vector<double>>& x, std::vector<int>& y,
                    std::vector<BoxDelta>& t) {
  x.clear();
  y.clear();
  t.clear();
  for (int i = 0; i < n; ++i) {
    const int label = static_cast<int>(rng.index(2));
    std::vector<double> f(dim);
    for (int d = 0; d < dim; ++d) f[d] = rng.normal(label ? 1.0 : -1.0, 0.3);
    x.push_back(std::move(f));
    y.push_back(label);
    t.push_back(label ? BoxDelta{0.3, -0.2, 0.1, 0.0} : BoxDelta{});
  }
}

}  // namespace

TEST_CASE("train_toy_head") {
  Rng rng(11);
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  std::vector<BoxDelta> t;
  make_separable(rng, 80, 8, x, y, t);

  SUBCASE("separable data converges well below the initial loss") {
    HeadTrainConfig cfg;
    cfg.iterations = 500;
    cfg.schedule.base_lr = 0.5;
    cfg.schedule.boundaries = {300, 400};
    cfg.seed = 1;
    const auto r = train_toy_head(x, y, t, 1, cfg);
    REQUIRE(r.trace.size() == 500);
    CHECK(r.trace.back().total < 0.1 * r.trace.front().total);
  }

  SUBCASE("zero learning rate freezes the trace") {
    HeadTrainConfig cfg;
    cfg.iterations = 20;
    cfg.schedule.base_lr = 0.0;
    const auto r = train_toy_head(x, y, t, 1, cfg);
    for (const auto& row : r.trace) {
      CHECK(row.total == doctest::Approx(r.trace[0].total).epsilon(1e-15));
    }
  }

  SUBCASE("duplicating the dataset leaves the trace unchanged") {
    HeadTrainConfig cfg;
    cfg.iterations = 50;
    cfg.schedule.base_lr = 0.3;
    const auto base = train_toy_head(x, y, t, 1, cfg);
    auto x2 = x;
    auto y2 = y;
    auto t2 = t;
    x2.insert(x2.end(), x.begin(), x.end());
    y2.insert(y2.end(), y.begin(), y.end());
    t2.insert(t2.end(), t.begin(), t.end());
    const auto dup = train_toy_head(x2, y2, t2, 1, cfg);
    for (std::size_t i = 0; i < base.trace.size(); ++i) {
      CHECK(dup.trace[i].total ==
            doctest::Approx(base.trace[i].total).epsilon(1e-12));
    }
  }

  SUBCASE("deterministic given the seed") {
    HeadTrainConfig cfg;
    cfg.iterations = 30;
    cfg.schedule.base_lr = 0.3;
    cfg.seed = 42;
    const auto a = train_toy_head(x, y, t, 1, cfg);
    const auto b = train_toy_head(x, y, t, 1, cfg);
    CHECK(a.params.cls_w == b.params.cls_w);
    CHECK(a.params.reg_w == b.params.reg_w);
  }

  SUBCASE("single-class input is rejected") {
    std::vector<int> ones(y.size(), 1);
    HeadTrainConfig cfg;
    CHECK_THROWS_AS(train_toy_head(x, ones, t, 1, cfg), std::invalid_argument);
  }
}
