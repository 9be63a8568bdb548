#pragma once

#include <cstdint>
#include <vector>

#include "avscnet/geometry.hpp"

namespace avscnet {

// Two-term detection loss: total = cls/N_cls + lambda * reg/N_reg.
struct LossBreakdown {
  double cls = 0.0;
  double reg = 0.0;
  double total = 0.0;
  double n_cls = 1.0;
  double n_reg = 1.0;
  double lambda = 1.0;
};

struct SoftmaxCeResult {
  double loss = 0.0;
  std::vector<double> grad;  // softmax - one_hot
};

// Numerically stabilized -log softmax(logits)[label].
SoftmaxCeResult softmax_cross_entropy(const std::vector<double>& logits,
                                      int label);

struct SmoothL1Result {
  double loss = 0.0;
  BoxDelta grad;  // d(loss)/d(pred)
};

// Per coordinate x = pred - target: 0.5*x^2 if |x| < 1 else |x| - 0.5,
// summed over the four coordinates.
SmoothL1Result smooth_l1(const BoxDelta& pred, const BoxDelta& target);

// Eq-style combined loss: cls sums cross-entropy over every proposal,
// reg sums smooth L1 over proposals with positive_gate set only.
LossBreakdown detection_loss(const std::vector<std::vector<double>>& logits,
                             const std::vector<int>& labels,
                             const std::vector<BoxDelta>& pred_deltas,
                             const std::vector<BoxDelta>& target_deltas,
                             const std::vector<bool>& positive_gate,
                             double lambda, double n_cls, double n_reg);

struct StepLrSchedule {
  double base_lr = 0.001;
  double factor = 0.1;
  std::vector<long> boundaries = {60000, 90000, 110000};
};

// base_lr * factor^(number of boundaries <= iteration).
double step_lr(long iteration, const StepLrSchedule& schedule = {});

// v <- momentum*v + grads; params <- params - lr*v.
void sgd_momentum_step(std::vector<double>& params,
                       const std::vector<double>& grads,
                       std::vector<double>& velocity, double lr,
                       double momentum);

// Linear classifier + per-class box regressor over flattened patches.
struct HeadParams {
  int num_classes = 0;  // k foreground classes; logits have k+1 entries
  int dim = 0;          // flattened patch length D
  std::vector<double> cls_w;  // (k+1) x D
  std::vector<double> cls_b;  // (k+1)
  std::vector<double> reg_w;  // 4(k+1) x D
  std::vector<double> reg_b;  // 4(k+1)

  void init(int num_classes_, int dim_, std::uint64_t seed, double scale);
  std::vector<double> class_logits(const std::vector<double>& x) const;
  // Delta block of one class for input x.
  BoxDelta class_delta(const std::vector<double>& x, int cls) const;
};

struct HeadTrainConfig {
  int iterations = 300;
  double lambda = 1.0;
  double momentum = 0.9;
  StepLrSchedule schedule;  // desk-scale runs override base_lr/boundaries
  std::uint64_t seed = 0;
  double init_scale = 0.01;
};

struct TraceRow {
  long iteration = 0;
  double lr = 0.0;
  double cls = 0.0;
  double reg = 0.0;
  double total = 0.0;
};

struct HeadTrainResult {
  HeadParams params;
  std::vector<TraceRow> trace;
};

// Full-batch SGD with momentum on detection_loss. labels hold class indices
// with 0 = background; positives (label > 0) gate the regression term and
// use their own class's delta block. Deterministic given the seed.
HeadTrainResult train_toy_head(const std::vector<std::vector<double>>& patches,
                               const std::vector<int>& labels,
                               const std::vector<BoxDelta>& target_deltas,
                               int num_classes, const HeadTrainConfig& config);

}  // namespace avscnet
