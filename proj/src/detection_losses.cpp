#include "avscnet/detection_losses.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "avscnet/rng.hpp"

namespace avscnet {

SoftmaxCeResult softmax_cross_entropy(const std::vector<double>& logits,
                                      int label) {
  if (logits.empty()) {
    throw std::invalid_argument("softmax_cross_entropy: empty logits");
  }
  if (label < 0 || label >= static_cast<int>(logits.size())) {
    throw std::invalid_argument("softmax_cross_entropy: label out of range");
  }
  for (double v : logits) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument("softmax_cross_entropy: non-finite logit");
    }
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (double v : logits) denom += std::exp(v - mx);

  SoftmaxCeResult res;
  res.loss = std::log(denom) - (logits[label] - mx);
  res.grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    res.grad[i] = std::exp(logits[i] - mx) / denom;
  }
  res.grad[label] -= 1.0;
  return res;
}

namespace {

inline double smooth_l1_term(double x, double& dx) {
  const double ax = std::abs(x);
  if (ax < 1.0) {
    dx = x;
    return 0.5 * x * x;
  }
  dx = x > 0.0 ? 1.0 : -1.0;
  return ax - 0.5;
}

}  // namespace

SmoothL1Result smooth_l1(const BoxDelta& pred, const BoxDelta& target) {
  if (!pred.finite() || !target.finite()) {
    throw std::invalid_argument("smooth_l1: non-finite delta");
  }
  SmoothL1Result res;
  res.loss += smooth_l1_term(pred.tx - target.tx, res.grad.tx);
  res.loss += smooth_l1_term(pred.ty - target.ty, res.grad.ty);
  res.loss += smooth_l1_term(pred.tw - target.tw, res.grad.tw);
  res.loss += smooth_l1_term(pred.th - target.th, res.grad.th);
  return res;
}

LossBreakdown detection_loss(const std::vector<std::vector<double>>& logits,
                             const std::vector<int>& labels,
                             const std::vector<BoxDelta>& pred_deltas,
                             const std::vector<BoxDelta>& target_deltas,
                             const std::vector<bool>& positive_gate,
                             double lambda, double n_cls, double n_reg) {
  const std::size_t n = logits.size();
  if (labels.size() != n || pred_deltas.size() != n ||
      target_deltas.size() != n || positive_gate.size() != n) {
    throw std::invalid_argument("detection_loss: sequence lengths differ");
  }
  if (!(n_cls > 0.0) || !(n_reg > 0.0)) {
    throw std::invalid_argument("detection_loss: normalizers must be positive");
  }
  LossBreakdown out;
  out.lambda = lambda;
  out.n_cls = n_cls;
  out.n_reg = n_reg;
  for (std::size_t i = 0; i < n; ++i) {
    out.cls += softmax_cross_entropy(logits[i], labels[i]).loss;
    if (positive_gate[i]) {
      out.reg += smooth_l1(pred_deltas[i], target_deltas[i]).loss;
    }
  }
  out.total = out.cls / n_cls + lambda * out.reg / n_reg;
  return out;
}

double step_lr(long iteration, const StepLrSchedule& schedule) {
  if (iteration < 0) throw std::invalid_argument("step_lr: negative iteration");
  double lr = schedule.base_lr;
  for (long b : schedule.boundaries) {
    if (b <= iteration) lr *= schedule.factor;
  }
  return lr;
}

void sgd_momentum_step(std::vector<double>& params,
                       const std::vector<double>& grads,
                       std::vector<double>& velocity, double lr,
                       double momentum) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw std::invalid_argument("sgd_momentum_step: shape mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grads[i];
    params[i] -= lr * velocity[i];
  }
}

void HeadParams::init(int num_classes_, int dim_, std::uint64_t seed,
                      double scale) {
  if (num_classes_ < 1 || dim_ < 1) {
    throw std::invalid_argument("HeadParams: bad shape");
  }
  num_classes = num_classes_;
  dim = dim_;
  const int rows = num_classes + 1;
  Rng rng(mix_seed(seed, fnv1a64("head-init")));
  cls_w.resize(static_cast<std::size_t>(rows) * dim);
  cls_b.assign(rows, 0.0);
  reg_w.resize(static_cast<std::size_t>(4) * rows * dim);
  reg_b.assign(static_cast<std::size_t>(4) * rows, 0.0);
  for (double& v : cls_w) v = scale * rng.normal();
  for (double& v : reg_w) v = scale * rng.normal();
}

std::vector<double> HeadParams::class_logits(const std::vector<double>& x) const {
  const int rows = num_classes + 1;
  std::vector<double> out(rows);
  for (int r = 0; r < rows; ++r) {
    const double* wr = cls_w.data() + static_cast<std::size_t>(r) * dim;
    double acc = cls_b[r];
    for (int d = 0; d < dim; ++d) acc += wr[d] * x[d];
    out[r] = acc;
  }
  return out;
}

BoxDelta HeadParams::class_delta(const std::vector<double>& x, int cls) const {
  BoxDelta d;
  double vals[4];
  for (int j = 0; j < 4; ++j) {
    const std::size_t row = static_cast<std::size_t>(4) * cls + j;
    const double* wr = reg_w.data() + row * dim;
    double acc = reg_b[row];
    for (int k = 0; k < dim; ++k) acc += wr[k] * x[k];
    vals[j] = acc;
  }
  d.tx = vals[0];
  d.ty = vals[1];
  d.tw = vals[2];
  d.th = vals[3];
  return d;
}

HeadTrainResult train_toy_head(const std::vector<std::vector<double>>& patches,
                               const std::vector<int>& labels,
                               const std::vector<BoxDelta>& target_deltas,
                               int num_classes, const HeadTrainConfig& config) {
  const int n = static_cast<int>(patches.size());
  if (n == 0) throw std::invalid_argument("train_toy_head: empty dataset");
  if (labels.size() != patches.size() || target_deltas.size() != patches.size()) {
    throw std::invalid_argument("train_toy_head: sequence lengths differ");
  }
  const int dim = static_cast<int>(patches[0].size());
  for (const auto& p : patches) {
    if (static_cast<int>(p.size()) != dim) {
      throw std::invalid_argument("train_toy_head: ragged patch dims");
    }
  }
  std::set<int> distinct(labels.begin(), labels.end());
  if (distinct.size() < 2) {
    throw std::invalid_argument("train_toy_head: needs >= 2 distinct classes");
  }
  for (int l : labels) {
    if (l < 0 || l > num_classes) {
      throw std::invalid_argument("train_toy_head: label out of range");
    }
  }

  HeadTrainResult res;
  res.params.init(num_classes, dim, config.seed, config.init_scale);
  HeadParams& hp = res.params;
  const int rows = num_classes + 1;
  // reg rows: 4*(num_classes+1), used via labels below

  int n_pos = 0;
  for (int l : labels) n_pos += (l > 0) ? 1 : 0;
  const double n_cls_norm = n;
  const double n_reg_norm = std::max(n_pos, 1);

  std::vector<double> vel_cls_w(hp.cls_w.size(), 0.0);
  std::vector<double> vel_cls_b(hp.cls_b.size(), 0.0);
  std::vector<double> vel_reg_w(hp.reg_w.size(), 0.0);
  std::vector<double> vel_reg_b(hp.reg_b.size(), 0.0);

  std::vector<double> g_logits(static_cast<std::size_t>(n) * rows);
  std::vector<double> g_delta(static_cast<std::size_t>(n) * 4, 0.0);
  std::vector<double> sample_cls(n), sample_reg(n);

  std::vector<double> grad_cls_w(hp.cls_w.size());
  std::vector<double> grad_cls_b(hp.cls_b.size());
  std::vector<double> grad_reg_w(hp.reg_w.size());
  std::vector<double> grad_reg_b(hp.reg_b.size());

  // Weight gradients accumulate sample-major (contiguous axpy) into a fixed
  // number of blocks, reduced in block order: deterministic for any thread
  // count.
  const int kBlocks = 8;
  std::vector<std::vector<double>> blk_cls(kBlocks);
  std::vector<std::vector<double>> blk_reg(kBlocks);
  for (int b = 0; b < kBlocks; ++b) {
    blk_cls[b].resize(hp.cls_w.size());
    blk_reg[b].resize(hp.reg_w.size());
  }

  for (long it = 0; it < config.iterations; ++it) {
    const double lr = step_lr(it, config.schedule);

    // Forward + per-sample output gradients. Samples are independent, so the
    // parallel loop is bit-deterministic for any thread count.
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
      const auto logits = hp.class_logits(patches[i]);
      const auto ce = softmax_cross_entropy(logits, labels[i]);
      sample_cls[i] = ce.loss;
      for (int r = 0; r < rows; ++r) {
        g_logits[static_cast<std::size_t>(i) * rows + r] = ce.grad[r] / n_cls_norm;
      }
      sample_reg[i] = 0.0;
      std::fill_n(g_delta.begin() + static_cast<std::size_t>(i) * 4, 4, 0.0);
      if (labels[i] > 0) {
        const BoxDelta pred = hp.class_delta(patches[i], labels[i]);
        const auto sl = smooth_l1(pred, target_deltas[i]);
        sample_reg[i] = sl.loss;
        const double scale = config.lambda / n_reg_norm;
        g_delta[static_cast<std::size_t>(i) * 4 + 0] = sl.grad.tx * scale;
        g_delta[static_cast<std::size_t>(i) * 4 + 1] = sl.grad.ty * scale;
        g_delta[static_cast<std::size_t>(i) * 4 + 2] = sl.grad.tw * scale;
        g_delta[static_cast<std::size_t>(i) * 4 + 3] = sl.grad.th * scale;
      }
    }

    LossBreakdown lb;
    lb.lambda = config.lambda;
    lb.n_cls = n_cls_norm;
    lb.n_reg = n_reg_norm;
    for (int i = 0; i < n; ++i) {
      lb.cls += sample_cls[i];
      lb.reg += sample_reg[i];
    }
    lb.total = lb.cls / lb.n_cls + lb.lambda * lb.reg / lb.n_reg;
    res.trace.push_back(TraceRow{it, lr, lb.cls, lb.reg, lb.total});

#pragma omp parallel for schedule(static)
    for (int b = 0; b < kBlocks; ++b) {
      std::fill(blk_cls[b].begin(), blk_cls[b].end(), 0.0);
      std::fill(blk_reg[b].begin(), blk_reg[b].end(), 0.0);
      const int lo = static_cast<int>(static_cast<long>(n) * b / kBlocks);
      const int hi = static_cast<int>(static_cast<long>(n) * (b + 1) / kBlocks);
      for (int i = lo; i < hi; ++i) {
        const double* x = patches[i].data();
        for (int r = 0; r < rows; ++r) {
          const double coef = g_logits[static_cast<std::size_t>(i) * rows + r];
          if (coef == 0.0) continue;
          double* row = blk_cls[b].data() + static_cast<std::size_t>(r) * dim;
          for (int d = 0; d < dim; ++d) row[d] += coef * x[d];
        }
        if (labels[i] > 0) {
          for (int j = 0; j < 4; ++j) {
            const double coef = g_delta[static_cast<std::size_t>(i) * 4 + j];
            if (coef == 0.0) continue;
            double* row = blk_reg[b].data() +
                          (static_cast<std::size_t>(4) * labels[i] + j) * dim;
            for (int d = 0; d < dim; ++d) row[d] += coef * x[d];
          }
        }
      }
    }
    std::fill(grad_cls_w.begin(), grad_cls_w.end(), 0.0);
    std::fill(grad_reg_w.begin(), grad_reg_w.end(), 0.0);
    for (int b = 0; b < kBlocks; ++b) {
      for (std::size_t j = 0; j < grad_cls_w.size(); ++j) {
        grad_cls_w[j] += blk_cls[b][j];
      }
      for (std::size_t j = 0; j < grad_reg_w.size(); ++j) {
        grad_reg_w[j] += blk_reg[b][j];
      }
    }
    std::fill(grad_cls_b.begin(), grad_cls_b.end(), 0.0);
    std::fill(grad_reg_b.begin(), grad_reg_b.end(), 0.0);
    for (int i = 0; i < n; ++i) {
      for (int r = 0; r < rows; ++r) {
        grad_cls_b[r] += g_logits[static_cast<std::size_t>(i) * rows + r];
      }
      if (labels[i] > 0) {
        for (int j = 0; j < 4; ++j) {
          grad_reg_b[static_cast<std::size_t>(4) * labels[i] + j] +=
              g_delta[static_cast<std::size_t>(i) * 4 + j];
        }
      }
    }

    sgd_momentum_step(hp.cls_w, grad_cls_w, vel_cls_w, lr, config.momentum);
    sgd_momentum_step(hp.cls_b, grad_cls_b, vel_cls_b, lr, config.momentum);
    sgd_momentum_step(hp.reg_w, grad_reg_w, vel_reg_w, lr, config.momentum);
    sgd_momentum_step(hp.reg_b, grad_reg_b, vel_reg_b, lr, config.momentum);
  }
  return res;
}

}  // namespace avscnet
