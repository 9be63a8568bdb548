#pragma once

// Serial reference implementations, written independently of the main
// kernels. Tests use them as oracles; the benchmark target compares their
// runtime against the parallel kernels. Nothing here is linked into the
// production library.

#include <map>
#include <string>
#include <vector>

#include "avscnet/evaluation.hpp"
#include "avscnet/feature_ops.hpp"
#include "avscnet/geometry.hpp"

namespace avscnet::reference {

double iou_serial(const Box& a, const Box& b);

// Greedy NMS via a suppression mask over the score-sorted list.
std::vector<std::size_t> nms_serial(const std::vector<ScoredBox>& boxes,
                                    double threshold);

// Naive six-loop cross-correlation.
FeatureMap conv2d_serial(const FeatureMap& map, const std::vector<double>& weights,
                         const ConvSpec& spec);

FeatureMap max_pool_serial(const FeatureMap& map, int k, int s);

FeatureMap upsample_x2_serial(const FeatureMap& map);

// Independent bilinear read (incremental form rather than the four-weight
// form), border-clamped.
double bilinear_at(const FeatureMap& map, int ch, double x, double y);

// S x S patch whose bins average g x g bilinear reads (dense RoI oracle).
std::vector<double> dense_bin_patch(const FeatureMap& map, double x1, double y1,
                                    double x2, double y2, int out, int g);

// Bin-center sample grid over a region (expansion mid-grid oracle).
std::vector<double> bin_center_samples(const FeatureMap& map, double x1,
                                       double y1, double x2, double y2, int n);

// Dense stratified average of the bilinear field over a region.
double dense_region_mean(const FeatureMap& map, double x1, double y1, double x2,
                         double y2, int gx, int gy);

struct RefClassEval {
  long tp = 0;
  long fp = 0;
  long fn = 0;
  double ap = 0.0;
};

struct RefEval {
  std::map<std::string, RefClassEval> per_class;
  double map = 0.0;
};

// Brute-force evaluator: re-matches the detection set from scratch at every
// distinct score threshold and integrates the monotone precision envelope.
RefEval evaluate_serial(const std::map<std::string, std::vector<ScoredBox>>& dets,
                        const std::map<std::string, std::vector<LabeledBox>>& gts,
                        double a_min);

}  // namespace avscnet::reference
