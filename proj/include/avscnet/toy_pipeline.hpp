#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "avscnet/detection_losses.hpp"
#include "avscnet/evaluation.hpp"
#include "avscnet/feature_ops.hpp"
#include "avscnet/geometry.hpp"
#include "avscnet/roi_extract.hpp"
#include "avscnet/shape_clustering.hpp"

namespace avscnet {

struct StageSpec {
  int out_channels = 64;
  int stride = 2;
};

struct PipelineConfig {
  // Image resize: shorter side scaled to resize_short unless the longer side
  // would exceed resize_long_cap.
  double resize_short = 720.0;
  double resize_long_cap = 900.0;

  std::vector<double> anchor_ratios{0.5, 1.0, 2.0, 3.0};
  std::vector<double> anchor_scales{64.0, 128.0, 256.0, 512.0};

  double rpn_nms = 0.7;
  int rpn_pre_top_n = 1000;
  int rpn_top_n = 300;
  double final_nms = 0.3;  // unspecified in the source protocol; configurable
  double a_min = 0.5;
  double score_thresh = 0.05;

  // Backbone stage grammar: doubling channels, stride-2 stages.
  std::vector<StageSpec> backbone{{64, 2}, {128, 2}, {256, 2}, {512, 2}};

  RoiExtractor extractor = RoiExtractor::kEroi;
  double expand_cells = 1.0;
  int align_samples = 2;
  int eroi_mid = 14;
  int eroi_out = 7;

  double lambda = 1.0;
  double momentum = 0.9;

  // Anchor-to-gt assignment bounds for RPN training.
  double rpn_pos_iou = 0.7;
  double rpn_neg_iou = 0.3;
  int rpn_samples_pos = 32;
  int rpn_samples_neg = 32;
  // Highest-scoring false positives appended for the second training round.
  int rpn_hard_negatives = 64;
  int rpn_iterations = 150;
  double rpn_lr = 0.5;

  int head_proposals_per_scene = 24;
  int head_neg_per_scene = 16;
  int head_iterations = 250;
  double head_lr = 0.5;

  int avsc_t = 5;
  std::uint64_t seed = 1;

  // Desk-scale preset used by the demo and the end-to-end tests: small
  // scenes, matched anchor scales and a narrow backbone.
  static PipelineConfig desk();
};

struct SceneAnnotation {
  Box box;
  std::string label;     // Nb or Pm
  int shape_group = 0;   // generator truth: 0 squat, 1 elongated
};

struct SyntheticScene {
  FeatureMap image;  // single channel
  std::vector<SceneAnnotation> annotations;
  std::uint64_t seed = 0;
};

struct SceneGenConfig {
  int height = 192;
  int width = 256;
  int min_objects = 5;
  int max_objects = 15;
  double pm_prior = 0.4;
  double min_len = 18.0;
  double max_len = 44.0;
};

SyntheticScene generate_synthetic_scene(std::uint64_t seed,
                                        const SceneGenConfig& config = {});

// Evaluation-harness fixture: drops ground truths at miss_rate, jitters the
// rest (score ~ U(0.5,1)) and injects spurious boxes at fp_rate with
// score ~ U(0,0.5).
std::vector<ScoredBox> oracle_detector(const std::vector<LabeledBox>& gts,
                                       double jitter_sigma, double miss_rate,
                                       double fp_rate, ImageSize bounds,
                                       std::uint64_t seed);

struct ResizeResult {
  FeatureMap image;
  double factor = 1.0;
};

ResizeResult resize_image(const FeatureMap& image, const PipelineConfig& config);

// General bilinear resize with align-corners mapping.
FeatureMap resize_bilinear(const FeatureMap& image, int out_h, int out_w);

// 16x16 grayscale crop of the box, flattened and L2-normalized: the built-in
// deterministic descriptor fed to the clustering stage.
std::vector<double> crop_descriptor(const FeatureMap& image, const Box& box);

struct ToyBackbone {
  std::vector<StageSpec> stages;
  std::vector<std::vector<double>> weights;  // per stage, out*in*3*3
  int in_channels = 1;

  static ToyBackbone random_init(const std::vector<StageSpec>& stages,
                                 int in_channels, std::uint64_t seed);
  // Forward through all stages (3x3 conv, zero pad 1, ReLU), returning every
  // stage output.
  std::vector<FeatureMap> forward(const FeatureMap& image) const;
  int total_stride() const;
};

// Enhanced fusion: upsample the deepest stage x2 and concatenate it after the
// next-shallower stage (cropping to the common spatial dims when they differ
// by a cell).
FeatureMap fuse_stages(const FeatureMap& shallow, const FeatureMap& deep);

// Features consumed by the proposal head: the fused map concatenated with its
// 3x3 box-filtered context.
FeatureMap rpn_feature_map(const FeatureMap& fused);

// Per-anchor-slot binary objectness + box regression, the 1x1 conv head.
struct RpnHead {
  int in_channels = 0;
  int num_slots = 0;
  // Per slot: 2 x C classifier and 8 x C regressor (block 1 is foreground),
  // stored as HeadParams with one foreground class.
  std::vector<HeadParams> slots;
  // Per-channel standardization fitted on the training samples.
  std::vector<double> feat_mean;
  std::vector<double> feat_scale;

  // A-channel foreground probability map and 4A-channel delta map.
  FeatureMap objectness(const FeatureMap& fused) const;
  FeatureMap deltas(const FeatureMap& fused) const;
};

struct RpnProposeConfig {
  double nms_threshold = 0.7;
  int pre_top_n = 1000;
  int top_n = 300;
};

// Decode per-anchor deltas (identity when deltas == nullptr), clip to the
// image, drop degenerate boxes, greedy-NMS and keep the top N by score.
// objectness holds one foreground probability channel per anchor slot.
std::vector<ScoredBox> rpn_propose(const FeatureMap& objectness,
                                   const FeatureMap* deltas,
                                   const std::vector<Box>& anchors,
                                   ImageSize image, const RpnProposeConfig& cfg);

struct AnchorAssignment {
  std::vector<int> status;    // 1 positive, 0 negative, -1 ignore
  std::vector<int> gt_index;  // valid for positives
};

// IoU bounds plus the per-gt argmax fallback so every ground truth owns at
// least one positive anchor.
AnchorAssignment assign_anchors(const std::vector<Box>& anchors,
                                const std::vector<LabeledBox>& gts,
                                double pos_iou, double neg_iou);

struct PipelineModel {
  PipelineConfig config;
  ToyBackbone backbone;
  RpnHead rpn;
  HeadParams head;
  // Per-dimension standardization of the flattened region patches.
  std::vector<double> head_feat_mean;
  std::vector<double> head_feat_scale;
  SemanticTree st;
  std::vector<std::string> visual_classes;  // class id 1..k -> visual label
};

struct TrainArtifacts {
  std::vector<TraceRow> rpn_trace;
  std::vector<TraceRow> head_trace;
  std::map<std::string, int> mu;  // per original label
};

PipelineModel train_pipeline(const std::vector<SyntheticScene>& scenes,
                             const PipelineConfig& config,
                             TrainArtifacts* artifacts = nullptr);

// Full test path: resize, backbone, fuse, propose, extract, classify/regress,
// per-class NMS, then map visual labels back to original semantics.
std::vector<ScoredBox> detect(const FeatureMap& image,
                              const PipelineModel& model);

}  // namespace avscnet
