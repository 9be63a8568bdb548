#include "avscnet/toy_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include "avscnet/rng.hpp"

namespace avscnet {

PipelineConfig PipelineConfig::desk() {
  PipelineConfig cfg;
  cfg.resize_short = 192.0;
  cfg.resize_long_cap = 256.0;
  // Anchor shapes matched to the synthetic bolts (squat ~1:1, elongated ~1:3
  // either way) so the anchor grid actually covers the desk-scale objects.
  cfg.anchor_ratios = {0.3, 1.0, 10.0 / 3.0};
  cfg.anchor_scales = {12.0, 18.0, 27.0, 40.0};
  cfg.backbone = {{12, 2}, {24, 2}, {48, 2}};
  // Desk objects are a few cells tall: anchors cannot reach 0.7 IoU on a
  // 4 px grid, so the positive bound drops to 0.5 and the ignore band
  // narrows with it.
  cfg.rpn_pos_iou = 0.5;
  cfg.rpn_neg_iou = 0.4;
  cfg.rpn_samples_pos = 64;
  cfg.rpn_samples_neg = 192;
  cfg.rpn_hard_negatives = 192;
  cfg.rpn_pre_top_n = 3000;
  cfg.rpn_top_n = 256;
  cfg.head_proposals_per_scene = 32;
  cfg.head_neg_per_scene = 8;
  cfg.head_lr = 0.1;
  cfg.rpn_lr = 0.03;
  cfg.head_iterations = 300;
  return cfg;
}

namespace {

void splat_max(FeatureMap& img, int x, int y, double v) {
  if (x < 0 || y < 0 || x >= img.w || y >= img.h) return;
  double& px = img.at(0, y, x);
  px = std::max(px, v);
}

void render_body(FeatureMap& img, const Box& box, double amp) {
  const double rx = 0.5 * box.width();
  const double ry = 0.5 * box.height();
  const double cx = box.cx();
  const double cy = box.cy();
  const int x0 = static_cast<int>(std::floor(box.x1));
  const int x1 = static_cast<int>(std::ceil(box.x2));
  const int y0 = static_cast<int>(std::floor(box.y1));
  const int y1 = static_cast<int>(std::ceil(box.y2));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = std::abs(x - cx) / rx;
      const double dy = std::abs(y - cy) / ry;
      const double t = dx * dx * dx * dx + dy * dy * dy * dy;
      if (t <= 1.0) {
        splat_max(img, x, y, amp * (0.8 + 0.2 * (1.0 - t)));
      }
      // Bright nut core.
      const double t2 = (dx * dx + dy * dy) / (0.45 * 0.45);
      if (t2 <= 1.0) {
        splat_max(img, x, y, amp * 1.08);
      }
    }
  }
}

// The split pin: a thin bright stroke crossing the body perpendicular to its
// long axis, sticking slightly out on both sides.
void render_pin(FeatureMap& img, const Box& box, double amp, double offset) {
  const bool horizontal = box.width() >= box.height();
  const double len_long = horizontal ? box.width() : box.height();
  const double pin_w = std::max(3.0, 0.16 * len_long);
  const double v = std::min(amp * 1.6, 1.35);
  if (horizontal) {
    const double px = box.cx() + offset * box.width() * 0.5;
    const double half = 0.675 * box.height();
    for (int y = static_cast<int>(std::floor(box.cy() - half));
         y <= static_cast<int>(std::ceil(box.cy() + half)); ++y) {
      for (int x = static_cast<int>(std::floor(px - 0.5 * pin_w));
           x <= static_cast<int>(std::ceil(px + 0.5 * pin_w)); ++x) {
        splat_max(img, x, y, v);
      }
    }
  } else {
    const double py = box.cy() + offset * box.height() * 0.5;
    const double half = 0.675 * box.width();
    for (int x = static_cast<int>(std::floor(box.cx() - half));
         x <= static_cast<int>(std::ceil(box.cx() + half)); ++x) {
      for (int y = static_cast<int>(std::floor(py - 0.5 * pin_w));
           y <= static_cast<int>(std::ceil(py + 0.5 * pin_w)); ++y) {
        splat_max(img, x, y, v);
      }
    }
  }
}

}  // namespace

SyntheticScene generate_synthetic_scene(std::uint64_t seed,
                                        const SceneGenConfig& config) {
  if (config.height < 32 || config.width < 32) {
    throw std::invalid_argument("generate_synthetic_scene: scene too small");
  }
  SyntheticScene scene;
  scene.seed = seed;
  scene.image = FeatureMap(1, config.height, config.width);
  Rng rng(mix_seed(seed, fnv1a64("scene")));

  for (double& v : scene.image.data) v = rng.uniform(0.02, 0.10);

  // Faint background clutter.
  for (int d = 0; d < 3; ++d) {
    const double cx = rng.uniform(0.0, config.width);
    const double cy = rng.uniform(0.0, config.height);
    const double r = rng.uniform(6.0, 14.0);
    const int x0 = std::max(0, static_cast<int>(cx - 2 * r));
    const int x1 = std::min(config.width - 1, static_cast<int>(cx + 2 * r));
    const int y0 = std::max(0, static_cast<int>(cy - 2 * r));
    const int y1 = std::min(config.height - 1, static_cast<int>(cy + 2 * r));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dd = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (r * r);
        if (dd <= 1.0) splat_max(scene.image, x, y, 0.18 * (1.0 - 0.5 * dd));
      }
    }
  }

  const int n_objects =
      config.min_objects +
      static_cast<int>(rng.index(config.max_objects - config.min_objects + 1));
  const double margin = 8.0;
  for (int obj = 0; obj < n_objects; ++obj) {
    for (int attempt = 0; attempt < 40; ++attempt) {
      const std::string label = rng.bernoulli(config.pm_prior) ? "Pm" : "Nb";
      const int group = rng.bernoulli(0.5) ? 1 : 0;  // 1 = elongated
      const double ratio =
          group == 1 ? rng.uniform(0.25, 0.35) : rng.uniform(0.85, 0.95);
      const double len = rng.uniform(config.min_len, config.max_len);
      const bool horizontal = rng.bernoulli(0.5);
      const double w = horizontal ? len : ratio * len;
      const double h = horizontal ? ratio * len : len;
      if (w + 2 * margin >= config.width || h + 2 * margin >= config.height) {
        continue;
      }
      const double cx = rng.uniform(margin + 0.5 * w, config.width - margin - 0.5 * w);
      const double cy = rng.uniform(margin + 0.5 * h, config.height - margin - 0.5 * h);
      const Box box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
      bool clashes = false;
      for (const auto& a : scene.annotations) {
        if (iou(box, a.box) > 0.15) {
          clashes = true;
          break;
        }
      }
      if (clashes) continue;

      const double amp = rng.uniform(0.65, 0.95);
      render_body(scene.image, box, amp);
      const double pin_offset = rng.uniform(-0.25, 0.25);
      if (label == "Nb") {
        render_pin(scene.image, box, amp, pin_offset);
      }
      scene.annotations.push_back(SceneAnnotation{box, label, group});
      break;
    }
  }
  return scene;
}

std::vector<ScoredBox> oracle_detector(const std::vector<LabeledBox>& gts,
                                       double jitter_sigma, double miss_rate,
                                       double fp_rate, ImageSize bounds,
                                       std::uint64_t seed) {
  if (miss_rate < 0.0 || miss_rate > 1.0 || fp_rate < 0.0 || fp_rate > 1.0) {
    throw std::invalid_argument("oracle_detector: rates outside [0,1]");
  }
  Rng rng(mix_seed(seed, fnv1a64("oracle-detector")));
  std::set<std::string> label_set;
  for (const auto& g : gts) label_set.insert(g.label);
  std::vector<std::string> labels(label_set.begin(), label_set.end());

  std::vector<ScoredBox> out;
  for (const auto& g : gts) {
    if (rng.bernoulli(miss_rate)) continue;
    Box b{g.box.x1 + jitter_sigma * rng.normal(),
          g.box.y1 + jitter_sigma * rng.normal(),
          g.box.x2 + jitter_sigma * rng.normal(),
          g.box.y2 + jitter_sigma * rng.normal()};
    b.x1 = std::clamp(b.x1, 0.0, bounds.w);
    b.x2 = std::clamp(b.x2, 0.0, bounds.w);
    b.y1 = std::clamp(b.y1, 0.0, bounds.h);
    b.y2 = std::clamp(b.y2, 0.0, bounds.h);
    if (!b.valid()) b = g.box;  // a degenerate jitter falls back to the truth
    out.push_back(ScoredBox{b, g.label, rng.uniform(0.5, 1.0)});
  }
  for (std::size_t i = 0; i < gts.size(); ++i) {
    if (!rng.bernoulli(fp_rate) || labels.empty()) continue;
    const double w = rng.uniform(8.0, 40.0);
    const double h = rng.uniform(8.0, 40.0);
    const double cx = rng.uniform(0.0, bounds.w);
    const double cy = rng.uniform(0.0, bounds.h);
    Box b{std::clamp(cx - 0.5 * w, 0.0, bounds.w),
          std::clamp(cy - 0.5 * h, 0.0, bounds.h),
          std::clamp(cx + 0.5 * w, 0.0, bounds.w),
          std::clamp(cy + 0.5 * h, 0.0, bounds.h)};
    if (!b.valid()) continue;
    out.push_back(ScoredBox{b, labels[rng.index(labels.size())],
                            rng.uniform(0.0, 0.5)});
  }
  return out;
}

FeatureMap resize_bilinear(const FeatureMap& image, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) {
    throw std::invalid_argument("resize_bilinear: bad output dims");
  }
  FeatureMap out(image.c, out_h, out_w);
  const double sx = out_w > 1 ? static_cast<double>(image.w - 1) / (out_w - 1) : 0.0;
  const double sy = out_h > 1 ? static_cast<double>(image.h - 1) / (out_h - 1) : 0.0;
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < image.c; ++ch) {
    for (int y = 0; y < out_h; ++y) {
      for (int x = 0; x < out_w; ++x) {
        const BilinearSupport s = bilinear_support(image, x * sx, y * sy);
        out.at(ch, y, x) = s.w00 * image.at(ch, s.y0, s.x0) +
                           s.w10 * image.at(ch, s.y0, s.x1) +
                           s.w01 * image.at(ch, s.y1, s.x0) +
                           s.w11 * image.at(ch, s.y1, s.x1);
      }
    }
  }
  return out;
}

ResizeResult resize_image(const FeatureMap& image, const PipelineConfig& config) {
  if (image.h < 1 || image.w < 1 || image.c < 1) {
    throw std::invalid_argument("resize_image: empty image");
  }
  const double short_side = std::min(image.h, image.w);
  const double long_side = std::max(image.h, image.w);
  double s = config.resize_short / short_side;
  if (long_side * s > config.resize_long_cap) {
    s = config.resize_long_cap / long_side;
  }
  ResizeResult res;
  res.factor = s;
  const int oh = std::max(1, static_cast<int>(std::lround(image.h * s)));
  const int ow = std::max(1, static_cast<int>(std::lround(image.w * s)));
  if (oh == image.h && ow == image.w) {
    res.image = image;
    res.factor = 1.0;
  } else {
    res.image = resize_bilinear(image, oh, ow);
  }
  return res;
}

std::vector<double> crop_descriptor(const FeatureMap& image, const Box& box) {
  Box b = box;
  b.x1 = std::clamp(b.x1, 0.0, static_cast<double>(image.w) - 1.0);
  b.y1 = std::clamp(b.y1, 0.0, static_cast<double>(image.h) - 1.0);
  b.x2 = std::clamp(b.x2, b.x1 + 1.0, static_cast<double>(image.w));
  b.y2 = std::clamp(b.y2, b.y1 + 1.0, static_cast<double>(image.h));
  const RoiPatch patch = roi_align(image, RoiSpec{b, 1.0, 0.0}, 16, 1);
  std::vector<double> desc(patch.data);
  double norm = 0.0;
  for (double v : desc) norm += v * v;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (double& v : desc) v /= norm;
  }
  return desc;
}

ToyBackbone ToyBackbone::random_init(const std::vector<StageSpec>& stages,
                                     int in_channels, std::uint64_t seed) {
  if (stages.size() < 2) {
    throw std::invalid_argument("backbone: needs at least two stages");
  }
  ToyBackbone bb;
  bb.stages = stages;
  bb.in_channels = in_channels;
  Rng rng(mix_seed(seed, fnv1a64("backbone")));
  int in_c = in_channels;
  for (const StageSpec& st : stages) {
    const std::size_t n = static_cast<std::size_t>(st.out_channels) * in_c * 9;
    const double scale = std::sqrt(2.0 / (in_c * 9.0));
    std::vector<double> w(n);
    for (double& v : w) v = scale * rng.normal();
    bb.weights.push_back(std::move(w));
    in_c = st.out_channels;
  }
  return bb;
}

std::vector<FeatureMap> ToyBackbone::forward(const FeatureMap& image) const {
  std::vector<FeatureMap> outs;
  const FeatureMap* cur = &image;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    ConvSpec spec;
    spec.k = 3;
    spec.s1 = stages[i].stride;
    spec.s2 = stages[i].stride;
    spec.p = 1;
    spec.out_channels = stages[i].out_channels;
    FeatureMap out = conv2d(*cur, weights[i], spec);
    for (double& v : out.data) v = std::max(v, 0.0);  // ReLU
    outs.push_back(std::move(out));
    cur = &outs.back();
  }
  return outs;
}

int ToyBackbone::total_stride() const {
  int s = 1;
  for (const StageSpec& st : stages) s *= st.stride;
  return s;
}

namespace {

FeatureMap crop_top_left(const FeatureMap& map, int h, int w) {
  if (h == map.h && w == map.w) return map;
  FeatureMap out(map.c, h, w);
  for (int ch = 0; ch < map.c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        out.at(ch, y, x) = map.at(ch, y, x);
      }
    }
  }
  return out;
}

}  // namespace

FeatureMap fuse_stages(const FeatureMap& shallow, const FeatureMap& deep) {
  const FeatureMap up = upsample_bilinear_x2(deep);
  const int h = std::min(shallow.h, up.h);
  const int w = std::min(shallow.w, up.w);
  return concat_channels(crop_top_left(shallow, h, w), crop_top_left(up, h, w));
}

namespace {

// 3x3 box mean per channel, zero padded: cheap context for the proposal head.
FeatureMap box_filter3(const FeatureMap& map) {
  FeatureMap out(map.c, map.h, map.w);
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < map.c; ++ch) {
    for (int y = 0; y < map.h; ++y) {
      for (int x = 0; x < map.w; ++x) {
        double acc = 0.0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy;
            const int xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= map.h || xx >= map.w) continue;
            acc += map.at(ch, yy, xx);
          }
        }
        out.at(ch, y, x) = acc / 9.0;
      }
    }
  }
  return out;
}

}  // namespace

// The proposal head reads the fused cell plus its smoothed 3x3 context.
FeatureMap rpn_feature_map(const FeatureMap& fused) {
  return concat_channels(fused, box_filter3(fused));
}

namespace {

std::vector<double> cell_features(const FeatureMap& fused, int y, int x) {
  std::vector<double> f(fused.c);
  for (int ch = 0; ch < fused.c; ++ch) f[ch] = fused.at(ch, y, x);
  return f;
}

double sigmoid_pair(double bg_logit, double fg_logit) {
  // softmax over {bg, fg} reduced to a logistic on the difference
  return 1.0 / (1.0 + std::exp(bg_logit - fg_logit));
}

}  // namespace

FeatureMap RpnHead::objectness(const FeatureMap& fused) const {
  if (fused.c != in_channels) {
    throw std::invalid_argument("rpn: fused channel mismatch");
  }
  FeatureMap out(num_slots, fused.h, fused.w);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < fused.h; ++y) {
    for (int x = 0; x < fused.w; ++x) {
      std::vector<double> f = cell_features(fused, y, x);
      if (!feat_mean.empty()) {
        for (std::size_t d = 0; d < f.size(); ++d) {
          f[d] = (f[d] - feat_mean[d]) * feat_scale[d];
        }
      }
      for (int a = 0; a < num_slots; ++a) {
        const std::vector<double> logits = slots[a].class_logits(f);
        out.at(a, y, x) = sigmoid_pair(logits[0], logits[1]);
      }
    }
  }
  return out;
}

FeatureMap RpnHead::deltas(const FeatureMap& fused) const {
  if (fused.c != in_channels) {
    throw std::invalid_argument("rpn: fused channel mismatch");
  }
  FeatureMap out(4 * num_slots, fused.h, fused.w);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < fused.h; ++y) {
    for (int x = 0; x < fused.w; ++x) {
      std::vector<double> f = cell_features(fused, y, x);
      if (!feat_mean.empty()) {
        for (std::size_t d = 0; d < f.size(); ++d) {
          f[d] = (f[d] - feat_mean[d]) * feat_scale[d];
        }
      }
      for (int a = 0; a < num_slots; ++a) {
        const BoxDelta d = slots[a].class_delta(f, 1);
        out.at(4 * a + 0, y, x) = d.tx;
        out.at(4 * a + 1, y, x) = d.ty;
        out.at(4 * a + 2, y, x) = d.tw;
        out.at(4 * a + 3, y, x) = d.th;
      }
    }
  }
  return out;
}

std::vector<ScoredBox> rpn_propose(const FeatureMap& objectness,
                                   const FeatureMap* deltas,
                                   const std::vector<Box>& anchors,
                                   ImageSize image, const RpnProposeConfig& cfg) {
  const int slots = objectness.c;
  const std::size_t expect =
      static_cast<std::size_t>(slots) * objectness.h * objectness.w;
  if (anchors.size() != expect) {
    throw std::invalid_argument("rpn_propose: anchor grid mismatch");
  }
  if (deltas != nullptr &&
      (deltas->c != 4 * slots || deltas->h != objectness.h ||
       deltas->w != objectness.w)) {
    throw std::invalid_argument("rpn_propose: delta map mismatch");
  }

  std::vector<ScoredBox> candidates;
  candidates.reserve(expect);
  for (int y = 0; y < objectness.h; ++y) {
    for (int x = 0; x < objectness.w; ++x) {
      for (int a = 0; a < slots; ++a) {
        const double score = objectness.at(a, y, x);
        if (!(score >= 0.0 && score <= 1.0)) {
          throw std::invalid_argument("rpn_propose: objectness outside [0,1]");
        }
        const std::size_t idx =
            (static_cast<std::size_t>(y) * objectness.w + x) * slots + a;
        BoxDelta d;
        if (deltas != nullptr) {
          d.tx = deltas->at(4 * a + 0, y, x);
          d.ty = deltas->at(4 * a + 1, y, x);
          d.tw = deltas->at(4 * a + 2, y, x);
          d.th = deltas->at(4 * a + 3, y, x);
        }
        const Box b = decode_deltas(anchors[idx], d, image);
        if (!b.valid()) continue;
        candidates.push_back(ScoredBox{b, "proposal", score});
      }
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const ScoredBox& a, const ScoredBox& b) {
                     return a.score > b.score;
                   });
  if (static_cast<int>(candidates.size()) > cfg.pre_top_n) {
    candidates.resize(cfg.pre_top_n);
  }
  const std::vector<std::size_t> keep = nms(candidates, cfg.nms_threshold);
  std::vector<ScoredBox> out;
  for (std::size_t k : keep) {
    out.push_back(candidates[k]);
    if (static_cast<int>(out.size()) >= cfg.top_n) break;
  }
  return out;
}

AnchorAssignment assign_anchors(const std::vector<Box>& anchors,
                                const std::vector<LabeledBox>& gts,
                                double pos_iou, double neg_iou) {
  AnchorAssignment out;
  out.status.assign(anchors.size(), 0);
  out.gt_index.assign(anchors.size(), -1);
  if (gts.empty()) return out;

  std::vector<double> best_gt_iou(gts.size(), 0.0);
  std::vector<std::size_t> best_gt_anchor(gts.size(), 0);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    double best = 0.0;
    int arg = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(anchors[i], gts[g].box);
      if (v > best) {
        best = v;
        arg = static_cast<int>(g);
      }
      if (v > best_gt_iou[g]) {
        best_gt_iou[g] = v;
        best_gt_anchor[g] = i;
      }
    }
    if (best >= pos_iou) {
      out.status[i] = 1;
      out.gt_index[i] = arg;
    } else if (best < neg_iou) {
      out.status[i] = 0;
      out.gt_index[i] = arg;
    } else {
      out.status[i] = -1;
      out.gt_index[i] = arg;
    }
  }
  // Every gt owns its argmax anchor.
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (best_gt_iou[g] > 0.0) {
      out.status[best_gt_anchor[g]] = 1;
      out.gt_index[best_gt_anchor[g]] = static_cast<int>(g);
    }
  }
  return out;
}

namespace {

// Per-dimension z-scoring: fit on training rows, apply everywhere after.
void fit_standardization(const std::vector<std::vector<double>>& rows,
                         std::vector<double>& mean, std::vector<double>& scale) {
  const std::size_t dim = rows.empty() ? 0 : rows[0].size();
  mean.assign(dim, 0.0);
  scale.assign(dim, 1.0);
  if (rows.empty()) return;
  for (const auto& r : rows) {
    for (std::size_t d = 0; d < dim; ++d) mean[d] += r[d];
  }
  for (double& m : mean) m /= static_cast<double>(rows.size());
  std::vector<double> var(dim, 0.0);
  for (const auto& r : rows) {
    for (std::size_t d = 0; d < dim; ++d) {
      const double c = r[d] - mean[d];
      var[d] += c * c;
    }
  }
  for (std::size_t d = 0; d < dim; ++d) {
    scale[d] = 1.0 / std::sqrt(var[d] / rows.size() + 1e-12);
  }
}

void standardize_row(std::vector<double>& row, const std::vector<double>& mean,
                     const std::vector<double>& scale) {
  for (std::size_t d = 0; d < row.size(); ++d) {
    row[d] = (row[d] - mean[d]) * scale[d];
  }
}

RoiPatch extract_patch(const FeatureMap& fused, const Box& box, double stride,
                       const PipelineConfig& cfg) {
  RoiSpec roi{box, stride, cfg.expand_cells};
  switch (cfg.extractor) {
    case RoiExtractor::kEroi:
      return eroi_extract(fused, roi, cfg.eroi_mid, cfg.eroi_out).patch;
    case RoiExtractor::kAlign:
      return roi_align(fused, roi, cfg.eroi_out, cfg.align_samples);
    case RoiExtractor::kPool:
      return roi_pool(fused, roi, cfg.eroi_out);
  }
  throw std::logic_error("extract_patch: unknown extractor");
}

// Deterministic sample of up to k elements (Fisher-Yates prefix).
std::vector<std::size_t> sample_indices(std::vector<std::size_t> pool,
                                        std::size_t k, Rng& rng) {
  if (pool.size() <= k) return pool;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.index(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

HeadParams rejecting_head(int in_channels) {
  HeadParams hp;
  hp.init(1, in_channels, 0, 0.0);
  hp.cls_b[0] = 4.0;   // background logit
  hp.cls_b[1] = -4.0;  // foreground logit
  return hp;
}

struct SceneContext {
  double factor = 1.0;
  std::vector<LabeledBox> scaled_gts;      // original labels
  std::vector<int> visual_class;           // per annotation
  int image_w = 0;
  int image_h = 0;
};

}  // namespace

PipelineModel train_pipeline(const std::vector<SyntheticScene>& scenes,
                             const PipelineConfig& config,
                             TrainArtifacts* artifacts) {
  if (scenes.empty()) {
    throw std::invalid_argument("train_pipeline: no training scenes");
  }

  PipelineModel model;
  model.config = config;

  // Automatic visual shape clustering over the training annotations.
  std::vector<ObjectSample> samples;
  std::vector<std::pair<std::size_t, std::size_t>> sample_origin;
  for (std::size_t si = 0; si < scenes.size(); ++si) {
    for (std::size_t ai = 0; ai < scenes[si].annotations.size(); ++ai) {
      const SceneAnnotation& ann = scenes[si].annotations[ai];
      ObjectSample s;
      s.id = std::to_string(si) + "#" + std::to_string(ai);
      s.height = std::max(1, static_cast<int>(std::lround(ann.box.height())));
      s.width = std::max(1, static_cast<int>(std::lround(ann.box.width())));
      s.feature = crop_descriptor(scenes[si].image, ann.box);
      s.original_label = ann.label;
      samples.push_back(std::move(s));
      sample_origin.emplace_back(si, ai);
    }
  }
  const AvscResult avsc =
      run_avsc(samples, config.avsc_t, mix_seed(config.seed, fnv1a64("avsc")));
  model.st = avsc.tree;
  for (const auto& [visual, original] : model.st.reverse) {
    model.visual_classes.push_back(visual);
  }
  std::map<std::string, int> visual_id;
  for (std::size_t i = 0; i < model.visual_classes.size(); ++i) {
    visual_id[model.visual_classes[i]] = static_cast<int>(i) + 1;
  }
  if (artifacts != nullptr) artifacts->mu = avsc.mu;

  // Per-annotation visual class ids.
  std::vector<std::vector<int>> ann_visual(scenes.size());
  for (std::size_t si = 0; si < scenes.size(); ++si) {
    ann_visual[si].assign(scenes[si].annotations.size(), 0);
  }
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto [si, ai] = sample_origin[k];
    ann_visual[si][ai] = visual_id.at(avsc.visual_labels[k]);
  }

  model.backbone =
      ToyBackbone::random_init(config.backbone, 1, config.seed);
  const int stride = model.backbone.total_stride() / 2;
  const int fused_channels =
      config.backbone[config.backbone.size() - 2].out_channels +
      config.backbone[config.backbone.size() - 1].out_channels;
  model.rpn.in_channels = 2 * fused_channels;  // fused plus box-filter context
  const int n_slots =
      static_cast<int>(config.anchor_ratios.size() * config.anchor_scales.size());

  // Scene metadata; feature maps are recomputed per pass to bound memory.
  std::vector<SceneContext> ctx(scenes.size());
  for (std::size_t si = 0; si < scenes.size(); ++si) {
    const double short_side = std::min(scenes[si].image.h, scenes[si].image.w);
    const double long_side = std::max(scenes[si].image.h, scenes[si].image.w);
    double factor = config.resize_short / short_side;
    if (long_side * factor > config.resize_long_cap) {
      factor = config.resize_long_cap / long_side;
    }
    if (std::lround(scenes[si].image.h * factor) == scenes[si].image.h &&
        std::lround(scenes[si].image.w * factor) == scenes[si].image.w) {
      factor = 1.0;
    }
    ctx[si].factor = factor;
    for (std::size_t ai = 0; ai < scenes[si].annotations.size(); ++ai) {
      const SceneAnnotation& ann = scenes[si].annotations[ai];
      Box b{ann.box.x1 * factor, ann.box.y1 * factor, ann.box.x2 * factor,
            ann.box.y2 * factor};
      ctx[si].scaled_gts.push_back(LabeledBox{b, ann.label});
      ctx[si].visual_class.push_back(ann_visual[si][ai]);
    }
  }

  auto make_maps = [&](std::size_t si, FeatureMap& fused, FeatureMap& rpn_map) {
    const ResizeResult rr = resize_image(scenes[si].image, config);
    ctx[si].image_w = rr.image.w;
    ctx[si].image_h = rr.image.h;
    const std::vector<FeatureMap> stages = model.backbone.forward(rr.image);
    fused = fuse_stages(stages[stages.size() - 2], stages[stages.size() - 1]);
    rpn_map = rpn_feature_map(fused);
  };

  // RPN training set, gathered per anchor slot. The first sampling round is
  // uniform; a second round appends the highest-scoring false positives.
  std::vector<std::vector<std::vector<double>>> slot_feats(n_slots);
  std::vector<std::vector<int>> slot_labels(n_slots);
  std::vector<std::vector<BoxDelta>> slot_targets(n_slots);
  std::vector<AnchorAssignment> assignments(scenes.size());
  for (std::size_t si = 0; si < scenes.size(); ++si) {
    FeatureMap fused, rpn_map;
    make_maps(si, fused, rpn_map);
    const SceneContext& c = ctx[si];
    const std::vector<Box> anchors =
        generate_anchors(config.anchor_ratios, config.anchor_scales, stride,
                         fused.w, fused.h);
    assignments[si] =
        assign_anchors(anchors, c.scaled_gts, config.rpn_pos_iou,
                       config.rpn_neg_iou);
    const AnchorAssignment& assign = assignments[si];
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      if (assign.status[i] == 1) pos.push_back(i);
      if (assign.status[i] == 0) neg.push_back(i);
    }
    Rng rng(mix_seed(config.seed, fnv1a64("rpn-sample") ^ si));
    pos = sample_indices(std::move(pos), config.rpn_samples_pos, rng);
    neg = sample_indices(std::move(neg), config.rpn_samples_neg, rng);
    auto add = [&](std::size_t idx, int label) {
      const int slot = static_cast<int>(idx % n_slots);
      const std::size_t cell = idx / n_slots;
      const int y = static_cast<int>(cell / fused.w);
      const int x = static_cast<int>(cell % fused.w);
      slot_feats[slot].push_back(cell_features(rpn_map, y, x));
      slot_labels[slot].push_back(label);
      BoxDelta target;
      if (label == 1) {
        target = encode_deltas(anchors[idx],
                               c.scaled_gts[assign.gt_index[idx]].box);
      }
      slot_targets[slot].push_back(target);
    };
    for (std::size_t i : pos) add(i, 1);
    for (std::size_t i : neg) add(i, 0);
  }

  model.rpn.num_slots = n_slots;
  {
    std::vector<std::vector<double>> all_rows;
    for (const auto& rows : slot_feats) {
      all_rows.insert(all_rows.end(), rows.begin(), rows.end());
    }
    fit_standardization(all_rows, model.rpn.feat_mean, model.rpn.feat_scale);
    for (auto& rows : slot_feats) {
      for (auto& r : rows) {
        standardize_row(r, model.rpn.feat_mean, model.rpn.feat_scale);
      }
    }
  }
  auto train_slots = [&](std::vector<TraceRow>* trace_out) {
    model.rpn.slots.clear();
    for (int a = 0; a < n_slots; ++a) {
      bool has_pos = false, has_neg = false;
      for (int l : slot_labels[a]) {
        has_pos |= (l == 1);
        has_neg |= (l == 0);
      }
      if (!has_pos || !has_neg) {
        model.rpn.slots.push_back(rejecting_head(model.rpn.in_channels));
        continue;
      }
      HeadTrainConfig tc;
      tc.iterations = config.rpn_iterations;
      tc.lambda = config.lambda;
      tc.momentum = config.momentum;
      tc.schedule.base_lr = config.rpn_lr;
      tc.schedule.boundaries = {3 * config.rpn_iterations / 5,
                                4 * config.rpn_iterations / 5};
      tc.seed = mix_seed(config.seed,
                         fnv1a64("rpn-slot") ^ static_cast<std::uint64_t>(a));
      const HeadTrainResult r = train_toy_head(slot_feats[a], slot_labels[a],
                                               slot_targets[a], 1, tc);
      model.rpn.slots.push_back(r.params);
      if (trace_out == nullptr) continue;
      if (trace_out->empty()) {
        *trace_out = r.trace;
      } else {
        for (std::size_t i = 0; i < trace_out->size() && i < r.trace.size(); ++i) {
          (*trace_out)[i].cls += r.trace[i].cls;
          (*trace_out)[i].reg += r.trace[i].reg;
          (*trace_out)[i].total += r.trace[i].total;
        }
      }
    }
  };

  // Round one, then mine hard negatives against its scores and retrain.
  train_slots(nullptr);
  if (config.rpn_hard_negatives > 0) {
    for (std::size_t si = 0; si < scenes.size(); ++si) {
      FeatureMap fused, rpn_map;
      make_maps(si, fused, rpn_map);
      const AnchorAssignment& assign = assignments[si];
      const FeatureMap obj = model.rpn.objectness(rpn_map);
      const int slots = obj.c;
      std::vector<std::pair<double, std::size_t>> scored;
      for (int y = 0; y < obj.h; ++y) {
        for (int x = 0; x < obj.w; ++x) {
          for (int a = 0; a < slots; ++a) {
            const std::size_t idx =
                (static_cast<std::size_t>(y) * obj.w + x) * slots + a;
            if (assign.status[idx] != 0) continue;
            scored.emplace_back(-obj.at(a, y, x), idx);
          }
        }
      }
      const std::size_t take =
          std::min<std::size_t>(config.rpn_hard_negatives, scored.size());
      std::partial_sort(scored.begin(), scored.begin() + take, scored.end());
      for (std::size_t k = 0; k < take; ++k) {
        const std::size_t idx = scored[k].second;
        const int slot = static_cast<int>(idx % n_slots);
        const std::size_t cell = idx / n_slots;
        std::vector<double> row =
            cell_features(rpn_map, static_cast<int>(cell / fused.w),
                          static_cast<int>(cell % fused.w));
        standardize_row(row, model.rpn.feat_mean, model.rpn.feat_scale);
        slot_feats[slot].push_back(std::move(row));
        slot_labels[slot].push_back(0);
        slot_targets[slot].push_back(BoxDelta{});
      }
    }
  }
  std::vector<TraceRow> rpn_trace;
  train_slots(&rpn_trace);
  if (artifacts != nullptr) artifacts->rpn_trace = rpn_trace;

  // Detection-head training set: RPN proposals plus the ground-truth boxes.
  std::vector<std::vector<double>> head_feats;
  std::vector<int> head_labels;
  std::vector<BoxDelta> head_targets;
  RpnProposeConfig pcfg{config.rpn_nms, config.rpn_pre_top_n,
                        config.head_proposals_per_scene};
  for (std::size_t si = 0; si < scenes.size(); ++si) {
    FeatureMap fused, rpn_map;
    make_maps(si, fused, rpn_map);
    const SceneContext& c = ctx[si];
    const std::vector<Box> anchors =
        generate_anchors(config.anchor_ratios, config.anchor_scales, stride,
                         fused.w, fused.h);
    const FeatureMap obj = model.rpn.objectness(rpn_map);
    const FeatureMap dmap = model.rpn.deltas(rpn_map);
    std::vector<ScoredBox> props = rpn_propose(
        obj, &dmap, anchors, ImageSize{static_cast<double>(c.image_w),
                                       static_cast<double>(c.image_h)},
        pcfg);
    for (const auto& g : c.scaled_gts) {
      props.push_back(ScoredBox{g.box, "gt", 1.0});
    }
    int negatives = 0;
    for (const auto& p : props) {
      double best = 0.0;
      int arg = -1;
      for (std::size_t g = 0; g < c.scaled_gts.size(); ++g) {
        const double v = iou(p.box, c.scaled_gts[g].box);
        if (v > best) {
          best = v;
          arg = static_cast<int>(g);
        }
      }
      int label = 0;
      BoxDelta target;
      if (arg >= 0 && best >= config.a_min) {
        label = c.visual_class[arg];
        target = encode_deltas(p.box, c.scaled_gts[arg].box);
      } else {
        if (negatives >= config.head_neg_per_scene) continue;
        ++negatives;
      }
      head_feats.push_back(extract_patch(fused, p.box, stride, config).data);
      head_labels.push_back(label);
      head_targets.push_back(target);
    }
  }
  fit_standardization(head_feats, model.head_feat_mean, model.head_feat_scale);
  for (auto& row : head_feats) {
    standardize_row(row, model.head_feat_mean, model.head_feat_scale);
  }

  HeadTrainConfig hc;
  hc.iterations = config.head_iterations;
  hc.lambda = config.lambda;
  hc.momentum = config.momentum;
  hc.schedule.base_lr = config.head_lr;
  hc.schedule.boundaries = {3 * config.head_iterations / 5,
                            4 * config.head_iterations / 5};
  hc.seed = mix_seed(config.seed, fnv1a64("head"));
  const HeadTrainResult hr = train_toy_head(
      head_feats, head_labels, head_targets,
      static_cast<int>(model.visual_classes.size()), hc);
  model.head = hr.params;
  if (artifacts != nullptr) artifacts->head_trace = hr.trace;
  return model;
}

std::vector<ScoredBox> detect(const FeatureMap& image,
                              const PipelineModel& model) {
  const PipelineConfig& cfg = model.config;
  const ResizeResult rr = resize_image(image, cfg);
  const std::vector<FeatureMap> stages = model.backbone.forward(rr.image);
  const FeatureMap fused =
      fuse_stages(stages[stages.size() - 2], stages[stages.size() - 1]);
  const int stride = model.backbone.total_stride() / 2;
  const std::vector<Box> anchors =
      generate_anchors(cfg.anchor_ratios, cfg.anchor_scales, stride, fused.w,
                       fused.h);
  const FeatureMap rpn_map = rpn_feature_map(fused);
  const FeatureMap obj = model.rpn.objectness(rpn_map);
  const FeatureMap dmap = model.rpn.deltas(rpn_map);
  const ImageSize bounds{static_cast<double>(rr.image.w),
                         static_cast<double>(rr.image.h)};
  const std::vector<ScoredBox> props =
      rpn_propose(obj, &dmap, anchors, bounds,
                  RpnProposeConfig{cfg.rpn_nms, cfg.rpn_pre_top_n, cfg.rpn_top_n});

  // Classify and regress every proposal; group candidates per visual class.
  std::map<std::string, std::vector<ScoredBox>> per_class;
  for (const auto& p : props) {
    std::vector<double> feat = extract_patch(fused, p.box, stride, cfg).data;
    standardize_row(feat, model.head_feat_mean, model.head_feat_scale);
    const std::vector<double> logits = model.head.class_logits(feat);
    const double mx = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double v : logits) denom += std::exp(v - mx);
    int best_class = 0;
    double best_prob = 0.0;
    for (std::size_t cl = 0; cl < logits.size(); ++cl) {
      const double prob = std::exp(logits[cl] - mx) / denom;
      if (prob > best_prob) {
        best_prob = prob;
        best_class = static_cast<int>(cl);
      }
    }
    if (best_class == 0 || best_prob < cfg.score_thresh) continue;
    const BoxDelta d = model.head.class_delta(feat, best_class);
    const Box refined = decode_deltas(p.box, d, bounds);
    if (!refined.valid()) continue;
    const std::string& visual = model.visual_classes[best_class - 1];
    // NMS groups share the root label: visual siblings of one class are
    // redundant boxes of the same object and must suppress each other.
    per_class[model.st.original_for(visual)].push_back(
        ScoredBox{refined, visual, best_prob});
  }

  std::vector<ScoredBox> out;
  for (auto& [original, cands] : per_class) {
    const std::vector<std::size_t> keep = nms(cands, cfg.final_nms);
    for (std::size_t k : keep) {
      ScoredBox d = cands[k];
      // Back to the input image frame and root semantics.
      d.box.x1 /= rr.factor;
      d.box.y1 /= rr.factor;
      d.box.x2 /= rr.factor;
      d.box.y2 /= rr.factor;
      d.label = original;
      out.push_back(std::move(d));
    }
  }
  std::sort(out.begin(), out.end(), [](const ScoredBox& a, const ScoredBox& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.label != b.label) return a.label < b.label;
    if (a.box.x1 != b.box.x1) return a.box.x1 < b.box.x1;
    return a.box.y1 < b.box.y1;
  });
  return out;
}

}  // namespace avscnet
