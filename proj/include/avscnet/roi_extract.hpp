#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "avscnet/feature_ops.hpp"
#include "avscnet/geometry.hpp"

namespace avscnet {

enum class RoiExtractor { kPool, kAlign, kEroi };

std::string extractor_name(RoiExtractor e);

// A region of interest in image coordinates plus the image-to-feature scale.
// expand_cells is the context margin (in feature cells per side) consumed by
// the expansion extractor only.
struct RoiSpec {
  Box box;
  double stride = 1.0;
  double expand_cells = 1.0;
};

// Fixed-size C x S x S region feature.
struct RoiPatch {
  int c = 0;
  int s = 0;
  RoiExtractor provenance = RoiExtractor::kPool;
  std::vector<double> data;

  std::size_t index(int ch, int y, int x) const {
    return (static_cast<std::size_t>(ch) * s + y) * s + x;
  }
  double at(int ch, int y, int x) const { return data[index(ch, y, x)]; }
  double& at(int ch, int y, int x) { return data[index(ch, y, x)]; }
  double mean() const;
};

// Gradient of one patch element with respect to the map: at most four
// support cells (flat map indices) with bilinear weights.
struct PatchGrad {
  std::array<std::int64_t, 4> cell{};
  std::array<double, 4> weight{};
};

struct EroiResult {
  RoiPatch patch;
  // One entry per patch element, populated when want_grad is set.
  std::vector<PatchGrad> grad;
};

// Historical quantized RoI pooling: round the region corners to integer
// cells, split into S x S integer bins (floor/ceil on bin edges), max over
// each bin.
RoiPatch roi_pool(const FeatureMap& map, const RoiSpec& roi, int out);

// Quantization-free: S x S equal continuous bins, each averaged over an
// n x n grid of bilinear samples at regular offsets.
RoiPatch roi_align(const FeatureMap& map, const RoiSpec& roi, int out,
                   int samples_per_bin);

// Expansion RoI: grow the continuous region by expand_cells per side (clamped
// to the map), bilinear-sample a mid x mid grid at bin centers, then max-pool
// k=2 s=2 down to out x out. With mid == out the pooling stage is skipped.
EroiResult eroi_extract(const FeatureMap& map, const RoiSpec& roi, int mid,
                        int out, bool want_grad = false);

// The mid x mid bin-center sample grid of the expansion extractor, before
// pooling (used by the oracle cross-checks).
RoiPatch eroi_mid_grid(const FeatureMap& map, const RoiSpec& roi, int mid);

struct QuantErrorRow {
  RoiExtractor method = RoiExtractor::kPool;
  int trials = 0;
  double mean_abs_err = 0.0;
  double max_abs_err = 0.0;
  std::uint64_t seed = 0;
};

struct RoiBenchParams {
  int out = 7;
  int eroi_mid = 14;
  int align_samples = 2;
  double expand_cells = 1.0;
  // Stratified sample grid of the dense region-average oracle.
  int oracle_grid_x = 40;
  int oracle_grid_y = 25;
};

// Random foreground-style fixture for the quantization error report: smooth
// blob maps and small fractional RoIs around the blobs.
void make_roi_bench_fixture(int trials, std::uint64_t seed,
                            std::vector<FeatureMap>& maps,
                            std::vector<RoiSpec>& rois);

// Mean |patch mean - dense region average| per extractor over the given
// (map, roi) pairs. When the lists are empty, `trials` pairs are generated
// from the seed via make_roi_bench_fixture.
std::vector<QuantErrorRow> quantization_error_report(
    std::vector<FeatureMap> maps, std::vector<RoiSpec> rois, int trials,
    std::uint64_t seed, const RoiBenchParams& params = {});

}  // namespace avscnet
