#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace avscnet {

// A cropped labeled object: the clustering input.
struct ObjectSample {
  std::string id;
  int height = 1;  // px
  int width = 1;   // px
  std::vector<double> feature;  // the psi descriptor
  std::string original_label;
};

struct RatioHistogram {
  int t = 0;
  std::vector<double> edges;  // t+1 boundaries spanning [0, max ratio]
  std::vector<int> counts;    // samples per subinterval
};

struct DensityCurve {
  std::vector<double> grid;
  std::vector<double> density;
  double bandwidth = 0.0;
};

struct ClusterModel {
  int k = 0;
  std::vector<std::vector<double>> centroids;
  std::vector<int> assignments;  // cluster id per sample, in input order
  std::uint64_t seed = 0;
  // Objective value after each assignment step (diagnostic).
  std::vector<double> wcss_trace;
};

// Bidirectional map between original labels and visual-shape sub-labels.
struct SemanticTree {
  std::map<std::string, std::vector<std::string>> forward;
  std::map<std::string, std::string> reverse;

  const std::vector<std::string>& visuals_for(const std::string& original) const;
  const std::string& original_for(const std::string& visual) const;
};

// min(H,W)/max(H,W), in (0,1]. H or W < 1 is an error.
double shape_ratio(int h, int w);

// Elementwise ratio-scaled descriptor.
std::vector<double> scale_feature(double xi, const std::vector<double>& psi);

// 1.06 * sigma_hat * n^(-1/5); requires n >= 2. Returns 0 when the sample
// deviation vanishes (caller must then supply a bandwidth).
double silverman_bandwidth(const std::vector<double>& xs);

// Gaussian-kernel density over a 512-point grid spanning
// [min-4h, max+4h] ∩ [0, inf). Bandwidth defaults to Silverman's rule.
DensityCurve gaussian_kde(const std::vector<double>& ratios,
                          std::optional<double> bandwidth = std::nullopt);

// Pointwise density, same kernel as gaussian_kde.
double gaussian_kde_at(const std::vector<double>& ratios, double bandwidth,
                       double x);

// Count of strict interior local maxima of a curve sampled on a grid.
int interior_local_maxima(const std::vector<double>& values);

RatioHistogram ratio_histogram(const std::vector<double>& ratios, int t);

// Whether a histogram bin is a mode when both neighbors are strictly smaller
// (the default) or when either is.
enum class ModeRule { kBothNeighborsSmaller, kEitherNeighborSmaller };

// Morphological quantity Mu: modes of the t-bin ratio histogram,
// out-of-range neighbors counting as zero, clamped to >= 1.
int count_modes(const std::vector<double>& ratios, int t,
                ModeRule rule = ModeRule::kBothNeighborsSmaller);

// Seeded k-means++ plus Lloyd iterations (centroid shift < 1e-6 or 300
// rounds). Empty clusters are reseeded to the point farthest from its
// centroid. Deterministic given the seed.
ClusterModel kmeans_cluster(const std::vector<std::vector<double>>& features,
                            int k, std::uint64_t seed);

double kmeans_objective(const std::vector<std::vector<double>>& features,
                        const ClusterModel& model);

// Visual labels are "<original>_V<j>", j = 1..k. The per-label model's
// assignments must align with that label's samples in input order.
SemanticTree build_semantic_tree(
    const std::vector<ObjectSample>& samples,
    const std::map<std::string, ClusterModel>& per_label_models);

struct AvscOptions {
  ModeRule mode_rule = ModeRule::kBothNeighborsSmaller;
  // Used when Silverman's rule degenerates (zero deviation).
  double fallback_bandwidth = 0.1;
};

struct AvscResult {
  std::vector<std::string> visual_labels;  // aligned with the input samples
  SemanticTree tree;
  std::map<std::string, int> mu;
  std::map<std::string, DensityCurve> curves;
  std::map<std::string, ClusterModel> models;
};

// The end-to-end clustering pipeline: per original label compute shape
// ratios, ratio-scaled features, Mu, and a k=Mu clustering, then relabel
// every sample with its visual label and emit the semantic tree.
AvscResult run_avsc(const std::vector<ObjectSample>& samples, int t,
                    std::uint64_t seed, const AvscOptions& options = {});

}  // namespace avscnet
