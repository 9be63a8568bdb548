#include "avscnet/shape_clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "avscnet/rng.hpp"

namespace avscnet {

namespace {
const double kSqrt2Pi = 2.50662827463100050242;
}

const std::vector<std::string>& SemanticTree::visuals_for(
    const std::string& original) const {
  auto it = forward.find(original);
  if (it == forward.end()) {
    throw std::invalid_argument("semantic tree: unknown original label " + original);
  }
  return it->second;
}

const std::string& SemanticTree::original_for(const std::string& visual) const {
  auto it = reverse.find(visual);
  if (it == reverse.end()) {
    throw std::invalid_argument("semantic tree: unknown visual label " + visual);
  }
  return it->second;
}

double shape_ratio(int h, int w) {
  if (h < 1 || w < 1) {
    throw std::invalid_argument("shape_ratio: height and width must be >= 1");
  }
  return static_cast<double>(std::min(h, w)) / static_cast<double>(std::max(h, w));
}

std::vector<double> scale_feature(double xi, const std::vector<double>& psi) {
  if (!std::isfinite(xi) || !(xi > 0.0) || xi > 1.0) {
    throw std::invalid_argument("scale_feature: ratio must lie in (0,1]");
  }
  std::vector<double> out(psi.size());
  for (std::size_t i = 0; i < psi.size(); ++i) {
    if (!std::isfinite(psi[i])) {
      throw std::invalid_argument("scale_feature: non-finite feature value");
    }
    out[i] = xi * psi[i];
  }
  return out;
}

double silverman_bandwidth(const std::vector<double>& xs) {
  if (xs.size() < 2) {
    throw std::invalid_argument("silverman_bandwidth: needs >= 2 samples");
  }
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double sigma = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  return 1.06 * sigma * std::pow(static_cast<double>(xs.size()), -0.2);
}

double gaussian_kde_at(const std::vector<double>& ratios, double bandwidth,
                       double x) {
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) {
    throw std::invalid_argument("gaussian_kde: bandwidth must be positive");
  }
  if (ratios.empty()) {
    throw std::invalid_argument("gaussian_kde: empty sample set");
  }
  double sum = 0.0;
  for (double r : ratios) {
    const double z = (x - r) / bandwidth;
    sum += std::exp(-0.5 * z * z) / kSqrt2Pi;
  }
  return sum / (static_cast<double>(ratios.size()) * bandwidth);
}

DensityCurve gaussian_kde(const std::vector<double>& ratios,
                          std::optional<double> bandwidth) {
  if (ratios.empty()) {
    throw std::invalid_argument("gaussian_kde: empty sample set");
  }
  double h;
  if (bandwidth) {
    h = *bandwidth;
    if (!(h > 0.0) || !std::isfinite(h)) {
      throw std::invalid_argument("gaussian_kde: bandwidth must be positive");
    }
  } else {
    h = silverman_bandwidth(ratios);
    if (!(h > 0.0)) {
      throw std::invalid_argument(
          "gaussian_kde: zero sample deviation, supply a bandwidth");
    }
  }
  const auto [mn, mx] = std::minmax_element(ratios.begin(), ratios.end());
  const double lo = std::max(0.0, *mn - 4.0 * h);
  const double hi = *mx + 4.0 * h;

  DensityCurve curve;
  curve.bandwidth = h;
  const int points = 512;
  curve.grid.resize(points);
  curve.density.resize(points);
  const double step = (hi - lo) / (points - 1);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < points; ++i) {
    const double x = lo + step * i;
    curve.grid[i] = x;
    curve.density[i] = gaussian_kde_at(ratios, h, x);
  }
  return curve;
}

int interior_local_maxima(const std::vector<double>& values) {
  int count = 0;
  for (std::size_t i = 1; i + 1 < values.size(); ++i) {
    if (values[i] > values[i - 1] && values[i] > values[i + 1]) ++count;
  }
  return count;
}

RatioHistogram ratio_histogram(const std::vector<double>& ratios, int t) {
  if (ratios.empty()) {
    throw std::invalid_argument("ratio_histogram: empty sample set");
  }
  if (t < 2) throw std::invalid_argument("ratio_histogram: t must be >= 2");
  double mx = 0.0;
  for (double r : ratios) {
    if (!std::isfinite(r) || r <= 0.0) {
      throw std::invalid_argument("ratio_histogram: ratios must be positive");
    }
    mx = std::max(mx, r);
  }
  RatioHistogram hist;
  hist.t = t;
  hist.edges.resize(t + 1);
  for (int i = 0; i <= t; ++i) hist.edges[i] = mx * i / t;
  hist.counts.assign(t, 0);
  for (double r : ratios) {
    int bin = static_cast<int>(r / mx * t);
    bin = std::min(bin, t - 1);  // the maximum lands in the last bin
    ++hist.counts[bin];
  }
  return hist;
}

int count_modes(const std::vector<double>& ratios, int t, ModeRule rule) {
  const RatioHistogram hist = ratio_histogram(ratios, t);
  int mu = 0;
  for (int v = 0; v < t; ++v) {
    const int c = hist.counts[v];
    const int left = v > 0 ? hist.counts[v - 1] : 0;
    const int right = v + 1 < t ? hist.counts[v + 1] : 0;
    const bool is_mode = rule == ModeRule::kBothNeighborsSmaller
                             ? (left < c && right < c)
                             : (left < c || right < c);
    if (is_mode) ++mu;
  }
  return std::max(mu, 1);
}

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

double kmeans_objective(const std::vector<std::vector<double>>& features,
                        const ClusterModel& model) {
  double obj = 0.0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    obj += sq_dist(features[i], model.centroids[model.assignments[i]]);
  }
  return obj;
}

ClusterModel kmeans_cluster(const std::vector<std::vector<double>>& features,
                            int k, std::uint64_t seed) {
  const int n = static_cast<int>(features.size());
  if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
  if (k > n) throw std::invalid_argument("kmeans: k exceeds sample count");
  const std::size_t dim = features[0].size();
  for (const auto& f : features) {
    if (f.size() != dim || f.empty()) {
      throw std::invalid_argument("kmeans: ragged or empty feature vectors");
    }
  }

  ClusterModel model;
  model.k = k;
  model.seed = seed;
  model.assignments.assign(n, 0);

  // k-means++ seeding.
  Rng rng(seed);
  model.centroids.push_back(features[rng.index(n)]);
  std::vector<double> d2(n);
  while (static_cast<int>(model.centroids.size()) < k) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : model.centroids) {
        best = std::min(best, sq_dist(features[i], c));
      }
      d2[i] = best;
      total += best;
    }
    int pick;
    if (total <= 0.0) {
      pick = static_cast<int>(rng.index(n));
    } else {
      const double r = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    }
    model.centroids.push_back(features[pick]);
  }

  // Lloyd iterations.
  for (int iter = 0; iter < 300; ++iter) {
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (int c = 0; c < k; ++c) {
        const double d = sq_dist(features[i], model.centroids[c]);
        if (d < best) {  // ties keep the lower cluster index
          best = d;
          arg = c;
        }
      }
      model.assignments[i] = arg;
    }
    model.wcss_trace.push_back(kmeans_objective(features, model));

    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      ++counts[model.assignments[i]];
      for (std::size_t d = 0; d < dim; ++d) {
        sums[model.assignments[i]][d] += features[i][d];
      }
    }

    // Reseed empty clusters to the point farthest from its centroid.
    std::vector<bool> taken(n, false);
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      double far = -1.0;
      int arg = 0;
      for (int i = 0; i < n; ++i) {
        if (taken[i]) continue;
        const double d = sq_dist(features[i], model.centroids[model.assignments[i]]);
        if (d > far) {
          far = d;
          arg = i;
        }
      }
      taken[arg] = true;
      sums[c] = features[arg];
      counts[c] = 1;
    }

    double shift = 0.0;
    for (int c = 0; c < k; ++c) {
      std::vector<double> next(dim);
      for (std::size_t d = 0; d < dim; ++d) {
        next[d] = sums[c][d] / counts[c];
      }
      shift = std::max(shift, std::sqrt(sq_dist(next, model.centroids[c])));
      model.centroids[c] = std::move(next);
    }
    if (shift < 1e-6) break;
  }

  // Final assignment against the converged centroids.
  for (int i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (int c = 0; c < k; ++c) {
      const double d = sq_dist(features[i], model.centroids[c]);
      if (d < best) {
        best = d;
        arg = c;
      }
    }
    model.assignments[i] = arg;
  }
  model.wcss_trace.push_back(kmeans_objective(features, model));
  return model;
}

SemanticTree build_semantic_tree(
    const std::vector<ObjectSample>& samples,
    const std::map<std::string, ClusterModel>& per_label_models) {
  // Per-label sample counts, to validate model alignment.
  std::map<std::string, int> counts;
  for (const auto& s : samples) ++counts[s.original_label];

  SemanticTree tree;
  for (const auto& [label, model] : per_label_models) {
    auto it = counts.find(label);
    if (it == counts.end() ||
        static_cast<int>(model.assignments.size()) != it->second) {
      throw std::invalid_argument(
          "build_semantic_tree: model does not align with samples for " + label);
    }
    std::vector<std::string> visuals;
    for (int j = 1; j <= model.k; ++j) {
      visuals.push_back(label + "_V" + std::to_string(j));
    }
    for (const auto& v : visuals) {
      if (!tree.reverse.emplace(v, label).second) {
        throw std::logic_error("build_semantic_tree: duplicate visual label " + v);
      }
    }
    tree.forward[label] = std::move(visuals);
  }
  return tree;
}

AvscResult run_avsc(const std::vector<ObjectSample>& samples, int t,
                    std::uint64_t seed, const AvscOptions& options) {
  if (samples.empty()) throw std::invalid_argument("run_avsc: no samples");
  if (t < 2) throw std::invalid_argument("run_avsc: t must be >= 2");

  // Group per original label, keeping first-appearance order inside groups.
  std::map<std::string, std::vector<std::size_t>> groups;
  const std::size_t feat_dim = samples[0].feature.size();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].feature.empty() || samples[i].feature.size() != feat_dim) {
      throw std::invalid_argument("run_avsc: inconsistent feature lengths");
    }
    groups[samples[i].original_label].push_back(i);
  }
  for (const auto& [label, idx] : groups) {
    if (static_cast<int>(idx.size()) < t) {
      throw std::invalid_argument("run_avsc: label " + label +
                                  " has fewer samples than t");
    }
  }

  AvscResult res;
  res.visual_labels.resize(samples.size());
  for (const auto& [label, idx] : groups) {
    std::vector<double> ratios;
    std::vector<std::vector<double>> scaled;
    ratios.reserve(idx.size());
    scaled.reserve(idx.size());
    for (std::size_t i : idx) {
      const double xi = shape_ratio(samples[i].height, samples[i].width);
      ratios.push_back(xi);
      scaled.push_back(scale_feature(xi, samples[i].feature));
    }

    const int mu = count_modes(ratios, t, options.mode_rule);
    res.mu[label] = mu;

    double h = silverman_bandwidth(ratios);
    if (!(h > 0.0)) h = options.fallback_bandwidth;
    res.curves[label] = gaussian_kde(ratios, h);

    ClusterModel model =
        kmeans_cluster(scaled, mu, mix_seed(seed, fnv1a64(label)));
    for (std::size_t j = 0; j < idx.size(); ++j) {
      res.visual_labels[idx[j]] =
          label + "_V" + std::to_string(model.assignments[j] + 1);
    }
    res.models[label] = std::move(model);
  }
  res.tree = build_semantic_tree(samples, res.models);
  return res;
}

}  // namespace avscnet
