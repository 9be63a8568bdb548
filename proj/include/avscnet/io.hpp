#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "avscnet/detection_losses.hpp"
#include "avscnet/evaluation.hpp"
#include "avscnet/geometry.hpp"
#include "avscnet/roi_extract.hpp"
#include "avscnet/shape_clustering.hpp"

namespace avscnet {

// One object-bearing record per image. Text form (one line):
//   <image_id> [dims=<W>x<H>] box=<x1>,<y1>,<x2>,<y2>,<label>[,<score>]...
// The first line of every file is a schema version header.
struct AnnotationRecord {
  std::string image_id;
  std::optional<ImageSize> dims;
  std::vector<LabeledBox> boxes;
};

struct DetectionRecord {
  std::string image_id;
  std::optional<ImageSize> dims;
  std::vector<ScoredBox> boxes;
};

std::vector<AnnotationRecord> read_annotations(const std::string& path);
void write_annotations(const std::string& path,
                       const std::vector<AnnotationRecord>& records);

std::vector<DetectionRecord> read_detections(const std::string& path);
void write_detections(const std::string& path,
                      const std::vector<DetectionRecord>& records);

// Feature file: one record per object id, the id followed by the vector.
std::map<std::string, std::vector<double>> read_features(const std::string& path);
void write_features(const std::string& path,
                    const std::map<std::string, std::vector<double>>& features);

SemanticTree read_semantic_tree(const std::string& path);
void write_semantic_tree(const std::string& path, const SemanticTree& tree);

void write_kde_csv(const std::string& path, const DensityCurve& curve);
void write_pr_curves_csv(const std::string& path,
                         const std::map<std::string, PRCurve>& curves);
void write_report_csv(const std::string& path, const EvalReport& report);
void write_roi_bench_csv(const std::string& path,
                         const std::vector<QuantErrorRow>& rows);
void write_trace_csv(const std::string& path, const std::vector<TraceRow>& rows);

// Named parameter blocks: a text manifest (name plus C H W per block)
// followed by the blocks in FeatureMap binary layout.
struct WeightsFile {
  std::vector<std::pair<std::string, FeatureMap>> blocks;

  const FeatureMap& find(const std::string& name) const;
};

void write_weights(const std::string& path, const WeightsFile& weights);
WeightsFile read_weights(const std::string& path);

// Deterministic float formatting shared by every text export.
std::string format_double(double v);

}  // namespace avscnet
