#pragma once

#include <map>
#include <string>
#include <vector>

#include "omniseg/scenedata.hpp"

// Instance average precision, semantic IoU, and ground-truth labels for
// points sampled on scene surfaces.
namespace omniseg::evalmetrics {

using Mask = std::vector<char>;

double mask_iou(const Mask& a, const Mask& b);

struct InstancePrediction {
  int scene = 0;  // predictions are only matched to GT of the same scene
  Mask mask;
  int class_id = 0;
  double score = 0.0;
};

struct GtInstance {
  int scene = 0;
  Mask mask;
  int class_id = 0;
};

/// AP for one class: predictions ranked by descending score (stable), each
/// greedily matched to the unmatched GT of highest IoU >= threshold (ties to
/// the lower GT index); area under the upper envelope of the PR curve.
double average_precision(const std::vector<InstancePrediction>& predictions, const std::vector<GtInstance>& gts,
                         double iou_threshold);

struct EvalReport {
  std::map<int, double> ap;    // class -> AP averaged over 0.50:0.05:0.95
  std::map<int, double> ap50;
  std::map<int, double> ap25;
  double map = 0.0;
  double map50 = 0.0;
  double map25 = 0.0;
  std::map<int, double> iou;  // class -> semantic IoU
  double miou = 0.0;

  /// ASCII `key value` lines.
  std::string to_text() const;
  /// One header line and one row.
  std::string to_csv(const std::string& label) const;
  static std::string csv_header();
};

/// Fills the instance fields of `report`. Classes absent from both GT and
/// predictions do not enter the means.
void evaluate_instances(const std::vector<InstancePrediction>& predictions, const std::vector<GtInstance>& gts,
                        EvalReport& report);

/// Accumulates per-class intersections and unions over tokens.
class SemanticAccumulator {
 public:
  void add(const std::vector<int>& predicted, const std::vector<int>& truth, const Mask& valid = {});
  /// Fills iou / miou over classes present in GT or predictions.
  void finish(EvalReport& report) const;

 private:
  std::map<int, long> inter_;
  std::map<int, long> union_;
};

void evaluate_semantic(const std::vector<int>& predicted, const std::vector<int>& truth, EvalReport& report);

/// Per-point GT instance id from the first view (lowest index) in which the point
/// is visible with depth agreement within `tolerance`; -1 where never visible.
std::vector<int> labels_to_mesh(const std::vector<scenedata::Frame>& frames, const std::vector<Vec3>& points,
                                double tolerance = 0.02);

}  // namespace omniseg::evalmetrics
