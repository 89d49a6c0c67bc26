#include "omniseg/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

namespace omniseg::evalmetrics {

double mask_iou(const Mask& a, const Mask& b) {
  require(a.size() == b.size(), "mask_iou: masks cover different domains");
  long inter = 0, uni = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]) ? 1 : 0;
    uni += (a[i] || b[i]) ? 1 : 0;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double average_precision(const std::vector<InstancePrediction>& predictions, const std::vector<GtInstance>& gts,
                         double iou_threshold) {
  if (gts.empty()) return 0.0;
  std::vector<int> order(predictions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return predictions[a].score > predictions[b].score; });
  std::vector<char> taken(gts.size(), 0);
  std::vector<char> hit;
  hit.reserve(order.size());
  for (int i : order) {
    const auto& p = predictions[i];
    int best = -1;
    double best_iou = -1.0;
    for (size_t j = 0; j < gts.size(); ++j) {
      if (taken[j] || gts[j].scene != p.scene) continue;
      const double iou = mask_iou(p.mask, gts[j].mask);
      if (iou >= iou_threshold && iou > best_iou) {
        best_iou = iou;
        best = static_cast<int>(j);
      }
    }
    if (best >= 0) taken[best] = 1;
    hit.push_back(best >= 0 ? 1 : 0);
  }
  const size_t n = hit.size();
  std::vector<double> precision(n), recall(n);
  long tp = 0;
  for (size_t i = 0; i < n; ++i) {
    tp += hit[i];
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(gts.size());
  }
  // upper envelope, then area over recall steps
  for (size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

void evaluate_instances(const std::vector<InstancePrediction>& predictions, const std::vector<GtInstance>& gts,
                        EvalReport& report) {
  std::set<int> classes;
  for (const auto& p : predictions) classes.insert(p.class_id);
  for (const auto& g : gts) classes.insert(g.class_id);
  report.ap.clear();
  report.ap50.clear();
  report.ap25.clear();
  for (int c : classes) {
    std::vector<InstancePrediction> pc;
    std::vector<GtInstance> gc;
    for (const auto& p : predictions) {
      if (p.class_id == c && std::any_of(p.mask.begin(), p.mask.end(), [](char v) { return v != 0; })) {
        pc.push_back(p);
      }
    }
    for (const auto& g : gts) {
      if (g.class_id == c) gc.push_back(g);
    }
    double sum = 0.0;
    for (int i = 0; i < 10; ++i) sum += average_precision(pc, gc, 0.5 + 0.05 * i);
    report.ap[c] = sum / 10.0;
    report.ap50[c] = average_precision(pc, gc, 0.5);
    report.ap25[c] = average_precision(pc, gc, 0.25);
  }
  const auto mean = [](const std::map<int, double>& m) {
    if (m.empty()) return 0.0;
    double s = 0.0;
    for (const auto& [c, v] : m) s += v;
    return s / static_cast<double>(m.size());
  };
  report.map = mean(report.ap);
  report.map50 = mean(report.ap50);
  report.map25 = mean(report.ap25);
}

void SemanticAccumulator::add(const std::vector<int>& predicted, const std::vector<int>& truth, const Mask& valid) {
  require(predicted.size() == truth.size(), "evaluate_semantic: label domains differ");
  require(valid.empty() || valid.size() == truth.size(), "evaluate_semantic: valid mask domain differs");
  for (size_t i = 0; i < truth.size(); ++i) {
    if (!valid.empty() && !valid[i]) continue;
    const int p = predicted[i];
    const int t = truth[i];
    if (p == t) {
      inter_[p] += 1;
      union_[p] += 1;
    } else {
      union_[p] += 1;
      union_[t] += 1;
    }
  }
}

void SemanticAccumulator::finish(EvalReport& report) const {
  report.iou.clear();
  double sum = 0.0;
  for (const auto& [c, u] : union_) {
    const auto it = inter_.find(c);
    const double iou = u == 0 ? 0.0 : static_cast<double>(it == inter_.end() ? 0 : it->second) / static_cast<double>(u);
    report.iou[c] = iou;
    sum += iou;
  }
  report.miou = report.iou.empty() ? 0.0 : sum / static_cast<double>(report.iou.size());
}

void evaluate_semantic(const std::vector<int>& predicted, const std::vector<int>& truth, EvalReport& report) {
  SemanticAccumulator acc;
  acc.add(predicted, truth);
  acc.finish(report);
}

std::string EvalReport::to_text() const {
  std::string out;
  char buf[128];
  const auto line = [&](const std::string& key, double v) {
    std::snprintf(buf, sizeof buf, "%s %.6f\n", key.c_str(), v);
    out += buf;
  };
  line("mAP", map);
  line("mAP50", map50);
  line("mAP25", map25);
  line("mIoU", miou);
  for (const auto& [c, v] : ap) line("AP.class" + std::to_string(c), v);
  for (const auto& [c, v] : ap50) line("AP50.class" + std::to_string(c), v);
  for (const auto& [c, v] : ap25) line("AP25.class" + std::to_string(c), v);
  for (const auto& [c, v] : iou) line("IoU.class" + std::to_string(c), v);
  return out;
}

std::string EvalReport::csv_header() { return "label,mAP,mAP50,mAP25,mIoU\n"; }

std::string EvalReport::to_csv(const std::string& label) const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f\n", label.c_str(), map, map50, map25, miou);
  return csv_header() + buf;
}

std::vector<int> labels_to_mesh(const std::vector<scenedata::Frame>& frames, const std::vector<Vec3>& points,
                                double tolerance) {
  std::vector<int> labels(points.size(), -1);
  for (const auto& f : frames) {
    const auto proj = geometry::project_points(f.intrinsics, f.pose, points);
    for (size_t i = 0; i < points.size(); ++i) {
      if (labels[i] >= 0 || proj[i].behind_camera) continue;
      const int col = static_cast<int>(std::lround(proj[i].u));
      const int row = static_cast<int>(std::lround(proj[i].v));
      if (col < 0 || row < 0 || col >= f.width() || row >= f.height()) continue;
      const double d = f.depth.at(row, col);
      if (d <= 0.0 || std::abs(d - proj[i].depth) > tolerance) continue;
      const int id = f.instance_at(row, col);
      if (id == scenedata::kIgnoreLabel) continue;
      labels[i] = id;
    }
  }
  return labels;
}

}  // namespace omniseg::evalmetrics
