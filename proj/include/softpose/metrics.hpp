#pragma once

#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "softpose/pose.hpp"
#include "softpose/tensor.hpp"

namespace softpose {

// Evaluation metrics. Errors and head sizes are in whatever units the caller
// supplies (the harness uses pixels); only valid ground-truth joints count.

namespace detail {

inline double joint_error(const Pose& pred, const Pose& gt, std::size_t j,
                          std::size_t dims) {
  const std::size_t dp = pred.coords.shape[1], dg = gt.coords.shape[1];
  double acc = 0.0;
  for (std::size_t d = 0; d < dims; ++d) {
    const double delta = pred.coords.values[j * dp + d] - gt.coords.values[j * dg + d];
    acc += delta * delta;
  }
  return std::sqrt(acc);
}

inline std::size_t shared_dims(const Pose& pred, const Pose& gt) {
  return std::min(pred.coords.shape[1], gt.coords.shape[1]);
}

inline void check_paired(const std::vector<Pose>& pred, const std::vector<Pose>& gt,
                         const char* op) {
  if (pred.size() != gt.size())
    throw ShapeError(std::string(op) + ": " + std::to_string(pred.size()) +
                     " predictions vs " + std::to_string(gt.size()) + " ground truths");
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i].njoints() != gt[i].njoints())
      throw ShapeError(std::string(op) + ": sample " + std::to_string(i) +
                       " joint counts differ");
}

}  // namespace detail

// Percentage of valid joints with Euclidean error <= threshold * head_size.
inline double pckh(const std::vector<Pose>& pred, const std::vector<Pose>& gt,
                   const std::vector<double>& head_sizes, double threshold) {
  detail::check_paired(pred, gt, "pckh");
  if (head_sizes.size() != gt.size())
    throw ShapeError("pckh: need one head size per sample");
  if (threshold <= 0.0) throw ValueError("pckh: threshold must be positive");
  std::size_t total = 0, hit = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const std::size_t dims = detail::shared_dims(pred[i], gt[i]);
    for (std::size_t j = 0; j < gt[i].njoints(); ++j) {
      if (!gt[i].valid[j]) continue;
      ++total;
      if (detail::joint_error(pred[i], gt[i], j, dims) <= threshold * head_sizes[i]) ++hit;
    }
  }
  if (total == 0) throw ValueError("pckh: no valid joints");
  return 100.0 * static_cast<double>(hit) / static_cast<double>(total);
}

// Trapezoidal area under the PCKh curve over thresholds 0..max_threshold in
// 50 uniform steps, normalized by max_threshold; in [0,100]. The t=0
// endpoint counts errors <= 0, so exact predictions score 100.
inline double pckh_auc(const std::vector<Pose>& pred, const std::vector<Pose>& gt,
                       const std::vector<double>& head_sizes, double max_threshold) {
  detail::check_paired(pred, gt, "pckh_auc");
  if (head_sizes.size() != gt.size())
    throw ShapeError("pckh_auc: need one head size per sample");
  if (max_threshold <= 0.0) throw ValueError("pckh_auc: max threshold must be positive");
  constexpr int kSteps = 50;

  auto pckh_at = [&](double threshold) -> double {
    std::size_t total = 0, hit = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      const std::size_t dims = detail::shared_dims(pred[i], gt[i]);
      for (std::size_t j = 0; j < gt[i].njoints(); ++j) {
        if (!gt[i].valid[j]) continue;
        ++total;
        if (detail::joint_error(pred[i], gt[i], j, dims) <= threshold * head_sizes[i]) ++hit;
      }
    }
    if (total == 0) throw ValueError("pckh_auc: no valid joints");
    return 100.0 * static_cast<double>(hit) / static_cast<double>(total);
  };

  double area = 0.0;
  double prev = pckh_at(0.0);
  for (int i = 1; i <= kSteps; ++i) {
    const double t = max_threshold * static_cast<double>(i) / kSteps;
    const double cur = pckh_at(t);
    area += 0.5 * (prev + cur) * (max_threshold / kSteps);
    prev = cur;
  }
  return area / max_threshold;
}

// Mean Euclidean distance over valid joints.
inline double mpjpe(const std::vector<Pose>& pred, const std::vector<Pose>& gt) {
  detail::check_paired(pred, gt, "mpjpe");
  std::size_t total = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const std::size_t dims = detail::shared_dims(pred[i], gt[i]);
    for (std::size_t j = 0; j < gt[i].njoints(); ++j) {
      if (!gt[i].valid[j]) continue;
      ++total;
      sum += detail::joint_error(pred[i], gt[i], j, dims);
    }
  }
  if (total == 0) throw ValueError("mpjpe: no valid joints");
  return sum / static_cast<double>(total);
}

// Percentage of correctly classified actions.
inline double accuracy(const std::vector<std::size_t>& preds,
                       const std::vector<std::size_t>& labels) {
  if (preds.size() != labels.size())
    throw ShapeError("accuracy: " + std::to_string(preds.size()) + " predictions vs " +
                     std::to_string(labels.size()) + " labels");
  if (preds.empty()) throw ValueError("accuracy: empty input");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == labels[i]) ++hit;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(preds.size());
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct EvalReport {
  std::string metric;
  double value = 0.0;
  std::vector<std::pair<std::string, double>> breakdown;
  std::size_t sample_count = 0;
};

inline std::string format_metric_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

inline std::string reports_to_csv(const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  os << "metric,value,samples\n";
  for (const EvalReport& r : reports) {
    os << r.metric << ',' << format_metric_value(r.value) << ',' << r.sample_count << "\n";
    for (const auto& [key, v] : r.breakdown)
      os << r.metric << '.' << key << ',' << format_metric_value(v) << ',' << r.sample_count
         << "\n";
  }
  return os.str();
}

}  // namespace softpose
