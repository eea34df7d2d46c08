#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "msgt/manifest.hpp"
#include "msgt/tensor.hpp"

namespace msgt::metrics {

/// Element-wise max over per-view probability vectors.
std::vector<double> combine_views(std::span<const std::vector<double>> views);

/// Probability that a random positive outranks a random negative, ties
/// counting one half. nullopt when labels hold a single class.
std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels);

/// 2PR / (P + R) of predictions score >= threshold; 0 when P + R == 0.
double f1(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

struct MetricsReport {
  std::size_t samples = 0;
  double top1 = 0.0;
  std::vector<std::optional<double>> auc;  // per class
  std::optional<double> macro_auc;         // mean over defined classes
  std::vector<double> f1;
  double macro_f1 = 0.0;
  std::vector<std::string> class_names;
  std::vector<double> epoch_losses;
};

/// probs and targets are N x C. Single-label: top1 compares argmaxes and F1
/// scores the one-hot argmax prediction. Multi-label: top1 asks whether the
/// argmax class is a positive, F1 thresholds at 0.5.
MetricsReport compute_report(const Tensor& probs, const Tensor& targets, io::TaskKind task,
                             std::vector<std::string> class_names);

nlohmann::json report_to_json(const MetricsReport& report);

}  // namespace msgt::metrics
