#include "msgt/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace msgt::metrics {

std::vector<double> combine_views(std::span<const std::vector<double>> views) {
  if (views.empty()) throw std::invalid_argument("combine_views: no views");
  std::vector<double> out = views.front();
  for (const auto& v : views.subspan(1)) {
    if (v.size() != out.size()) throw std::invalid_argument("combine_views: views differ in length");
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(out[i], v[i]);
  }
  return out;
}

std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("roc_auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mann-Whitney U from midranks; tied groups share their average rank.
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]] != 0) {
        positive_rank_sum += midrank;
        ++positives;
      }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;
  const double p = static_cast<double>(positives);
  const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

namespace {

double f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  const double precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

double f1(std::span<const double> scores, std::span<const int> labels, double threshold) {
  if (scores.size() != labels.size()) throw std::invalid_argument("f1: scores and labels differ in length");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    const bool truth = labels[i] != 0;
    tp += pred && truth;
    fp += pred && !truth;
    fn += !pred && truth;
  }
  return f1_from_counts(tp, fp, fn);
}

MetricsReport compute_report(const Tensor& probs, const Tensor& targets, io::TaskKind task,
                             std::vector<std::string> class_names) {
  if (!probs.same_shape(targets)) throw std::invalid_argument("compute_report: probs and targets differ in shape");
  const std::size_t n = probs.rows(), c = probs.cols();
  if (n == 0) throw std::invalid_argument("compute_report: no samples");
  if (class_names.size() != c) throw std::invalid_argument("compute_report: class name count mismatch");
  MetricsReport r;
  r.samples = n;
  r.class_names = std::move(class_names);

  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t pred = argmax(probs.row_span(i));
    if (task == io::TaskKind::SingleLabel)
      hits += pred == argmax(targets.row_span(i));
    else
      hits += targets(i, pred) != 0.0;
  }
  r.top1 = static_cast<double>(hits) / static_cast<double>(n);

  double auc_sum = 0.0;
  std::size_t auc_count = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = probs(i, k);
      labels[i] = targets(i, k) != 0.0;
    }
    r.auc.push_back(roc_auc(scores, labels));
    if (r.auc.back()) {
      auc_sum += *r.auc.back();
      ++auc_count;
    }
    if (task == io::TaskKind::SingleLabel) {
      std::vector<double> onehot(n);
      for (std::size_t i = 0; i < n; ++i) onehot[i] = argmax(probs.row_span(i)) == k ? 1.0 : 0.0;
      r.f1.push_back(f1(onehot, labels));
    } else {
      r.f1.push_back(f1(scores, labels));
    }
  }
  if (auc_count > 0) r.macro_auc = auc_sum / static_cast<double>(auc_count);
  r.macro_f1 = std::accumulate(r.f1.begin(), r.f1.end(), 0.0) / static_cast<double>(c);
  return r;
}

nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json auc = nlohmann::json::object(), f1s = nlohmann::json::object();
  for (std::size_t k = 0; k < r.class_names.size(); ++k) {
    auc[r.class_names[k]] = r.auc[k] ? nlohmann::json(*r.auc[k]) : nlohmann::json(nullptr);
    f1s[r.class_names[k]] = r.f1[k];
  }
  return {{"samples", r.samples},
          {"top1", r.top1},
          {"auc", {{"per_class", auc}, {"macro", r.macro_auc ? nlohmann::json(*r.macro_auc) : nlohmann::json(nullptr)}}},
          {"f1", {{"per_class", f1s}, {"macro", r.macro_f1}}},
          {"loss_curve", r.epoch_losses}};
}

}  // namespace msgt::metrics
