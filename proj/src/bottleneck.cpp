#include "msgt/bottleneck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "msgt/ops.hpp"

namespace msgt::bottleneck {

namespace {

constexpr double kLogitClip = 1e-12;

double clipped_logit(double p) {
  const double q = std::clamp(p, kLogitClip, 1.0 - kLogitClip);
  return std::log(q / (1.0 - q));
}

}  // namespace

std::string to_string(ClampSource source) {
  switch (source) {
    case ClampSource::Annotation: return "annotation";
    case ClampSource::Hint: return "hint";
    case ClampSource::Request: return "request";
  }
  return "unknown";
}

Params make_params(ParameterStore& store, Tensor concept_embeddings, Rng& rng, const std::string& prefix) {
  const std::size_t k = concept_embeddings.rows();
  const std::size_t d = concept_embeddings.cols();
  if (k == 0 || d == 0) throw std::invalid_argument("bottleneck needs at least one concept of positive dimension");
  Params p;
  p.head_weight = &store.add(prefix + "head.weight", init_affine_weight(d, k, rng));
  p.head_bias = &store.add(prefix + "head.bias", Tensor::matrix(1, k));
  p.fusion_weight = &store.add(prefix + "fusion.weight", Tensor::matrix(2, k, 0.5));
  p.fusion_bias = &store.add(prefix + "fusion.bias", Tensor::matrix(1, k));
  p.concept_embeddings = std::move(concept_embeddings);
  return p;
}

Var fuse_views(Var scores, Var weight, Var bias) {
  if (scores.rows() == 0) throw std::invalid_argument("fuse_views: no views");
  const std::size_t k = scores.cols();
  if (weight.rows() != 2 || weight.cols() != k || bias.cols() != k)
    throw std::invalid_argument("fuse_views: fusion parameters do not match concept count");
  Var mean_feature = logit(mean_rows(scores), kLogitClip);
  Var max_feature = logit(max_rows(scores), kLogitClip);
  Var mixed = add(mul(mean_feature, gather_rows(weight, {0})), mul(max_feature, gather_rows(weight, {1})));
  return sigmoid(add(mixed, bias));
}

double fuse_views(std::span<const double> scores, double w_mean, double w_max, double bias) {
  if (scores.empty()) throw std::invalid_argument("fuse_views: no views");
  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= static_cast<double>(scores.size());
  const double mx = *std::max_element(scores.begin(), scores.end());
  return sigmoid(w_mean * clipped_logit(mean) + w_max * clipped_logit(mx) + bias);
}

Var predict_concepts(Tape& tape, const Tensor& views, const Params& params) {
  if (views.rows() == 0) throw std::invalid_argument("predict_concepts: at least one view is required");
  if (views.cols() != params.dim())
    throw std::invalid_argument("predict_concepts: view dimension " + std::to_string(views.cols()) +
                                " does not match concept dimension " + std::to_string(params.dim()));
  Var v = tape.constant(views);
  Var per_view = sigmoid(add(matmul(v, tape.param(*params.head_weight)), tape.param(*params.head_bias)));
  return fuse_views(per_view, tape.param(*params.fusion_weight), tape.param(*params.fusion_bias));
}

Tensor view_priors(const Tensor& views, const Tensor& concept_embeddings) {
  if (views.cols() != concept_embeddings.cols())
    throw std::invalid_argument("prior_scores: view dimension " + std::to_string(views.cols()) +
                                " does not match concept dimension " + std::to_string(concept_embeddings.cols()));
  Tensor out = Tensor::matrix(views.rows(), concept_embeddings.rows());
  for (std::size_t m = 0; m < views.rows(); ++m)
    for (std::size_t k = 0; k < concept_embeddings.rows(); ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < views.cols(); ++j) s += views(m, j) * concept_embeddings(k, j);
      out(m, k) = sigmoid(s);
    }
  return out;
}

Tensor prior_scores(const Tensor& views, const Params& params) {
  const Tensor per_view = view_priors(views, params.concept_embeddings);
  const std::size_t k = per_view.cols();
  Tensor out = Tensor::matrix(1, k);
  std::vector<double> column(per_view.rows());
  const Tensor& w = params.fusion_weight->value;
  const Tensor& b = params.fusion_bias->value;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t m = 0; m < per_view.rows(); ++m) column[m] = per_view(m, c);
    out(0, c) = fuse_views(column, w(0, c), w(1, c), b(0, c));
  }
  return out;
}

Var fused_priors(Tape& tape, const Tensor& views, const Params& params) {
  return fuse_views(tape.constant(view_priors(views, params.concept_embeddings)), tape.param(*params.fusion_weight),
                    tape.param(*params.fusion_bias));
}

InterventionResult apply_interventions(const Tensor& priors, const std::optional<std::vector<io::Annotation>>& annotations,
                                       const std::optional<std::vector<double>>& hint,
                                       const Tensor& concept_embeddings, double tau_h) {
  InterventionResult out;
  out.priors = priors;
  const std::size_t k = priors.numel();
  if (annotations) {
    if (annotations->size() != k)
      throw std::invalid_argument("annotation vector length " + std::to_string(annotations->size()) +
                                  " does not match " + std::to_string(k) + " concepts");
    for (std::size_t i = 0; i < k; ++i) {
      const auto a = (*annotations)[i];
      if (a == io::Annotation::Unknown) continue;
      const double v = a == io::Annotation::Present ? 1.0 : 0.0;
      out.priors[i] = v;
      out.audit.push_back({i, v, ClampSource::Annotation});
    }
  }
  if (hint) {
    if (hint->size() != concept_embeddings.cols())
      throw std::invalid_argument("hint embedding dimension does not match concept embeddings");
    double hn = 0.0;
    for (double x : *hint) hn += x * x;
    hn = std::sqrt(hn);
    for (std::size_t c = 0; c < concept_embeddings.rows() && hn > 0.0; ++c) {
      double dot = 0.0, tn = 0.0;
      for (std::size_t j = 0; j < hint->size(); ++j) {
        dot += (*hint)[j] * concept_embeddings(c, j);
        tn += concept_embeddings(c, j) * concept_embeddings(c, j);
      }
      if (dot / (hn * std::sqrt(tn)) > tau_h) {
        out.z_clamps[c] = 1.0;
        out.audit.push_back({c, 1.0, ClampSource::Hint});
      }
    }
  }
  return out;
}

Var alignment_loss(Var p, Var f) {
  if (p.value().numel() != f.value().numel())
    throw std::invalid_argument("alignment_loss: length mismatch (" + std::to_string(p.value().numel()) + " vs " +
                                std::to_string(f.value().numel()) + ")");
  return mean(square(sub(p, f)));
}

Var elastic_net(Var weight, double phi) {
  if (!(phi >= 0.0 && phi <= 1.0)) throw std::invalid_argument("elastic_net: phi must lie in [0, 1]");
  return add(scale(sum(abs(weight)), phi), scale(sum(square(weight)), (1.0 - phi) / 2.0));
}

Var cbl_loss(Var align, Var sparse, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("cbl_loss: lambda must be non-negative");
  return add(align, scale(sparse, lambda));
}

Var assemble_z(Var p, const ClampMap& clamps) {
  for (const auto& [k, v] : clamps) {
    if (k >= p.value().numel())
      throw std::out_of_range("clamp index " + std::to_string(k) + " out of range for " +
                              std::to_string(p.value().numel()) + " concepts");
    if (v != 0.0 && v != 1.0) throw std::invalid_argument("clamp values must be 0 or 1");
  }
  if (clamps.empty()) return p;
  return overwrite(p, clamps);
}

}  // namespace msgt::bottleneck
