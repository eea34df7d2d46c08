#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msgt/manifest.hpp"
#include "msgt/parameter.hpp"
#include "msgt/rng.hpp"
#include "msgt/tape.hpp"

namespace msgt::bottleneck {

/// Prediction head (d -> K affine), per-concept fusion over [mean, max] of
/// view scores, and the frozen concept embeddings t_k.
struct Params {
  Parameter* head_weight = nullptr;    // d x K
  Parameter* head_bias = nullptr;      // 1 x K
  Parameter* fusion_weight = nullptr;  // 2 x K; row 0 weighs the mean feature, row 1 the max
  Parameter* fusion_bias = nullptr;    // 1 x K
  Tensor concept_embeddings;           // K x d, unit rows

  std::size_t concepts() const { return concept_embeddings.rows(); }
  std::size_t dim() const { return concept_embeddings.cols(); }
};

/// Fusion starts as a pass-through: weights (0.5, 0.5), bias 0.
Params make_params(ParameterStore& store, Tensor concept_embeddings, Rng& rng,
                   const std::string& prefix = "bottleneck.");

/// Flat concept index -> clamped value (0 or 1).
using ClampMap = std::map<std::size_t, double>;

enum class ClampSource { Annotation, Hint, Request };
std::string to_string(ClampSource source);

struct Clamp {
  std::size_t index = 0;
  double value = 0.0;
  ClampSource source = ClampSource::Request;
};

/// Fuses an M x K matrix of per-view scores into a 1 x K row:
/// sigmoid(w_mean * logit(mean_m s) + w_max * logit(max_m s) + b), per concept.
/// With w = (0.5, 0.5), b = 0 a single view passes through unchanged.
Var fuse_views(Var scores, Var weight, Var bias);

/// Scalar form of fuse_views for one concept.
double fuse_views(std::span<const double> scores, double w_mean, double w_max, double bias);

/// Per-view sigmoid(head(v)) fused to a 1 x K row p.
Var predict_concepts(Tape& tape, const Tensor& views, const Params& params);

/// M x K matrix sigmoid(v_m . t_k).
Tensor view_priors(const Tensor& views, const Tensor& concept_embeddings);

/// Fused priors f (1 x K) using the current fusion values.
Tensor prior_scores(const Tensor& views, const Params& params);

/// Same values recorded on the tape. The view priors are constants but the
/// fusion parameters receive gradient, since the alignment loss depends on
/// them through both p and f.
Var fused_priors(Tape& tape, const Tensor& views, const Params& params);

struct InterventionResult {
  Tensor priors;     // f' after annotation clamps
  ClampMap z_clamps; // hint-derived clamps, applied to z
  std::vector<Clamp> audit;
};

/// Annotation a_k = 1/0 overwrites f_k; a hint whose cosine with t_k exceeds
/// tau_h requests z_k = 1.
InterventionResult apply_interventions(const Tensor& priors, const std::optional<std::vector<io::Annotation>>& annotations,
                                       const std::optional<std::vector<double>>& hint,
                                       const Tensor& concept_embeddings, double tau_h);

/// (1/K) sum_k (p_k - f_k)^2
Var alignment_loss(Var p, Var f);
/// phi * |W|_1 + (1 - phi)/2 * |W|_F^2
Var elastic_net(Var weight, double phi);
/// align + lambda * sparse
Var cbl_loss(Var align, Var sparse, double lambda);

/// z = p with clamped positions overwritten. Clamped positions pass no
/// gradient to p.
Var assemble_z(Var p, const ClampMap& clamps);

}  // namespace msgt::bottleneck
