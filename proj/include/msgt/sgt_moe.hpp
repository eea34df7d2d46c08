#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msgt/graphs.hpp"
#include "msgt/parameter.hpp"
#include "msgt/rng.hpp"
#include "msgt/tape.hpp"

namespace msgt::sgt {

/// Two-layer feed-forward block width -> 4*width -> width (GELU).
struct Expert {
  Parameter* hidden_weight = nullptr;
  Parameter* hidden_bias = nullptr;
  Parameter* out_weight = nullptr;
  Parameter* out_bias = nullptr;
};

/// Dense mixture: out = sum_k softmax(gate(x))_k * E_k(x). Without a gate
/// the block is a plain FFN over its single expert.
struct MoEParams {
  std::vector<Expert> experts;
  Parameter* gate_weight = nullptr;  // width x K_e
  Parameter* gate_bias = nullptr;    // 1 x K_e
  std::size_t width = 0;

  bool gated() const noexcept { return gate_weight != nullptr; }
};

/// Scalars in one expert: 8w^2 + 5w.
std::size_t expert_parameter_count(std::size_t width) noexcept;
/// Scalars in a K_e-way gate: (w + 1) * K_e.
std::size_t gate_parameter_count(std::size_t width, std::size_t experts) noexcept;

MoEParams make_moe(ParameterStore& store, const std::string& prefix, std::size_t width, std::size_t experts,
                   bool gated, Rng& rng);

struct LayerConfig {
  std::size_t width = 0;
  std::size_t heads = 1;
  std::size_t experts = 8;
  bool use_moe = true;
  double l_sgt = 64.0;
  graphs::BucketSpec buckets;
};

struct SGTLayerParams {
  std::size_t width = 0;
  std::size_t heads = 1;
  Parameter* query_weight = nullptr;
  Parameter* query_bias = nullptr;
  Parameter* key_weight = nullptr;
  Parameter* key_bias = nullptr;
  Parameter* value_weight = nullptr;
  Parameter* value_bias = nullptr;
  Parameter* out_weight = nullptr;
  Parameter* out_bias = nullptr;
  Parameter* norm1_gain = nullptr;
  Parameter* norm1_bias = nullptr;
  Parameter* norm2_gain = nullptr;
  Parameter* norm2_bias = nullptr;
  Parameter* psi_sgt = nullptr;  // B x H, zero-initialized
  double l_sgt = 64.0;
  graphs::BucketSpec buckets;
  MoEParams moe;

  std::size_t head_dim() const noexcept { return width / heads; }
};

SGTLayerParams make_layer(ParameterStore& store, const std::string& prefix, const LayerConfig& config, Rng& rng);

struct AttentionOutput {
  Var update;                       // heads concatenated, output-projected
  std::vector<Var> head_attention;  // per head, rows on the simplex
  Var attention;                    // head mean
};

/// Per head: softmax(prior_h + Q_h K_h^T / sqrt(d_h)) V_h. An empty prior
/// means no structural bias.
AttentionOutput sgt_attention(Var nodes, std::span<const Var> prior, const SGTLayerParams& params);

/// Next layer's prior: Psi_sgt(l_sgt * attention) per head. Bucket choice
/// depends on attention values but carries no gradient to them.
std::vector<Var> rescale_prior(Var attention, const SGTLayerParams& params);

Var expert_forward(Var x, const Expert& expert);

struct MoEOutput {
  Var output;
  Var gates;  // n x K_e softmax weights; invalid for an ungated block
};

MoEOutput moe_forward(Var x, const MoEParams& moe);

struct LayerOutput {
  Var nodes;
  Var attention;
  std::vector<Var> head_attention;
  Var gates;
};

/// attention -> residual -> layer norm -> MoE -> residual -> layer norm.
LayerOutput sgt_layer(Var nodes, std::span<const Var> prior, const SGTLayerParams& params);

struct StackOutput {
  Var nodes;
  Var attention;
  std::vector<LayerOutput> layers;
};

/// Layer 1 takes initial_prior; later layers take rescale_prior of the
/// previous attention. With use_structural_prior off every prior is empty.
StackOutput contextualize(Var nodes, std::vector<Var> initial_prior, std::span<const SGTLayerParams> layers,
                          bool use_structural_prior);

/// MLP head: in -> hidden (GELU) -> classes. hidden_weight is W_l for the
/// elastic-net penalty.
struct Classifier {
  Parameter* hidden_weight = nullptr;
  Parameter* hidden_bias = nullptr;
  Parameter* out_weight = nullptr;
  Parameter* out_bias = nullptr;
};

Classifier make_classifier(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t hidden,
                           std::size_t classes, Rng& rng);
Var classify(Var features, const Classifier& classifier);

/// A contextualized graph: final node states plus the node kinds that
/// identify answer-word rows.
struct ContextGraph {
  Var nodes;
  std::vector<graphs::NodeKind> kinds;
};

struct ReasoningSetup {
  std::span<const SGTLayerParams> layers;
  Parameter* psi = nullptr;
  double l_a = 1.0;
  graphs::BucketSpec buckets;
  bool use_structural_prior = true;
};

struct ReasoningOutput {
  Var logits;
  Var reason_nodes;  // V^reason, N_a x (2 or 3)d
  Var cls_nodes;     // V^cls
  Var pooled;
  graphs::HeteroGraph graph;
  StackOutput stack;
};

/// Selects answer rows from the contextualized graphs, concatenates them
/// with the answer text features, runs the reasoning stack, mean-pools,
/// optionally appends z, and classifies.
ReasoningOutput reason_and_classify(const ContextGraph& ac, const std::optional<ContextGraph>& aq, Var answer_text,
                                    const std::optional<Var>& z, const ReasoningSetup& setup,
                                    const Classifier& classifier);

}  // namespace msgt::sgt
