#include "msgt/sgt_moe.hpp"

#include <cmath>
#include <stdexcept>

#include "msgt/ops.hpp"

namespace msgt::sgt {

namespace {

Var affine(Var x, Parameter& w, Parameter& b) {
  Tape& t = x.tape();
  return add(matmul(x, t.param(w)), t.param(b));
}

}  // namespace

std::size_t expert_parameter_count(std::size_t w) noexcept { return 8 * w * w + 5 * w; }

std::size_t gate_parameter_count(std::size_t w, std::size_t experts) noexcept { return (w + 1) * experts; }

MoEParams make_moe(ParameterStore& store, const std::string& prefix, std::size_t width, std::size_t experts,
                   bool gated, Rng& rng) {
  if (experts == 0) throw std::invalid_argument("MoE needs at least one expert");
  if (!gated && experts != 1) throw std::invalid_argument("an ungated block holds exactly one expert");
  MoEParams moe;
  moe.width = width;
  const std::size_t hidden = 4 * width;
  for (std::size_t k = 0; k < experts; ++k) {
    const std::string p = prefix + (gated ? "expert" + std::to_string(k) + "." : "ffn.");
    Expert e;
    e.hidden_weight = &store.add(p + "hidden.weight", init_affine_weight(width, hidden, rng));
    e.hidden_bias = &store.add(p + "hidden.bias", Tensor::matrix(1, hidden));
    e.out_weight = &store.add(p + "out.weight", init_affine_weight(hidden, width, rng));
    e.out_bias = &store.add(p + "out.bias", Tensor::matrix(1, width));
    moe.experts.push_back(e);
  }
  if (gated) {
    moe.gate_weight = &store.add(prefix + "gate.weight", init_affine_weight(width, experts, rng));
    moe.gate_bias = &store.add(prefix + "gate.bias", Tensor::matrix(1, experts));
  }
  return moe;
}

SGTLayerParams make_layer(ParameterStore& store, const std::string& prefix, const LayerConfig& c, Rng& rng) {
  if (c.heads == 0 || c.width == 0 || c.width % c.heads != 0)
    throw std::invalid_argument("layer width " + std::to_string(c.width) + " is not divisible into " +
                                std::to_string(c.heads) + " heads");
  SGTLayerParams p;
  p.width = c.width;
  p.heads = c.heads;
  p.l_sgt = c.l_sgt;
  p.buckets = c.buckets;
  const std::size_t w = c.width;
  p.query_weight = &store.add(prefix + "query.weight", init_affine_weight(w, w, rng));
  p.query_bias = &store.add(prefix + "query.bias", Tensor::matrix(1, w));
  p.key_weight = &store.add(prefix + "key.weight", init_affine_weight(w, w, rng));
  p.key_bias = &store.add(prefix + "key.bias", Tensor::matrix(1, w));
  p.value_weight = &store.add(prefix + "value.weight", init_affine_weight(w, w, rng));
  p.value_bias = &store.add(prefix + "value.bias", Tensor::matrix(1, w));
  p.out_weight = &store.add(prefix + "out.weight", init_affine_weight(w, w, rng));
  p.out_bias = &store.add(prefix + "out.bias", Tensor::matrix(1, w));
  p.norm1_gain = &store.add(prefix + "norm1.gain", Tensor::matrix(1, w, 1.0));
  p.norm1_bias = &store.add(prefix + "norm1.bias", Tensor::matrix(1, w));
  p.norm2_gain = &store.add(prefix + "norm2.gain", Tensor::matrix(1, w, 1.0));
  p.norm2_bias = &store.add(prefix + "norm2.bias", Tensor::matrix(1, w));
  p.psi_sgt = &graphs::make_psi(store, prefix + "psi_sgt", c.buckets, c.heads);
  p.moe = make_moe(store, prefix + "moe.", w, c.use_moe ? c.experts : 1, c.use_moe, rng);
  return p;
}

AttentionOutput sgt_attention(Var nodes, std::span<const Var> prior, const SGTLayerParams& params) {
  const std::size_t n = nodes.rows();
  if (nodes.cols() != params.width)
    throw std::invalid_argument("sgt_attention: node width " + std::to_string(nodes.cols()) +
                                " does not match layer width " + std::to_string(params.width));
  if (!prior.empty() && prior.size() != params.heads)
    throw std::invalid_argument("sgt_attention: expected one prior matrix per head");
  for (const auto& e : prior)
    if (e.rows() != n || e.cols() != n) throw std::invalid_argument("sgt_attention: prior is not n x n");

  Var q = affine(nodes, *params.query_weight, *params.query_bias);
  Var k = affine(nodes, *params.key_weight, *params.key_bias);
  Var v = affine(nodes, *params.value_weight, *params.value_bias);
  const std::size_t dh = params.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  AttentionOutput out;
  std::vector<Var> updates;
  for (std::size_t h = 0; h < params.heads; ++h) {
    Var qh = slice_cols(q, h * dh, (h + 1) * dh);
    Var kh = slice_cols(k, h * dh, (h + 1) * dh);
    Var vh = slice_cols(v, h * dh, (h + 1) * dh);
    Var scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    if (!prior.empty()) scores = add(prior[h], scores);
    Var attn = softmax_rows(scores);
    out.head_attention.push_back(attn);
    updates.push_back(matmul(attn, vh));
  }
  Var merged = params.heads == 1 ? updates.front() : concat_cols(updates);
  out.update = affine(merged, *params.out_weight, *params.out_bias);
  Var total = out.head_attention.front();
  for (std::size_t h = 1; h < params.heads; ++h) total = add(total, out.head_attention[h]);
  out.attention = params.heads == 1 ? total : scale(total, 1.0 / static_cast<double>(params.heads));
  return out;
}

std::vector<Var> rescale_prior(Var attention, const SGTLayerParams& params) {
  const Tensor& a = attention.value();
  const std::size_t n = a.rows();
  std::vector<std::size_t> index(n * n);
  for (std::size_t i = 0; i < n * n; ++i) index[i] = params.buckets.bucket(params.l_sgt * a[i]);
  Var table = attention.tape().param(*params.psi_sgt);
  std::vector<Var> out;
  for (std::size_t h = 0; h < params.heads; ++h) out.push_back(bucket_gather(table, index, n, h));
  return out;
}

Var expert_forward(Var x, const Expert& e) {
  return affine(gelu(affine(x, *e.hidden_weight, *e.hidden_bias)), *e.out_weight, *e.out_bias);
}

MoEOutput moe_forward(Var x, const MoEParams& moe) {
  if (x.cols() != moe.width)
    throw std::invalid_argument("moe_forward: input width " + std::to_string(x.cols()) + " does not match expert width " +
                                std::to_string(moe.width));
  MoEOutput out;
  if (!moe.gated()) {
    out.output = expert_forward(x, moe.experts.front());
    return out;
  }
  out.gates = softmax_rows(affine(x, *moe.gate_weight, *moe.gate_bias));
  // Summation order fixed by expert index.
  for (std::size_t k = 0; k < moe.experts.size(); ++k) {
    Var term = mul(slice_cols(out.gates, k, k + 1), expert_forward(x, moe.experts[k]));
    out.output = k == 0 ? term : add(out.output, term);
  }
  return out;
}

LayerOutput sgt_layer(Var nodes, std::span<const Var> prior, const SGTLayerParams& params) {
  Tape& t = nodes.tape();
  AttentionOutput attn = sgt_attention(nodes, prior, params);
  Var x1 = layer_norm_rows(add(nodes, attn.update), t.param(*params.norm1_gain), t.param(*params.norm1_bias));
  MoEOutput moe = moe_forward(x1, params.moe);
  Var x2 = layer_norm_rows(add(x1, moe.output), t.param(*params.norm2_gain), t.param(*params.norm2_bias));
  return LayerOutput{x2, attn.attention, attn.head_attention, moe.gates};
}

StackOutput contextualize(Var nodes, std::vector<Var> initial_prior, std::span<const SGTLayerParams> layers,
                          bool use_structural_prior) {
  if (layers.empty()) throw std::invalid_argument("contextualize: at least one layer is required");
  StackOutput out;
  std::vector<Var> prior = use_structural_prior ? std::move(initial_prior) : std::vector<Var>{};
  Var current = nodes;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (l > 0) prior = use_structural_prior ? rescale_prior(out.layers.back().attention, layers[l]) : std::vector<Var>{};
    out.layers.push_back(sgt_layer(current, prior, layers[l]));
    current = out.layers.back().nodes;
  }
  out.nodes = current;
  out.attention = out.layers.back().attention;
  return out;
}

Classifier make_classifier(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t hidden,
                           std::size_t classes, Rng& rng) {
  if (classes == 0) throw std::invalid_argument("classifier needs at least one class");
  Classifier c;
  c.hidden_weight = &store.add(prefix + "hidden.weight", init_affine_weight(in, hidden, rng));
  c.hidden_bias = &store.add(prefix + "hidden.bias", Tensor::matrix(1, hidden));
  c.out_weight = &store.add(prefix + "out.weight", init_affine_weight(hidden, classes, rng));
  c.out_bias = &store.add(prefix + "out.bias", Tensor::matrix(1, classes));
  return c;
}

Var classify(Var features, const Classifier& c) {
  return affine(gelu(affine(features, *c.hidden_weight, *c.hidden_bias)), *c.out_weight, *c.out_bias);
}

ReasoningOutput reason_and_classify(const ContextGraph& ac, const std::optional<ContextGraph>& aq, Var answer_text,
                                    const std::optional<Var>& z, const ReasoningSetup& setup,
                                    const Classifier& classifier) {
  auto answer_rows = [](const ContextGraph& g) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < g.kinds.size(); ++i)
      if (g.kinds[i] == graphs::NodeKind::AnswerWord) rows.push_back(i);
    return rows;
  };
  const auto ac_rows = answer_rows(ac);
  const std::size_t n_answer = answer_text.rows();
  if (ac_rows.size() != n_answer)
    throw std::invalid_argument("reason_and_classify: answer-concept graph has " + std::to_string(ac_rows.size()) +
                                " answer rows, expected " + std::to_string(n_answer));
  std::vector<Var> parts{answer_text, gather_rows(ac.nodes, ac_rows)};
  std::optional<Tensor> aq_values;
  if (aq) {
    const auto aq_rows = answer_rows(*aq);
    if (aq_rows.size() != n_answer)
      throw std::invalid_argument("reason_and_classify: answer-question graph has " + std::to_string(aq_rows.size()) +
                                  " answer rows, expected " + std::to_string(n_answer));
    parts.push_back(gather_rows(aq->nodes, aq_rows));
    aq_values = parts.back().value();
  }
  if (setup.psi == nullptr) throw std::invalid_argument("reason_and_classify: missing reasoning Psi table");

  ReasoningOutput out;
  out.reason_nodes = concat_cols(parts);
  out.graph = graphs::build_reasoning_graph(answer_text.value(), parts[1].value(), aq_values, *setup.psi, setup.l_a,
                                            setup.buckets);
  Tape& t = answer_text.tape();
  std::vector<Var> prior = setup.use_structural_prior ? graphs::embed_structure(t, out.graph) : std::vector<Var>{};
  out.stack = contextualize(out.reason_nodes, std::move(prior), setup.layers, setup.use_structural_prior);
  out.cls_nodes = out.stack.nodes;
  out.pooled = mean_rows(out.cls_nodes);
  Var features = z ? concat_cols({out.pooled, *z}) : out.pooled;
  out.logits = classify(features, classifier);
  return out;
}

}  // namespace msgt::sgt
