#include "msgt/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "msgt/ops.hpp"

namespace msgt::model {

using nlohmann::json;

namespace {

double round_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

template <typename T>
void read_key(const json& doc, const char* key, T& out) {
  if (auto it = doc.find(key); it != doc.end()) out = it->get<T>();
}

}  // namespace

Tensor normalize_rows(Tensor m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row_span(r);
    double s = 0.0;
    for (double x : row) s += x * x;
    const double n = std::sqrt(s);
    if (n == 0.0) throw std::invalid_argument("cannot normalize a zero row");
    for (auto& x : row) x /= n;
  }
  return m;
}

json config_to_json(const ModelConfig& c) {
  return json{{"dim", c.dim},
              {"heads", c.heads},
              {"context_layers", c.context_layers},
              {"reasoning_layers", c.reasoning_layers},
              {"experts", c.experts},
              {"answer_concepts", c.answer_concepts},
              {"tau_h", c.tau_h},
              {"phi", c.phi},
              {"lambda", c.lambda},
              {"l_v", c.l_v},
              {"l_a", c.l_a},
              {"l_sgt", c.l_sgt},
              {"d_max", c.buckets.d_max},
              {"buckets", c.buckets.buckets},
              {"use_qa_graph", c.use_qa_graph},
              {"use_structural_prior", c.use_structural_prior},
              {"use_moe", c.use_moe},
              {"use_z_in_classifier", c.use_z_in_classifier},
              {"annotations_clamp_z", c.annotations_clamp_z},
              {"task", io::to_string(c.task)},
              {"seed", c.seed},
              {"text_seed", c.text_seed}};
}

ModelConfig config_from_json(const json& doc) {
  if (!doc.is_object()) throw std::invalid_argument("model config must be a JSON object");
  ModelConfig c;
  const json known = config_to_json(c);
  for (const auto& [key, value] : doc.items())
    if (!known.contains(key)) throw std::invalid_argument("unknown model config key '" + key + "'");
  read_key(doc, "dim", c.dim);
  read_key(doc, "heads", c.heads);
  read_key(doc, "context_layers", c.context_layers);
  read_key(doc, "reasoning_layers", c.reasoning_layers);
  read_key(doc, "experts", c.experts);
  read_key(doc, "answer_concepts", c.answer_concepts);
  read_key(doc, "tau_h", c.tau_h);
  read_key(doc, "phi", c.phi);
  read_key(doc, "lambda", c.lambda);
  read_key(doc, "l_v", c.l_v);
  read_key(doc, "l_a", c.l_a);
  read_key(doc, "l_sgt", c.l_sgt);
  read_key(doc, "d_max", c.buckets.d_max);
  read_key(doc, "buckets", c.buckets.buckets);
  read_key(doc, "use_qa_graph", c.use_qa_graph);
  read_key(doc, "use_structural_prior", c.use_structural_prior);
  read_key(doc, "use_moe", c.use_moe);
  read_key(doc, "use_z_in_classifier", c.use_z_in_classifier);
  read_key(doc, "annotations_clamp_z", c.annotations_clamp_z);
  if (doc.contains("task")) c.task = io::parse_task_kind(doc.at("task").get<std::string>());
  read_key(doc, "seed", c.seed);
  read_key(doc, "text_seed", c.text_seed);
  return c;
}

SampleInput sample_input(const io::Dataset& data, const io::Sample& sample) {
  SampleInput in;
  in.views = data.views(sample);
  in.annotations = sample.annotations;
  in.hint_text = sample.hint_text;
  in.region_centers = sample.region_centers;
  return in;
}

Model::Model(ModelConfig config, const Tensor& concept_storage, std::vector<std::string> concept_names,
             std::vector<std::string> class_names)
    : config_(std::move(config)),
      concept_storage_(concept_storage),
      concept_names_(std::move(concept_names)),
      class_names_(std::move(class_names)),
      encoder_(config_.dim, config_.text_seed,
               io::EmbeddingTable(concept_names_, normalize_rows(concept_storage), true)) {
  const ModelConfig& c = config_;
  if (concept_storage_.rank() != 2 || concept_storage_.rows() != concept_names_.size() || concept_names_.empty())
    throw std::invalid_argument("model needs one embedding row per concept");
  if (concept_storage_.cols() != c.dim)
    throw std::invalid_argument("concept embedding width " + std::to_string(concept_storage_.cols()) +
                                " does not match model dim " + std::to_string(c.dim));
  if (class_names_.empty()) throw std::invalid_argument("model needs at least one class");
  if (c.experts == 0) throw std::invalid_argument("experts must be at least 1");
  if (c.context_layers == 0 || c.reasoning_layers == 0) throw std::invalid_argument("layer counts must be at least 1");
  if (c.answer_concepts == 0) throw std::invalid_argument("answer_concepts must be at least 1");
  if (c.heads == 0 || c.dim % c.heads != 0)
    throw std::invalid_argument("dim " + std::to_string(c.dim) + " is not divisible by " + std::to_string(c.heads) +
                                " heads");

  Rng rng(c.seed);
  bottleneck_ = bottleneck::make_params(store_, normalize_rows(concept_storage_), rng);
  psi_concept_ = &graphs::make_psi(store_, "psi.concept", c.buckets, c.heads);
  psi_word_ = &graphs::make_psi(store_, "psi.word", c.buckets, c.heads);
  psi_cross_ac_ = &graphs::make_psi(store_, "psi.cross_ac", c.buckets, c.heads);
  if (c.use_qa_graph) psi_cross_aq_ = &graphs::make_psi(store_, "psi.cross_aq", c.buckets, c.heads);
  psi_reason_ = &graphs::make_psi(store_, "psi.reason", c.buckets, c.heads);

  sgt::LayerConfig context{c.dim, c.heads, c.experts, c.use_moe, c.l_sgt, c.buckets};
  for (std::size_t l = 0; l < c.context_layers; ++l)
    ac_layers_.push_back(sgt::make_layer(store_, "ac.layer" + std::to_string(l) + ".", context, rng));
  if (c.use_qa_graph)
    for (std::size_t l = 0; l < c.context_layers; ++l)
      aq_layers_.push_back(sgt::make_layer(store_, "aq.layer" + std::to_string(l) + ".", context, rng));
  sgt::LayerConfig reason = context;
  reason.width = reasoning_width();
  for (std::size_t l = 0; l < c.reasoning_layers; ++l)
    reason_layers_.push_back(sgt::make_layer(store_, "reason.layer" + std::to_string(l) + ".", reason, rng));
  const std::size_t in = reasoning_width() + (c.use_z_in_classifier ? concept_count() : 0);
  classifier_ = sgt::make_classifier(store_, "classifier.", in, reasoning_width(), class_count(), rng);
}

Model Model::create(const ModelConfig& config, const Tensor& concept_embeddings, std::vector<std::string> concept_names,
                    std::vector<std::string> class_names) {
  return Model(config, concept_embeddings, std::move(concept_names), std::move(class_names));
}

Model Model::create(const ModelConfig& config, const pool::ConceptPool& pool, std::vector<std::string> class_names) {
  return create(config, pool.embeddings(), pool.names(), std::move(class_names));
}

Model Model::restore(const ModelConfig& config, const Tensor& concept_storage, std::vector<std::string> concept_names,
                     std::vector<std::string> class_names) {
  return Model(config, concept_storage, std::move(concept_names), std::move(class_names));
}

std::vector<Parameter*> Model::parameters_with_prefix(const std::string& prefix) {
  std::vector<Parameter*> out;
  for (auto& p : store_)
    if (p->name.rfind(prefix, 0) == 0) out.push_back(p.get());
  return out;
}

void Model::quantize() {
  for (auto& p : store_)
    for (auto& x : p->value.data()) x = round_f32(x);
  for (auto& x : concept_storage_.data()) x = round_f32(x);
  bottleneck_.concept_embeddings = normalize_rows(concept_storage_);
  encoder_ = io::TextEncoder(config_.dim, config_.text_seed,
                             io::EmbeddingTable(concept_names_, bottleneck_.concept_embeddings, true));
}

ForwardResult Model::forward(Tape& tape, const SampleInput& input, const ForwardOptions& options) const {
  const ModelConfig& c = config_;
  const std::size_t k = concept_count();
  const Tensor& t_k = bottleneck_.concept_embeddings;
  ForwardResult r;

  r.p = bottleneck::predict_concepts(tape, input.views, bottleneck_);
  const Tensor f = bottleneck::prior_scores(input.views, bottleneck_);
  const auto& hint_text = options.hint_text ? options.hint_text : input.hint_text;
  std::optional<std::vector<double>> hint;
  if (hint_text && !hint_text->empty()) hint = encoder_.embed(*hint_text);
  auto iv = bottleneck::apply_interventions(f, input.annotations, hint, t_k, c.tau_h);
  bottleneck::ClampMap annotated;
  for (const auto& a : iv.audit)
    if (a.source == bottleneck::ClampSource::Annotation) annotated[a.index] = a.value;
  r.f = bottleneck::assemble_z(bottleneck::fused_priors(tape, input.views, bottleneck_), annotated);
  r.priors = r.f.value();

  // Later sources override earlier ones: hint, then annotation, then request.
  std::map<std::size_t, bottleneck::Clamp> merged;
  for (const auto& [idx, v] : iv.z_clamps) merged[idx] = {idx, v, bottleneck::ClampSource::Hint};
  if (c.annotations_clamp_z)
    for (const auto& a : iv.audit)
      if (a.source == bottleneck::ClampSource::Annotation) merged[a.index] = a;
  for (const auto& [idx, v] : options.clamps) merged[idx] = {idx, v, bottleneck::ClampSource::Request};
  bottleneck::ClampMap z_clamps;
  for (const auto& [idx, cl] : merged) {
    z_clamps[idx] = cl.value;
    r.clamps.push_back(cl);
  }
  r.z = bottleneck::assemble_z(r.p, z_clamps);

  const Tensor& z = r.z.value();
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return z[a] > z[b]; });
  r.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(c.answer_concepts, k)));
  // z picks the set; pool order fixes the token order, so rank jitter among
  // selected concepts does not reshuffle the answer text.
  std::sort(r.selected.begin(), r.selected.end());
  r.qa = graphs::generate_qa(concept_names_, r.selected, encoder_);

  // Concept nodes carry z_k * t_k so clamps reach the graph head.
  Var concepts = mul(transpose(r.z), tape.constant(t_k));
  Var answers = tape.constant(r.qa.answer_features);
  if (input.region_centers && input.region_centers->size() != k)
    throw std::invalid_argument("region_centers has " + std::to_string(input.region_centers->size()) +
                                " entries for " + std::to_string(k) + " concepts");
  graphs::EdgeRule concept_rule = input.region_centers ? graphs::spatial_rule(*input.region_centers, c.l_v)
                                                       : graphs::embedding_rule(t_k, c.l_v);
  r.ac_graph = graphs::build_graph({concepts.value(), graphs::NodeKind::Concept, concept_rule, psi_concept_},
                                   {r.qa.answer_features, graphs::NodeKind::AnswerWord, graphs::order_rule(c.l_a),
                                    psi_word_},
                                   psi_cross_ac_, c.buckets);
  auto prior_of = [&](const graphs::HeteroGraph& g) {
    return c.use_structural_prior ? graphs::embed_structure(tape, g) : std::vector<Var>{};
  };
  r.ac_stack = sgt::contextualize(concat_rows({concepts, answers}), prior_of(r.ac_graph), ac_layers_,
                                  c.use_structural_prior);

  std::optional<sgt::ContextGraph> aq_context;
  if (c.use_qa_graph) {
    r.aq_graph = graphs::build_graph(
        {r.qa.question_features, graphs::NodeKind::QuestionWord, graphs::order_rule(c.l_a), psi_word_},
        {r.qa.answer_features, graphs::NodeKind::AnswerWord, graphs::order_rule(c.l_a), psi_word_}, psi_cross_aq_,
        c.buckets);
    Var questions = tape.constant(r.qa.question_features);
    r.aq_stack = sgt::contextualize(concat_rows({questions, answers}), prior_of(*r.aq_graph), aq_layers_,
                                    c.use_structural_prior);
    aq_context = sgt::ContextGraph{r.aq_stack->nodes, r.aq_graph->node_kinds};
  }

  sgt::ReasoningSetup setup{reason_layers_, psi_reason_, c.l_a, c.buckets, c.use_structural_prior};
  std::optional<Var> z_feature;
  if (c.use_z_in_classifier) z_feature = r.z;
  r.reasoning = sgt::reason_and_classify({r.ac_stack.nodes, r.ac_graph.node_kinds}, aq_context, answers, z_feature,
                                         setup, classifier_);
  r.logits = r.reasoning.logits;
  return r;
}

LossTerms Model::loss(const ForwardResult& r, const Tensor& targets) const {
  Tape& tape = r.logits.tape();
  if (targets.numel() != class_count())
    throw std::invalid_argument("target row has " + std::to_string(targets.numel()) + " entries for " +
                                std::to_string(class_count()) + " classes");
  LossTerms l;
  if (config_.task == io::TaskKind::SingleLabel) {
    const auto data = targets.data();
    const auto target = static_cast<std::size_t>(std::max_element(data.begin(), data.end()) - data.begin());
    l.task = softmax_cross_entropy(r.logits, target);
  } else {
    l.task = bce_with_logits(r.logits, targets);
  }
  l.align = bottleneck::alignment_loss(r.p, r.f);
  l.sparse = bottleneck::elastic_net(tape.param(*classifier_.hidden_weight), config_.phi);
  l.cbl = bottleneck::cbl_loss(l.align, l.sparse, config_.lambda);
  l.total = add(l.task, l.cbl);
  return l;
}

}  // namespace msgt::model
