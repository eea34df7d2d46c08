#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "msgt/bottleneck.hpp"
#include "msgt/concept_pool.hpp"
#include "msgt/embedding.hpp"
#include "msgt/graphs.hpp"
#include "msgt/manifest.hpp"
#include "msgt/parameter.hpp"
#include "msgt/sgt_moe.hpp"
#include "msgt/tape.hpp"

namespace msgt::model {

/// Architecture and loss hyperparameters. dim is the embedding width d.
struct ModelConfig {
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t context_layers = 2;
  std::size_t reasoning_layers = 2;
  std::size_t experts = 8;
  std::size_t answer_concepts = 2;  // top concepts by z that form the answer text
  double tau_h = 0.6;
  double phi = 0.5;
  double lambda = 1e-4;
  double l_v = 1.0;
  double l_a = 1.0;
  double l_sgt = 64.0;
  graphs::BucketSpec buckets{64.0, 32};
  bool use_qa_graph = true;
  bool use_structural_prior = true;
  bool use_moe = true;
  bool use_z_in_classifier = true;
  bool annotations_clamp_z = true;
  io::TaskKind task = io::TaskKind::SingleLabel;
  std::uint64_t seed = 0;
  std::uint64_t text_seed = 0;
};

nlohmann::json config_to_json(const ModelConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
ModelConfig config_from_json(const nlohmann::json& doc);

/// One sample's inputs as the model sees them.
struct SampleInput {
  Tensor views;  // M x d, unit rows
  std::optional<std::vector<io::Annotation>> annotations;
  std::optional<std::string> hint_text;
  std::optional<std::vector<std::array<double, 2>>> region_centers;
};

SampleInput sample_input(const io::Dataset& data, const io::Sample& sample);

struct ForwardOptions {
  /// Request clamps on z; they win over hint and annotation clamps.
  bottleneck::ClampMap clamps;
  /// Replaces the sample's hint when set.
  std::optional<std::string> hint_text;
};

struct ForwardResult {
  Var p;       // 1 x K fused predictions
  Tensor priors;  // f' after annotation clamps
  Var f;          // the same on the tape, clamped entries constant
  Var z;       // 1 x K
  std::vector<bottleneck::Clamp> clamps;  // clamps applied to z, one per index
  std::vector<std::size_t> selected;      // concepts behind the answer text
  graphs::QAPair qa;
  graphs::HeteroGraph ac_graph;
  std::optional<graphs::HeteroGraph> aq_graph;
  sgt::StackOutput ac_stack;
  std::optional<sgt::StackOutput> aq_stack;
  sgt::ReasoningOutput reasoning;
  Var logits;  // 1 x C
};

struct LossTerms {
  Var total;
  Var task;
  Var align;
  Var sparse;
  Var cbl;
};

class Model {
 public:
  /// Fresh model over the pool's concepts, initialized from config.seed.
  static Model create(const ModelConfig& config, const Tensor& concept_embeddings,
                      std::vector<std::string> concept_names, std::vector<std::string> class_names);
  static Model create(const ModelConfig& config, const pool::ConceptPool& pool,
                      std::vector<std::string> class_names);

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  ForwardResult forward(Tape& tape, const SampleInput& input, const ForwardOptions& options = {}) const;

  /// Task loss (cross-entropy or BCE) + alignment + lambda * elastic net.
  LossTerms loss(const ForwardResult& result, const Tensor& targets) const;

  /// Rounds every parameter to float32 and re-derives the concept
  /// embeddings from their float32 storage, so a saved and reloaded model
  /// evaluates bit-identically to this one.
  void quantize();

  const ModelConfig& config() const noexcept { return config_; }
  ParameterStore& parameters() noexcept { return store_; }
  const ParameterStore& parameters() const noexcept { return store_; }
  const bottleneck::Params& bottleneck() const noexcept { return bottleneck_; }
  const sgt::Classifier& classifier() const noexcept { return classifier_; }
  const std::vector<std::string>& concept_names() const noexcept { return concept_names_; }
  const std::vector<std::string>& class_names() const noexcept { return class_names_; }
  const io::TextEncoder& encoder() const noexcept { return encoder_; }
  std::size_t concept_count() const noexcept { return concept_names_.size(); }
  std::size_t class_count() const noexcept { return class_names_.size(); }
  /// Unnormalized concept rows as persisted (float32-exact after quantize).
  const Tensor& concept_storage() const noexcept { return concept_storage_; }
  std::size_t reasoning_width() const noexcept { return (config_.use_qa_graph ? 3 : 2) * config_.dim; }

  /// Parameters whose names start with prefix.
  std::vector<Parameter*> parameters_with_prefix(const std::string& prefix);

  /// Rebuilds a model around stored tensors (checkpoint load path).
  static Model restore(const ModelConfig& config, const Tensor& concept_storage,
                       std::vector<std::string> concept_names, std::vector<std::string> class_names);

 private:
  Model(ModelConfig config, const Tensor& concept_storage, std::vector<std::string> concept_names,
        std::vector<std::string> class_names);

  ModelConfig config_;
  ParameterStore store_;
  Tensor concept_storage_;
  std::vector<std::string> concept_names_;
  std::vector<std::string> class_names_;
  io::TextEncoder encoder_;
  bottleneck::Params bottleneck_;
  Parameter* psi_concept_ = nullptr;
  Parameter* psi_word_ = nullptr;
  Parameter* psi_cross_ac_ = nullptr;
  Parameter* psi_cross_aq_ = nullptr;
  Parameter* psi_reason_ = nullptr;
  std::vector<sgt::SGTLayerParams> ac_layers_;
  std::vector<sgt::SGTLayerParams> aq_layers_;
  std::vector<sgt::SGTLayerParams> reason_layers_;
  sgt::Classifier classifier_;
};

/// Rows rescaled to unit norm in double precision.
Tensor normalize_rows(Tensor m);

}  // namespace msgt::model
