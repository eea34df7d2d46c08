#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "msgt/bottleneck.hpp"
#include "msgt/concept_pool.hpp"
#include "msgt/manifest.hpp"
#include "msgt/metrics.hpp"
#include "msgt/model.hpp"
#include "msgt/parameter.hpp"

namespace msgt::train {

/// Trainer settings plus the model config. The JSON form is flat: model
/// keys and trainer keys side by side, "seed" shared by both.
struct TrainConfig {
  std::size_t epochs = 50;
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  bool two_stage = false;
  bool uncertain_as_negative = true;
  std::string split = "train";
  model::ModelConfig model;
};

nlohmann::json config_to_json(const TrainConfig& config);
TrainConfig config_from_json(const nlohmann::json& doc);
TrainConfig load_config(const std::filesystem::path& path);

/// Adaptive-moment optimizer with bias correction; skips parameters that
/// are not trainable.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(ParameterStore& store);
  std::size_t steps() const noexcept { return t_; }

 private:
  struct Moments {
    Tensor m, v;
  };
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::unordered_map<const Parameter*, Moments> state_;
};

/// Raised when a loss turns non-finite.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(std::size_t epoch, std::size_t batch, std::string op);
  std::size_t epoch;
  std::size_t batch;
  std::string op;
};

struct TrainResult {
  model::Model model;
  std::vector<double> epoch_losses;  // mean item loss per epoch
  std::vector<double> batch_losses;
};

/// Fits a model built from the pool. Data order comes from a seeded
/// shuffle, so (config, data) fixes every loss bit for bit. The returned
/// model is quantized to float32 (see Model::quantize).
TrainResult train(const TrainConfig& config, const io::Dataset& data, const pool::ConceptPool& pool);
TrainResult train(const TrainConfig& config, const io::Dataset& data, model::Model model);

struct Prediction {
  std::string sample_id;
  std::vector<double> concept_scores;  // z, max over views for multi-label
  std::vector<bottleneck::Clamp> clamps;
  std::vector<double> class_probs;
};

/// Single-label: one forward over all views, softmax. Multi-label: one
/// forward per view, sigmoid, element-wise max across views.
Prediction predict(const model::Model& model, const model::SampleInput& input,
                   const model::ForwardOptions& options = {});

struct Evaluation {
  metrics::MetricsReport report;
  std::vector<Prediction> predictions;
};

/// Samples run in parallel on up to `threads` workers (0 = hardware count);
/// results are reduced in manifest order.
Evaluation evaluate(const model::Model& model, const io::Dataset& data, const std::string& split,
                    std::size_t threads = 0);

}  // namespace msgt::train
