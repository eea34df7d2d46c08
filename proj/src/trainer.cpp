#include "msgt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <numeric>
#include <thread>

#include "msgt/ops.hpp"
#include "msgt/rng.hpp"

namespace msgt::train {

using nlohmann::json;

nlohmann::json config_to_json(const TrainConfig& c) {
  json doc = model::config_to_json(c.model);
  doc["epochs"] = c.epochs;
  doc["learning_rate"] = c.learning_rate;
  doc["batch_size"] = c.batch_size;
  doc["two_stage"] = c.two_stage;
  doc["uncertain_as_negative"] = c.uncertain_as_negative;
  doc["split"] = c.split;
  return doc;
}

TrainConfig config_from_json(const json& doc) {
  if (!doc.is_object()) throw std::invalid_argument("train config must be a JSON object");
  TrainConfig c;
  json model_part = json::object();
  for (const auto& [key, value] : doc.items()) {
    if (key == "epochs") c.epochs = value.get<std::size_t>();
    else if (key == "learning_rate") c.learning_rate = value.get<double>();
    else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
    else if (key == "two_stage") c.two_stage = value.get<bool>();
    else if (key == "uncertain_as_negative") c.uncertain_as_negative = value.get<bool>();
    else if (key == "split") c.split = value.get<std::string>();
    else model_part[key] = value;
  }
  c.model = model::config_from_json(model_part);
  if (c.batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
  if (!(c.learning_rate > 0)) throw std::invalid_argument("learning_rate must be positive");
  if (c.model.experts == 0) throw std::invalid_argument("experts must be at least 1");
  return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return config_from_json(json::parse(in));
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(ParameterStore& store) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& p : store) {
    if (!p->trainable || p->grad.empty()) continue;
    auto& s = state_[p.get()];
    if (s.m.empty()) {
      s.m = Tensor(p->value.shape());
      s.v = Tensor(p->value.shape());
    }
    auto w = p->value.data();
    auto g = p->grad.data();
    auto m = s.m.data();
    auto v = s.v.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

TrainingError::TrainingError(std::size_t e, std::size_t b, std::string o)
    : std::runtime_error("non-finite loss at epoch " + std::to_string(e) + ", batch " + std::to_string(b) +
                         " (first non-finite op: " + (o.empty() ? "unknown" : o) + ")"),
      epoch(e),
      batch(b),
      op(std::move(o)) {}

namespace {

struct Item {
  const io::Sample* sample;
  std::optional<std::size_t> view;  // one view of a multi-label sample
};

}  // namespace

TrainResult train(const TrainConfig& config, const io::Dataset& data, const pool::ConceptPool& pool) {
  return train(config, data, model::Model::create(config.model, pool, data.manifest.label_names));
}

TrainResult train(const TrainConfig& config, const io::Dataset& data, model::Model model) {
  if (model.config().task != data.manifest.task)
    throw std::invalid_argument("model task " + io::to_string(model.config().task) + " does not match manifest task " +
                                io::to_string(data.manifest.task));
  if (model.class_count() != data.manifest.class_count())
    throw std::invalid_argument("model has " + std::to_string(model.class_count()) + " classes, manifest has " +
                                std::to_string(data.manifest.class_count()));
  io::validate_against_pool(data.manifest, model.concept_names());

  const bool multi = data.manifest.task == io::TaskKind::MultiLabel;
  std::vector<Item> items;
  for (const io::Sample* s : data.manifest.split(config.split)) {
    if (multi)
      for (std::size_t v = 0; v < s->views.size(); ++v) items.push_back({s, v});
    else
      items.push_back({s, std::nullopt});
  }
  if (items.empty() && config.epochs > 0) throw std::invalid_argument("split '" + config.split + "' has no samples");

  // Inputs and targets do not change across epochs.
  std::vector<model::SampleInput> inputs;
  std::vector<Tensor> targets;
  for (const auto& it : items) {
    auto in = model::sample_input(data, *it.sample);
    if (it.view) {
      Tensor one = Tensor::matrix(1, in.views.cols());
      std::copy_n(in.views.row_span(*it.view).begin(), in.views.cols(), one.row_span(0).begin());
      in.views = std::move(one);
    }
    inputs.push_back(std::move(in));
    targets.push_back(data.targets(*it.sample));
  }

  TrainResult result{std::move(model), {}, {}};
  model::Model& m = result.model;
  m.parameters().zero_grad();
  Adam adam(config.learning_rate);
  Rng rng(config.model.seed ^ 0x7472616964617461ULL);
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  const auto bottleneck_params = m.parameters_with_prefix("bottleneck.");
  const std::size_t stage_one = config.two_stage ? config.epochs / 2 : 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const bool cbl_only = epoch < stage_one;
    if (config.two_stage && epoch == stage_one)
      for (Parameter* p : bottleneck_params) p->trainable = false;
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0, batch = 0; start < order.size(); start += config.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double weight = 1.0 / static_cast<double>(end - start);
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        Tape tape;
        double value = 0.0;
        try {
          auto fwd = m.forward(tape, inputs[order[i]]);
          auto terms = m.loss(fwd, targets[order[i]]);
          Var loss = cbl_only ? terms.cbl : terms.total;
          value = loss.value().item();
          if (!std::isfinite(value)) throw TrainingError(epoch, batch, tape.first_non_finite_op());
          tape.backward(scale(loss, weight));
        } catch (const std::domain_error&) {
          throw TrainingError(epoch, batch, tape.first_non_finite_op());
        }
        batch_loss += value * weight;
      }
      adam.step(m.parameters());
      m.parameters().zero_grad();
      result.batch_losses.push_back(batch_loss);
      epoch_loss += batch_loss * static_cast<double>(end - start);
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  for (Parameter* p : bottleneck_params) p->trainable = true;
  m.quantize();
  return result;
}

Prediction predict(const model::Model& model, const model::SampleInput& input, const model::ForwardOptions& options) {
  Prediction out;
  const bool multi = model.config().task == io::TaskKind::MultiLabel;
  auto run = [&](const model::SampleInput& in, std::vector<double>& z, std::vector<double>& probs) {
    Tape tape;
    auto fwd = model.forward(tape, in, options);
    z = fwd.z.value().to_vector();
    out.clamps = fwd.clamps;
    if (multi) {
      probs = fwd.logits.value().to_vector();
      for (auto& x : probs) x = sigmoid(x);
    } else {
      probs = softmax_rows(fwd.logits.value()).to_vector();
    }
  };
  if (!multi || input.views.rows() == 1) {
    run(input, out.concept_scores, out.class_probs);
    return out;
  }
  std::vector<std::vector<double>> zs(input.views.rows()), ps(input.views.rows());
  for (std::size_t v = 0; v < input.views.rows(); ++v) {
    model::SampleInput one = input;
    one.views = Tensor::matrix(1, input.views.cols());
    std::copy_n(input.views.row_span(v).begin(), input.views.cols(), one.views.row_span(0).begin());
    run(one, zs[v], ps[v]);
  }
  out.concept_scores = metrics::combine_views(zs);
  out.class_probs = metrics::combine_views(ps);
  return out;
}

Evaluation evaluate(const model::Model& model, const io::Dataset& data, const std::string& split, std::size_t threads) {
  const auto samples = data.manifest.split(split);
  if (samples.empty()) throw std::invalid_argument("split '" + split + "' has no samples");
  io::validate_against_pool(data.manifest, model.concept_names());
  Evaluation ev;
  ev.predictions.resize(samples.size());
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, samples.size());
  auto work = [&](std::size_t worker) {
    for (std::size_t i = worker; i < samples.size(); i += threads) {
      ev.predictions[i] = predict(model, model::sample_input(data, *samples[i]));
      ev.predictions[i].sample_id = samples[i]->id;
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::future<void>> jobs;
    for (std::size_t w = 0; w < threads; ++w) jobs.push_back(std::async(std::launch::async, work, w));
    for (auto& j : jobs) j.get();
  }
  const std::size_t c = model.class_count();
  Tensor probs = Tensor::matrix(samples.size(), c), targets = Tensor::matrix(samples.size(), c);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::copy_n(ev.predictions[i].class_probs.begin(), c, probs.row_span(i).begin());
    const Tensor t = data.targets(*samples[i]);
    std::copy_n(t.data().begin(), c, targets.row_span(i).begin());
  }
  ev.report = metrics::compute_report(probs, targets, model.config().task, model.class_names());
  return ev;
}

}  // namespace msgt::train
