#include "msgt/service.hpp"

#include <algorithm>

#include "httplib.h"
#include "msgt/trainer.hpp"

namespace msgt::service {

using nlohmann::json;

InterventionRequest parse_request(const json& body, const std::vector<std::string>& names) {
  if (!body.is_object()) throw RequestError(400, "request body must be a JSON object");
  InterventionRequest req;
  const auto id = body.find("sample_id");
  if (id == body.end() || !id->is_string()) throw RequestError(400, "sample_id must be a string");
  req.sample_id = id->get<std::string>();

  if (auto hint = body.find("hint_text"); hint != body.end() && !hint->is_null()) {
    if (!hint->is_string()) throw RequestError(400, "hint_text must be a string or null");
    req.hint_text = hint->get<std::string>();
  }

  const auto clamps = body.find("clamps");
  if (clamps == body.end() || clamps->is_null()) return req;
  if (!clamps->is_array()) throw RequestError(400, "clamps must be an array");
  for (std::size_t i = 0; i < clamps->size(); ++i) {
    const json& c = (*clamps)[i];
    const std::string where = "clamps[" + std::to_string(i) + "]";
    if (!c.is_object()) throw RequestError(400, where + " must be an object");
    const bool has_index = c.contains("concept_index"), has_name = c.contains("concept_name");
    if (has_index == has_name) throw RequestError(400, where + " needs exactly one of concept_index, concept_name");
    std::size_t k = 0;
    if (has_index) {
      const json& v = c.at("concept_index");
      if (!v.is_number_integer()) throw RequestError(400, where + ".concept_index must be an integer");
      const auto raw = v.get<long long>();
      if (raw < 0 || static_cast<unsigned long long>(raw) >= names.size())
        throw RequestError(400, where + ".concept_index " + std::to_string(raw) + " is out of range for " +
                                    std::to_string(names.size()) + " concepts");
      k = static_cast<std::size_t>(raw);
    } else {
      const json& v = c.at("concept_name");
      if (!v.is_string()) throw RequestError(400, where + ".concept_name must be a string");
      const auto it = std::find(names.begin(), names.end(), v.get<std::string>());
      if (it == names.end()) throw RequestError(400, where + ": unknown concept '" + v.get<std::string>() + "'");
      k = static_cast<std::size_t>(it - names.begin());
    }
    const auto value = c.find("value");
    if (value == c.end() || !value->is_number() || (value->get<double>() != 0.0 && value->get<double>() != 1.0))
      throw RequestError(400, where + ".value must be 0 or 1");
    const double v = value->get<double>();
    if (auto [it, fresh] = req.clamps.emplace(k, v); !fresh && it->second != v)
      throw RequestError(400, "conflicting clamps for concept " + std::to_string(k));
  }
  return req;
}

Context load_context(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                     const std::optional<std::filesystem::path>& pool_path) {
  auto ck = ckpt::load(checkpoint);
  io::ManifestOptions options;
  options.uncertain_as_negative = ck.train_config.value("uncertain_as_negative", true);
  auto data = io::load_dataset(manifest, options);
  io::validate_against_pool(data.manifest, ck.model.concept_names());
  std::optional<pool::ConceptPool> pool;
  if (pool_path) pool = pool::load_pool(*pool_path);
  return Context{std::move(ck.model), std::move(data), ck.version, std::move(pool)};
}

json predict(const Context& ctx, const InterventionRequest& request) {
  const io::Sample* sample = ctx.data.manifest.find_sample(request.sample_id);
  if (sample == nullptr) throw RequestError(404, "unknown sample_id '" + request.sample_id + "'");
  model::ForwardOptions options;
  options.clamps = request.clamps;
  options.hint_text = request.hint_text;
  const auto pred = train::predict(ctx.model, model::sample_input(ctx.data, *sample), options);

  const auto& names = ctx.model.concept_names();
  json scores = json::array(), clamped = json::array(), probs = json::array();
  for (std::size_t k = 0; k < names.size(); ++k)
    scores.push_back({{"index", k}, {"name", names[k]}, {"score", pred.concept_scores[k]}});
  for (const auto& c : pred.clamps)
    clamped.push_back(
        {{"index", c.index}, {"name", names[c.index]}, {"value", c.value}, {"source", bottleneck::to_string(c.source)}});
  for (std::size_t c = 0; c < pred.class_probs.size(); ++c)
    probs.push_back({{"name", ctx.model.class_names()[c]}, {"prob", pred.class_probs[c]}});
  return {{"schema_version", kSchemaVersion},
          {"sample_id", request.sample_id},
          {"concept_scores", scores},
          {"clamped", clamped},
          {"class_probs", probs},
          {"model_version", ctx.model_version}};
}

json health(const Context& ctx) {
  return {{"schema_version", kSchemaVersion}, {"status", "ok"}, {"model_version", ctx.model_version}};
}

json concepts(const Context& ctx) {
  json out = json::array();
  const auto& names = ctx.model.concept_names();
  for (std::size_t k = 0; k < names.size(); ++k) {
    json c{{"index", k}, {"name", names[k]}};
    if (ctx.pool && k < ctx.pool->size() && ctx.pool->concepts[k].name == names[k]) {
      c["relevance"] = ctx.pool->concepts[k].relevance;
      c["mu"] = ctx.pool->concepts[k].mu;
      c["sigma"] = ctx.pool->concepts[k].sigma;
    }
    out.push_back(c);
  }
  return {{"schema_version", kSchemaVersion}, {"concepts", out}};
}

json samples(const Context& ctx) {
  json out = json::array();
  for (const auto& s : ctx.data.manifest.samples) {
    json labels = json::array();
    for (auto l : s.labels) labels.push_back(ctx.data.manifest.label_names.at(l));
    out.push_back({{"id", s.id}, {"split", s.split}, {"labels", labels}, {"has_hint", s.hint_text.has_value()}});
  }
  return {{"schema_version", kSchemaVersion}, {"samples", out}};
}

json error_payload(int status, const std::string& message) {
  return {{"schema_version", kSchemaVersion}, {"error", {{"status", status}, {"message", message}}}};
}

std::pair<int, json> handle_predict(const Context& ctx, const std::string& body, bool allow_interventions) {
  try {
    json doc;
    try {
      doc = json::parse(body);
    } catch (const json::parse_error& e) {
      throw RequestError(400, std::string("malformed JSON: ") + e.what());
    }
    InterventionRequest req = parse_request(doc, ctx.model.concept_names());
    if (!allow_interventions) {
      req.clamps.clear();
      req.hint_text.reset();
    }
    return {200, predict(ctx, req)};
  } catch (const RequestError& e) {
    return {e.status, error_payload(e.status, e.what())};
  } catch (const std::exception& e) {
    return {500, error_payload(500, e.what())};
  }
}

HttpService::HttpService(std::shared_ptr<const Context> ctx, std::string cors_origin)
    : ctx_(std::move(ctx)), server_(std::make_unique<httplib::Server>()) {
  auto& srv = *server_;
  srv.set_default_headers({{"Access-Control-Allow-Origin", cors_origin},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                           {"Access-Control-Allow-Headers", "Content-Type"}});
  auto reply = [](httplib::Response& res, int status, const json& payload) {
    res.status = status;
    res.set_content(payload.dump(), "application/json");
  };
  const Context* c = ctx_.get();
  srv.Options(R"(/api/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  srv.Get("/api/v1/health", [=](const httplib::Request&, httplib::Response& res) { reply(res, 200, health(*c)); });
  srv.Get("/api/v1/concepts", [=](const httplib::Request&, httplib::Response& res) { reply(res, 200, concepts(*c)); });
  srv.Get("/api/v1/samples", [=](const httplib::Request&, httplib::Response& res) { reply(res, 200, samples(*c)); });
  srv.Post("/api/v1/predict", [=](const httplib::Request& req, httplib::Response& res) {
    auto [status, payload] = handle_predict(*c, req.body, false);
    reply(res, status, payload);
  });
  srv.Post("/api/v1/intervene", [=](const httplib::Request& req, httplib::Response& res) {
    auto [status, payload] = handle_predict(*c, req.body, true);
    reply(res, status, payload);
  });
  srv.set_error_handler([=](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) reply(res, res.status, error_payload(res.status, "no such endpoint"));
  });
}

HttpService::~HttpService() { stop(); }

int HttpService::start(const std::string& host, int port) {
  const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

void HttpService::run(const std::string& host, int port) {
  if (!server_->listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

void HttpService::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace msgt::service
