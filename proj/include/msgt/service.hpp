#pragma once

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "msgt/bottleneck.hpp"
#include "msgt/checkpoint.hpp"
#include "msgt/concept_pool.hpp"
#include "msgt/manifest.hpp"
#include "msgt/model.hpp"

namespace httplib {
class Server;
}

namespace msgt::service {

inline constexpr int kSchemaVersion = 1;

/// A request the service rejects; status is the HTTP code to answer with.
class RequestError : public std::runtime_error {
 public:
  RequestError(int status, const std::string& message) : std::runtime_error(message), status(status) {}
  int status;
};

/// {sample_id, clamps: [{concept_index | concept_name, value: 0|1}], hint_text?}
struct InterventionRequest {
  std::string sample_id;
  bottleneck::ClampMap clamps;
  std::optional<std::string> hint_text;
};

/// Throws RequestError(400) naming the first malformed field.
InterventionRequest parse_request(const nlohmann::json& body, const std::vector<std::string>& concept_names);

/// Everything a prediction needs, loaded once and only read afterwards, so
/// concurrent requests share it without locking.
struct Context {
  model::Model model;
  io::Dataset data;
  std::string model_version;
  std::optional<pool::ConceptPool> pool;
};

/// Loads checkpoint, manifest (with its embeddings) and optional pool.
/// The manifest's uncertain-label policy follows the checkpoint's training
/// config.
Context load_context(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                     const std::optional<std::filesystem::path>& pool = std::nullopt);

/// The PredictionResponse payload. Unknown sample ids raise RequestError(404).
nlohmann::json predict(const Context& ctx, const InterventionRequest& request);

nlohmann::json health(const Context& ctx);
nlohmann::json concepts(const Context& ctx);
nlohmann::json samples(const Context& ctx);
nlohmann::json error_payload(int status, const std::string& message);

/// Parses the body and dispatches; returns (status, payload). Shared by the
/// HTTP routes and the predict/intervene CLI.
std::pair<int, nlohmann::json> handle_predict(const Context& ctx, const std::string& body, bool allow_interventions);

/// /api/v1 routes over one Context.
class HttpService {
 public:
  explicit HttpService(std::shared_ptr<const Context> ctx, std::string cors_origin = "*");
  ~HttpService();
  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  /// Binds and serves on a background thread; port 0 picks a free port.
  /// Returns the bound port.
  int start(const std::string& host, int port);
  /// Binds and serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();

 private:
  std::shared_ptr<const Context> ctx_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace msgt::service
