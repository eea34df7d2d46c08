#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <sys/wait.h>

#include "httplib.h"
#include "msgt/checkpoint.hpp"
#include "msgt/service.hpp"
#include "msgt/trainer.hpp"

using namespace msgt;
using namespace msgt::service;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kFixture = MSGT_FIXTURE_DIR;

struct CommandResult {
  int status;
  std::string output;
};

CommandResult run(const std::string& cmd) {
  CommandResult r{0, ""};
  FILE* pipe = popen(cmd.c_str(), "r");
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

class ServiceTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("msgt_service_test_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
    auto cfg = train::load_config(kFixture / "train_config.json");
    cfg.epochs = 5;
    auto data = io::load_dataset(kFixture / "manifest.json");
    auto pool = pool::load_pool(kFixture / "pool.json");
    auto res = train::train(cfg, data, pool);
    ckpt_ = dir_ / "model.msgt";
    ckpt::save(res.model, train::config_to_json(cfg), ckpt_);
    ctx_ = std::make_shared<const Context>(load_context(ckpt_, kFixture / "manifest.json", kFixture / "pool.json"));
  }
  static void TearDownTestSuite() {
    ctx_.reset();
    fs::remove_all(dir_);
  }

  static json ok(const std::string& body, bool allow) {
    auto [status, payload] = handle_predict(*ctx_, body, allow);
    EXPECT_EQ(status, 200) << payload.dump();
    return payload;
  }

  static inline fs::path dir_;
  static inline fs::path ckpt_;
  static inline std::shared_ptr<const Context> ctx_;
};

const std::vector<std::string> kNames{"a", "b", "c"};

int parse_status(const json& body) {
  try {
    parse_request(body, kNames);
  } catch (const RequestError& e) {
    return e.status;
  }
  return 200;
}

}  // namespace

TEST(ParseRequest, AcceptsIndexAndName) {
  auto r = parse_request(json::parse(R"({"sample_id": "s", "clamps": [{"concept_index": 2, "value": 1},
                                          {"concept_name": "a", "value": 0}], "hint_text": "b"})"),
                         kNames);
  EXPECT_EQ(r.sample_id, "s");
  EXPECT_EQ(r.clamps, (bottleneck::ClampMap{{0, 0.0}, {2, 1.0}}));
  EXPECT_EQ(*r.hint_text, "b");
}

TEST(ParseRequest, RejectsMalformedClamps) {
  EXPECT_EQ(parse_status(json::parse(R"({"clamps": []})")), 400);
  EXPECT_EQ(parse_status(json::parse(R"({"sample_id": "s", "clamps": [{"value": 1}]})")), 400);
  EXPECT_EQ(parse_status(json::parse(R"({"sample_id": "s", "clamps": [{"concept_index": 0, "concept_name": "a", "value": 1}]})")), 400);
  EXPECT_EQ(parse_status(json::parse(R"({"sample_id": "s", "clamps": [{"concept_index": 8, "value": 1}]})")), 400);
  EXPECT_EQ(parse_status(json::parse(R"({"sample_id": "s", "clamps": [{"concept_index": -1, "value": 1}]})")), 400);
  EXPECT_EQ(parse_status(json::parse(R"({"sample_id": "s", "clamps": [{"concept_name": "zz", "value": 1}]})")), 400);
  EXPECT_EQ(parse_status(json::parse(R"({"sample_id": "s", "clamps": [{"concept_index": 0, "value": 0.5}]})")), 400);
  EXPECT_EQ(parse_status(json::parse(R"({"sample_id": "s", "clamps": [{"concept_index": 0, "value": 1},
                                                                     {"concept_name": "a", "value": 0}]})")), 400);
  EXPECT_EQ(parse_status(json::parse(R"({"sample_id": "s", "clamps": [{"concept_index": 0, "value": 1},
                                                                     {"concept_name": "a", "value": 1}]})")), 200);
  try {
    parse_request(json::parse(R"({"sample_id": "s", "clamps": [{"concept_index": 8, "value": 1}]})"), kNames);
  } catch (const RequestError& e) {
    EXPECT_NE(std::string(e.what()).find("out of range"), std::string::npos);
  }
}

TEST_F(ServiceTest, PredictPayloadSchema) {
  auto p = ok(R"({"sample_id": "test-8"})", false);
  EXPECT_EQ(p["schema_version"], kSchemaVersion);
  EXPECT_EQ(p["sample_id"], "test-8");
  EXPECT_EQ(p["model_version"], ctx_->model_version);
  ASSERT_EQ(p["concept_scores"].size(), 4u);
  ASSERT_EQ(p["class_probs"].size(), 2u);
  for (const auto& c : p["concept_scores"]) {
    EXPECT_GE(c["score"].get<double>(), 0.0);
    EXPECT_LE(c["score"].get<double>(), 1.0);
  }
  EXPECT_EQ(p["class_probs"][0]["name"], "congestion");
}

TEST_F(ServiceTest, EmptyInterventionEqualsPredict) {
  EXPECT_EQ(ok(R"({"sample_id": "test-9"})", false), ok(R"({"sample_id": "test-9", "clamps": []})", true));
}

TEST_F(ServiceTest, ClampReadsExactly) {
  for (int k = 0; k < 4; ++k)
    for (int v = 0; v < 2; ++v) {
      json body{{"sample_id", "test-10"}, {"clamps", {{{"concept_index", k}, {"value", v}}}}};
      auto p = ok(body.dump(), true);
      EXPECT_EQ(p["concept_scores"][k]["score"].get<double>(), static_cast<double>(v));
      ASSERT_EQ(p["clamped"].size(), 1u);
      EXPECT_EQ(p["clamped"][0]["index"], k);
      EXPECT_EQ(p["clamped"][0]["source"], "request");
    }
}

TEST_F(ServiceTest, AnnotationClampsAreReported) {
  // train-0 carries an annotation marking concept 0 present
  auto p = ok(R"({"sample_id": "train-0"})", false);
  ASSERT_EQ(p["clamped"].size(), 1u);
  EXPECT_EQ(p["clamped"][0]["source"], "annotation");
  EXPECT_EQ(p["concept_scores"][0]["score"].get<double>(), 1.0);
}

TEST_F(ServiceTest, PredictEndpointIgnoresClamps) {
  EXPECT_EQ(ok(R"({"sample_id": "test-8", "clamps": [{"concept_index": 0, "value": 1}]})", false),
            ok(R"({"sample_id": "test-8"})", false));
}

TEST_F(ServiceTest, ErrorsCarryStatusPayload) {
  auto [s404, p404] = handle_predict(*ctx_, R"({"sample_id": "nope"})", true);
  EXPECT_EQ(s404, 404);
  EXPECT_EQ(p404["error"]["status"], 404);
  auto [s400, p400] = handle_predict(*ctx_, R"({"sample_id": "test-8", "clamps": [{"concept_index": 9, "value": 1}]})", true);
  EXPECT_EQ(s400, 400);
  EXPECT_NE(p400["error"]["message"].get<std::string>().find("out of range"), std::string::npos);
  auto [sbad, pbad] = handle_predict(*ctx_, "{not json", true);
  EXPECT_EQ(sbad, 400);
}

TEST_F(ServiceTest, InterventionsNeverMutateModel) {
  const auto before = ok(R"({"sample_id": "test-11"})", false);
  std::vector<std::future<json>> jobs;
  for (int i = 0; i < 8; ++i)
    jobs.push_back(std::async(std::launch::async, [i] {
      json body{{"sample_id", "test-11"}, {"clamps", {{{"concept_index", i % 4}, {"value", i % 2}}}}};
      return ok(body.dump(), true);
    }));
  for (int i = 0; i < 8; ++i) {
    json body{{"sample_id", "test-11"}, {"clamps", {{{"concept_index", i % 4}, {"value", i % 2}}}}};
    EXPECT_EQ(jobs[i].get(), ok(body.dump(), true));
  }
  EXPECT_EQ(ok(R"({"sample_id": "test-11"})", false), before);
}

TEST_F(ServiceTest, HttpRoutes) {
  HttpService svc(ctx_, "http://ui.example");
  const int port = svc.start("127.0.0.1", 0);
  httplib::Client cli("127.0.0.1", port);

  auto health = cli.Get("/api/v1/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(json::parse(health->body)["model_version"], ctx_->model_version);
  EXPECT_EQ(health->get_header_value("Access-Control-Allow-Origin"), "http://ui.example");

  auto concepts = json::parse(cli.Get("/api/v1/concepts")->body);
  ASSERT_EQ(concepts["concepts"].size(), 4u);
  EXPECT_TRUE(concepts["concepts"][0].contains("relevance"));
  EXPECT_EQ(json::parse(cli.Get("/api/v1/samples")->body)["samples"].size(), 12u);

  auto predict = cli.Post("/api/v1/predict", R"({"sample_id": "test-8"})", "application/json");
  auto intervene = cli.Post("/api/v1/intervene", R"({"sample_id": "test-8", "clamps": []})", "application/json");
  EXPECT_EQ(predict->status, 200);
  EXPECT_EQ(json::parse(predict->body), json::parse(intervene->body));

  auto clamp = cli.Post("/api/v1/intervene",
                        R"({"sample_id": "test-8", "clamps": [{"concept_name": "nodule", "value": 1}]})",
                        "application/json");
  EXPECT_EQ(json::parse(clamp->body)["concept_scores"][2]["score"].get<double>(), 1.0);

  auto bad = cli.Post("/api/v1/intervene", R"({"sample_id": "test-8", "clamps": [{"concept_index": 9, "value": 1}]})",
                      "application/json");
  EXPECT_EQ(bad->status, 400);
  EXPECT_EQ(json::parse(bad->body)["error"]["status"], 400);
  EXPECT_EQ(cli.Post("/api/v1/predict", R"({"sample_id": "ghost"})", "application/json")->status, 404);
  EXPECT_EQ(cli.Get("/api/v1/health")->status, 200);  // still healthy

  auto missing = cli.Get("/api/v1/nothing");
  EXPECT_EQ(missing->status, 404);
  EXPECT_EQ(json::parse(missing->body)["error"]["status"], 404);
  auto preflight = cli.Options("/api/v1/intervene");
  EXPECT_EQ(preflight->status, 204);
  EXPECT_EQ(preflight->get_header_value("Access-Control-Allow-Methods"), "GET, POST, OPTIONS");
  svc.stop();
}

TEST_F(ServiceTest, CliPredictMatchesService) {
  const std::string base = std::string(MSGT_CLI) + " predict --ckpt " + quote(ckpt_) + " --manifest " +
                           quote(kFixture / "manifest.json") + " --sample test-8";
  auto r = run(base + " 2>/dev/null");
  ASSERT_EQ(r.status, 0);
  EXPECT_EQ(json::parse(r.output), ok(R"({"sample_id": "test-8"})", false));

  std::ifstream f(kFixture / "intervention.json");
  const std::string body((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  auto with = run(base + " --interventions " + quote(kFixture / "intervention.json") + " 2>/dev/null");
  ASSERT_EQ(with.status, 0);
  EXPECT_EQ(json::parse(with.output), ok(body, true));

  auto inter = run(std::string(MSGT_CLI) + " intervene --ckpt " + quote(ckpt_) + " --manifest " +
                   quote(kFixture / "manifest.json") + " --file " + quote(kFixture / "intervention.json") +
                   " 2>/dev/null");
  ASSERT_EQ(inter.status, 0);
  EXPECT_EQ(json::parse(inter.output), ok(body, true));
}

TEST_F(ServiceTest, CliFailuresExitNonzero) {
  const fs::path ghost = dir_ / "missing.msgt";
  auto r = run(std::string(MSGT_CLI) + " predict --ckpt " + quote(ghost) + " --manifest " +
               quote(kFixture / "manifest.json") + " --sample test-8 2>&1");
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.output.find(ghost.string()), std::string::npos);

  auto unknown = run(std::string(MSGT_CLI) + " predict --ckpt " + quote(ckpt_) + " --manifest " +
                     quote(kFixture / "manifest.json") + " --sample ghost 2>&1");
  EXPECT_NE(unknown.status, 0);
}

TEST_F(ServiceTest, CliTrainEvalRoundTrip) {
  const fs::path out = dir_ / "cli.msgt", report = dir_ / "report.json";
  auto t = run(std::string(MSGT_CLI) + " train --config " + quote(kFixture / "train_config.json") + " --manifest " +
               quote(kFixture / "manifest.json") + " --pool " + quote(kFixture / "pool.json") + " --out " + quote(out) +
               " --epochs 2 2>&1");
  ASSERT_EQ(t.status, 0) << t.output;
  auto e = run(std::string(MSGT_CLI) + " eval --ckpt " + quote(out) + " --manifest " +
               quote(kFixture / "manifest.json") + " --split test --report " + quote(report) + " 2>&1");
  ASSERT_EQ(e.status, 0) << e.output;
  std::ifstream in(report);
  auto doc = json::parse(in);
  EXPECT_EQ(doc["samples"], 4);
  EXPECT_EQ(doc["loss_curve"].size(), 2u);
  EXPECT_TRUE(doc["auc"].contains("macro"));
}

TEST_F(ServiceTest, CliPoolBuildMatchesShippedPool) {
  const fs::path out = dir_ / "pool.json";
  auto r = run(std::string(MSGT_CLI) + " pool build --candidates " + quote(kFixture / "candidates.txt") +
               " --candidate-emb " + quote(kFixture / "candidates.emb") + " --labels-emb " +
               quote(kFixture / "labels.emb") + " --tau-c 0.95 --tau-r 0.3 --k 4 --out " + quote(out) + " 2>&1");
  ASSERT_EQ(r.status, 0) << r.output;
  std::ifstream a(out), b(kFixture / "pool.json");
  EXPECT_EQ(json::parse(a), json::parse(b));
}
