#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "msgt/checkpoint.hpp"
#include "msgt/fixture.hpp"
#include "msgt/trainer.hpp"
#include "tiny_model.hpp"

using namespace msgt;
using nlohmann::json;

namespace {

struct Split {
  json header;
  std::vector<std::uint8_t> blobs;
};

Split split(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t len = 0;
  for (int i = 7; i >= 0; --i) len = (len << 8) | bytes[9 + i];
  const auto* h = reinterpret_cast<const char*>(bytes.data() + 17);
  return {json::parse(std::string(h, len)), std::vector<std::uint8_t>(bytes.begin() + 17 + len, bytes.end())};
}

std::vector<std::uint8_t> join(const Split& s) {
  const std::string h = s.header.dump();
  std::vector<std::uint8_t> out{'M', 'S', 'G', 'T', 'C', 'K', 'P', 'T', '1'};
  std::uint64_t len = h.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
  out.insert(out.end(), h.begin(), h.end());
  out.insert(out.end(), s.blobs.begin(), s.blobs.end());
  return out;
}

std::string error_of(const std::vector<std::uint8_t>& bytes) {
  try {
    ckpt::parse(bytes);
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

model::Model trained_tiny() {
  model::Model m = tiny::make();
  tiny::perturb(m, 5);
  m.quantize();
  return m;
}

}  // namespace

TEST(Checkpoint, HeaderCarriesConfigAndIndex) {
  auto m = trained_tiny();
  json tc{{"epochs", 3}};
  auto bytes = ckpt::serialize(m, tc, json{{"epoch_losses", {1.0, 0.5}}});
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 9), "MSGTCKPT1");
  auto s = split(bytes);
  EXPECT_EQ(s.header["format_version"], ckpt::kFormatVersion);
  EXPECT_EQ(s.header["config"], model::config_to_json(m.config()));
  EXPECT_EQ(s.header["train_config"], tc);
  EXPECT_EQ(s.header["concepts"], json({"edema", "nodule"}));
  EXPECT_EQ(s.header["tensors"].size(), m.parameters().size() + 1);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  auto m = trained_tiny();
  auto c = ckpt::parse(ckpt::serialize(m));
  for (const auto& p : m.parameters()) EXPECT_EQ(c.model.parameters().at(p->name).value, p->value) << p->name;
  EXPECT_EQ(c.model.concept_storage(), m.concept_storage());
  EXPECT_EQ(c.model.bottleneck().concept_embeddings, m.bottleneck().concept_embeddings);
  Tape t1, t2;
  EXPECT_EQ(c.model.forward(t1, tiny::input(c.model)).logits.value(), m.forward(t2, tiny::input(m)).logits.value());
  // and serializing the loaded model reproduces the bytes
  EXPECT_EQ(ckpt::serialize(c.model), ckpt::serialize(m));
}

TEST(Checkpoint, VersionIsDeterministicHash) {
  auto m = trained_tiny();
  const auto bytes = ckpt::serialize(m);
  EXPECT_EQ(ckpt::model_version(bytes), ckpt::model_version(ckpt::serialize(m)));
  EXPECT_EQ(ckpt::model_version(bytes).size(), 16u);
  auto other = tiny::make();
  EXPECT_NE(ckpt::model_version(ckpt::serialize(other)), ckpt::model_version(bytes));
}

TEST(Checkpoint, FileSaveLoad) {
  auto path = std::filesystem::temp_directory_path() / "msgt_test_tiny.msgt";
  auto m = trained_tiny();
  const auto version = ckpt::save(m, json{{"epochs", 1}}, path, json{{"epoch_losses", {0.25}}});
  auto c = ckpt::load(path);
  EXPECT_EQ(c.version, version);
  EXPECT_EQ(c.history["epoch_losses"][0], 0.25);
  EXPECT_EQ(c.train_config["epochs"], 1);
  std::filesystem::remove(path);
  try {
    ckpt::load(path);
    FAIL();
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find(path.string()), std::string::npos);
  }
}

TEST(Checkpoint, RejectsBadMagic) {
  std::vector<std::uint8_t> junk{'h', 'e', 'l', 'l', 'o'};
  EXPECT_EQ(error_of(junk), "not a checkpoint file");
}

TEST(Checkpoint, RejectsShapeMismatch) {
  auto s = split(ckpt::serialize(trained_tiny()));
  for (auto& t : s.header["tensors"])
    if (t["name"] == "classifier.out.bias") t["shape"] = {1, 4};
  EXPECT_NE(error_of(join(s)).find("has shape"), std::string::npos);
}

TEST(Checkpoint, RejectsMissingAndExtraTensors) {
  auto s = split(ckpt::serialize(trained_tiny()));
  auto missing = s;
  missing.header["tensors"].erase(missing.header["tensors"].size() - 1);
  EXPECT_NE(error_of(join(missing)).find("missing tensor"), std::string::npos);
  auto extra = s;
  extra.header["tensors"].push_back({{"name", "stray"}, {"offset", 0}, {"shape", {1, 1}}});
  EXPECT_NE(error_of(join(extra)).find("does not define"), std::string::npos);
}

TEST(Checkpoint, RejectsArchitectureDisagreement) {
  auto s = split(ckpt::serialize(trained_tiny()));
  s.header["config"]["experts"] = 3;
  EXPECT_NE(error_of(join(s)).find("corrupt checkpoint"), std::string::npos);
}

TEST(Checkpoint, RejectsTruncation) {
  auto bytes = ckpt::serialize(trained_tiny());
  bytes.resize(bytes.size() - 3);
  EXPECT_NE(error_of(bytes).find("corrupt checkpoint"), std::string::npos);
}

TEST(Checkpoint, TrainedEvaluationSurvivesReload) {
  const auto fx = fixture::make_separable();
  const auto data = fixture::dataset(fx);
  auto cfg = fx.config;
  cfg.epochs = 3;
  auto res = train::train(cfg, data, fx.pool);
  auto in_memory = train::evaluate(res.model, data, "test");
  auto reloaded = ckpt::parse(ckpt::serialize(res.model, train::config_to_json(cfg)));
  auto from_disk = train::evaluate(reloaded.model, data, "test");
  for (std::size_t i = 0; i < in_memory.predictions.size(); ++i) {
    EXPECT_EQ(in_memory.predictions[i].class_probs, from_disk.predictions[i].class_probs);
    EXPECT_EQ(in_memory.predictions[i].concept_scores, from_disk.predictions[i].concept_scores);
  }
  EXPECT_EQ(metrics::report_to_json(in_memory.report), metrics::report_to_json(from_disk.report));
}
