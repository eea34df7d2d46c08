#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <stdexcept>

#include "msgt/embedding.hpp"
#include "msgt/manifest.hpp"

using namespace msgt;
using namespace msgt::io;
using nlohmann::json;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

json small_manifest() {
  return json::parse(R"({
    "task": "single-label",
    "label_names": ["a", "b"],
    "concepts": ["c0", "c1"],
    "embeddings": "views.emb",
    "samples": [
      {"id": "s0", "views": ["v0"], "labels": [0], "concept_annotations": [1, "uncertain"]},
      {"id": "s1", "views": ["v1", "v0"], "labels": [1], "hint_text": "c1"}
    ]})");
}

}  // namespace

TEST(EmbeddingFile, EmptyTable) {
  EmbeddingTable empty({}, Tensor::matrix(0, 4), true);
  EmbeddingTable back = parse_embedding_bytes(serialize_embedding_table(empty));
  EXPECT_EQ(back.size(), 0u);
}

TEST(EmbeddingFile, RoundTripIsBitExact) {
  // float32-representable values survive exactly.
  Tensor v = Tensor::from_rows({{0.5, -0.25, 0.125, 1.0}, {3.0, -7.5, 0.0, 2.0}});
  EmbeddingTable t({"x", "y"}, v, false);
  EmbeddingTable back = parse_embedding_bytes(serialize_embedding_table(t));
  EXPECT_EQ(back.names(), t.names());
  EXPECT_EQ(back.vectors(), t.vectors());
  EXPECT_FALSE(back.normalized());

  // A float32-rounded normalized table also round-trips bit for bit.
  auto tbl = pseudo_embed_table(std::vector<std::string>{"p", "q", "r"}, 6, 3);
  auto once = parse_embedding_bytes(serialize_embedding_table(tbl));
  auto twice = parse_embedding_bytes(serialize_embedding_table(once));
  EXPECT_EQ(once.vectors(), twice.vectors());
  EXPECT_TRUE(twice.normalized());
}

TEST(EmbeddingFile, FileRoundTrip) {
  auto path = std::filesystem::temp_directory_path() / "msgt_test_roundtrip.emb";
  EmbeddingTable t({"x"}, Tensor::from_rows({{1.0, 0.0}}), true);
  save_embedding_file(t, path);
  EXPECT_EQ(load_embedding_file(path).vectors(), t.vectors());
  std::filesystem::remove(path);
}

TEST(EmbeddingFile, TruncatedMidRow) {
  EmbeddingTable t({"x", "y"}, Tensor::from_rows({{1, 2, 3, 4}, {5, 6, 7, 8}}), false);
  auto bytes = serialize_embedding_table(t);
  bytes.resize(bytes.size() - 6);
  EXPECT_EQ(error_of([&] { parse_embedding_bytes(bytes); }), "corrupt payload");
}

TEST(EmbeddingFile, BadMagic) {
  std::vector<std::uint8_t> bytes{'N', 'O', 'P', 'E', '0', '0', '0', '0', 0, 0};
  EXPECT_EQ(error_of([&] { parse_embedding_bytes(bytes); }), "not an embedding file");
}

TEST(EmbeddingFile, HeaderDimMismatch) {
  EmbeddingTable t({"x"}, Tensor::from_rows({{1, 2}}), false);
  auto bytes = serialize_embedding_table(t);
  bytes[12] = 3;  // d field: 2 -> 3
  EXPECT_EQ(error_of([&] { parse_embedding_bytes(bytes); }), "corrupt payload");
}

TEST(EmbeddingTable, RejectsDuplicateNames) {
  EXPECT_THROW(EmbeddingTable({"a", "a"}, Tensor::matrix(2, 2, 1.0), false), std::invalid_argument);
}

TEST(PseudoEmbed, Deterministic) {
  EXPECT_EQ(pseudo_embed("edema", 16, 7), pseudo_embed("edema", 16, 7));
  EXPECT_NE(pseudo_embed("edema", 16, 7), pseudo_embed("edema", 16, 8));
}

TEST(PseudoEmbed, UnitNorm) {
  for (std::size_t d : {2u, 3u, 8u, 64u, 300u}) {
    auto v = pseudo_embed("text " + std::to_string(d), d, d);
    double n = 0.0;
    for (double x : v) n += x * x;
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-12);
  }
}

TEST(PseudoEmbed, DistinctTextsDiffer) {
  auto a = pseudo_embed("a", 8, 0), b = pseudo_embed("b", 8, 0);
  double c = 0.0;
  for (std::size_t i = 0; i < 8; ++i) c += a[i] * b[i];
  EXPECT_LT(c, 0.99);
}

TEST(PseudoEmbed, RejectsTinyDimension) {
  EXPECT_THROW(pseudo_embed("a", 1, 0), std::invalid_argument);
}

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Manifest, ParsesOptionalFields) {
  auto m = parse_manifest(small_manifest());
  ASSERT_EQ(m.samples.size(), 2u);
  EXPECT_EQ((*m.samples[0].annotations)[0], Annotation::Present);
  EXPECT_EQ((*m.samples[0].annotations)[1], Annotation::Absent);  // uncertain -> negative by default
  EXPECT_EQ(*m.samples[1].hint_text, "c1");
  auto lenient = parse_manifest(small_manifest(), {.uncertain_as_negative = false});
  EXPECT_EQ((*lenient.samples[0].annotations)[1], Annotation::Unknown);
}

TEST(Manifest, RoundTripsThroughJson) {
  auto m = parse_manifest(small_manifest());
  EXPECT_EQ(manifest_to_json(parse_manifest(manifest_to_json(m))), manifest_to_json(m));
}

TEST(Manifest, RejectsDuplicateIds) {
  auto doc = small_manifest();
  doc["samples"][1]["id"] = "s0";
  EXPECT_NE(error_of([&] { parse_manifest(doc); }).find("duplicate sample id"), std::string::npos);
}

TEST(Manifest, RejectsLabelOutOfRange) {
  auto doc = small_manifest();
  doc["samples"][1]["labels"] = {5};
  EXPECT_NE(error_of([&] { parse_manifest(doc); }).find("out of range"), std::string::npos);
}

TEST(Manifest, RejectsWrongAnnotationLength) {
  auto doc = small_manifest();
  doc["samples"][0]["concept_annotations"] = {1, 0, 1};
  EXPECT_NE(error_of([&] { parse_manifest(doc); }).find("annotation vector"), std::string::npos);
}

TEST(Manifest, RejectsSampleWithoutViews) {
  auto doc = small_manifest();
  doc["samples"][0]["views"] = json::array();
  EXPECT_NE(error_of([&] { parse_manifest(doc); }).find("no views"), std::string::npos);
}

TEST(Manifest, AnnotationsCheckedAgainstPool) {
  auto m = parse_manifest(small_manifest());
  EXPECT_NO_THROW(validate_against_pool(m, {"c0", "c1"}));
  EXPECT_THROW(validate_against_pool(m, {"c1", "c0"}), std::invalid_argument);
}

TEST(Dataset, MissingViewEmbeddingRejected) {
  auto m = parse_manifest(small_manifest());
  EmbeddingTable views({"v0"}, Tensor::from_rows({{1.0, 0.0}}), true);
  EXPECT_THROW(make_dataset(m, views), std::invalid_argument);
}

TEST(Dataset, ViewsAreUnitRowsAndTargetsOneHot) {
  auto m = parse_manifest(small_manifest());
  EmbeddingTable views({"v0", "v1"}, Tensor::from_rows({{3.0, 4.0}, {0.0, 2.0}}), false);
  auto ds = make_dataset(m, views);
  Tensor v = ds.views(m.samples[1]);
  EXPECT_EQ(v, Tensor::from_rows({{0.0, 1.0}, {0.6, 0.8}}));
  EXPECT_EQ(ds.targets(m.samples[1]), Tensor::row({0.0, 1.0}));
}

TEST(Dataset, UncertainLabelsFollowPolicy) {
  auto doc = small_manifest();
  doc["task"] = "multi-label";
  doc["samples"][0]["uncertain_labels"] = {1};
  EmbeddingTable views({"v0", "v1"}, Tensor::from_rows({{1.0, 0.0}, {0.0, 1.0}}), true);
  auto strict = make_dataset(parse_manifest(doc), views);
  EXPECT_EQ(strict.targets(strict.manifest.samples[0]), Tensor::row({1.0, 0.0}));
  auto lenient = make_dataset(parse_manifest(doc), views, {.uncertain_as_negative = false});
  EXPECT_EQ(lenient.targets(lenient.manifest.samples[0]), Tensor::row({1.0, 1.0}));
}

TEST(PhraseFile, TrimsAndSkipsBlankLines) {
  auto path = std::filesystem::temp_directory_path() / "msgt_test_phrases.txt";
  {
    std::ofstream out(path);
    out << "  edema \n\n\tpleural effusion\n   \nnodule";
  }
  EXPECT_EQ(read_phrase_file(path), (std::vector<std::string>{"edema", "pleural effusion", "nodule"}));
  std::filesystem::remove(path);
}
