#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "msgt/concept_pool.hpp"
#include "msgt/embedding.hpp"
#include "msgt/manifest.hpp"
#include "msgt/trainer.hpp"

namespace msgt::fixture {

/// Synthetic two-class dataset whose views are noisy mixtures of each
/// class's two concepts. Concept directions are orthonormalized pseudo
/// embeddings, so pool relevance and dedup outcomes are known exactly.
struct FixtureSpec {
  std::size_t dim = 8;
  std::uint64_t seed = 20240611;
  std::size_t train_per_class = 4;
  std::size_t test_per_class = 2;
  std::size_t views_per_sample = 2;
  double noise = 0.3;
};

struct Fixture {
  std::vector<std::string> candidates;
  io::EmbeddingTable candidate_embeddings;
  io::EmbeddingTable label_embeddings;
  io::EmbeddingTable view_embeddings;
  io::DatasetManifest manifest;  // embeddings path "views.emb"
  pool::ConceptPool pool;
  train::TrainConfig config;
  nlohmann::json intervention;  // example request for the first test sample
  double tau_c = 0.95;
  double tau_r = 0.3;
  std::size_t k = 4;
};

Fixture make_separable(const FixtureSpec& spec = {});

/// Writes candidates.txt, candidates.emb, labels.emb, views.emb,
/// manifest.json, pool.json, train_config.json and intervention.json.
void write_fixture(const Fixture& fixture, const std::filesystem::path& dir);

io::Dataset dataset(const Fixture& fixture);

}  // namespace msgt::fixture
