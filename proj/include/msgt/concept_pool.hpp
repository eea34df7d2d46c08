#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "msgt/embedding.hpp"
#include "msgt/tensor.hpp"

namespace msgt::pool {

struct ScoredConcept {
  std::string name;
  std::vector<double> embedding;  // unit l2 norm
  double mu = 0.0;
  double sigma = 0.0;
  double relevance = 0.0;  // sigma when mu >= tau_r, else 0
};

struct ConceptPool {
  std::vector<ScoredConcept> concepts;
  double tau_c = 0.1;
  double tau_r = 0.85;
  std::size_t k = 0;
  std::vector<std::string> warnings;

  std::size_t size() const noexcept { return concepts.size(); }
  std::vector<std::string> names() const;
  /// K x d matrix of concept embeddings t_k.
  Tensor embeddings() const;
};

struct RelevanceStats {
  double mu = 0.0;
  double sigma = 0.0;
  double relevance = 0.0;
};

/// Mean and population standard deviation of the label similarities, and
/// the thresholded relevance R.
RelevanceStats relevance_from_similarities(std::span<const double> similarities, double tau_r);

/// Merges candidates whose cosine exceeds tau_c: connected components of the
/// "cos > tau_c" graph, each represented by its lowest-index member. Output
/// keeps the input's relative order and row values.
io::EmbeddingTable dedup(const io::EmbeddingTable& candidates, double tau_c);

/// Scores every row of pool against every label embedding.
std::vector<ScoredConcept> relevance(const io::EmbeddingTable& pool, const io::EmbeddingTable& labels,
                                     double tau_r);

/// Top k by relevance (descending, ties by name ascending). When fewer than k
/// concepts have positive relevance, zero-relevance concepts fill the pool
/// and a warning is recorded.
ConceptPool select_top_k(std::vector<ScoredConcept> scored, std::size_t k);

/// dedup -> relevance -> select_top_k.
ConceptPool build_pool(const io::EmbeddingTable& candidates, const io::EmbeddingTable& labels, double tau_c,
                       double tau_r, std::size_t k);

nlohmann::json pool_to_json(const ConceptPool& pool);
ConceptPool pool_from_json(const nlohmann::json& doc);
void save_pool(const ConceptPool& pool, const std::filesystem::path& path);
ConceptPool load_pool(const std::filesystem::path& path);

std::string encode_float32_base64(std::span<const double> values);
std::vector<double> decode_float32_base64(const std::string& text);

}  // namespace msgt::pool
