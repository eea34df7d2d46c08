#include "msgt/concept_pool.hpp"

#include <sodium.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "msgt/binary.hpp"

namespace msgt::pool {

using nlohmann::json;

namespace {

void require_unit_rows(const io::EmbeddingTable& t, const char* what) {
  if (!t.normalized() || t.max_norm_deviation() > io::kStoredNormTolerance)
    throw std::invalid_argument(std::string(what) + ": unnormalized input");
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  // The smaller root wins, so each root is its component's lowest index.
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent_[b] = a;
  }

 private:
  std::vector<std::size_t> parent_;
};

}  // namespace

std::vector<std::string> ConceptPool::names() const {
  std::vector<std::string> out;
  for (const auto& c : concepts) out.push_back(c.name);
  return out;
}

Tensor ConceptPool::embeddings() const {
  const std::size_t d = concepts.empty() ? 0 : concepts.front().embedding.size();
  Tensor t = Tensor::matrix(concepts.size(), d);
  for (std::size_t i = 0; i < concepts.size(); ++i)
    std::copy(concepts[i].embedding.begin(), concepts[i].embedding.end(), t.row_span(i).begin());
  return t;
}

RelevanceStats relevance_from_similarities(std::span<const double> s, double tau_r) {
  if (s.empty()) throw std::invalid_argument("relevance needs at least one label");
  const double n = static_cast<double>(s.size());
  RelevanceStats out;
  for (double v : s) out.mu += v;
  out.mu /= n;
  double var = 0.0;
  for (double v : s) var += (v - out.mu) * (v - out.mu);
  out.sigma = std::sqrt(var / n);
  out.relevance = out.mu >= tau_r ? out.sigma : 0.0;
  return out;
}

io::EmbeddingTable dedup(const io::EmbeddingTable& candidates, double tau_c) {
  if (tau_c < 0.0 || tau_c > 1.0) throw std::invalid_argument("dedup: tau_c must lie in [0, 1]");
  require_unit_rows(candidates, "dedup");
  const auto unit = candidates.unit_normalized();
  const std::size_t n = unit.size();
  DisjointSets sets(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (dot(unit.row(i), unit.row(j)) > tau_c) sets.unite(i, j);

  std::vector<std::string> names;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < n; ++i)
    if (sets.find(i) == i) {
      keep.push_back(i);
      names.push_back(candidates.names()[i]);
    }
  Tensor v = Tensor::matrix(keep.size(), candidates.dim());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    auto src = candidates.row(keep[r]);
    std::copy(src.begin(), src.end(), v.row_span(r).begin());
  }
  return io::EmbeddingTable(std::move(names), std::move(v), true);
}

std::vector<ScoredConcept> relevance(const io::EmbeddingTable& pool, const io::EmbeddingTable& labels,
                                     double tau_r) {
  require_unit_rows(pool, "relevance");
  require_unit_rows(labels, "relevance");
  if (labels.size() == 0) throw std::invalid_argument("relevance: at least one label is required");
  if (pool.size() > 0 && pool.dim() != labels.dim())
    throw std::invalid_argument("relevance: dimension mismatch between concepts (" + std::to_string(pool.dim()) +
                                ") and labels (" + std::to_string(labels.dim()) + ")");
  const auto cu = pool.unit_normalized();
  const auto lu = labels.unit_normalized();
  std::vector<ScoredConcept> out;
  std::vector<double> sims(lu.size());
  for (std::size_t i = 0; i < cu.size(); ++i) {
    for (std::size_t y = 0; y < lu.size(); ++y) sims[y] = dot(cu.row(i), lu.row(y));
    const auto stats = relevance_from_similarities(sims, tau_r);
    ScoredConcept c;
    c.name = cu.names()[i];
    c.embedding.assign(cu.row(i).begin(), cu.row(i).end());
    c.mu = stats.mu;
    c.sigma = stats.sigma;
    c.relevance = stats.relevance;
    out.push_back(std::move(c));
  }
  return out;
}

ConceptPool select_top_k(std::vector<ScoredConcept> scored, std::size_t k) {
  if (k == 0) throw std::invalid_argument("select_top_k: K must be at least 1");
  if (scored.empty()) throw std::invalid_argument("select_top_k: no scored concepts");
  std::stable_sort(scored.begin(), scored.end(), [](const ScoredConcept& a, const ScoredConcept& b) {
    if (a.relevance != b.relevance) return a.relevance > b.relevance;
    return a.name < b.name;
  });
  ConceptPool pool;
  pool.k = k;
  if (scored.size() > k) scored.resize(k);
  const auto positive = std::count_if(scored.begin(), scored.end(),
                                      [](const ScoredConcept& c) { return c.relevance > 0.0; });
  if (static_cast<std::size_t>(positive) < k)
    pool.warnings.push_back("only " + std::to_string(positive) + " of " + std::to_string(k) +
                            " requested concepts have positive relevance; zero-relevance concepts fill the pool");
  pool.concepts = std::move(scored);
  return pool;
}

ConceptPool build_pool(const io::EmbeddingTable& candidates, const io::EmbeddingTable& labels, double tau_c,
                       double tau_r, std::size_t k) {
  auto pool = select_top_k(relevance(dedup(candidates, tau_c), labels, tau_r), k);
  pool.tau_c = tau_c;
  pool.tau_r = tau_r;
  return pool;
}

std::string encode_float32_base64(std::span<const double> values) {
  io::ByteWriter w;
  for (double v : values) w.f32(static_cast<float>(v));
  const auto& bytes = w.buffer();
  const std::size_t len = sodium_base64_encoded_len(bytes.size(), sodium_base64_VARIANT_ORIGINAL);
  std::string out(len, '\0');
  sodium_bin2base64(out.data(), len, bytes.data(), bytes.size(), sodium_base64_VARIANT_ORIGINAL);
  out.resize(len - 1);  // drop the terminating NUL
  return out;
}

std::vector<double> decode_float32_base64(const std::string& text) {
  std::vector<std::uint8_t> bytes(text.size());
  std::size_t len = 0;
  if (sodium_base642bin(bytes.data(), bytes.size(), text.data(), text.size(), nullptr, &len, nullptr,
                        sodium_base64_VARIANT_ORIGINAL) != 0 ||
      len % 4 != 0)
    throw std::runtime_error("malformed base64 float32 payload");
  io::ByteReader r(std::span<const std::uint8_t>(bytes.data(), len), "malformed base64 float32 payload");
  std::vector<double> out(len / 4);
  for (auto& v : out) v = static_cast<double>(r.f32());
  return out;
}

json pool_to_json(const ConceptPool& pool) {
  json doc;
  doc["tau_c"] = pool.tau_c;
  doc["tau_r"] = pool.tau_r;
  doc["k"] = pool.k;
  doc["dim"] = pool.concepts.empty() ? 0 : pool.concepts.front().embedding.size();
  doc["warnings"] = pool.warnings;
  json cs = json::array();
  for (const auto& c : pool.concepts)
    cs.push_back({{"name", c.name},
                  {"mu", c.mu},
                  {"sigma", c.sigma},
                  {"R", c.relevance},
                  {"embedding", encode_float32_base64(c.embedding)}});
  doc["concepts"] = cs;
  return doc;
}

ConceptPool pool_from_json(const json& doc) {
  ConceptPool pool;
  pool.tau_c = doc.value("tau_c", 0.1);
  pool.tau_r = doc.value("tau_r", 0.85);
  pool.k = doc.value("k", std::size_t{0});
  if (doc.contains("warnings")) pool.warnings = doc.at("warnings").get<std::vector<std::string>>();
  std::size_t dim = 0;
  for (const auto& jc : doc.at("concepts")) {
    ScoredConcept c;
    c.name = jc.at("name").get<std::string>();
    c.mu = jc.value("mu", 0.0);
    c.sigma = jc.value("sigma", 0.0);
    c.relevance = jc.value("R", 0.0);
    c.embedding = decode_float32_base64(jc.at("embedding").get<std::string>());
    if (dim == 0) dim = c.embedding.size();
    if (c.embedding.size() != dim || dim == 0)
      throw std::runtime_error("pool concept '" + c.name + "' has inconsistent embedding dimension");
    // float32 storage; restore unit norm in double
    double n = 0.0;
    for (double v : c.embedding) n += v * v;
    n = std::sqrt(n);
    for (auto& v : c.embedding) v /= n;
    pool.concepts.push_back(std::move(c));
  }
  if (pool.concepts.empty()) throw std::runtime_error("concept pool is empty");
  return pool;
}

void save_pool(const ConceptPool& pool, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << pool_to_json(pool).dump(2) << '\n';
}

ConceptPool load_pool(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open concept pool " + path.string());
  return pool_from_json(json::parse(in));
}

}  // namespace msgt::pool
