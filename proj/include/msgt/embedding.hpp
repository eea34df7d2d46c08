#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "msgt/tensor.hpp"

namespace msgt::io {

/// Named embedding vectors, one per row.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::vector<std::string> names, Tensor vectors, bool normalized);

  std::size_t size() const noexcept { return names_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  bool normalized() const noexcept { return normalized_; }
  const std::vector<std::string>& names() const noexcept { return names_; }
  const Tensor& vectors() const noexcept { return vectors_; }
  std::span<const double> row(std::size_t i) const { return vectors_.row_span(i); }

  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  /// Copy with every row rescaled to unit l2 norm in double precision.
  EmbeddingTable unit_normalized() const;
  /// Largest |norm - 1| over rows.
  double max_norm_deviation() const;

  /// Rows for the given names, in order.
  Tensor gather(std::span<const std::string> names) const;

 private:
  std::vector<std::string> names_;
  Tensor vectors_;
  std::size_t dim_ = 0;
  bool normalized_ = false;
  std::unordered_map<std::string, std::size_t> index_;
};

/// 64-bit FNV-1a over the UTF-8 bytes of text.
std::uint64_t fnv1a64(std::string_view text) noexcept;
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept;

/// Deterministic stand-in text encoder: d standard normals from a
/// counter-based stream keyed by fnv1a64(text) ^ seed, l2-normalized.
std::vector<double> pseudo_embed(std::string_view text, std::size_t d, std::uint64_t seed);

EmbeddingTable pseudo_embed_table(std::span<const std::string> texts, std::size_t d, std::uint64_t seed);

/// Text encoder used for QA tokens and hint text: looks the text up in an
/// optional precomputed table, else falls back to pseudo_embed.
class TextEncoder {
 public:
  TextEncoder(std::size_t dim, std::uint64_t seed, std::optional<EmbeddingTable> table = std::nullopt);

  std::size_t dim() const noexcept { return dim_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::vector<double> embed(std::string_view text) const;
  /// One unit row per token.
  Tensor embed_all(std::span<const std::string> texts) const;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
  std::optional<EmbeddingTable> table_;
};

/// Rows are stored as float32, so normalized tables are checked at this
/// tolerance on load.
inline constexpr double kStoredNormTolerance = 1e-5;

/// Binary layout: "MSGTEMB1" | u32 n | u32 d | u8 normalized |
/// n NUL-terminated names | n*d float32, all little-endian.
EmbeddingTable load_embedding_file(const std::filesystem::path& path);
EmbeddingTable parse_embedding_bytes(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_embedding_table(const EmbeddingTable& table);
void save_embedding_file(const EmbeddingTable& table, const std::filesystem::path& path);

/// Non-empty lines with surrounding whitespace trimmed.
std::vector<std::string> read_phrase_file(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace msgt::io
