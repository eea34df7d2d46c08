#include "msgt/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "msgt/binary.hpp"
#include "msgt/rng.hpp"

namespace msgt::io {

namespace {

constexpr std::string_view kMagic = "MSGTEMB1";

double row_norm(std::span<const double> row) {
  double s = 0.0;
  for (double v : row) s += v * v;
  return std::sqrt(s);
}

}  // namespace

EmbeddingTable::EmbeddingTable(std::vector<std::string> names, Tensor vectors, bool normalized)
    : names_(std::move(names)), vectors_(std::move(vectors)), normalized_(normalized) {
  if (vectors_.empty() && vectors_.rank() == 0) vectors_ = Tensor::matrix(0, 0);
  if (vectors_.rows() != names_.size())
    throw std::invalid_argument("embedding table: " + std::to_string(names_.size()) + " names for " +
                                std::to_string(vectors_.rows()) + " rows");
  dim_ = vectors_.cols();
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (!index_.emplace(names_[i], i).second)
      throw std::invalid_argument("embedding table: duplicate name '" + names_[i] + "'");
}

std::optional<std::size_t> EmbeddingTable::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t EmbeddingTable::index_of(std::string_view name) const {
  if (auto i = find(name)) return *i;
  throw std::out_of_range("no embedding named '" + std::string(name) + "'");
}

EmbeddingTable EmbeddingTable::unit_normalized() const {
  Tensor v = vectors_;
  for (std::size_t r = 0; r < v.rows(); ++r) {
    auto row = v.row_span(r);
    const double n = row_norm(row);
    if (n == 0.0) throw std::invalid_argument("cannot normalize zero vector '" + names_[r] + "'");
    for (auto& x : row) x /= n;
  }
  return EmbeddingTable(names_, std::move(v), true);
}

double EmbeddingTable::max_norm_deviation() const {
  double worst = 0.0;
  for (std::size_t r = 0; r < size(); ++r) worst = std::max(worst, std::fabs(row_norm(row(r)) - 1.0));
  return worst;
}

Tensor EmbeddingTable::gather(std::span<const std::string> names) const {
  Tensor out = Tensor::matrix(names.size(), dim_);
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto src = row(index_of(names[i]));
    std::copy(src.begin(), src.end(), out.row_span(i).begin());
  }
  return out;
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(std::string_view text) noexcept {
  return fnv1a64(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<double> pseudo_embed(std::string_view text, std::size_t d, std::uint64_t seed) {
  if (d < 2) throw std::invalid_argument("pseudo_embed: dimension must be at least 2");
  const std::uint64_t key = fnv1a64(text) ^ seed;
  std::vector<double> v(d);
  for (std::size_t k = 0; k < d; ++k) v[k] = counter_normal(key, k);
  const double n = row_norm(v);
  for (auto& x : v) x /= n;
  return v;
}

EmbeddingTable pseudo_embed_table(std::span<const std::string> texts, std::size_t d, std::uint64_t seed) {
  Tensor v = Tensor::matrix(texts.size(), d);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto e = pseudo_embed(texts[i], d, seed);
    std::copy(e.begin(), e.end(), v.row_span(i).begin());
  }
  return EmbeddingTable(std::vector<std::string>(texts.begin(), texts.end()), std::move(v), true);
}

TextEncoder::TextEncoder(std::size_t dim, std::uint64_t seed, std::optional<EmbeddingTable> table)
    : dim_(dim), seed_(seed), table_(std::move(table)) {
  if (dim_ < 2) throw std::invalid_argument("text encoder dimension must be at least 2");
  if (table_ && table_->size() > 0 && table_->dim() != dim_)
    throw std::invalid_argument("text embedding table dimension does not match encoder dimension");
}

std::vector<double> TextEncoder::embed(std::string_view text) const {
  if (table_) {
    if (auto i = table_->find(text)) {
      auto row = table_->row(*i);
      std::vector<double> v(row.begin(), row.end());
      const double n = row_norm(v);
      if (n == 0.0) throw std::invalid_argument("zero text embedding for '" + std::string(text) + "'");
      for (auto& x : v) x /= n;
      return v;
    }
  }
  return pseudo_embed(text, dim_, seed_);
}

Tensor TextEncoder::embed_all(std::span<const std::string> texts) const {
  Tensor out = Tensor::matrix(texts.size(), dim_);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto v = embed(texts[i]);
    std::copy(v.begin(), v.end(), out.row_span(i).begin());
  }
  return out;
}

EmbeddingTable parse_embedding_bytes(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagic.size() ||
      !std::equal(kMagic.begin(), kMagic.end(), reinterpret_cast<const char*>(bytes.data())))
    throw std::runtime_error("not an embedding file");
  ByteReader in(bytes.subspan(kMagic.size()), "corrupt payload");
  const std::uint32_t n = in.u32();
  const std::uint32_t d = in.u32();
  const bool normalized = in.u8() != 0;
  std::vector<std::string> names;
  names.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) names.push_back(in.cstring());
  if (in.remaining() != static_cast<std::size_t>(n) * d * 4) throw std::runtime_error("corrupt payload");
  Tensor v = Tensor::matrix(n, d);
  for (auto& x : v.data()) x = static_cast<double>(in.f32());
  EmbeddingTable table(std::move(names), std::move(v), normalized);
  if (normalized && table.max_norm_deviation() > kStoredNormTolerance)
    throw std::runtime_error("embedding file flagged normalized but row norms deviate from 1");
  return table;
}

EmbeddingTable load_embedding_file(const std::filesystem::path& path) {
  return parse_embedding_bytes(read_file_bytes(path));
}

std::vector<std::uint8_t> serialize_embedding_table(const EmbeddingTable& table) {
  ByteWriter out;
  out.text(kMagic);
  out.u32(static_cast<std::uint32_t>(table.size()));
  out.u32(static_cast<std::uint32_t>(table.dim()));
  out.u8(table.normalized() ? 1 : 0);
  for (const auto& name : table.names()) {
    if (name.find('\0') != std::string::npos) throw std::invalid_argument("embedding name contains NUL");
    out.text(name);
    out.u8(0);
  }
  for (double x : table.vectors().data()) out.f32(static_cast<float>(x));
  return std::move(out.buffer());
}

void save_embedding_file(const EmbeddingTable& table, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_embedding_table(table));
}

std::vector<std::string> read_phrase_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r\n");
    out.push_back(line.substr(b, e - b + 1));
  }
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace msgt::io
