#include "msgt/checkpoint.hpp"

#include <cstdio>
#include <map>
#include <stdexcept>

#include "msgt/binary.hpp"

namespace msgt::ckpt {

using nlohmann::json;

namespace {

constexpr std::string_view kMagic = "MSGTCKPT1";
constexpr std::string_view kConceptTensor = "concept_embeddings";

struct Blob {
  std::string name;
  const Tensor* tensor;
};

std::runtime_error corrupt(const std::string& what) { return std::runtime_error("corrupt checkpoint: " + what); }

}  // namespace

std::string model_version(std::span<const std::uint8_t> bytes) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(io::fnv1a64(bytes)));
  return buf;
}

std::vector<std::uint8_t> serialize(const model::Model& model, const json& train_config, const json& history) {
  std::vector<Blob> blobs{{std::string(kConceptTensor), &model.concept_storage()}};
  for (const auto& p : model.parameters()) blobs.push_back({p->name, &p->value});

  json index = json::array();
  std::uint64_t offset = 0;
  for (const auto& b : blobs) {
    index.push_back({{"name", b.name}, {"offset", offset}, {"shape", b.tensor->shape()}});
    offset += b.tensor->numel() * 4;
  }
  const json header{{"format_version", kFormatVersion},
                    {"config", model::config_to_json(model.config())},
                    {"train_config", train_config},
                    {"history", history},
                    {"concepts", model.concept_names()},
                    {"classes", model.class_names()},
                    {"tensors", index}};
  const std::string text = header.dump();

  io::ByteWriter out;
  out.text(kMagic);
  out.u64(text.size());
  out.text(text);
  for (const auto& b : blobs)
    for (double x : b.tensor->data()) out.f32(static_cast<float>(x));
  return std::move(out.buffer());
}

Checkpoint parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagic.size() ||
      !std::equal(kMagic.begin(), kMagic.end(), reinterpret_cast<const char*>(bytes.data())))
    throw std::runtime_error("not a checkpoint file");
  io::ByteReader in(bytes.subspan(kMagic.size()), "corrupt checkpoint: truncated");
  const std::uint64_t header_len = in.u64();
  if (header_len > in.remaining()) throw corrupt("header length exceeds file size");
  const auto header_bytes = in.take(static_cast<std::size_t>(header_len));
  json header;
  try {
    header = json::parse(header_bytes.begin(), header_bytes.end());
  } catch (const json::exception& e) {
    throw corrupt(std::string("header is not JSON (") + e.what() + ")");
  }
  if (header.value("format_version", -1) != kFormatVersion)
    throw corrupt("unsupported format_version " + header.value("format_version", json()).dump());
  const auto blob_section = bytes.subspan(kMagic.size() + 8 + static_cast<std::size_t>(header_len));

  std::map<std::string, std::pair<std::uint64_t, std::vector<std::size_t>>> index;
  for (const auto& e : header.at("tensors")) {
    auto name = e.at("name").get<std::string>();
    if (!index.emplace(name, std::pair{e.at("offset").get<std::uint64_t>(), e.at("shape").get<std::vector<std::size_t>>()})
             .second)
      throw corrupt("duplicate tensor '" + name + "'");
  }
  auto read_tensor = [&](const std::string& name, const std::vector<std::size_t>& expected) {
    auto it = index.find(name);
    if (it == index.end()) throw corrupt("missing tensor '" + name + "'");
    const auto& [offset, shape] = it->second;
    if (shape != expected) {
      Tensor want(expected), got(shape);
      throw corrupt("tensor '" + name + "' has shape " + got.shape_string() + ", expected " + want.shape_string());
    }
    const std::uint64_t n = shape_product(shape);
    if (offset > blob_section.size() || n * 4 > blob_section.size() - offset)
      throw corrupt("tensor '" + name + "' runs past the end of the file");
    io::ByteReader r(blob_section.subspan(static_cast<std::size_t>(offset), static_cast<std::size_t>(n * 4)),
                     "corrupt checkpoint: truncated tensor");
    Tensor t(shape);
    for (auto& x : t.data()) x = static_cast<double>(r.f32());
    return t;
  };

  const auto config = model::config_from_json(header.at("config"));
  auto concepts = header.at("concepts").get<std::vector<std::string>>();
  auto classes = header.at("classes").get<std::vector<std::string>>();
  Tensor storage = read_tensor(std::string(kConceptTensor), {concepts.size(), config.dim});
  model::Model m = model::Model::restore(config, storage, std::move(concepts), std::move(classes));
  std::size_t consumed = 1;
  for (auto& p : m.parameters()) {
    p->value = read_tensor(p->name, p->value.shape());
    p->zero_grad();
    ++consumed;
  }
  if (consumed != index.size()) throw corrupt("checkpoint holds tensors the architecture does not define");
  return Checkpoint{std::move(m), header.value("train_config", json::object()), header.value("history", json::object()),
                    model_version(bytes)};
}

std::string save(const model::Model& model, const json& train_config, const std::filesystem::path& path,
                 const json& history) {
  const auto bytes = serialize(model, train_config, history);
  io::write_file_bytes(path, bytes);
  return model_version(bytes);
}

Checkpoint load(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = io::read_file_bytes(path);
  } catch (const std::exception&) {
    throw std::runtime_error("cannot read checkpoint " + path.string());
  }
  try {
    return parse(bytes);
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace msgt::ckpt
