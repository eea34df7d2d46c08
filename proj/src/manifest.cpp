#include "msgt/manifest.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

namespace msgt::io {

using nlohmann::json;

std::string to_string(TaskKind kind) {
  return kind == TaskKind::SingleLabel ? "single-label" : "multi-label";
}

TaskKind parse_task_kind(const std::string& text) {
  if (text == "single-label") return TaskKind::SingleLabel;
  if (text == "multi-label") return TaskKind::MultiLabel;
  throw std::invalid_argument("unknown task kind '" + text + "'");
}

namespace {

Annotation parse_annotation(const json& v, bool uncertain_as_negative) {
  if (v.is_null()) return Annotation::Unknown;
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "uncertain") return uncertain_as_negative ? Annotation::Absent : Annotation::Unknown;
    if (s == "unknown") return Annotation::Unknown;
    throw std::invalid_argument("bad concept annotation '" + s + "'");
  }
  const int x = v.get<int>();
  if (x == 1) return Annotation::Present;
  if (x == 0) return Annotation::Absent;
  if (x == -1) return uncertain_as_negative ? Annotation::Absent : Annotation::Unknown;
  throw std::invalid_argument("bad concept annotation " + std::to_string(x));
}

json annotation_to_json(Annotation a) {
  switch (a) {
    case Annotation::Present: return 1;
    case Annotation::Absent: return 0;
    case Annotation::Unknown: break;
  }
  return nullptr;
}

}  // namespace

const Sample* DatasetManifest::find_sample(const std::string& id) const noexcept {
  for (const auto& s : samples)
    if (s.id == id) return &s;
  return nullptr;
}

const Sample& DatasetManifest::sample(const std::string& id) const {
  if (const auto* s = find_sample(id)) return *s;
  throw std::out_of_range("unknown sample id '" + id + "'");
}

std::vector<const Sample*> DatasetManifest::split(const std::string& name) const {
  std::vector<const Sample*> out;
  for (const auto& s : samples)
    if (s.split == name) out.push_back(&s);
  return out;
}

DatasetManifest parse_manifest(const json& doc, const ManifestOptions& options) {
  DatasetManifest m;
  m.task = parse_task_kind(doc.value("task", std::string("single-label")));
  m.label_names = doc.at("label_names").get<std::vector<std::string>>();
  if (doc.contains("concepts")) m.concept_names = doc.at("concepts").get<std::vector<std::string>>();
  if (doc.contains("concept_count")) m.concept_count = doc.at("concept_count").get<std::size_t>();
  m.embeddings = doc.value("embeddings", std::string());
  for (const auto& js : doc.at("samples")) {
    Sample s;
    s.id = js.at("id").get<std::string>();
    s.split = js.value("split", std::string("train"));
    s.views = js.at("views").get<std::vector<std::string>>();
    if (js.contains("labels")) s.labels = js.at("labels").get<std::vector<std::size_t>>();
    if (js.contains("uncertain_labels"))
      s.uncertain_labels = js.at("uncertain_labels").get<std::vector<std::size_t>>();
    if (js.contains("hint_text") && !js.at("hint_text").is_null())
      s.hint_text = js.at("hint_text").get<std::string>();
    if (js.contains("concept_annotations") && !js.at("concept_annotations").is_null()) {
      std::vector<Annotation> a;
      for (const auto& v : js.at("concept_annotations"))
        a.push_back(parse_annotation(v, options.uncertain_as_negative));
      s.annotations = std::move(a);
    }
    if (js.contains("region_centers") && !js.at("region_centers").is_null())
      s.region_centers = js.at("region_centers").get<std::vector<std::array<double, 2>>>();
    m.samples.push_back(std::move(s));
  }
  validate_manifest(m);
  return m;
}

json manifest_to_json(const DatasetManifest& m) {
  json doc;
  doc["task"] = to_string(m.task);
  doc["label_names"] = m.label_names;
  if (!m.concept_names.empty()) doc["concepts"] = m.concept_names;
  if (m.concept_count) doc["concept_count"] = *m.concept_count;
  doc["embeddings"] = m.embeddings;
  json samples = json::array();
  for (const auto& s : m.samples) {
    json js;
    js["id"] = s.id;
    js["split"] = s.split;
    js["views"] = s.views;
    js["labels"] = s.labels;
    if (!s.uncertain_labels.empty()) js["uncertain_labels"] = s.uncertain_labels;
    if (s.hint_text) js["hint_text"] = *s.hint_text;
    if (s.annotations) {
      json a = json::array();
      for (auto v : *s.annotations) a.push_back(annotation_to_json(v));
      js["concept_annotations"] = a;
    }
    if (s.region_centers) js["region_centers"] = *s.region_centers;
    samples.push_back(js);
  }
  doc["samples"] = samples;
  return doc;
}

void validate_manifest(const DatasetManifest& m) {
  if (m.label_names.empty()) throw std::invalid_argument("manifest declares no labels");
  if (!m.concept_names.empty() && m.concept_count && *m.concept_count != m.concept_names.size())
    throw std::invalid_argument("manifest concept_count disagrees with concepts list");
  const std::optional<std::size_t> k =
      !m.concept_names.empty() ? std::optional<std::size_t>(m.concept_names.size()) : m.concept_count;
  std::set<std::string> seen;
  for (const auto& s : m.samples) {
    if (!seen.insert(s.id).second) throw std::invalid_argument("duplicate sample id '" + s.id + "'");
    if (s.views.empty()) throw std::invalid_argument("sample '" + s.id + "' has no views");
    for (auto l : s.labels)
      if (l >= m.label_names.size())
        throw std::invalid_argument("sample '" + s.id + "' label " + std::to_string(l) + " out of range");
    for (auto l : s.uncertain_labels)
      if (l >= m.label_names.size())
        throw std::invalid_argument("sample '" + s.id + "' uncertain label out of range");
    if (m.task == TaskKind::SingleLabel && s.labels.size() != 1)
      throw std::invalid_argument("single-label sample '" + s.id + "' must have exactly one label");
    if (s.annotations) {
      if (!k) throw std::invalid_argument("sample '" + s.id + "' has annotations but no concept pool is declared");
      if (s.annotations->size() != *k)
        throw std::invalid_argument("sample '" + s.id + "' annotation vector has length " +
                                    std::to_string(s.annotations->size()) + ", expected " + std::to_string(*k));
    }
    if (s.region_centers && k && s.region_centers->size() != *k)
      throw std::invalid_argument("sample '" + s.id + "' region_centers length does not match concept count");
  }
}

void validate_against_pool(const DatasetManifest& m, const std::vector<std::string>& pool_names) {
  if (!m.concept_names.empty() && m.concept_names != pool_names)
    throw std::invalid_argument("manifest concept list does not match the concept pool");
  for (const auto& s : m.samples) {
    if (s.annotations && s.annotations->size() != pool_names.size())
      throw std::invalid_argument("sample '" + s.id + "' annotation vector does not match pool size " +
                                  std::to_string(pool_names.size()));
    if (s.region_centers && s.region_centers->size() != pool_names.size())
      throw std::invalid_argument("sample '" + s.id + "' region_centers do not match pool size");
  }
}

Tensor Dataset::views(const Sample& sample) const {
  Tensor v = embeddings.gather(sample.views);
  for (std::size_t r = 0; r < v.rows(); ++r) {
    auto row = v.row_span(r);
    double n = 0.0;
    for (double x : row) n += x * x;
    n = std::sqrt(n);
    if (n == 0.0) throw std::invalid_argument("view '" + sample.views[r] + "' is a zero vector");
    for (auto& x : row) x /= n;
  }
  return v;
}

Tensor Dataset::targets(const Sample& sample) const {
  Tensor t = Tensor::matrix(1, manifest.class_count());
  for (auto l : sample.labels) t(0, l) = 1.0;
  if (!uncertain_as_negative)
    for (auto l : sample.uncertain_labels) t(0, l) = 1.0;
  return t;
}

Dataset make_dataset(DatasetManifest manifest, EmbeddingTable embeddings, const ManifestOptions& options) {
  validate_manifest(manifest);
  for (const auto& s : manifest.samples)
    for (const auto& v : s.views)
      if (!embeddings.find(v))
        throw std::invalid_argument("sample '" + s.id + "' references missing view embedding '" + v + "'");
  Dataset ds{std::move(manifest), std::move(embeddings)};
  ds.uncertain_as_negative = options.uncertain_as_negative;
  return ds;
}

Dataset load_dataset(const std::filesystem::path& manifest_path, const ManifestOptions& options) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot open manifest " + manifest_path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("manifest " + manifest_path.string() + " is not valid JSON: " + e.what());
  }
  DatasetManifest m = parse_manifest(doc, options);
  if (m.embeddings.empty()) throw std::invalid_argument("manifest does not name an embeddings file");
  std::filesystem::path emb = m.embeddings;
  if (emb.is_relative()) emb = manifest_path.parent_path() / emb;
  return make_dataset(std::move(m), load_embedding_file(emb), options);
}

}  // namespace msgt::io
