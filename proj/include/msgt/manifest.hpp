#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "msgt/embedding.hpp"
#include "msgt/tensor.hpp"

namespace msgt::io {

enum class TaskKind { SingleLabel, MultiLabel };

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(const std::string& text);

/// Concept annotation a_k. Uncertain labels are resolved at load time.
enum class Annotation : std::int8_t { Absent = 0, Present = 1, Unknown = -1 };

struct Sample {
  std::string id;
  std::string split = "train";
  std::vector<std::string> views;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> uncertain_labels;
  std::optional<std::string> hint_text;
  std::optional<std::vector<Annotation>> annotations;
  std::optional<std::vector<std::array<double, 2>>> region_centers;
};

struct DatasetManifest {
  TaskKind task = TaskKind::SingleLabel;
  std::vector<std::string> label_names;
  /// Concept names the annotations index into; may be empty when the
  /// manifest only carries a concept count.
  std::vector<std::string> concept_names;
  std::optional<std::size_t> concept_count;
  std::string embeddings;
  std::vector<Sample> samples;

  std::size_t class_count() const noexcept { return label_names.size(); }
  const Sample& sample(const std::string& id) const;
  const Sample* find_sample(const std::string& id) const noexcept;
  std::vector<const Sample*> split(const std::string& name) const;
};

struct ManifestOptions {
  /// "uncertain" concept annotations and labels become negatives.
  bool uncertain_as_negative = true;
};

DatasetManifest parse_manifest(const nlohmann::json& doc, const ManifestOptions& options = {});
nlohmann::json manifest_to_json(const DatasetManifest& manifest);

/// Throws std::invalid_argument naming the first violation: duplicate ids,
/// samples without views, label indices out of range, single-label samples
/// without exactly one label, or annotation/region vectors of the wrong length.
void validate_manifest(const DatasetManifest& manifest);

/// Checks annotation vectors against a concept pool of the given names.
void validate_against_pool(const DatasetManifest& manifest, const std::vector<std::string>& pool_names);

/// Manifest plus the view embeddings it references.
struct Dataset {
  DatasetManifest manifest;
  EmbeddingTable embeddings;

  /// M x d matrix of the sample's views, rows unit-normalized in double.
  Tensor views(const Sample& sample) const;
  /// 1 x C target row: one-hot for single-label; positives for multi-label
  /// with uncertain labels resolved by the load policy.
  Tensor targets(const Sample& sample) const;

  bool uncertain_as_negative = true;
};

Dataset load_dataset(const std::filesystem::path& manifest_path, const ManifestOptions& options = {});
Dataset make_dataset(DatasetManifest manifest, EmbeddingTable embeddings, const ManifestOptions& options = {});

}  // namespace msgt::io
