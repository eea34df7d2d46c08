#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "msgt/model.hpp"

namespace msgt::ckpt {

inline constexpr int kFormatVersion = 1;

/// "MSGTCKPT1" | u64 header length | JSON header | float32 LE tensor blobs.
/// The header carries the model config, the training config verbatim,
/// concept and class names, optional training history, and a tensor index {name, offset, shape} with
/// offsets in bytes from the start of the blob section.
std::vector<std::uint8_t> serialize(const model::Model& model, const nlohmann::json& train_config = nlohmann::json::object(),
                                    const nlohmann::json& history = nlohmann::json::object());

struct Checkpoint {
  model::Model model;
  nlohmann::json train_config;
  nlohmann::json history;  // loss curves recorded by the trainer
  std::string version;
};

/// Validates every tensor shape against the architecture the header
/// describes; missing, extra, or misshapen tensors are errors.
Checkpoint parse(std::span<const std::uint8_t> bytes);

/// Returns the model version of the written bytes.
std::string save(const model::Model& model, const nlohmann::json& train_config, const std::filesystem::path& path,
                 const nlohmann::json& history = nlohmann::json::object());
Checkpoint load(const std::filesystem::path& path);

/// Hex FNV-1a of the checkpoint bytes.
std::string model_version(std::span<const std::uint8_t> bytes);

}  // namespace msgt::ckpt
