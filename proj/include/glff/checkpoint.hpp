#pragma once

#include <filesystem>

#include <json.hpp>
#include <torch/torch.h>

#include "glff/model.hpp"

namespace glff {

inline constexpr int kCheckpointVersion = 1;

/// Checkpoint container: format version, ModelConfig (including
/// normalization constants), all module parameters and buffers, optional
/// optimizer state and a free-form JSON `meta` block (training progress,
/// RNG states).
void save_checkpoint(const std::filesystem::path& path, GlffModel& model,
                     torch::optim::Optimizer* optimizer = nullptr,
                     const nlohmann::json& meta = nlohmann::json::object());

struct LoadedCheckpoint {
  ModelConfig config;
  GlffModel model{nullptr};
  nlohmann::json meta;
};

/// Rebuilds the model from the stored config and loads its weights. The
/// returned model is in eval mode.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Restores optimizer state written by save_checkpoint; false if absent.
bool load_optimizer_state(const std::filesystem::path& path, torch::optim::Optimizer& optimizer);

}  // namespace glff
