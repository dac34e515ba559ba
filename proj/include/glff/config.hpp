#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace glff {

/// Invalid shapes, flags or parameter combinations. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite activations or losses.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input images that do not match the preprocessing contract.
class PreprocessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable/unwritable files, encoder failures and similar runtime problems.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// ResNet-50 layout with taps at two of five stages.
///
/// Stage indexing: 1 = stem + first residual group (stride 4, 4w channels),
/// 2 = second group (stride 8, 8w), 3 = midpoint of the third group
/// (stride 16, 16w), 4 = third group (stride 16, 16w), 5 = fourth group
/// (stride 32, 32w), where w is `base_width` (64 for ResNet-50).
struct BackboneConfig {
  int shallow_stage = 1;
  int deep_stage = 5;
  bool pretrained = false;
  std::string pretrained_path;  // state dict exported by tools/export_resnet50.py
  std::uint64_t seed = 0;
  int base_width = 64;
  std::array<int, 4> blocks{3, 4, 6, 3};
  int input_size = 224;
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> stddev{0.229, 0.224, 0.225};

  [[nodiscard]] int stage_channels(int stage) const;
  [[nodiscard]] int stage_stride(int stage) const;
  void validate() const;
};

struct AttentionConfig {
  int num_layers = 3;
  int num_heads = 4;
  int model_dim = 2048;

  [[nodiscard]] int key_dim() const { return model_dim / num_heads; }
  void validate() const;
};

struct WindowSpec {
  int height = 3;
  int width = 3;
  int count = 3;
  int crop_size = 224;
};

struct PSMConfig {
  std::vector<WindowSpec> windows{{3, 3, 3, 224}, {2, 2, 3, 112}};
  double nms_iou = 0.25;
  int input_size = 224;

  [[nodiscard]] int total_count() const;
  void validate(int map_height, int map_width) const;
};

/// Architecture variants for ablation runs.
enum class Variant { full, global_only, local_only, no_psm, no_amsff };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct ModelConfig {
  BackboneConfig backbone;
  AttentionConfig amsff;
  AttentionConfig fusion{3, 4, 128};
  int embed_dim = 128;
  PSMConfig psm;
  Variant variant = Variant::full;
  std::uint64_t seed = 0;

  /// 224 input, ResNet-50 widths, 3x3/2x2 windows, 3-layer 4-head attention.
  static ModelConfig resnet50();
  /// Narrow, shallow network on 128-pixel inputs for CPU-scale training runs.
  static ModelConfig toy();
  static ModelConfig preset(const std::string& name);

  /// Derives dependent fields (attention widths, PSM input size) and validates.
  void resolve();
  [[nodiscard]] int deep_map_size() const;
  [[nodiscard]] int shallow_map_size() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Parses `5x5:3,3x3:3` (optionally `HxW:count:crop`). Without an explicit
/// crop the first window maps to the full input and later ones to half of it.
std::vector<WindowSpec> parse_window_specs(const std::string& text, int input_size);

/// Flat `key = value` file; `#` starts a comment.
using KeyValues = std::map<std::string, std::string>;
KeyValues read_key_values(const std::filesystem::path& path);

}  // namespace glff
