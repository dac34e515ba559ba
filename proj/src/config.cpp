#include "glff/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace glff {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

void check_stage(int stage) {
  if (stage < 1 || stage > 5)
    throw ConfigError("backbone stage must be in 1..5, got " + std::to_string(stage));
}

}  // namespace

int BackboneConfig::stage_channels(int stage) const {
  check_stage(stage);
  static constexpr std::array<int, 5> kMult{4, 8, 16, 16, 32};
  return kMult[stage - 1] * base_width;
}

int BackboneConfig::stage_stride(int stage) const {
  check_stage(stage);
  static constexpr std::array<int, 5> kStride{4, 8, 16, 16, 32};
  return kStride[stage - 1];
}

void BackboneConfig::validate() const {
  check_stage(shallow_stage);
  check_stage(deep_stage);
  if (shallow_stage >= deep_stage)
    throw ConfigError("shallow_stage must be below deep_stage");
  if (base_width < 1) throw ConfigError("base_width must be positive");
  for (int b : blocks)
    if (b < 1) throw ConfigError("every residual group needs at least one block");
  if (input_size < 32 || input_size % 32 != 0)
    throw ConfigError("input_size must be a positive multiple of 32");
  for (double s : stddev)
    if (!(s > 0)) throw ConfigError("normalization stddev must be positive");
}

void AttentionConfig::validate() const {
  if (num_layers < 1) throw ConfigError("attention needs at least one layer");
  if (num_heads < 1) throw ConfigError("attention needs at least one head");
  if (model_dim < 1 || model_dim % num_heads != 0)
    throw ConfigError("model_dim " + std::to_string(model_dim) +
                      " is not divisible by num_heads " + std::to_string(num_heads));
}

int PSMConfig::total_count() const {
  int n = 0;
  for (const auto& w : windows) n += w.count;
  return n;
}

void PSMConfig::validate(int map_height, int map_width) const {
  if (windows.empty()) throw ConfigError("PSM needs at least one window size");
  if (!(nms_iou >= 0.0 && nms_iou <= 1.0)) throw ConfigError("nms_iou must be in [0,1]");
  for (const auto& w : windows) {
    if (w.height < 1 || w.width < 1 || w.height > map_height || w.width > map_width)
      throw ConfigError("window " + std::to_string(w.height) + "x" + std::to_string(w.width) +
                        " does not fit a " + std::to_string(map_height) + "x" +
                        std::to_string(map_width) + " activation map");
    if (w.count < 1) throw ConfigError("window count must be at least 1");
    if (w.crop_size < 1 || w.crop_size > input_size)
      throw ConfigError("crop_size " + std::to_string(w.crop_size) + " exceeds input size " +
                        std::to_string(input_size));
  }
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::global_only: return "global_only";
    case Variant::local_only: return "local_only";
    case Variant::no_psm: return "no_psm";
    case Variant::no_amsff: return "no_amsff";
  }
  return "full";
}

Variant variant_from_string(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "global_only") return Variant::global_only;
  if (s == "local_only") return Variant::local_only;
  if (s == "no_psm") return Variant::no_psm;
  if (s == "no_amsff") return Variant::no_amsff;
  throw ConfigError("unknown variant '" + s + "'");
}

ModelConfig ModelConfig::resnet50() {
  ModelConfig c;
  c.resolve();
  return c;
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.backbone.base_width = 4;
  c.backbone.blocks = {1, 1, 2, 1};
  c.backbone.input_size = 128;
  c.amsff.num_layers = 1;
  c.fusion.num_layers = 1;
  c.psm.windows = {{2, 2, 3, 64}, {1, 1, 3, 32}};
  c.resolve();
  return c;
}

ModelConfig ModelConfig::preset(const std::string& name) {
  if (name == "resnet50") return resnet50();
  if (name == "toy") return toy();
  throw ConfigError("unknown model preset '" + name + "' (expected resnet50 or toy)");
}

int ModelConfig::deep_map_size() const {
  return backbone.input_size / backbone.stage_stride(backbone.deep_stage);
}

int ModelConfig::shallow_map_size() const {
  return backbone.input_size / backbone.stage_stride(backbone.shallow_stage);
}

void ModelConfig::resolve() {
  backbone.validate();
  amsff.model_dim = backbone.stage_channels(backbone.deep_stage);
  amsff.validate();
  fusion.model_dim = embed_dim;
  fusion.validate();
  if (embed_dim < 1) throw ConfigError("embed_dim must be positive");
  psm.input_size = backbone.input_size;
  const int deep = deep_map_size();
  const int shallow = shallow_map_size();
  if (shallow % deep != 0)
    throw ConfigError("shallow map " + std::to_string(shallow) + " is not divisible by deep map " +
                      std::to_string(deep));
  psm.validate(deep, deep);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  const auto& b = c.backbone;
  nlohmann::json windows = nlohmann::json::array();
  for (const auto& w : c.psm.windows)
    windows.push_back({{"height", w.height}, {"width", w.width}, {"count", w.count},
                       {"crop_size", w.crop_size}});
  j = nlohmann::json{
      {"backbone",
       {{"shallow_stage", b.shallow_stage}, {"deep_stage", b.deep_stage},
        {"pretrained", b.pretrained}, {"pretrained_path", b.pretrained_path},
        {"seed", b.seed}, {"base_width", b.base_width}, {"blocks", b.blocks},
        {"input_size", b.input_size}, {"mean", b.mean}, {"stddev", b.stddev},
        {"resize", "bilinear"}}},
      {"amsff",
       {{"num_layers", c.amsff.num_layers}, {"num_heads", c.amsff.num_heads},
        {"model_dim", c.amsff.model_dim}}},
      {"fusion",
       {{"num_layers", c.fusion.num_layers}, {"num_heads", c.fusion.num_heads},
        {"model_dim", c.fusion.model_dim}}},
      {"embed_dim", c.embed_dim},
      {"psm", {{"windows", windows}, {"nms_iou", c.psm.nms_iou}, {"input_size", c.psm.input_size}}},
      {"variant", to_string(c.variant)},
      {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  const auto& b = j.at("backbone");
  c.backbone.shallow_stage = b.at("shallow_stage");
  c.backbone.deep_stage = b.at("deep_stage");
  c.backbone.pretrained = b.at("pretrained");
  c.backbone.pretrained_path = b.at("pretrained_path");
  c.backbone.seed = b.at("seed");
  c.backbone.base_width = b.at("base_width");
  c.backbone.blocks = b.at("blocks");
  c.backbone.input_size = b.at("input_size");
  c.backbone.mean = b.at("mean");
  c.backbone.stddev = b.at("stddev");
  c.amsff.num_layers = j.at("amsff").at("num_layers");
  c.amsff.num_heads = j.at("amsff").at("num_heads");
  c.fusion.num_layers = j.at("fusion").at("num_layers");
  c.fusion.num_heads = j.at("fusion").at("num_heads");
  c.embed_dim = j.at("embed_dim");
  c.psm.windows.clear();
  for (const auto& w : j.at("psm").at("windows"))
    c.psm.windows.push_back({w.at("height"), w.at("width"), w.at("count"), w.at("crop_size")});
  c.psm.nms_iou = j.at("psm").at("nms_iou");
  c.variant = variant_from_string(j.at("variant"));
  c.seed = j.at("seed");
  c.resolve();
}

std::vector<WindowSpec> parse_window_specs(const std::string& text, int input_size) {
  std::vector<WindowSpec> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    WindowSpec w;
    char x = 0;
    char colon = 0;
    std::istringstream is(item);
    if (!(is >> w.height >> x >> w.width >> colon >> w.count) || (x != 'x' && x != 'X') ||
        colon != ':')
      throw ConfigError("bad window spec '" + item + "' (expected HxW:count[:crop])");
    w.crop_size = out.empty() ? input_size : input_size / 2;
    if (is >> colon) {
      if (colon != ':' || !(is >> w.crop_size))
        throw ConfigError("bad crop size in window spec '" + item + "'");
    }
    std::string rest;
    if (is >> rest) throw ConfigError("trailing characters in window spec '" + item + "'");
    out.push_back(w);
  }
  if (out.empty()) throw ConfigError("empty window spec");
  return out;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

}  // namespace glff
