#include "glff/checkpoint.hpp"

namespace glff {

namespace {

std::string read_string(torch::serialize::InputArchive& archive, const std::string& key) {
  c10::IValue value;
  if (!archive.try_read(key, value) || !value.isString())
    throw IoError("checkpoint is missing '" + key + "'");
  return value.toStringRef();
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, GlffModel& model,
                     torch::optim::Optimizer* optimizer, const nlohmann::json& meta) {
  torch::serialize::OutputArchive archive;
  archive.write("glff_version", c10::IValue(static_cast<int64_t>(kCheckpointVersion)));
  archive.write("glff_config", c10::IValue(nlohmann::json(model->config()).dump()));
  auto full_meta = meta;
  full_meta["proposal_rng"] = model->proposal_rng_state();
  archive.write("glff_meta", c10::IValue(full_meta.dump()));

  torch::serialize::OutputArchive weights;
  model->save(weights);
  archive.write("model", weights);
  if (optimizer) {
    torch::serialize::OutputArchive opt;
    optimizer->save(opt);
    archive.write("optimizer", opt);
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write to a sibling file first so an interrupted save never truncates a
  // resumable checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  archive.save_to(tmp.string());
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  c10::IValue version;
  if (!archive.try_read("glff_version", version) || !version.isInt())
    throw IoError(path.string() + " is not a GLFF checkpoint");
  if (version.toInt() > kCheckpointVersion)
    throw IoError("checkpoint version " + std::to_string(version.toInt()) + " is newer than " +
                  std::to_string(kCheckpointVersion));

  LoadedCheckpoint out;
  out.config = nlohmann::json::parse(read_string(archive, "glff_config")).get<ModelConfig>();
  out.meta = nlohmann::json::parse(read_string(archive, "glff_meta"));
  // Weights come from the archive, so skip the pretrained file lookup.
  auto build_cfg = out.config;
  build_cfg.backbone.pretrained = false;
  out.model = GlffModel(build_cfg);
  torch::serialize::InputArchive weights;
  archive.read("model", weights);
  out.model->load(weights);
  if (out.meta.contains("proposal_rng"))
    out.model->set_proposal_rng_state(out.meta["proposal_rng"].get<std::string>());
  out.model->eval();
  return out;
}

bool load_optimizer_state(const std::filesystem::path& path, torch::optim::Optimizer& optimizer) {
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  torch::serialize::InputArchive opt;
  if (!archive.try_read("optimizer", opt)) return false;
  optimizer.load(opt);
  return true;
}

}  // namespace glff
