#include "glff/model.hpp"

#include <filesystem>
#include <iostream>
#include <sstream>

namespace glff {

void ModuleCounters::reset() {
  amsff_fuse = 0;
  psm_select = 0;
  random_select = 0;
  local_branch = 0;
  global_branch = 0;
}

GlffModelImpl::GlffModelImpl(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.resolve();
  torch::manual_seed(cfg_.seed);
  proposal_rng_.seed(cfg_.seed ^ 0x5eed'9a7c'0ff5'e7ULL);

  const auto& b = cfg_.backbone;
  backbone = register_module("backbone", Backbone(b));
  amsff = register_module(
      "amsff", Amsff(b.stage_channels(b.shallow_stage), b.stage_channels(b.deep_stage), cfg_.amsff));
  head = register_module(
      "head", FusionHead(b.stage_channels(b.deep_stage), cfg_.embed_dim, cfg_.fusion));

  if (b.pretrained) {
    if (!b.pretrained_path.empty() && std::filesystem::exists(b.pretrained_path)) {
      backbone->load_pretrained(b.pretrained_path);
    } else {
      std::cerr << "[glff] warning: pretrained backbone weights not found ('" << b.pretrained_path
                << "'); using seeded random initialisation\n";
    }
  }
}

std::vector<PatchProposal> GlffModelImpl::propose(const torch::Tensor& fused_single,
                                                  ActivationMap* map_out) {
  const auto h = static_cast<int>(fused_single.size(1));
  const auto w = static_cast<int>(fused_single.size(2));
  if (cfg_.variant == Variant::no_psm) {
    ++counters_.random_select;
    std::lock_guard lock(rng_mutex_);
    return random_proposals(h, w, cfg_.psm, proposal_rng_);
  }
  ++counters_.psm_select;
  auto map = activation_map(fused_single);
  auto proposals = select_proposals(map, cfg_.psm);
  if (map_out) *map_out = std::move(map);
  return proposals;
}

torch::Tensor GlffModelImpl::forward(const torch::Tensor& images, ForwardTrace* trace) {
  const int size = cfg_.backbone.input_size;
  check_preprocessed(images, size);
  const auto batch = images.dim() == 3 ? images.unsqueeze(0) : images;
  const auto n = batch.size(0);

  auto taps = backbone->extract_multiscale(batch);
  torch::Tensor fused;
  if (cfg_.variant == Variant::no_amsff) {
    fused = taps.deep;
  } else {
    ++counters_.amsff_fuse;
    fused = amsff->fuse(taps.shallow, taps.deep);
  }

  std::vector<torch::Tensor> tokens;
  torch::Tensor global_emb;
  if (cfg_.variant != Variant::local_only) {
    ++counters_.global_branch;
    global_emb = head->global_embedding(fused);
    tokens.push_back(global_emb.unsqueeze(1));
  }

  torch::Tensor local_emb;
  std::vector<ActivationMap> maps;
  std::vector<std::vector<PatchProposal>> all_proposals;
  if (cfg_.variant != Variant::global_only) {
    ++counters_.local_branch;
    std::vector<torch::Tensor> patches;
    for (int64_t i = 0; i < n; ++i) {
      ActivationMap map;
      auto proposals = propose(fused[i], &map);
      patches.push_back(crop_patches(batch[i], proposals, size));
      if (trace) {
        maps.push_back(std::move(map));
        all_proposals.push_back(std::move(proposals));
      }
    }
    auto patch_batch = torch::cat(patches, 0);
    const auto per_image = patch_batch.size(0) / n;
    local_emb = head->embed(backbone->pooled_deep_feature(patch_batch)).view({n, per_image, -1});
    tokens.push_back(local_emb);
  }

  auto logits = head->classify(torch::cat(tokens, 1));
  if (!torch::isfinite(logits).all().item<bool>()) throw NumericError("non-finite logits");

  if (trace) {
    trace->taps = taps;
    trace->fused = fused;
    trace->activation = std::move(maps);
    trace->proposals = std::move(all_proposals);
    trace->global_embedding = global_emb;
    trace->local_embeddings = local_emb;
    trace->logits = logits;
  }
  return logits;
}

std::vector<DetectionScore> GlffModelImpl::score(const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  auto logits = forward(images).to(torch::kFloat64).contiguous();
  std::vector<DetectionScore> out;
  auto acc = logits.accessor<double, 2>();
  for (int64_t i = 0; i < logits.size(0); ++i) out.push_back(score_from_logits(acc[i][0], acc[i][1]));
  return out;
}

DetectionScore GlffModelImpl::score(const ImageTensor& image) {
  return score(image.pixels.unsqueeze(0)).front();
}

std::string GlffModelImpl::proposal_rng_state() const {
  std::lock_guard lock(rng_mutex_);
  std::ostringstream os;
  os << proposal_rng_;
  return os.str();
}

void GlffModelImpl::set_proposal_rng_state(const std::string& state) {
  std::lock_guard lock(rng_mutex_);
  std::istringstream is(state);
  is >> proposal_rng_;
}

}  // namespace glff
