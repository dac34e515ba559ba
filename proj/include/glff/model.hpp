#pragma once

#include <atomic>
#include <mutex>
#include <random>
#include <vector>

#include <torch/torch.h>

#include "glff/amsff.hpp"
#include "glff/backbone.hpp"
#include "glff/config.hpp"
#include "glff/fusion_head.hpp"
#include "glff/image.hpp"
#include "glff/psm.hpp"

namespace glff {

/// How often each stage of the pipeline ran; used to verify ablation bypasses.
struct ModuleCounters {
  std::atomic<std::int64_t> amsff_fuse{0};
  std::atomic<std::int64_t> psm_select{0};
  std::atomic<std::int64_t> random_select{0};
  std::atomic<std::int64_t> local_branch{0};
  std::atomic<std::int64_t> global_branch{0};

  void reset();
};

/// Intermediate results of one forward pass, filled on request.
struct ForwardTrace {
  FeatureTaps taps;
  torch::Tensor fused;                              // N x C_h x H_h x W_h
  std::vector<ActivationMap> activation;            // per image
  std::vector<std::vector<PatchProposal>> proposals;  // per image
  torch::Tensor global_embedding;                   // N x E (undefined for local_only)
  torch::Tensor local_embeddings;                   // N x n x E (undefined for global_only)
  torch::Tensor logits;                             // N x 2
};

/// Two-branch detector: backbone taps -> AMSFF -> PSM patches -> shared
/// backbone on patches -> attention fusion -> real/fake logits.
class GlffModelImpl : public torch::nn::Module {
 public:
  /// Weights are initialised from `cfg.seed` (and the pretrained backbone
  /// when configured and readable).
  explicit GlffModelImpl(ModelConfig cfg);

  /// images: N x 3 x S x S in [0,1] -> logits N x 2. Patch coordinates are
  /// chosen without gradient; crops stay differentiable w.r.t. the pixels.
  torch::Tensor forward(const torch::Tensor& images, ForwardTrace* trace = nullptr);

  /// Eval-mode scoring without autograd.
  std::vector<DetectionScore> score(const torch::Tensor& images);
  DetectionScore score(const ImageTensor& image);

  [[nodiscard]] const ModelConfig& config() const { return cfg_; }
  ModuleCounters& counters() { return counters_; }

  /// Generator behind the random-window (no_psm) variant.
  std::string proposal_rng_state() const;
  void set_proposal_rng_state(const std::string& state);

  Backbone backbone{nullptr};
  Amsff amsff{nullptr};
  FusionHead head{nullptr};

 private:
  std::vector<PatchProposal> propose(const torch::Tensor& fused_single, ActivationMap* map_out);

  ModelConfig cfg_;
  ModuleCounters counters_;
  mutable std::mutex rng_mutex_;
  std::mt19937_64 proposal_rng_;
};
TORCH_MODULE(GlffModel);

}  // namespace glff
