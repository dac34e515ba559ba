#pragma once

#include <array>

#include <torch/torch.h>

#include "glff/attention.hpp"
#include "glff/config.hpp"

namespace glff {

/// Class index of "fake" in the logit pair.
inline constexpr int kFakeClass = 1;

struct DetectionScore {
  double fake_probability = 0.5;
  std::array<double, 2> logits{0.0, 0.0};
};

/// Softmax of a logit pair evaluated in double precision.
DetectionScore score_from_logits(double real_logit, double fake_logit);

/// Global/local embeddings, attention fusion and the two-way classifier.
///
/// Global and local embeddings share one projection from pooled deep
/// features to `embed_dim`. The token set [global, local_1 .. local_n] goes
/// through the attention stack; the final embedding is the mean of the output
/// tokens, which keeps the score invariant to the order of the locals.
class FusionHeadImpl : public torch::nn::Module {
 public:
  FusionHeadImpl(int deep_channels, int embed_dim, const AttentionConfig& cfg);

  /// pooled: N x C_h -> N x embed_dim.
  torch::Tensor embed(const torch::Tensor& pooled);
  /// fused: N x C_h x H x W -> N x embed_dim (spatial average pool, then embed).
  torch::Tensor global_embedding(const torch::Tensor& fused);
  /// tokens: N x T x embed_dim -> logits N x 2.
  torch::Tensor classify(const torch::Tensor& tokens);

  torch::nn::Linear projection{nullptr};
  AttentionStack attention{nullptr};
  torch::nn::Linear classifier{nullptr};

 private:
  int embed_dim_;
};
TORCH_MODULE(FusionHead);

}  // namespace glff
