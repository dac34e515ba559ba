#pragma once

#include <torch/torch.h>

#include "glff/attention.hpp"
#include "glff/config.hpp"

namespace glff {

/// Splits the shallow map into non-overlapping patches, one per deep-map
/// pixel. shallow: N x C_l x H_l x W_l. Returns (N * H_h * W_h) x k x C_l
/// with k = (H_l / H_h) * (W_l / W_h); deep pixels are ordered row-major per
/// image and the k vectors of each patch are row-major as well.
torch::Tensor partition_lowlevel(const torch::Tensor& shallow, int64_t deep_height,
                                 int64_t deep_width);

/// Attention-based multi-scale feature fusion.
///
/// For every deep-map pixel the token set is [high, low_1 .. low_k]: the deep
/// pixel vector followed by the k co-located shallow pixel vectors, widened
/// to model_dim by a learned linear map. The set runs through the attention
/// stack and the output at the high-level position becomes the fused pixel.
/// One weight set is shared by all pixels.
class AmsffImpl : public torch::nn::Module {
 public:
  AmsffImpl(int low_channels, int high_channels, const AttentionConfig& cfg);

  /// high: M x C_h, lows: M x k x C_l -> tokens M x (k+1) x model_dim.
  torch::Tensor project_tokens(const torch::Tensor& high, const torch::Tensor& lows);
  /// shallow: N x C_l x H_l x W_l, deep: N x C_h x H_h x W_h
  /// -> fused N x model_dim x H_h x W_h.
  torch::Tensor fuse(const torch::Tensor& shallow, const torch::Tensor& deep);
  /// Token sets for every deep pixel, (N * H_h * W_h) x (k+1) x model_dim.
  torch::Tensor build_tokens(const torch::Tensor& shallow, const torch::Tensor& deep);

  torch::nn::Linear low_proj{nullptr};
  torch::nn::Linear high_proj{nullptr};  // only when C_h != model_dim
  AttentionStack attention{nullptr};

 private:
  int low_channels_;
  int high_channels_;
  int model_dim_;
};
TORCH_MODULE(Amsff);

}  // namespace glff
