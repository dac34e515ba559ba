#pragma once

#include <filesystem>

#include <torch/torch.h>

#include "glff/config.hpp"

namespace glff {

/// ResNet v1.5 bottleneck (stride on the 3x3 conv). Parameter names follow
/// torchvision so exported ImageNet state dicts load without remapping.
class BottleneckImpl : public torch::nn::Module {
 public:
  BottleneckImpl(int in_channels, int width, int stride);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr}, bn3{nullptr};
  torch::nn::Sequential downsample{nullptr};
};
TORCH_MODULE(Bottleneck);

/// Shallow and deep activations of one forward pass, N x C x H x W.
struct FeatureTaps {
  torch::Tensor shallow;
  torch::Tensor deep;
};

/// Shared convolutional feature extractor for the global and local branches.
/// Inputs are N x 3 x S x S RGB in [0,1]; mean/std normalization happens
/// inside and its constants are stored as buffers (and so in checkpoints).
class BackboneImpl : public torch::nn::Module {
 public:
  explicit BackboneImpl(const BackboneConfig& cfg);

  /// Both taps from a single pass. Throws NumericError on non-finite output.
  FeatureTaps extract_multiscale(const torch::Tensor& images);
  /// Spatial mean of the deep tap, N x C_deep.
  torch::Tensor pooled_deep_feature(const torch::Tensor& images);
  /// Activation after `stage` (1..5).
  torch::Tensor stage_output(const torch::Tensor& images, int stage);

  /// Loads a torchvision-named state dict (see tools/export_resnet50.py).
  void load_pretrained(const std::filesystem::path& path);

  [[nodiscard]] const BackboneConfig& config() const { return cfg_; }

 private:
  torch::Tensor normalize(const torch::Tensor& images) const;
  /// Runs up to `last_stage`, storing every tap in `taps[stage-1]`.
  void run(const torch::Tensor& images, int last_stage, std::array<torch::Tensor, 5>& taps);

  BackboneConfig cfg_;
  torch::nn::Conv2d conv1{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr};
  torch::nn::Sequential layer1{nullptr}, layer2{nullptr}, layer3{nullptr}, layer4{nullptr};
  torch::Tensor mean_, std_;
};
TORCH_MODULE(Backbone);

}  // namespace glff
