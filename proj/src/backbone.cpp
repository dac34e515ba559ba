#include "glff/backbone.hpp"

#include <fstream>
#include <iterator>

#include "glff/image.hpp"

namespace glff {

namespace nn = torch::nn;

namespace {

nn::Conv2d conv(int in, int out, int kernel, int stride, int padding) {
  return nn::Conv2d(
      nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding).bias(false));
}

void check_finite(const torch::Tensor& t, const char* what) {
  if (!torch::isfinite(t).all().item<bool>())
    throw NumericError(std::string("non-finite activations in ") + what);
}

}  // namespace

BottleneckImpl::BottleneckImpl(int in_channels, int width, int stride) {
  const int out_channels = width * 4;
  conv1 = register_module("conv1", conv(in_channels, width, 1, 1, 0));
  bn1 = register_module("bn1", nn::BatchNorm2d(width));
  conv2 = register_module("conv2", conv(width, width, 3, stride, 1));
  bn2 = register_module("bn2", nn::BatchNorm2d(width));
  conv3 = register_module("conv3", conv(width, out_channels, 1, 1, 0));
  bn3 = register_module("bn3", nn::BatchNorm2d(out_channels));
  if (stride != 1 || in_channels != out_channels) {
    downsample = register_module(
        "downsample",
        nn::Sequential(conv(in_channels, out_channels, 1, stride, 0), nn::BatchNorm2d(out_channels)));
  }
}

torch::Tensor BottleneckImpl::forward(const torch::Tensor& x) {
  auto y = torch::relu(bn1(conv1(x)));
  y = torch::relu(bn2(conv2(y)));
  y = bn3(conv3(y));
  auto identity = downsample ? downsample->forward(x) : x;
  return torch::relu(y + identity);
}

BackboneImpl::BackboneImpl(const BackboneConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int w = cfg_.base_width;
  conv1 = register_module("conv1", conv(3, w, 7, 2, 3));
  bn1 = register_module("bn1", nn::BatchNorm2d(w));

  int in = w;
  auto make_layer = [&](int width, int blocks, int stride) {
    nn::Sequential seq;
    for (int i = 0; i < blocks; ++i) {
      seq->push_back(Bottleneck(in, width, i == 0 ? stride : 1));
      in = width * 4;
    }
    return seq;
  };
  layer1 = register_module("layer1", make_layer(w, cfg_.blocks[0], 1));
  layer2 = register_module("layer2", make_layer(w * 2, cfg_.blocks[1], 2));
  layer3 = register_module("layer3", make_layer(w * 4, cfg_.blocks[2], 2));
  layer4 = register_module("layer4", make_layer(w * 8, cfg_.blocks[3], 2));

  mean_ = register_buffer(
      "norm_mean", torch::tensor({cfg_.mean[0], cfg_.mean[1], cfg_.mean[2]}, torch::kFloat32)
                       .view({1, 3, 1, 1}));
  std_ = register_buffer(
      "norm_std", torch::tensor({cfg_.stddev[0], cfg_.stddev[1], cfg_.stddev[2]}, torch::kFloat32)
                      .view({1, 3, 1, 1}));

  for (auto& m : modules(/*include_self=*/false)) {
    if (auto* c = m->as<nn::Conv2d>()) {
      nn::init::kaiming_normal_(c->weight, 0.0, torch::kFanOut, torch::kReLU);
    } else if (auto* bn = m->as<nn::BatchNorm2d>()) {
      nn::init::ones_(bn->weight);
      nn::init::zeros_(bn->bias);
    }
  }
}

torch::Tensor BackboneImpl::normalize(const torch::Tensor& images) const {
  return (images - mean_) / std_;
}

void BackboneImpl::run(const torch::Tensor& images, int last_stage,
                       std::array<torch::Tensor, 5>& taps) {
  if (images.dim() != 4 || images.size(1) != 3)
    throw PreprocessError("backbone expects N x 3 x H x W images");
  auto x = normalize(images);
  x = torch::max_pool2d(torch::relu(bn1(conv1(x))), 3, 2, 1);
  x = layer1->forward(x);
  taps[0] = x;
  if (last_stage == 1) return;
  x = layer2->forward(x);
  taps[1] = x;
  if (last_stage == 2) return;
  // Stage 3 taps the middle of the third residual group.
  const auto n3 = static_cast<int>(layer3->size());
  const int mid = std::max(1, n3 / 2);
  for (int i = 0; i < n3; ++i) {
    x = layer3->ptr(i)->as<BottleneckImpl>()->forward(x);
    if (i + 1 == mid) taps[2] = x;
  }
  taps[3] = x;
  if (last_stage <= 4) return;
  taps[4] = layer4->forward(x);
}

FeatureTaps BackboneImpl::extract_multiscale(const torch::Tensor& images) {
  check_preprocessed(images, cfg_.input_size);
  std::array<torch::Tensor, 5> taps;
  run(images, cfg_.deep_stage, taps);
  FeatureTaps out{taps[cfg_.shallow_stage - 1], taps[cfg_.deep_stage - 1]};
  check_finite(out.shallow, "shallow tap");
  check_finite(out.deep, "deep tap");
  return out;
}

torch::Tensor BackboneImpl::pooled_deep_feature(const torch::Tensor& images) {
  check_preprocessed(images, cfg_.input_size);
  auto deep = stage_output(images, cfg_.deep_stage);
  check_finite(deep, "deep tap");
  return deep.mean({2, 3});
}

torch::Tensor BackboneImpl::stage_output(const torch::Tensor& images, int stage) {
  std::array<torch::Tensor, 5> taps;
  run(images, stage, taps);
  return taps[stage - 1];
}

void BackboneImpl::load_pretrained(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read pretrained weights " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto value = torch::pickle_load(bytes);
  if (!value.isGenericDict()) throw IoError(path.string() + " does not hold a state dict");
  auto dict = value.toGenericDict();

  torch::NoGradGuard no_grad;
  auto assign = [&](const std::string& name, torch::Tensor& target) {
    auto it = dict.find(name);
    if (it == dict.end()) throw IoError("pretrained weights lack '" + name + "'");
    auto src = it->value().toTensor();
    if (src.sizes() != target.sizes())
      throw IoError("shape mismatch for '" + name + "' in pretrained weights");
    target.copy_(src.to(target.dtype()));
  };
  for (auto& p : named_parameters()) assign(p.key(), p.value());
  for (auto& b : named_buffers()) {
    if (b.key() == "norm_mean" || b.key() == "norm_std") continue;
    assign(b.key(), b.value());
  }
}

}  // namespace glff
