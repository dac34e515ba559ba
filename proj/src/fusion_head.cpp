#include "glff/fusion_head.hpp"

#include <cmath>

namespace glff {

namespace nn = torch::nn;

DetectionScore score_from_logits(double real_logit, double fake_logit) {
  DetectionScore s;
  s.logits = {real_logit, fake_logit};
  // Stable two-way softmax.
  const double m = std::max(real_logit, fake_logit);
  const double er = std::exp(real_logit - m);
  const double ef = std::exp(fake_logit - m);
  s.fake_probability = ef / (er + ef);
  return s;
}

FusionHeadImpl::FusionHeadImpl(int deep_channels, int embed_dim, const AttentionConfig& cfg)
    : embed_dim_(embed_dim) {
  if (cfg.model_dim != embed_dim)
    throw ConfigError("fusion attention width must equal embed_dim");
  projection = register_module("projection", nn::Linear(deep_channels, embed_dim));
  nn::init::zeros_(projection->bias);
  attention = register_module("attention", AttentionStack(cfg));
  classifier = register_module("classifier", nn::Linear(embed_dim, 2));
  nn::init::zeros_(classifier->bias);
}

torch::Tensor FusionHeadImpl::embed(const torch::Tensor& pooled) { return projection(pooled); }

torch::Tensor FusionHeadImpl::global_embedding(const torch::Tensor& fused) {
  if (fused.dim() != 4) throw ConfigError("global_embedding expects N x C x H x W");
  return embed(fused.mean({2, 3}));
}

torch::Tensor FusionHeadImpl::classify(const torch::Tensor& tokens) {
  if (tokens.dim() != 3 || tokens.size(2) != embed_dim_)
    throw ConfigError("fusion expects N x T x " + std::to_string(embed_dim_) + " tokens");
  auto fused = attention->forward(tokens).mean(1);
  return classifier(fused);
}

}  // namespace glff
