#include "glff/amsff.hpp"

namespace glff {

namespace nn = torch::nn;

torch::Tensor partition_lowlevel(const torch::Tensor& shallow, int64_t deep_height,
                                 int64_t deep_width) {
  if (shallow.dim() != 4) throw ConfigError("shallow map must be N x C x H x W");
  const auto n = shallow.size(0);
  const auto c = shallow.size(1);
  const auto h = shallow.size(2);
  const auto w = shallow.size(3);
  if (deep_height < 1 || deep_width < 1 || h % deep_height != 0 || w % deep_width != 0)
    throw ConfigError("shallow map " + std::to_string(h) + "x" + std::to_string(w) +
                      " is not divisible by deep map " + std::to_string(deep_height) + "x" +
                      std::to_string(deep_width));
  const auto ph = h / deep_height;
  const auto pw = w / deep_width;
  // N x C x Hh x ph x Wh x pw -> N x Hh x Wh x ph x pw x C
  return shallow.reshape({n, c, deep_height, ph, deep_width, pw})
      .permute({0, 2, 4, 3, 5, 1})
      .reshape({n * deep_height * deep_width, ph * pw, c});
}

AmsffImpl::AmsffImpl(int low_channels, int high_channels, const AttentionConfig& cfg)
    : low_channels_(low_channels), high_channels_(high_channels), model_dim_(cfg.model_dim) {
  cfg.validate();
  low_proj = register_module("low_proj", nn::Linear(low_channels, model_dim_));
  nn::init::zeros_(low_proj->bias);
  if (high_channels != model_dim_) {
    high_proj = register_module("high_proj", nn::Linear(high_channels, model_dim_));
    nn::init::zeros_(high_proj->bias);
  }
  attention = register_module("attention", AttentionStack(cfg));
}

torch::Tensor AmsffImpl::project_tokens(const torch::Tensor& high, const torch::Tensor& lows) {
  if (high.dim() != 2 || high.size(1) != high_channels_ || lows.dim() != 3 ||
      lows.size(2) != low_channels_ || lows.size(0) != high.size(0))
    throw ConfigError("token widths do not match the AMSFF projections");
  auto h = high_proj ? high_proj(high) : high;
  return torch::cat({h.unsqueeze(1), low_proj(lows)}, 1);
}

torch::Tensor AmsffImpl::build_tokens(const torch::Tensor& shallow, const torch::Tensor& deep) {
  if (deep.dim() != 4 || shallow.dim() != 4 || deep.size(0) != shallow.size(0))
    throw ConfigError("AMSFF expects batched N x C x H x W maps of equal batch size");
  const auto n = deep.size(0);
  const auto hh = deep.size(2);
  const auto wh = deep.size(3);
  auto lows = partition_lowlevel(shallow, hh, wh);
  auto high = deep.permute({0, 2, 3, 1}).reshape({n * hh * wh, deep.size(1)});
  return project_tokens(high, lows);
}

torch::Tensor AmsffImpl::fuse(const torch::Tensor& shallow, const torch::Tensor& deep) {
  auto tokens = build_tokens(shallow, deep);
  torch::Tensor fused;
  if (low_channels_ < model_dim_) {
    // Layer 0 sees the low tokens only through low_proj, so its projections
    // are folded into it and applied to the narrow shallow vectors.
    const auto lows = partition_lowlevel(shallow, deep.size(2), deep.size(3));
    const auto high = tokens.narrow(1, 0, 1);
    auto project = [&](torch::nn::Linear& proj) {
      auto low = torch::nn::functional::linear(lows, torch::matmul(proj->weight, low_proj->weight),
                                               torch::matmul(proj->weight, low_proj->bias));
      return torch::cat({proj(high), low}, 1);
    };
    auto& first = attention->layer(0);
    const int n = attention->num_layers();
    auto y = n == 1 ? first.attend(high, first.query(high), project(first.key), project(first.value))
                    : first.attend(tokens, project(first.query), project(first.key), project(first.value));
    for (int i = 1; i < n; ++i) y = attention->layer(i).forward(y, i + 1 == n);
    fused = y.select(1, 0);
  } else {
    fused = attention->forward(tokens, /*first_token_only=*/true).select(1, 0);
  }
  return fused.view({deep.size(0), deep.size(2), deep.size(3), model_dim_}).permute({0, 3, 1, 2});
}

}  // namespace glff
