#include "glff/attention.hpp"

#include <cmath>

namespace glff {

namespace nn = torch::nn;

AttentionLayerImpl::AttentionLayerImpl(int model_dim, int num_heads)
    : model_dim_(model_dim), num_heads_(num_heads) {
  AttentionConfig{1, num_heads, model_dim}.validate();
  auto proj = [&] { return nn::Linear(nn::LinearOptions(model_dim, model_dim).bias(false)); };
  query = register_module("query", proj());
  key = register_module("key", proj());
  value = register_module("value", proj());
  out = register_module("out", proj());
  norm = register_module("norm", nn::LayerNorm(nn::LayerNormOptions({model_dim})));
  for (auto* l : {&query, &key, &value, &out}) nn::init::xavier_uniform_((*l)->weight);
}

torch::Tensor AttentionLayerImpl::split_heads(const torch::Tensor& x) const {
  // N x T x D -> N x heads x T x d
  return x.view({x.size(0), x.size(1), num_heads_, model_dim_ / num_heads_}).transpose(1, 2);
}

torch::Tensor AttentionLayerImpl::attention_weights(const torch::Tensor& x) {
  if (x.dim() != 3 || x.size(2) != model_dim_)
    throw ConfigError("attention expects N x T x " + std::to_string(model_dim_) + " tokens");
  const double scale = 1.0 / std::sqrt(static_cast<double>(model_dim_ / num_heads_));
  auto q = split_heads(query(x));
  auto k = split_heads(key(x));
  return torch::softmax(torch::matmul(q, k.transpose(-2, -1)) * scale, -1);
}

torch::Tensor AttentionLayerImpl::forward(const torch::Tensor& x, bool first_token_only) {
  if (x.dim() != 3 || x.size(2) != model_dim_)
    throw ConfigError("attention expects N x T x " + std::to_string(model_dim_) + " tokens");
  auto x_q = first_token_only ? x.narrow(1, 0, 1) : x;
  return attend(x_q, query(x_q), key(x), value(x));
}

torch::Tensor AttentionLayerImpl::attend(const torch::Tensor& x_q, const torch::Tensor& q,
                                         const torch::Tensor& k, const torch::Tensor& v) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(model_dim_ / num_heads_));
  auto weights = torch::softmax(torch::matmul(split_heads(q), split_heads(k).transpose(-2, -1)) * scale, -1);
  auto heads =
      torch::matmul(weights, split_heads(v)).transpose(1, 2).reshape({x_q.size(0), x_q.size(1), model_dim_});
  return norm(x_q + out(heads));
}

AttentionStackImpl::AttentionStackImpl(const AttentionConfig& cfg) {
  cfg.validate();
  layers = register_module("layers", nn::ModuleList());
  for (int i = 0; i < cfg.num_layers; ++i) layers->push_back(AttentionLayer(cfg.model_dim, cfg.num_heads));
}

torch::Tensor AttentionStackImpl::forward(const torch::Tensor& x, bool first_token_only) {
  auto y = x;
  const int n = num_layers();
  for (int i = 0; i < n; ++i) y = layer(i).forward(y, first_token_only && i + 1 == n);
  return y;
}

}  // namespace glff
