#pragma once

#include <torch/torch.h>

#include "glff/config.hpp"

namespace glff {

/// One attention layer: scaled dot-product multi-head self-attention over a
/// token set, output projection, residual connection, layer normalization.
/// No feed-forward sublayer and no positional encoding, so the layer is
/// equivariant under token permutation.
///
/// Per head i: h_i = softmax(Q W_i^Q (K W_i^K)^T / sqrt(d)) V W_i^V with
/// d = model_dim / heads; heads are concatenated and mapped by W^O.
/// The projections carry no bias.
class AttentionLayerImpl : public torch::nn::Module {
 public:
  AttentionLayerImpl(int model_dim, int num_heads);

  /// x: N x T x D. With `first_token_only` only the output for token 0 is
  /// computed (N x 1 x D); keys and values still cover every token.
  torch::Tensor forward(const torch::Tensor& x, bool first_token_only = false);
  /// The layer given precomputed projections: x_q holds the residual inputs
  /// of the query tokens (N x Tq x D), q = query(x_q), k = key(x), v = value(x).
  torch::Tensor attend(const torch::Tensor& x_q, const torch::Tensor& q, const torch::Tensor& k,
                       const torch::Tensor& v);
  /// Softmax attention weights, N x heads x T x T.
  torch::Tensor attention_weights(const torch::Tensor& x);

  torch::nn::Linear query{nullptr}, key{nullptr}, value{nullptr}, out{nullptr};
  torch::nn::LayerNorm norm{nullptr};

 private:
  torch::Tensor split_heads(const torch::Tensor& x) const;
  int model_dim_;
  int num_heads_;
};
TORCH_MODULE(AttentionLayer);

/// `num_layers` attention layers applied in sequence.
class AttentionStackImpl : public torch::nn::Module {
 public:
  explicit AttentionStackImpl(const AttentionConfig& cfg);

  /// x: N x T x D. With `first_token_only` the last layer only produces the
  /// token-0 output (N x 1 x D); the result for that token is unchanged.
  torch::Tensor forward(const torch::Tensor& x, bool first_token_only = false);

  [[nodiscard]] int num_layers() const { return static_cast<int>(layers->size()); }
  AttentionLayerImpl& layer(int i) { return *layers->ptr<AttentionLayerImpl>(i); }

 private:
  torch::nn::ModuleList layers{nullptr};
};
TORCH_MODULE(AttentionStack);

}  // namespace glff
