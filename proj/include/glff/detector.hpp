#pragma once

#include <torch/torch.h>

#include "glff/model.hpp"

namespace glff {

/// Anything that maps a preprocessed image (3 x S x S, [0,1]) to a
/// fake-probability in [0,1].
class Detector {
 public:
  virtual ~Detector() = default;
  virtual double fake_probability(const torch::Tensor& image) = 0;
  [[nodiscard]] virtual int input_size() const = 0;
  /// Detectors that expose differentiable logits can be attacked.
  virtual bool differentiable() const { return false; }
};

/// Detector whose logits (N x 2, index 1 = fake) are differentiable w.r.t.
/// the input pixels.
class DifferentiableDetector : public Detector {
 public:
  virtual torch::Tensor logits(const torch::Tensor& images) = 0;
  bool differentiable() const override { return true; }
  double fake_probability(const torch::Tensor& image) override;
};

/// A trained GLFF model in eval mode.
class GlffDetector final : public DifferentiableDetector {
 public:
  explicit GlffDetector(GlffModel model);
  torch::Tensor logits(const torch::Tensor& images) override;
  [[nodiscard]] int input_size() const override;
  GlffModel& model() { return model_; }

 private:
  GlffModel model_;
};

/// Returns the same probability for every image.
class ConstantDetector final : public Detector {
 public:
  ConstantDetector(double probability, int input_size)
      : probability_(probability), input_size_(input_size) {}
  double fake_probability(const torch::Tensor&) override { return probability_; }
  [[nodiscard]] int input_size() const override { return input_size_; }

 private:
  double probability_;
  int input_size_;
};

}  // namespace glff
