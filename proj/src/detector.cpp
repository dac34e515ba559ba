#include "glff/detector.hpp"

namespace glff {

double DifferentiableDetector::fake_probability(const torch::Tensor& image) {
  torch::NoGradGuard no_grad;
  auto batch = image.dim() == 3 ? image.unsqueeze(0) : image;
  auto l = logits(batch).to(torch::kFloat64);
  return score_from_logits(l[0][0].item<double>(), l[0][1].item<double>()).fake_probability;
}

GlffDetector::GlffDetector(GlffModel model) : model_(std::move(model)) { model_->eval(); }

torch::Tensor GlffDetector::logits(const torch::Tensor& images) { return model_->forward(images); }

int GlffDetector::input_size() const { return model_->config().backbone.input_size; }

}  // namespace glff
