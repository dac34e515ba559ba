#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "glff/config.hpp"

namespace glff::test {

inline std::filesystem::path data_dir() { return GLFF_TEST_DATA; }

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("glff-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Smallest configuration that exercises every module: 64-pixel input,
/// width-2 backbone, one attention layer per stack.
inline ModelConfig tiny_config(std::uint64_t seed = 0) {
  ModelConfig c = ModelConfig::toy();
  c.backbone.input_size = 64;
  c.backbone.base_width = 2;
  c.backbone.blocks = {1, 1, 1, 1};
  c.embed_dim = 16;
  c.fusion.num_heads = 2;
  c.amsff.num_heads = 2;
  c.psm.windows = {{1, 1, 2, 32}, {1, 1, 1, 16}};
  c.seed = seed;
  c.resolve();
  return c;
}

inline double max_abs_diff(const torch::Tensor& a, const torch::Tensor& b) {
  return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs().max().item<double>();
}

inline double psnr(const cv::Mat& a, const cv::Mat& b) { return cv::PSNR(a, b); }

}  // namespace glff::test
