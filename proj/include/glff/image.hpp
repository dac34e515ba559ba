#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

namespace glff {

/// Preprocessed network input: `pixels` is 3 x S x S float32 RGB in [0,1].
struct ImageTensor {
  torch::Tensor pixels;
  std::string source_path;
  int original_height = 0;
  int original_width = 0;
};

/// Reads an image as 8-bit RGB.
cv::Mat load_rgb(const std::filesystem::path& path);
/// Writes an 8-bit RGB image; the format follows the extension.
void save_rgb(const std::filesystem::path& path, const cv::Mat& rgb);

/// 8-bit (or float [0,1]) RGB mat -> 3 x H x W float32 tensor in [0,1].
torch::Tensor mat_to_tensor(const cv::Mat& rgb);
/// 3 x H x W tensor in [0,1] -> 8-bit RGB, rounding to nearest.
cv::Mat tensor_to_mat(const torch::Tensor& chw);

/// Bilinear resize to size x size (aspect ratio not preserved), scaled to [0,1].
ImageTensor preprocess(const cv::Mat& rgb, int size, std::string source_path = {});
ImageTensor load_image(const std::filesystem::path& path, int size);

/// Throws PreprocessError unless `pixels` is a finite 3 x size x size tensor
/// (or a batch of them).
void check_preprocessed(const torch::Tensor& pixels, int size);

/// Image files (png, jpg, jpeg, bmp) directly inside `dir`, sorted by path.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace glff
