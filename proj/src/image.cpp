#include "glff/image.hpp"

#include <algorithm>
#include <cctype>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "glff/config.hpp"

namespace glff {

cv::Mat load_rgb(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot read image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return rgb;
}

void save_rgb(const std::filesystem::path& path, const cv::Mat& rgb) {
  CV_Assert(rgb.type() == CV_8UC3);
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) throw IoError("cannot write image " + path.string());
}

torch::Tensor mat_to_tensor(const cv::Mat& rgb) {
  cv::Mat f;
  if (rgb.depth() == CV_8U)
    rgb.convertTo(f, CV_32FC3, 1.0 / 255.0);
  else
    rgb.convertTo(f, CV_32FC3);
  if (!f.isContinuous()) f = f.clone();
  auto hwc = torch::from_blob(f.data, {f.rows, f.cols, 3}, torch::kFloat32);
  return hwc.permute({2, 0, 1}).contiguous();
}

cv::Mat tensor_to_mat(const torch::Tensor& chw) {
  TORCH_CHECK(chw.dim() == 3 && chw.size(0) == 3, "expected a 3 x H x W tensor");
  auto hwc = chw.detach()
                 .to(torch::kFloat64)
                 .clamp(0.0, 1.0)
                 .mul(255.0)
                 .round()
                 .to(torch::kUInt8)
                 .permute({1, 2, 0})
                 .contiguous();
  cv::Mat out(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3);
  std::memcpy(out.data, hwc.data_ptr<std::uint8_t>(), hwc.numel());
  return out;
}

ImageTensor preprocess(const cv::Mat& rgb, int size, std::string source_path) {
  if (rgb.empty() || rgb.channels() != 3)
    throw PreprocessError("expected a 3-channel image: " + source_path);
  cv::Mat f;
  rgb.convertTo(f, CV_32FC3, rgb.depth() == CV_8U ? 1.0 / 255.0 : 1.0);
  if (f.rows != size || f.cols != size) {
    cv::Mat resized;
    cv::resize(f, resized, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);
    f = resized;
  }
  ImageTensor t;
  t.pixels = mat_to_tensor(f);
  t.source_path = std::move(source_path);
  t.original_height = rgb.rows;
  t.original_width = rgb.cols;
  check_preprocessed(t.pixels, size);
  return t;
}

ImageTensor load_image(const std::filesystem::path& path, int size) {
  return preprocess(load_rgb(path), size, path.string());
}

void check_preprocessed(const torch::Tensor& pixels, int size) {
  const auto dim = pixels.dim();
  const bool shape_ok = (dim == 3 || dim == 4) && pixels.size(dim - 3) == 3 &&
                        pixels.size(dim - 2) == size && pixels.size(dim - 1) == size;
  if (!shape_ok) {
    std::string shape;
    for (auto s : pixels.sizes()) shape += std::to_string(s) + " ";
    throw PreprocessError("expected 3x" + std::to_string(size) + "x" + std::to_string(size) +
                          " input, got [ " + shape + "]");
  }
  if (!torch::isfinite(pixels).all().item<bool>())
    throw PreprocessError("input contains non-finite values");
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp")
      out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace glff
