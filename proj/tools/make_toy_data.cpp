// Writes the procedural toy set used by the tests:
//   <out>/toy/real/*.png   smooth blob scenes
//   <out>/toy/fake/*.png   the same kind of scene rendered at half resolution,
//                          nearest-upsampled and overlaid with a 2-pixel
//                          checkerboard (a transposed-convolution artifact)
//   <out>/textured.png     a 256x256 multi-scale texture for codec/blur tests
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace fs = std::filesystem;

namespace {

constexpr int kSize = 128;
constexpr int kPerClass = 16;

cv::Mat blob_scene(int size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  cv::Mat img(size, size, CV_32FC3);
  const cv::Vec3f c0(u(rng), u(rng), u(rng));
  const cv::Vec3f c1(u(rng), u(rng), u(rng));
  const double angle = u(rng) * 2.0 * CV_PI;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double t = 0.5 + 0.5 * std::sin(angle) * (x - size / 2.0) / size +
                       0.5 * std::cos(angle) * (y - size / 2.0) / size;
      img.at<cv::Vec3f>(y, x) = c0 * static_cast<float>(1.0 - t) + c1 * static_cast<float>(t);
    }
  const int blobs = 4 + static_cast<int>(u(rng) * 5);
  for (int b = 0; b < blobs; ++b) {
    const double cx = u(rng) * size;
    const double cy = u(rng) * size;
    const double r = (0.08 + 0.25 * u(rng)) * size;
    const cv::Vec3f color(u(rng), u(rng), u(rng));
    const float alpha = static_cast<float>(0.4 + 0.5 * u(rng));
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double d2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (r * r);
        const float w = alpha * static_cast<float>(std::exp(-d2));
        auto& px = img.at<cv::Vec3f>(y, x);
        px = px * (1.0f - w) + color * w;
      }
  }
  cv::Mat noise(size, size, CV_32FC3);
  cv::randn(noise, 0.0, 0.01);
  img += noise;
  cv::Mat out;
  img.convertTo(out, CV_8UC3, 255.0);
  return out;
}

cv::Mat fake_scene(std::mt19937_64& rng) {
  cv::Mat half = blob_scene(kSize / 2, rng);
  cv::Mat up;
  cv::resize(half, up, cv::Size(kSize, kSize), 0, 0, cv::INTER_NEAREST);
  cv::Mat out(kSize, kSize, CV_8UC3);
  for (int y = 0; y < kSize; ++y)
    for (int x = 0; x < kSize; ++x) {
      const int delta = ((x + y) & 1) ? 10 : -10;
      const auto& s = up.at<cv::Vec3b>(y, x);
      out.at<cv::Vec3b>(y, x) = cv::Vec3b(cv::saturate_cast<uchar>(s[0] + delta),
                                          cv::saturate_cast<uchar>(s[1] + delta),
                                          cv::saturate_cast<uchar>(s[2] + delta));
    }
  return out;
}

cv::Mat textured(std::mt19937_64& rng) {
  constexpr int size = 256;
  cv::Mat acc(size, size, CV_32FC3, cv::Scalar::all(0.5));
  double amp = 0.25;
  for (int cell : {64, 32, 16, 8, 4, 2}) {
    cv::Mat coarse(size / cell, size / cell, CV_32FC3);
    cv::randu(coarse, -amp, amp);
    cv::Mat up;
    cv::resize(coarse, up, cv::Size(size, size), 0, 0, cv::INTER_CUBIC);
    acc += up;
    amp *= 0.7;
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 12; ++i) {
    const cv::Point a(static_cast<int>(u(rng) * size), static_cast<int>(u(rng) * size));
    const cv::Point b(static_cast<int>(u(rng) * size), static_cast<int>(u(rng) * size));
    cv::line(acc, a, b, cv::Scalar(u(rng), u(rng), u(rng)), 1 + static_cast<int>(u(rng) * 3),
             cv::LINE_AA);
  }
  cv::Mat out;
  acc.convertTo(out, CV_8UC3, 255.0);
  return out;
}

void write(const fs::path& path, const cv::Mat& rgb) {
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) {
    std::cerr << "cannot write " << path << "\n";
    std::exit(1);
  }
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_toy_data <out-dir>\n";
    return 2;
  }
  const fs::path root = argv[1];
  fs::create_directories(root / "toy" / "real");
  fs::create_directories(root / "toy" / "fake");
  cv::setRNGSeed(1234);
  std::mt19937_64 rng(20240601);
  char name[32];
  for (int i = 0; i < kPerClass; ++i) {
    std::snprintf(name, sizeof name, "real_%02d.png", i);
    write(root / "toy" / "real" / name, blob_scene(kSize, rng));
    std::snprintf(name, sizeof name, "fake_%02d.png", i);
    write(root / "toy" / "fake" / name, fake_scene(rng));
  }
  write(root / "textured.png", textured(rng));
  return 0;
}
