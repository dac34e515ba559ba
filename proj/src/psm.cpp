#include "glff/psm.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>

namespace glff {

namespace {

std::atomic<std::int64_t> g_shortfalls{0};

}  // namespace

ActivationMap activation_map(const torch::Tensor& fused) {
  if (fused.dim() != 3) throw ConfigError("activation_map expects a C x H x W fused map");
  auto summed = fused.detach().to(torch::kFloat64).sum(0).contiguous();
  ActivationMap map;
  map.height = static_cast<int>(summed.size(0));
  map.width = static_cast<int>(summed.size(1));
  const double* p = summed.data_ptr<double>();
  map.values.assign(p, p + summed.numel());
  return map;
}

std::vector<PatchProposal> score_windows(const ActivationMap& map, const WindowSpec& window,
                                         int scale_tag) {
  if (window.height < 1 || window.width < 1 || window.height > map.height ||
      window.width > map.width)
    throw ConfigError("window " + std::to_string(window.height) + "x" +
                      std::to_string(window.width) + " larger than activation map " +
                      std::to_string(map.height) + "x" + std::to_string(map.width));
  std::vector<PatchProposal> out;
  const double area = static_cast<double>(window.height) * window.width;
  for (int r = 0; r + window.height <= map.height; ++r) {
    for (int c = 0; c + window.width <= map.width; ++c) {
      double sum = 0.0;
      for (int y = r; y < r + window.height; ++y)
        for (int x = c; x < c + window.width; ++x) sum += map.at(y, x);
      PatchProposal p;
      p.rect_feature = {r, c, window.height, window.width};
      p.score = sum / area;
      p.scale_tag = scale_tag;
      out.push_back(p);
    }
  }
  return out;
}

double iou(const FeatureRect& a, const FeatureRect& b) {
  const int top = std::max(a.row, b.row);
  const int left = std::max(a.col, b.col);
  const int bottom = std::min(a.row + a.height, b.row + b.height);
  const int right = std::min(a.col + a.width, b.col + b.width);
  const int inter = std::max(0, bottom - top) * std::max(0, right - left);
  const int uni = a.height * a.width + b.height * b.width - inter;
  return uni > 0 ? static_cast<double>(inter) / uni : 0.0;
}

NmsResult nms_select(std::vector<PatchProposal> proposals, int keep, double iou_threshold) {
  if (keep < 1) throw ConfigError("nms keep count must be at least 1");
  std::stable_sort(proposals.begin(), proposals.end(),
                   [](const PatchProposal& a, const PatchProposal& b) {
                     if (a.score != b.score) return a.score > b.score;
                     if (a.rect_feature.row != b.rect_feature.row)
                       return a.rect_feature.row < b.rect_feature.row;
                     return a.rect_feature.col < b.rect_feature.col;
                   });
  NmsResult result;
  for (const auto& p : proposals) {
    if (static_cast<int>(result.kept.size()) == keep) break;
    const bool suppressed = std::any_of(result.kept.begin(), result.kept.end(), [&](const auto& k) {
      return iou(k.rect_feature, p.rect_feature) > iou_threshold;
    });
    if (!suppressed) result.kept.push_back(p);
  }
  result.shortfall = static_cast<int>(result.kept.size()) < keep;
  return result;
}

PatchProposal map_to_image(PatchProposal proposal, int crop_size, int input_size, int map_height,
                           int map_width) {
  if (crop_size > input_size)
    throw ConfigError("crop_size " + std::to_string(crop_size) + " exceeds input size " +
                      std::to_string(input_size));
  if (crop_size < 1) throw ConfigError("crop_size must be positive");
  const auto& r = proposal.rect_feature;
  const double stride_y = static_cast<double>(input_size) / map_height;
  const double stride_x = static_cast<double>(input_size) / map_width;
  const double center_y = (r.row + r.height / 2.0) * stride_y;
  const double center_x = (r.col + r.width / 2.0) * stride_x;
  auto place = [&](double center) {
    const auto start = static_cast<int>(std::llround(center - crop_size / 2.0));
    return std::clamp(start, 0, input_size - crop_size);
  };
  proposal.rect_image = {place(center_y), place(center_x), crop_size};
  return proposal;
}

std::vector<PatchProposal> select_proposals(const ActivationMap& map, const PSMConfig& cfg) {
  cfg.validate(map.height, map.width);
  std::vector<PatchProposal> out;
  for (std::size_t s = 0; s < cfg.windows.size(); ++s) {
    const auto& w = cfg.windows[s];
    auto nms = nms_select(score_windows(map, w, static_cast<int>(s)), w.count, cfg.nms_iou);
    if (nms.shortfall) {
      if (g_shortfalls.fetch_add(1) == 0)
        std::cerr << "[glff] warning: NMS kept " << nms.kept.size() << " of " << w.count
                  << " windows of size " << w.height << "x" << w.width
                  << "; padding with the top window (reported once)\n";
      const auto top = nms.kept.front();
      while (static_cast<int>(nms.kept.size()) < w.count) nms.kept.push_back(top);
    }
    for (auto& p : nms.kept)
      out.push_back(map_to_image(p, w.crop_size, cfg.input_size, map.height, map.width));
  }
  return out;
}

std::vector<PatchProposal> random_proposals(int map_height, int map_width, const PSMConfig& cfg,
                                            std::mt19937_64& rng) {
  cfg.validate(map_height, map_width);
  std::vector<PatchProposal> out;
  for (std::size_t s = 0; s < cfg.windows.size(); ++s) {
    const auto& w = cfg.windows[s];
    std::uniform_int_distribution<int> row(0, map_height - w.height);
    std::uniform_int_distribution<int> col(0, map_width - w.width);
    for (int i = 0; i < w.count; ++i) {
      PatchProposal p;
      p.rect_feature.row = row(rng);
      p.rect_feature.col = col(rng);
      p.rect_feature.height = w.height;
      p.rect_feature.width = w.width;
      p.scale_tag = static_cast<int>(s);
      out.push_back(map_to_image(p, w.crop_size, cfg.input_size, map_height, map_width));
    }
  }
  return out;
}

torch::Tensor crop_patches(const torch::Tensor& image, const std::vector<PatchProposal>& proposals,
                           int out_size) {
  if (proposals.empty()) throw ConfigError("crop_patches needs at least one proposal");
  if (image.dim() != 3) throw PreprocessError("crop_patches expects a 3 x H x W image");
  std::vector<torch::Tensor> patches;
  patches.reserve(proposals.size());
  for (const auto& p : proposals) {
    const auto& r = p.rect_image;
    if (r.top < 0 || r.left < 0 || r.top + r.size > image.size(1) ||
        r.left + r.size > image.size(2))
      throw ConfigError("proposal crop lies outside the image");
    auto crop = image.narrow(1, r.top, r.size).narrow(2, r.left, r.size).unsqueeze(0);
    if (r.size != out_size)
      crop = torch::nn::functional::interpolate(
          crop, torch::nn::functional::InterpolateFuncOptions()
                    .size(std::vector<int64_t>{out_size, out_size})
                    .mode(torch::kBilinear)
                    .align_corners(false));
    patches.push_back(crop);
  }
  return torch::cat(patches, 0);
}

std::int64_t psm_shortfall_count() { return g_shortfalls.load(); }

}  // namespace glff
