#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <torch/torch.h>

#include "glff/config.hpp"

namespace glff {

/// Channel-summed fused map, row-major.
struct ActivationMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  [[nodiscard]] double at(int row, int col) const {
    return values[static_cast<std::size_t>(row) * width + col];
  }
};

struct FeatureRect {
  int row = 0;
  int col = 0;
  int height = 0;
  int width = 0;
  bool operator==(const FeatureRect&) const = default;
};

/// Square pixel crop [top, top+size) x [left, left+size).
struct ImageRect {
  int top = 0;
  int left = 0;
  int size = 0;
  bool operator==(const ImageRect&) const = default;
};

struct PatchProposal {
  FeatureRect rect_feature;
  double score = 0.0;
  ImageRect rect_image;
  int scale_tag = 0;  // index into PSMConfig::windows
};

/// A(x, y) = sum over channels of the fused map. fused: C x H x W (one image).
ActivationMap activation_map(const torch::Tensor& fused);

/// Every stride-1 window position, row-major, scored by the window mean.
std::vector<PatchProposal> score_windows(const ActivationMap& map, const WindowSpec& window,
                                         int scale_tag = 0);

/// Intersection over union of two feature-cell rectangles.
double iou(const FeatureRect& a, const FeatureRect& b);

struct NmsResult {
  std::vector<PatchProposal> kept;
  bool shortfall = false;  // fewer than `keep` survived
};

/// Greedy NMS: descending score (ties by row-major position), dropping any
/// proposal whose IoU with an already kept one exceeds `iou_threshold`.
NmsResult nms_select(std::vector<PatchProposal> proposals, int keep, double iou_threshold);

/// Fills rect_image: the window centre scaled by input_size / map size, with a
/// crop of `crop_size` centred there and shifted (never shrunk) into the image.
PatchProposal map_to_image(PatchProposal proposal, int crop_size, int input_size, int map_height,
                           int map_width);

/// Full selection: per window size score -> NMS -> map to image. A scale with
/// an NMS shortfall is padded by repeating its top proposal. Output order is
/// config order of window sizes, descending score within a size.
std::vector<PatchProposal> select_proposals(const ActivationMap& map, const PSMConfig& cfg);

/// Uniformly random window positions per size (no scoring, no NMS).
std::vector<PatchProposal> random_proposals(int map_height, int map_width, const PSMConfig& cfg,
                                            std::mt19937_64& rng);

/// Crops every rect_image out of `image` (3 x S x S) and resizes bilinearly to
/// out_size. Returns n x 3 x out_size x out_size; differentiable w.r.t. pixels.
torch::Tensor crop_patches(const torch::Tensor& image, const std::vector<PatchProposal>& proposals,
                           int out_size);

/// Number of scales that needed padding since process start.
std::int64_t psm_shortfall_count();

}  // namespace glff
