#pragma once

#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "glff/config.hpp"
#include "glff/detector.hpp"
#include "glff/manifest.hpp"

namespace glff {

/// The H.264 encoder could not be located (GLFF_ENCODER unset or invalid and
/// no ffmpeg on PATH).
class EncoderNotFound : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Baseline-JPEG encode/decode round trip of an 8-bit RGB image.
cv::Mat jpeg_compress(const cv::Mat& rgb, int quality);

/// Separable Gaussian blur, kernel radius ceil(3 sigma), reflect-101
/// borders, rounded back to 8 bit. sigma == 0 returns an identical copy.
cv::Mat gaussian_blur(const cv::Mat& rgb, double sigma);

struct AdversarialConfig {
  int steps = 100;
  double step_size = 0.01;
  double l2_budget = 3.0;  // on [0,1]-scaled pixels
  double confidence = 0.0;
};

/// One allowed operation sequence of the mixed protocol. `steps` names are
/// common | multicompress | antiforensics. `degraded` marks combinations
/// whose face-blending step is produced externally and therefore skipped.
struct MixCombo {
  std::string name;
  std::vector<std::string> steps;
  bool degraded = false;
};

/// The five mixed-protocol combinations with the blending step dropped.
std::vector<MixCombo> default_mix_combos();

struct ProtocolConfig {
  int jpeg_quality_min = 20;
  int jpeg_quality_max = 90;
  double blur_sigma_min = 1.0;
  double blur_sigma_max = 4.0;
  int video_crf = 22;
  int group_size = 25;
  int frame_rate = 25;
  AdversarialConfig adversarial;
  std::vector<MixCombo> mix_combos = default_mix_combos();
  std::uint64_t seed = 0;

  void validate() const;
};

/// Image plus the operations that produced it.
struct Processed {
  cv::Mat image;
  std::vector<OpRecord> ops;
};

/// Uniformly one of {jpeg, blur, blur then jpeg}; quality ~ U{min..max},
/// sigma ~ U[min, max].
Processed common_postprocess(const cv::Mat& rgb, const ProtocolConfig& cfg, std::mt19937_64& rng);

/// Encoder binary: $GLFF_ENCODER (absolute path) or `ffmpeg` on PATH.
std::filesystem::path resolve_encoder();

/// Encodes consecutive groups of `group_size` images as H.264 sequences at
/// constant quality `video_crf` and extracts the frames again. Images in a
/// group are resized to the first image's size. Output count and order
/// equal the input's. The i-th result's ops hold its group/frame index.
std::vector<Processed> multi_image_compress(const std::vector<cv::Mat>& images,
                                            const ProtocolConfig& cfg);

struct AttackResult {
  torch::Tensor image;  // 3 x H x W in [0,1]
  double l2 = 0.0;      // ||image - input||_2
  double fake_probability_before = 0.0;
  double fake_probability_after = 0.0;
};

/// CW-style attack: Adam on an additive perturbation minimising
/// max(z_fake - z_real, -confidence), projected after every step onto the
/// L2 ball of radius l2_budget and the [0,1] box. steps == 0 is identity.
/// `image` is 3 x H x W; it is resized to the detector input inside the
/// differentiable path when H, W differ from it.
AttackResult adversarial_perturb(const torch::Tensor& image, Detector& detector,
                                 const AdversarialConfig& cfg);

/// Rounds a [0,1] image to 8 bit, rounding every pixel towards `reference`
/// so that ||q - reference|| <= ||image - reference|| whenever `reference`
/// is itself 8-bit.
cv::Mat quantize_toward(const torch::Tensor& image, const cv::Mat& reference);

/// Attack on an 8-bit image, returning the quantized result and its op.
Processed antiforensics(const cv::Mat& rgb, Detector& detector, const AdversarialConfig& cfg);

/// Mixed protocol. Each image draws a combination uniformly from
/// cfg.mix_combos with its own substream of cfg.seed; steps run in listed
/// order, multi-image compression batching all images at the same step.
/// `detector` is required when any chosen combination attacks.
std::vector<Processed> mixed(const std::vector<cv::Mat>& images, const ProtocolConfig& cfg,
                             Detector* detector);

/// Collapses an op list to combination steps (blur/jpeg -> common); the
/// leading `mix` marker is skipped.
std::vector<std::string> combo_steps(const std::vector<OpRecord>& ops);

/// Re-applies the deterministic ops (jpeg, blur; `mix` is a marker) to the
/// pristine image. nullopt when the list contains codec or attack steps.
std::optional<cv::Mat> replay_ops(const cv::Mat& pristine, const std::vector<OpRecord>& ops);

}  // namespace glff
