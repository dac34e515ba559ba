#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "glff/config.hpp"
#include "glff/model.hpp"

namespace glff {

enum class AugmentMode {
  independent,  // blur and JPEG each fire with augment_prob
  joint,        // one draw decides both
};

struct TrainConfig {
  int batch_size = 64;
  double learning_rate = 1e-4;
  double augment_prob = 0.1;
  AugmentMode augment_mode = AugmentMode::independent;
  double blur_sigma_min = 0.0;
  double blur_sigma_max = 3.0;
  int jpeg_quality_min = 30;
  int jpeg_quality_max = 100;
  int max_steps = 200;
  int checkpoint_every = 0;  // 0: only at the end
  std::uint64_t seed = 0;
  std::string model_preset = "resnet50";

  void validate() const;
  /// Applies recognised keys; unknown keys raise ConfigError.
  void apply(const KeyValues& kv);
};

/// What augment() decided for one sample.
struct AugmentRecord {
  bool blurred = false;
  double sigma = 0.0;
  bool jpeg = false;
  int quality = 100;
};

/// Training-time augmentation on the full-resolution 8-bit image, before the
/// final resize. Blur precedes JPEG when both fire.
cv::Mat augment(const cv::Mat& rgb, const TrainConfig& cfg, std::mt19937_64& rng,
                AugmentRecord* record = nullptr);
/// Only the random decisions of augment(), without touching pixels.
AugmentRecord draw_augmentation(const TrainConfig& cfg, std::mt19937_64& rng);

/// Generator for (seed, sample id, epoch).
std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t sample_id, std::uint64_t epoch);

/// Two-class cross-entropy with fake = class 1 (mean over the batch).
torch::Tensor classification_loss(const torch::Tensor& logits, const torch::Tensor& labels);

struct StepResult {
  double loss = 0.0;
  torch::Tensor logits;
};

/// Forward, loss, backward, optimizer update. Throws NumericError on a
/// non-finite loss.
StepResult train_step(GlffModel& model, torch::optim::Optimizer& optimizer,
                      const torch::Tensor& images, const torch::Tensor& labels);

struct LabeledImage {
  cv::Mat rgb;
  int label = 0;
  std::string path;
};

struct Dataset {
  std::vector<LabeledImage> items;
  int unreadable = 0;
};

/// Reads every image of both directories; unreadable files are counted and
/// skipped. Throws ConfigError if a class ends up empty.
Dataset load_dataset(const std::filesystem::path& real_dir, const std::filesystem::path& fake_dir);

/// Eval-mode batch: resize only, never augmented.
torch::Tensor eval_batch(const Dataset& data, const std::vector<std::size_t>& indices, int size);

struct TrainOptions {
  std::filesystem::path out;       // checkpoint path
  std::filesystem::path log;       // CSV `step,loss,lr,seconds`; default: out + ".log.csv"
  std::filesystem::path resume;    // optional checkpoint to continue from
  ModelConfig model;               // ignored when resuming
  std::function<void(int, double)> on_step;  // optional progress hook
};

struct TrainSummary {
  int first_step = 0;
  int last_step = 0;
  std::vector<double> losses;  // losses of the steps run in this call
  int unreadable = 0;
};

/// Trains for steps (resume step + 1) .. max_steps. Data order and
/// augmentation depend only on (seed, epoch, sample), so a resumed run
/// reproduces an uninterrupted one.
TrainSummary train(const Dataset& data, const TrainConfig& cfg, const TrainOptions& opts);

}  // namespace glff
