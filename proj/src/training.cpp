#include "glff/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "glff/checkpoint.hpp"
#include "glff/df3.hpp"
#include "glff/image.hpp"
#include "glff/rng.hpp"

namespace glff {

namespace {

constexpr std::uint64_t kPermutationKey = 0x7065726dULL;

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  std::istringstream is(text);
  T v{};
  if (!(is >> v)) throw ConfigError("bad value '" + text + "' for " + key);
  std::string rest;
  if (is >> rest) throw ConfigError("bad value '" + text + "' for " + key);
  return v;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = substream(seed, {epoch, kPermutationKey});
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle.
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  return order;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(augment_prob >= 0.0 && augment_prob <= 1.0))
    throw ConfigError("augment_prob must be in [0,1]");
  if (!(blur_sigma_min >= 0.0) || blur_sigma_min > blur_sigma_max)
    throw ConfigError("blur sigma range must be non-negative and ordered");
  if (jpeg_quality_min < 1 || jpeg_quality_max > 100 || jpeg_quality_min > jpeg_quality_max)
    throw ConfigError("JPEG quality range must lie in [1,100]");
  if (max_steps < 1) throw ConfigError("max_steps must be positive");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
}

void TrainConfig::apply(const KeyValues& kv) {
  for (const auto& [key, value] : kv) {
    if (key == "batch_size") batch_size = parse_value<int>(key, value);
    else if (key == "learning_rate") learning_rate = parse_value<double>(key, value);
    else if (key == "augment_prob") augment_prob = parse_value<double>(key, value);
    else if (key == "augment_mode") {
      if (value == "independent") augment_mode = AugmentMode::independent;
      else if (value == "joint") augment_mode = AugmentMode::joint;
      else throw ConfigError("augment_mode must be independent or joint");
    } else if (key == "blur_sigma_min") blur_sigma_min = parse_value<double>(key, value);
    else if (key == "blur_sigma_max") blur_sigma_max = parse_value<double>(key, value);
    else if (key == "jpeg_quality_min") jpeg_quality_min = parse_value<int>(key, value);
    else if (key == "jpeg_quality_max") jpeg_quality_max = parse_value<int>(key, value);
    else if (key == "max_steps") max_steps = parse_value<int>(key, value);
    else if (key == "checkpoint_every") checkpoint_every = parse_value<int>(key, value);
    else if (key == "seed") seed = parse_value<std::uint64_t>(key, value);
    else if (key == "model") model_preset = value;
    else throw ConfigError("unknown config key '" + key + "'");
  }
  validate();
}

AugmentRecord draw_augmentation(const TrainConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> sigma(cfg.blur_sigma_min, cfg.blur_sigma_max);
  std::uniform_int_distribution<int> quality(cfg.jpeg_quality_min, cfg.jpeg_quality_max);
  AugmentRecord r;
  if (cfg.augment_mode == AugmentMode::independent) {
    r.blurred = unit(rng) < cfg.augment_prob;
    r.jpeg = unit(rng) < cfg.augment_prob;
  } else {
    r.blurred = r.jpeg = unit(rng) < cfg.augment_prob;
  }
  // Parameters are always drawn so the stream position does not depend on
  // the decisions above.
  r.sigma = sigma(rng);
  r.quality = quality(rng);
  return r;
}

cv::Mat augment(const cv::Mat& rgb, const TrainConfig& cfg, std::mt19937_64& rng,
                AugmentRecord* record) {
  const auto r = draw_augmentation(cfg, rng);
  if (record) *record = r;
  cv::Mat out = rgb;
  if (r.blurred) out = gaussian_blur(out, r.sigma);
  if (r.jpeg) out = jpeg_compress(out, r.quality);
  return out;
}

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t sample_id, std::uint64_t epoch) {
  return substream(seed, {sample_id, epoch});
}

torch::Tensor classification_loss(const torch::Tensor& logits, const torch::Tensor& labels) {
  return torch::nn::functional::cross_entropy(logits, labels.to(torch::kLong));
}

StepResult train_step(GlffModel& model, torch::optim::Optimizer& optimizer,
                      const torch::Tensor& images, const torch::Tensor& labels) {
  if (images.size(0) == 0) throw ConfigError("empty training batch");
  if (((labels != 0) & (labels != 1)).any().item<bool>())
    throw ConfigError("labels must be 0 (real) or 1 (fake)");
  model->train();
  optimizer.zero_grad();
  auto logits = model->forward(images);
  auto loss = classification_loss(logits, labels);
  const double value = loss.item<double>();
  if (!std::isfinite(value)) {
    std::ostringstream os;
    os << "non-finite training loss " << value << "; logits range ["
       << logits.min().item<double>() << ", " << logits.max().item<double>() << "]";
    throw NumericError(os.str());
  }
  loss.backward();
  optimizer.step();
  return {value, logits.detach()};
}

Dataset load_dataset(const std::filesystem::path& real_dir, const std::filesystem::path& fake_dir) {
  Dataset data;
  int counts[2] = {0, 0};
  for (int label : {0, 1}) {
    const auto& dir = label == 0 ? real_dir : fake_dir;
    for (const auto& p : list_images(dir)) {
      try {
        data.items.push_back({load_rgb(p), label, p.string()});
        ++counts[label];
      } catch (const IoError& e) {
        ++data.unreadable;
        std::cerr << "[glff] skipping unreadable image: " << e.what() << "\n";
      }
    }
  }
  if (counts[0] == 0) throw ConfigError("no readable real images in " + real_dir.string());
  if (counts[1] == 0) throw ConfigError("no readable fake images in " + fake_dir.string());
  return data;
}

torch::Tensor eval_batch(const Dataset& data, const std::vector<std::size_t>& indices, int size) {
  std::vector<torch::Tensor> images;
  for (auto i : indices) images.push_back(preprocess(data.items.at(i).rgb, size).pixels);
  return torch::stack(images);
}

TrainSummary train(const Dataset& data, const TrainConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  if (data.items.empty()) throw ConfigError("empty training set");

  GlffModel model{nullptr};
  int start_step = 1;
  if (!opts.resume.empty()) {
    auto ckpt = load_checkpoint(opts.resume);
    model = ckpt.model;
    start_step = ckpt.meta.value("step", 0) + 1;
  } else {
    auto mcfg = opts.model;
    mcfg.seed = cfg.seed;
    model = GlffModel(mcfg);
  }
  torch::optim::Adam optimizer(model->parameters(), torch::optim::AdamOptions(cfg.learning_rate));
  if (!opts.resume.empty()) load_optimizer_state(opts.resume, optimizer);

  const auto log_path = opts.log.empty() ? std::filesystem::path(opts.out.string() + ".log.csv") : opts.log;
  if (log_path.has_parent_path()) std::filesystem::create_directories(log_path.parent_path());
  const bool append = !opts.resume.empty() && std::filesystem::exists(log_path);
  std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot write training log " + log_path.string());
  if (!append) log << "step,loss,lr,seconds\n";
  log << std::setprecision(9);

  const int size = model->config().backbone.input_size;
  const std::size_t n = data.items.size();
  const std::size_t batch = std::min<std::size_t>(cfg.batch_size, n);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;

  auto save = [&](int step) {
    nlohmann::json meta{{"step", step},
                        {"seed", cfg.seed},
                        {"learning_rate", cfg.learning_rate},
                        {"batch_size", cfg.batch_size}};
    save_checkpoint(opts.out, model, &optimizer, meta);
  };

  TrainSummary summary;
  summary.first_step = start_step;
  summary.last_step = start_step - 1;
  summary.unreadable = data.unreadable;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::size_t> order;
  std::uint64_t order_epoch = ~0ULL;
  for (int step = start_step; step <= cfg.max_steps; ++step) {
    const auto epoch = static_cast<std::uint64_t>(step - 1) / steps_per_epoch;
    const auto pos = static_cast<std::size_t>(step - 1) % steps_per_epoch;
    if (epoch != order_epoch) {
      order = epoch_order(n, cfg.seed, epoch);
      order_epoch = epoch;
    }
    std::vector<torch::Tensor> images;
    std::vector<int64_t> labels;
    for (std::size_t k = pos * batch; k < std::min(n, (pos + 1) * batch); ++k) {
      const auto id = order[k];
      auto rng = sample_rng(cfg.seed, id, epoch);
      const auto& item = data.items[id];
      images.push_back(preprocess(augment(item.rgb, cfg, rng), size).pixels);
      labels.push_back(item.label);
    }
    auto result = train_step(model, optimizer, torch::stack(images), torch::tensor(labels));
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log << step << ',' << result.loss << ',' << cfg.learning_rate << ',' << seconds << '\n';
    log.flush();
    summary.losses.push_back(result.loss);
    summary.last_step = step;
    if (opts.on_step) opts.on_step(step, result.loss);
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.max_steps)
      save(step);
  }
  save(summary.last_step);
  return summary;
}

}  // namespace glff
