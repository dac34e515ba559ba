#include "glff/df3.hpp"

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <iostream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "glff/image.hpp"
#include "glff/rng.hpp"

extern char** environ;

namespace glff {

namespace {

/// Scratch directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("glff-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

void run_process(const std::vector<std::string>& args) {
  std::vector<char*> argv;
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  pid_t pid = 0;
  if (posix_spawn(&pid, argv[0], nullptr, nullptr, argv.data(), environ) != 0)
    throw IoError("cannot start " + args.front());
  int status = 0;
  if (waitpid(pid, &status, 0) < 0 || !WIFEXITED(status) || WEXITSTATUS(status) != 0)
    throw IoError(args.front() + " failed (exit status " + std::to_string(WEXITSTATUS(status)) + ")");
}

bool is_executable(const std::filesystem::path& p) {
  return std::filesystem::is_regular_file(p) && ::access(p.c_str(), X_OK) == 0;
}

OpRecord jpeg_op(int quality) {
  OpRecord op{"jpeg"};
  op.params["quality"] = quality;
  return op;
}

OpRecord blur_op(double sigma) {
  OpRecord op{"blur"};
  op.params["sigma"] = sigma;
  return op;
}

}  // namespace

cv::Mat jpeg_compress(const cv::Mat& rgb, int quality) {
  if (quality < 1 || quality > 100)
    throw ConfigError("JPEG quality must be in [1,100], got " + std::to_string(quality));
  CV_Assert(rgb.type() == CV_8UC3);
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  std::vector<uchar> buf;
  if (!cv::imencode(".jpg", bgr, buf, {cv::IMWRITE_JPEG_QUALITY, quality}))
    throw IoError("JPEG encoding failed");
  cv::Mat decoded = cv::imdecode(buf, cv::IMREAD_COLOR);
  if (decoded.empty()) throw IoError("JPEG decoding failed");
  cv::Mat out;
  cv::cvtColor(decoded, out, cv::COLOR_BGR2RGB);
  return out;
}

cv::Mat gaussian_blur(const cv::Mat& rgb, double sigma) {
  if (!(sigma >= 0.0)) throw ConfigError("blur sigma must be non-negative");
  if (sigma == 0.0) return rgb.clone();
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  const cv::Mat kernel = cv::getGaussianKernel(2 * radius + 1, sigma, CV_64F);
  cv::Mat f;
  rgb.convertTo(f, CV_32F);
  cv::Mat blurred;
  cv::sepFilter2D(f, blurred, CV_32F, kernel, kernel, cv::Point(-1, -1), 0.0,
                  cv::BORDER_REFLECT_101);
  cv::Mat out;
  blurred.convertTo(out, rgb.type());
  return out;
}

std::vector<MixCombo> default_mix_combos() {
  return {
      {"blend+common", {"common"}, true},
      {"blend+multicompress", {"multicompress"}, true},
      {"multicompress+antiforensics", {"multicompress", "antiforensics"}, false},
      {"blend+common+antiforensics", {"common", "antiforensics"}, true},
      {"blend+multicompress+antiforensics", {"multicompress", "antiforensics"}, true},
  };
}

void ProtocolConfig::validate() const {
  if (jpeg_quality_min < 1 || jpeg_quality_max > 100 || jpeg_quality_min > jpeg_quality_max)
    throw ConfigError("JPEG quality range must lie in [1,100]");
  if (!(blur_sigma_min >= 0.0) || blur_sigma_min > blur_sigma_max)
    throw ConfigError("blur sigma range must be non-negative and ordered");
  if (group_size < 1) throw ConfigError("group_size must be at least 1");
  if (video_crf < 0 || video_crf > 51) throw ConfigError("video crf must be in [0,51]");
  if (frame_rate < 1) throw ConfigError("frame_rate must be positive");
  if (adversarial.steps < 0 || !(adversarial.step_size > 0.0) || !(adversarial.l2_budget >= 0.0))
    throw ConfigError("invalid adversarial settings");
  if (mix_combos.empty()) throw ConfigError("mixed protocol needs at least one combination");
  for (const auto& c : mix_combos) {
    if (c.steps.empty()) throw ConfigError("mix combination '" + c.name + "' has no steps");
    for (const auto& s : c.steps)
      if (s != "common" && s != "multicompress" && s != "antiforensics")
        throw ConfigError("unknown mix step '" + s + "'");
  }
}

Processed common_postprocess(const cv::Mat& rgb, const ProtocolConfig& cfg, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> branch(0, 2);
  std::uniform_int_distribution<int> quality(cfg.jpeg_quality_min, cfg.jpeg_quality_max);
  std::uniform_real_distribution<double> sigma(cfg.blur_sigma_min, cfg.blur_sigma_max);
  Processed out;
  switch (branch(rng)) {
    case 0: {
      const int q = quality(rng);
      out.image = jpeg_compress(rgb, q);
      out.ops.push_back(jpeg_op(q));
      break;
    }
    case 1: {
      const double s = sigma(rng);
      out.image = gaussian_blur(rgb, s);
      out.ops.push_back(blur_op(s));
      break;
    }
    default: {
      const double s = sigma(rng);
      const int q = quality(rng);
      out.image = jpeg_compress(gaussian_blur(rgb, s), q);
      out.ops.push_back(blur_op(s));
      out.ops.push_back(jpeg_op(q));
      break;
    }
  }
  return out;
}

std::filesystem::path resolve_encoder() {
  if (const char* env = std::getenv("GLFF_ENCODER"); env && *env) {
    std::filesystem::path p(env);
    if (!p.is_absolute() || !is_executable(p))
      throw EncoderNotFound("GLFF_ENCODER='" + std::string(env) +
                            "' is not an absolute path to an executable ffmpeg-compatible encoder");
    return p;
  }
  if (const char* path = std::getenv("PATH")) {
    std::string dirs(path);
    std::size_t start = 0;
    while (start <= dirs.size()) {
      const auto end = std::min(dirs.find(':', start), dirs.size());
      auto candidate = std::filesystem::path(dirs.substr(start, end - start)) / "ffmpeg";
      if (end > start && is_executable(candidate)) return candidate;
      start = end + 1;
    }
  }
  throw EncoderNotFound(
      "no H.264 encoder found: set GLFF_ENCODER to the absolute path of an ffmpeg binary with "
      "libx264");
}

std::vector<Processed> multi_image_compress(const std::vector<cv::Mat>& images,
                                            const ProtocolConfig& cfg) {
  if (images.empty()) throw ConfigError("multi-image compression needs at least one image");
  if (cfg.group_size < 1) throw ConfigError("group_size must be at least 1");
  const auto encoder = resolve_encoder().string();
  std::vector<Processed> out;
  out.reserve(images.size());

  for (std::size_t start = 0, group = 0; start < images.size(); start += cfg.group_size, ++group) {
    const std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(cfg.group_size));
    const cv::Size frame = images[start].size();
    // yuv420p needs even dimensions; pad by edge replication and crop after.
    const int pad_bottom = frame.height % 2;
    const int pad_right = frame.width % 2;

    TempDir dir;
    for (std::size_t i = start; i < end; ++i) {
      cv::Mat img = images[i];
      if (img.size() != frame) {
        std::cerr << "[glff] multicompress: resizing frame " << i << " to " << frame.width << "x"
                  << frame.height << "\n";
        cv::resize(img, img, frame, 0, 0, cv::INTER_LINEAR);
      }
      if (pad_bottom || pad_right)
        cv::copyMakeBorder(img, img, 0, pad_bottom, 0, pad_right, cv::BORDER_REPLICATE);
      char name[32];
      std::snprintf(name, sizeof name, "in_%06zu.png", i - start);
      save_rgb(dir.path() / name, img);
    }
    const auto video = (dir.path() / "sequence.mp4").string();
    run_process({encoder, "-hide_banner", "-loglevel", "error", "-nostdin", "-y", "-framerate",
                 std::to_string(cfg.frame_rate), "-start_number", "0", "-i",
                 (dir.path() / "in_%06d.png").string(), "-c:v", "libx264", "-preset", "medium",
                 "-crf", std::to_string(cfg.video_crf), "-pix_fmt", "yuv420p", "-threads", "1",
                 video});
    run_process({encoder, "-hide_banner", "-loglevel", "error", "-nostdin", "-y", "-i", video,
                 "-fps_mode", "passthrough", (dir.path() / "out_%06d.png").string()});

    std::vector<std::filesystem::path> frames;
    for (const auto& e : std::filesystem::directory_iterator(dir.path()))
      if (e.path().filename().string().rfind("out_", 0) == 0) frames.push_back(e.path());
    std::sort(frames.begin(), frames.end());
    if (frames.size() != end - start)
      throw IoError("multicompress: expected " + std::to_string(end - start) +
                    " decoded frames, got " + std::to_string(frames.size()));

    for (std::size_t k = 0; k < frames.size(); ++k) {
      cv::Mat decoded = load_rgb(frames[k]);
      decoded = decoded(cv::Rect(0, 0, frame.width, frame.height)).clone();
      const auto& original = images[start + k];
      if (decoded.size() != original.size())
        cv::resize(decoded, decoded, original.size(), 0, 0, cv::INTER_LINEAR);
      OpRecord op{"multicompress"};
      op.params["codec"] = "h264";
      op.params["crf"] = cfg.video_crf;
      op.params["fps"] = cfg.frame_rate;
      op.params["group_size"] = cfg.group_size;
      op.params["group"] = group;
      op.params["frame"] = k;
      out.push_back({decoded, {op}});
    }
  }
  return out;
}

AttackResult adversarial_perturb(const torch::Tensor& image, Detector& detector,
                                 const AdversarialConfig& cfg) {
  auto* target = dynamic_cast<DifferentiableDetector*>(&detector);
  if (!target || !detector.differentiable())
    throw ConfigError("adversarial perturbation needs a differentiable detector");
  if (image.dim() != 3 || image.size(0) != 3) throw PreprocessError("expected a 3 x H x W image");
  if (cfg.steps < 0 || !(cfg.l2_budget >= 0.0)) throw ConfigError("invalid adversarial settings");

  const int size = detector.input_size();
  auto to_input = [&](const torch::Tensor& x) {
    auto batch = x.unsqueeze(0);
    if (x.size(1) != size || x.size(2) != size)
      batch = torch::nn::functional::interpolate(
          batch, torch::nn::functional::InterpolateFuncOptions()
                     .size(std::vector<int64_t>{size, size})
                     .mode(torch::kBilinear)
                     .align_corners(false));
    return batch;
  };
  auto probability = [&](const torch::Tensor& x) {
    torch::NoGradGuard no_grad;
    return detector.fake_probability(to_input(x)[0]);
  };

  const auto original = image.detach().to(torch::kFloat32).contiguous();
  AttackResult result;
  result.fake_probability_before = probability(original);
  if (cfg.steps == 0) {
    result.image = original.clone();
    result.fake_probability_after = result.fake_probability_before;
    return result;
  }

  auto delta = torch::zeros_like(original).requires_grad_(true);
  torch::optim::Adam optimizer({delta}, torch::optim::AdamOptions(cfg.step_size));
  for (int step = 0; step < cfg.steps; ++step) {
    auto logits = target->logits(to_input(original + delta));
    auto margin = logits[0][kFakeClass] - logits[0][1 - kFakeClass];
    if (margin.item<double>() < -cfg.confidence) break;
    auto grad = torch::autograd::grad({margin}, {delta})[0];
    delta.mutable_grad() = grad;
    optimizer.step();
    torch::NoGradGuard no_grad;
    const double norm = delta.norm().item<double>();
    if (norm > cfg.l2_budget) delta.mul_(cfg.l2_budget / norm);
    delta.copy_((original + delta).clamp(0.0, 1.0) - original);
  }
  result.image = (original + delta.detach()).clamp(0.0, 1.0);
  result.l2 = (result.image.to(torch::kFloat64) - original.to(torch::kFloat64)).norm().item<double>();
  result.fake_probability_after = probability(result.image);
  return result;
}

cv::Mat quantize_toward(const torch::Tensor& image, const cv::Mat& reference) {
  CV_Assert(reference.type() == CV_8UC3);
  auto scaled = image.detach().to(torch::kFloat64).clamp(0.0, 1.0).mul(255.0);
  auto ref = mat_to_tensor(reference).to(torch::kFloat64).mul(255.0).round();
  auto q = torch::where(scaled > ref, scaled.floor(), scaled.ceil());
  return tensor_to_mat(q / 255.0);
}

Processed antiforensics(const cv::Mat& rgb, Detector& detector, const AdversarialConfig& cfg) {
  auto attack = adversarial_perturb(mat_to_tensor(rgb), detector, cfg);
  Processed out;
  out.image = quantize_toward(attack.image, rgb);
  OpRecord op{"adversarial"};
  op.params["steps"] = cfg.steps;
  op.params["step_size"] = cfg.step_size;
  op.params["l2_budget"] = cfg.l2_budget;
  op.params["l2"] = attack.l2;
  out.ops.push_back(op);
  return out;
}

std::vector<Processed> mixed(const std::vector<cv::Mat>& images, const ProtocolConfig& cfg,
                             Detector* detector) {
  cfg.validate();
  std::vector<Processed> state(images.size());
  std::vector<const MixCombo*> chosen(images.size());
  std::vector<std::mt19937_64> rngs;
  std::size_t longest = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    rngs.push_back(substream(cfg.seed, {i, 0x6d6978ULL}));
    std::uniform_int_distribution<std::size_t> pick(0, cfg.mix_combos.size() - 1);
    chosen[i] = &cfg.mix_combos[pick(rngs[i])];
    state[i].image = images[i].clone();
    OpRecord marker{"mix"};
    marker.params["combo"] = chosen[i]->name;
    marker.params["degraded"] = chosen[i]->degraded;
    state[i].ops.push_back(marker);
    longest = std::max(longest, chosen[i]->steps.size());
  }

  for (std::size_t s = 0; s < longest; ++s) {
    std::vector<std::size_t> batch;
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (s >= chosen[i]->steps.size()) continue;
      const auto& step = chosen[i]->steps[s];
      if (step == "multicompress") {
        batch.push_back(i);
      } else if (step == "common") {
        auto p = common_postprocess(state[i].image, cfg, rngs[i]);
        state[i].image = p.image;
        state[i].ops.insert(state[i].ops.end(), p.ops.begin(), p.ops.end());
      } else {
        if (!detector)
          throw ConfigError("mix combination '" + chosen[i]->name + "' needs a detector checkpoint");
        auto p = antiforensics(state[i].image, *detector, cfg.adversarial);
        state[i].image = p.image;
        state[i].ops.insert(state[i].ops.end(), p.ops.begin(), p.ops.end());
      }
    }
    if (!batch.empty()) {
      std::vector<cv::Mat> group;
      for (auto i : batch) group.push_back(state[i].image);
      auto compressed = multi_image_compress(group, cfg);
      for (std::size_t k = 0; k < batch.size(); ++k) {
        auto& st = state[batch[k]];
        st.image = compressed[k].image;
        st.ops.insert(st.ops.end(), compressed[k].ops.begin(), compressed[k].ops.end());
      }
    }
  }
  return state;
}

std::vector<std::string> combo_steps(const std::vector<OpRecord>& ops) {
  std::vector<std::string> steps;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const auto& name = ops[i].name;
    if (name == "mix") continue;
    // Blur followed by JPEG is a single common-post-processing step.
    if (name == "jpeg" && i > 0 && ops[i - 1].name == "blur") continue;
    if (name == "blur" || name == "jpeg")
      steps.push_back("common");
    else if (name == "adversarial")
      steps.push_back("antiforensics");
    else
      steps.push_back(name);
  }
  return steps;
}

std::optional<cv::Mat> replay_ops(const cv::Mat& pristine, const std::vector<OpRecord>& ops) {
  cv::Mat img = pristine.clone();
  for (const auto& op : ops) {
    if (op.name == "mix") continue;
    if (op.name == "jpeg")
      img = jpeg_compress(img, op.params.at("quality").get<int>());
    else if (op.name == "blur")
      img = gaussian_blur(img, op.params.at("sigma").get<double>());
    else
      return std::nullopt;
  }
  return img;
}

}  // namespace glff
