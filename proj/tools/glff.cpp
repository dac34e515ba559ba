// glff: train / eval / process / visualize / ablate / manifest.
//
// Every flag may also come from a flat `key = value` file given with
// --config (keys are flag names without the leading dashes; `_` and `-` are
// interchangeable). Command-line flags win over the file.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "glff/checkpoint.hpp"
#include "glff/config.hpp"
#include "glff/df3.hpp"
#include "glff/detector.hpp"
#include "glff/image.hpp"
#include "glff/manifest.hpp"
#include "glff/metrics.hpp"
#include "glff/model.hpp"
#include "glff/rng.hpp"
#include "glff/training.hpp"

namespace fs = std::filesystem;
using namespace glff;

namespace {

constexpr std::uint64_t kCommonKey = 0x636f6dULL;

struct ModelFlags {
  std::string preset = "resnet50";
  std::string variant;
  std::string pretrained;
  std::uint64_t seed = 0;
};

struct TrainFlags {
  fs::path real_dir, fake_dir, out, log, resume;
  TrainConfig cfg;
  std::string augment_mode = "independent";
};

void add_train_config(CLI::App* app, TrainFlags& f) {
  app->add_option("--batch-size", f.cfg.batch_size, "Images per step");
  app->add_option("--learning-rate", f.cfg.learning_rate, "Adam learning rate");
  app->add_option("--augment-prob", f.cfg.augment_prob, "Blur / JPEG probability");
  app->add_option("--augment-mode", f.augment_mode, "independent | joint")
      ->check(CLI::IsMember({"independent", "joint"}));
  app->add_option("--blur-sigma-min", f.cfg.blur_sigma_min);
  app->add_option("--blur-sigma-max", f.cfg.blur_sigma_max);
  app->add_option("--jpeg-quality-min", f.cfg.jpeg_quality_min);
  app->add_option("--jpeg-quality-max", f.cfg.jpeg_quality_max);
  app->add_option("--max-steps", f.cfg.max_steps, "Optimizer steps");
  app->add_option("--checkpoint-every", f.cfg.checkpoint_every, "Extra checkpoints (0: end only)");
  app->add_option("--log", f.log, "Training log CSV (default: <out>.log.csv)");
}

void add_model_flags(CLI::App* app, ModelFlags& m) {
  app->add_option("--model", m.preset, "Architecture preset: resnet50 | toy");
  app->add_option("--pretrained", m.pretrained, "Backbone state dict (torchvision names)");
}

/// Applies one ablation axis to a model config.
void apply_variant(ModelConfig& cfg, const std::string& spec) {
  if (spec.empty()) return;
  if (spec.rfind("stage:", 0) == 0) {
    const auto body = spec.substr(6);
    const auto comma = body.find(',');
    if (comma == std::string::npos) throw ConfigError("stage variant must look like stage:1,5");
    try {
      cfg.backbone.shallow_stage = std::stoi(body.substr(0, comma));
      cfg.backbone.deep_stage = std::stoi(body.substr(comma + 1));
    } catch (const std::logic_error&) {
      throw ConfigError("stage variant must look like stage:1,5");
    }
  } else if (spec.rfind("windows:", 0) == 0) {
    cfg.psm.windows = parse_window_specs(spec.substr(8), cfg.backbone.input_size);
  } else {
    cfg.variant = variant_from_string(spec);
  }
}

ModelConfig build_model_config(const ModelFlags& m) {
  auto cfg = ModelConfig::preset(m.preset);
  if (!m.pretrained.empty()) {
    cfg.backbone.pretrained = true;
    cfg.backbone.pretrained_path = m.pretrained;
  }
  apply_variant(cfg, m.variant);
  cfg.seed = m.seed;
  cfg.backbone.seed = m.seed;
  cfg.resolve();
  return cfg;
}

TrainSummary run_training(TrainFlags& f, const ModelFlags& m) {
  f.cfg.augment_mode = f.augment_mode == "joint" ? AugmentMode::joint : AugmentMode::independent;
  f.cfg.seed = m.seed;
  f.cfg.model_preset = m.preset;
  f.cfg.validate();
  TrainOptions opts;
  opts.out = f.out;
  opts.log = f.log;
  opts.resume = f.resume;
  if (f.resume.empty()) opts.model = build_model_config(m);
  opts.on_step = [&](int step, double loss) {
    if (step == 1 || step % 10 == 0 || step == f.cfg.max_steps)
      std::cerr << "step " << step << " loss " << loss << "\n";
  };
  const auto data = load_dataset(f.real_dir, f.fake_dir);
  auto summary = train(data, f.cfg, opts);
  if (summary.unreadable > 0)
    std::cerr << "[glff] " << summary.unreadable << " unreadable image(s) skipped\n";
  return summary;
}

std::string cell_file_name(const std::string& protocol, const std::string& generator) {
  std::string name = protocol + "__" + generator;
  for (auto& c : name)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-' && c != '.') c = '_';
  return name + ".csv";
}

MetricsReport write_report(const std::vector<SampleRecord>& records, Detector& detector,
                           const fs::path& out_dir) {
  auto report = protocol_report(records, detector);
  fs::create_directories(out_dir / "roc");
  write_metrics_csv(out_dir / "metrics.csv", report);
  for (const auto& c : report.curves)
    write_roc_csv(out_dir / "roc" / cell_file_name(c.protocol, c.generator), c.curve);
  std::cout << format_table(report);
  return report;
}

std::vector<SampleRecord> read_manifest_for_eval(const fs::path& path) {
  try {
    return read_manifest(path, true);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
}

int cmd_train(TrainFlags& f, const ModelFlags& m) {
  const auto summary = run_training(f, m);
  std::cout << "trained steps " << summary.first_step << ".." << summary.last_step << " -> "
            << f.out.string() << "\n";
  return 0;
}

struct EvalFlags {
  fs::path ckpt, manifest, out_dir;
};

int cmd_eval(const EvalFlags& f) {
  const auto records = read_manifest_for_eval(f.manifest);
  auto ckpt = load_checkpoint(f.ckpt);
  GlffDetector detector(ckpt.model);
  write_report(records, detector, f.out_dir);
  return 0;
}

struct ProcessFlags {
  std::string protocol;
  fs::path in_dir, out_dir, ckpt;
  std::uint64_t seed = 0;
  int label = 1;
  std::string generator;
  ProtocolConfig cfg;
};

int cmd_process(ProcessFlags& f) {
  f.cfg.seed = f.seed;
  f.cfg.validate();
  const auto protocol = protocol_from_string(f.protocol);
  if (protocol != Protocol::common && protocol != Protocol::antiforensics &&
      protocol != Protocol::multicompress && protocol != Protocol::mixed)
    throw ConfigError("--protocol must be common, antiforensics, multicompress or mixed");
  if (protocol == Protocol::multicompress) resolve_encoder();

  const auto paths = list_images(f.in_dir);
  if (paths.empty()) throw ConfigError("--in-dir contains no images: " + f.in_dir.string());
  std::unique_ptr<GlffDetector> detector;
  const bool attacks =
      protocol == Protocol::antiforensics ||
      (protocol == Protocol::mixed &&
       std::any_of(f.cfg.mix_combos.begin(), f.cfg.mix_combos.end(), [](const MixCombo& c) {
         return std::find(c.steps.begin(), c.steps.end(), "antiforensics") != c.steps.end();
       }));
  if (attacks) {
    if (f.ckpt.empty()) throw ConfigError("--ckpt is required for protocol " + f.protocol);
    detector = std::make_unique<GlffDetector>(load_checkpoint(f.ckpt).model);
  }
  if (protocol == Protocol::mixed) {
    for (const auto& c : f.cfg.mix_combos)
      if (std::find(c.steps.begin(), c.steps.end(), "multicompress") != c.steps.end()) {
        resolve_encoder();
        break;
      }
  }

  std::vector<cv::Mat> images;
  for (const auto& p : paths) images.push_back(load_rgb(p));

  std::vector<Processed> results;
  switch (protocol) {
    case Protocol::common:
      for (std::size_t i = 0; i < images.size(); ++i) {
        auto rng = substream(f.seed, {i, kCommonKey});
        results.push_back(common_postprocess(images[i], f.cfg, rng));
      }
      break;
    case Protocol::antiforensics:
      for (const auto& img : images) results.push_back(antiforensics(img, *detector, f.cfg.adversarial));
      break;
    case Protocol::multicompress:
      results = multi_image_compress(images, f.cfg);
      break;
    default:
      results = mixed(images, f.cfg, detector.get());
      break;
  }

  fs::create_directories(f.out_dir);
  const auto generator = f.generator.empty() ? f.in_dir.filename().string() : f.generator;
  std::vector<SampleRecord> records;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const auto name = paths[i].stem().string() + ".png";
    save_rgb(f.out_dir / name, results[i].image);
    records.push_back({name, f.label, generator, protocol, results[i].ops});
  }
  write_manifest(f.out_dir / "manifest.jsonl", records);
  std::cout << "processed " << records.size() << " image(s) -> " << (f.out_dir / "manifest.jsonl").string()
            << "\n";
  return 0;
}

struct VisualizeFlags {
  fs::path ckpt, image, out;
};

int cmd_visualize(const VisualizeFlags& f) {
  auto ckpt = load_checkpoint(f.ckpt);
  auto& model = ckpt.model;
  if (model->config().variant == Variant::global_only)
    throw ConfigError("a global_only checkpoint selects no patches");
  const int size = model->config().backbone.input_size;
  const auto input = load_image(f.image, size);
  ForwardTrace trace;
  {
    torch::NoGradGuard no_grad;
    model->forward(input.pixels.unsqueeze(0), &trace);
  }

  // (a) channel mean of the fused map, min-max scaled, cell-replicated to the input size.
  auto mean = trace.fused[0].mean(0).to(torch::kFloat32).contiguous();
  cv::Mat cells(static_cast<int>(mean.size(0)), static_cast<int>(mean.size(1)), CV_32F,
                mean.data_ptr<float>());
  double lo = 0.0;
  double hi = 0.0;
  cv::minMaxLoc(cells, &lo, &hi);
  cv::Mat gray;
  cells.convertTo(gray, CV_8U, hi > lo ? 255.0 / (hi - lo) : 0.0, hi > lo ? -lo * 255.0 / (hi - lo) : 0.0);
  cv::Mat heat;
  cv::resize(gray, heat, cv::Size(size, size), 0, 0, cv::INTER_NEAREST);
  cv::Mat heat_rgb;
  cv::cvtColor(heat, heat_rgb, cv::COLOR_GRAY2RGB);

  // (b) input with the selected crops, one colour per window size.
  static const cv::Scalar kColours[] = {{255, 40, 40}, {40, 220, 40}, {60, 90, 255}, {240, 200, 0}};
  auto overlay = tensor_to_mat(input.pixels);
  const auto& proposals = trace.proposals.at(0);
  nlohmann::ordered_json rects = nlohmann::ordered_json::array();
  for (const auto& p : proposals) {
    const auto& r = p.rect_image;
    cv::rectangle(overlay, cv::Rect(r.left, r.top, r.size, r.size),
                  kColours[p.scale_tag % 4], 1 + (p.scale_tag == 0));
    rects.push_back({{"scale", p.scale_tag},
                     {"score", p.score},
                     {"feature", {p.rect_feature.row, p.rect_feature.col, p.rect_feature.height,
                                  p.rect_feature.width}},
                     {"image", {r.top, r.left, r.size}}});
  }

  fs::create_directories(f.out);
  save_rgb(f.out / "heatmap.png", heat_rgb);
  save_rgb(f.out / "overlay.png", overlay);
  std::ofstream(f.out / "proposals.json") << rects.dump(2) << "\n";
  std::cout << "rects " << proposals.size() << ", heatmap " << cells.rows << "x" << cells.cols
            << " -> " << size << "x" << size << "\n";
  return 0;
}

struct AblateFlags {
  TrainFlags train;
  fs::path manifest, out_dir;
};

int cmd_ablate(AblateFlags& f, ModelFlags m) {
  if (m.variant.empty()) throw ConfigError("--variant is required");
  build_model_config(m);  // reject bad variants before any work
  fs::create_directories(f.out_dir);
  f.train.out = f.out_dir / "model.ckpt";
  if (f.train.log.empty()) f.train.log = f.out_dir / "train.log.csv";
  run_training(f.train, m);

  std::vector<SampleRecord> records;
  if (!f.manifest.empty()) {
    records = read_manifest_for_eval(f.manifest);
  } else {
    records = build_manifest({{f.train.real_dir, 0, "real", Protocol::unprocessed},
                              {f.train.fake_dir, 1, "train", Protocol::unprocessed}});
  }
  auto ckpt = load_checkpoint(f.train.out);
  GlffDetector detector(ckpt.model);
  auto& counters = ckpt.model->counters();
  counters.reset();
  write_report(records, detector, f.out_dir);
  nlohmann::ordered_json c{{"variant", m.variant},
                           {"amsff_fuse", counters.amsff_fuse.load()},
                           {"psm_select", counters.psm_select.load()},
                           {"random_select", counters.random_select.load()},
                           {"global_branch", counters.global_branch.load()},
                           {"local_branch", counters.local_branch.load()}};
  std::ofstream(f.out_dir / "counters.json") << c.dump(2) << "\n";
  std::cout << "counters " << c.dump() << "\n";
  return 0;
}

struct ManifestFlags {
  std::vector<std::string> real, fake;
  std::string protocol = "unprocessed";
  fs::path out;
};

int cmd_manifest(const ManifestFlags& f) {
  const auto protocol = protocol_from_string(f.protocol);
  std::vector<ManifestRoot> roots;
  for (const auto& d : f.real) roots.push_back({d, 0, "real", Protocol::unprocessed});
  for (const auto& spec : f.fake) {
    const auto colon = spec.rfind(':');
    if (colon == std::string::npos || colon == 0)
      throw ConfigError("--fake expects DIR:GENERATOR, got '" + spec + "'");
    roots.push_back({spec.substr(0, colon), 1, spec.substr(colon + 1), protocol});
  }
  auto records = build_manifest(roots);
  // Paths relative to the manifest keep the file relocatable.
  const auto base = fs::absolute(f.out).parent_path();
  for (auto& r : records) r.path = fs::relative(fs::absolute(r.path), base).generic_string();
  write_manifest(f.out, records);
  std::cout << records.size() << " record(s) -> " << f.out.string() << "\n";
  return 0;
}

/// Rewrites argv so that `--config FILE` entries become ordinary flags placed
/// before the real ones (the last occurrence of a flag wins).
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  for (std::size_t i = 1; i < args.size(); ++i) {
    std::string file;
    std::size_t erase = 0;
    if (args[i] == "--config" && i + 1 < args.size()) {
      file = args[i + 1];
      erase = 2;
    } else if (args[i].rfind("--config=", 0) == 0) {
      file = args[i].substr(9);
      erase = 1;
    } else {
      continue;
    }
    std::vector<std::string> injected;
    for (const auto& [k, value] : read_key_values(file)) {
      std::string key = k;
      std::replace(key.begin(), key.end(), '_', '-');
      injected.push_back("--" + key + "=" + value);
    }
    args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
               args.begin() + static_cast<std::ptrdiff_t>(i + erase));
    // Right after the subcommand name, which is the first positional token.
    std::size_t at = 1;
    while (at < args.size() && args[at].rfind("-", 0) == 0) ++at;
    at = std::min(at + 1, args.size());
    args.insert(args.begin() + static_cast<std::ptrdiff_t>(at), injected.begin(), injected.end());
    break;
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GLFF synthetic-image detector"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_help_all_flag("--help-all");
  app.add_option("--config", "Flat key = value file; flags override it");

  ModelFlags model;
  TrainFlags train;
  auto* train_cmd = app.add_subcommand("train", "Train a detector on real/fake folders");
  train_cmd->add_option("--real-dir", train.real_dir, "Real images")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--fake-dir", train.fake_dir, "Fake images")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--out", train.out, "Checkpoint to write")->required();
  train_cmd->add_option("--resume", train.resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  train_cmd->add_option("--seed", model.seed, "Seed for weights, data order and augmentation");
  train_cmd->add_option("--variant", model.variant, "Architecture variant or ablation axis");
  add_model_flags(train_cmd, model);
  add_train_config(train_cmd, train);

  EvalFlags eval;
  auto* eval_cmd = app.add_subcommand("eval", "Score a manifest and write OA/AUC/ROC reports");
  eval_cmd->add_option("--ckpt", eval.ckpt)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--manifest", eval.manifest)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out-dir", eval.out_dir)->required();

  ProcessFlags process;
  auto* process_cmd = app.add_subcommand("process", "Apply a post-processing protocol to a folder");
  process_cmd->add_option("--protocol", process.protocol, "common | antiforensics | multicompress | mixed")
      ->required();
  process_cmd->add_option("--in-dir", process.in_dir)->required()->check(CLI::ExistingDirectory);
  process_cmd->add_option("--out-dir", process.out_dir)->required();
  process_cmd->add_option("--seed", process.seed)->required();
  process_cmd->add_option("--ckpt", process.ckpt, "Detector attacked by antiforensics")
      ->check(CLI::ExistingFile);
  process_cmd->add_option("--label", process.label, "Manifest label (0 real, 1 fake)")
      ->check(CLI::IsMember({0, 1}));
  process_cmd->add_option("--generator", process.generator, "Manifest generator tag (default: folder name)");
  process_cmd->add_option("--group-size", process.cfg.group_size, "Images per H.264 sequence");
  process_cmd->add_option("--crf", process.cfg.video_crf, "H.264 constant-quality value");
  process_cmd->add_option("--adv-steps", process.cfg.adversarial.steps);
  process_cmd->add_option("--adv-step-size", process.cfg.adversarial.step_size);
  process_cmd->add_option("--adv-l2-budget", process.cfg.adversarial.l2_budget);

  VisualizeFlags visualize;
  auto* vis_cmd = app.add_subcommand("visualize", "Write the activation heatmap and selected patches");
  vis_cmd->add_option("--ckpt", visualize.ckpt)->required()->check(CLI::ExistingFile);
  vis_cmd->add_option("--image", visualize.image)->required()->check(CLI::ExistingFile);
  vis_cmd->add_option("--out", visualize.out, "Output directory")->required();

  AblateFlags ablate;
  ModelFlags ablate_model;
  ablate_model.preset = "toy";
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate one architecture variant");
  ablate_cmd->add_option("--variant", ablate_model.variant,
                         "full | global_only | local_only | no_psm | no_amsff | stage:S,D | windows:SPEC")
      ->required();
  ablate_cmd->add_option("--real-dir", ablate.train.real_dir)->required()->check(CLI::ExistingDirectory);
  ablate_cmd->add_option("--fake-dir", ablate.train.fake_dir)->required()->check(CLI::ExistingDirectory);
  ablate_cmd->add_option("--out-dir", ablate.out_dir)->required();
  ablate_cmd->add_option("--manifest", ablate.manifest, "Evaluation manifest (default: the training folders)")
      ->check(CLI::ExistingFile);
  ablate_cmd->add_option("--seed", ablate_model.seed);
  add_model_flags(ablate_cmd, ablate_model);
  add_train_config(ablate_cmd, ablate.train);

  ManifestFlags manifest;
  auto* manifest_cmd = app.add_subcommand("manifest", "Build a manifest from labelled folders");
  manifest_cmd->add_option("--real", manifest.real, "Folder of real images")->check(CLI::ExistingDirectory);
  manifest_cmd->add_option("--fake", manifest.fake, "DIR:GENERATOR folder of fakes");
  manifest_cmd->add_option("--protocol", manifest.protocol, "Protocol tag of the fakes");
  manifest_cmd->add_option("--out", manifest.out)->required();

  try {
    auto args = expand_config(argc, argv);
    std::vector<char*> cargs;
    for (auto& a : args) cargs.push_back(a.data());
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*train_cmd) return cmd_train(train, model);
    if (*eval_cmd) return cmd_eval(eval);
    if (*process_cmd) return cmd_process(process);
    if (*vis_cmd) return cmd_visualize(visualize);
    if (*ablate_cmd) return cmd_ablate(ablate, ablate_model);
    if (*manifest_cmd) return cmd_manifest(manifest);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const PreprocessError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
