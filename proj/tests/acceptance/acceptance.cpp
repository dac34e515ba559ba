// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "glff/amsff.hpp"
#include "glff/checkpoint.hpp"
#include "glff/df3.hpp"
#include "glff/detector.hpp"
#include "glff/image.hpp"
#include "glff/manifest.hpp"
#include "glff/metrics.hpp"
#include "glff/model.hpp"
#include "glff/psm.hpp"
#include "glff/rng.hpp"
#include "glff/training.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace glff;
namespace fs = std::filesystem;

namespace {

/// Failed check; the message becomes the FAIL line's detail.
struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void expect(bool ok, const std::string& what) {
  if (!ok) throw Failure(what);
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = "'" GLFF_CLI "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

const fs::path toy_real = test::data_dir() / "toy" / "real";
const fs::path toy_fake = test::data_dir() / "toy" / "fake";

// ---------------------------------------------------------------------------

std::string shape_suite() {
  const auto t_build = std::chrono::steady_clock::now();
  GlffModel model(ModelConfig::resnet50());
  model->eval();
  const double build = seconds_since(t_build);
  torch::manual_seed(2024);
  torch::NoGradGuard no_grad;
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < 20; ++i) {
    ForwardTrace trace;
    const auto x = torch::rand({1, 3, 224, 224});
    auto logits = model->forward(x, &trace);
    expect(trace.taps.shallow.sizes() == torch::IntArrayRef({1, 256, 56, 56}), "shallow tap shape");
    expect(trace.taps.deep.sizes() == torch::IntArrayRef({1, 2048, 7, 7}), "deep tap shape");
    expect(trace.fused.sizes() == torch::IntArrayRef({1, 2048, 7, 7}), "fused shape");
    expect(trace.global_embedding.size(-1) == 128, "global embedding width");
    expect(trace.local_embeddings.sizes() == torch::IntArrayRef({1, 6, 128}), "local embeddings shape");
    const auto s = score_from_logits(logits[0][0].item<double>(), logits[0][1].item<double>());
    expect(s.fake_probability >= 0.0 && s.fake_probability <= 1.0, "score outside [0,1]");
  }
  const double elapsed = seconds_since(t0);
  expect(elapsed < 60.0, "20 forwards took " + fmt(elapsed, 3) + " s (limit 60 s)");
  return "20 inputs, taps 56x56x256 / 7x7x2048, fused 7x7x2048, embeddings 128, " + fmt(elapsed, 3) +
         " s for 20 forwards (model build " + fmt(build, 3) + " s)";
}

std::string amsff_oracle() {
  torch::manual_seed(7);
  double worst = 0.0;
  for (int heads : {1, 2, 4}) {
    Amsff m(6, 8, AttentionConfig{3, heads, 8});
    const auto shallow = torch::randn({2, 6, 4, 4});
    const auto deep = torch::randn({2, 8, 2, 2});
    const auto got = test::to_vec(m->fuse(shallow, deep).contiguous());
    const auto ref = test::amsff_loop_oracle(*m, heads, shallow, deep);
    expect(got.size() == ref.size(), "oracle size mismatch");
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(got[i] - ref[i]));
  }
  expect(worst < 1e-5, "max |fuse - oracle| = " + fmt(worst));

  AttentionLayer layer(16, 4);
  const auto w = layer->attention_weights(torch::randn({5, 9, 16}) * 3.0);
  const double row_err = (w.sum(-1) - 1.0).abs().max().item<double>();
  expect(row_err <= 1e-5, "attention row sum error " + fmt(row_err));

  Amsff m(6, 8, AttentionConfig{2, 2, 8});
  m->to(torch::kFloat64);
  const auto high = torch::randn({4, 8}, torch::kFloat64);
  const auto lows = torch::randn({4, 16, 6}, torch::kFloat64);
  double perm_err = 0.0;
  for (int t = 0; t < 5; ++t) {
    const auto perm = torch::randperm(16, torch::kLong);
    auto a = m->attention->forward(m->project_tokens(high, lows), true);
    auto b = m->attention->forward(m->project_tokens(high, lows.index_select(1, perm)), true);
    perm_err = std::max(perm_err, test::max_abs_diff(a, b));
  }
  // Only the floating-point summation order changes under a permutation.
  expect(perm_err <= 1e-12, "permutation difference " + fmt(perm_err));
  return "max |fuse - loop oracle| " + fmt(worst, 3) + " (2x2 deep, 4x4 shallow, 1/2/4 heads), row-sum error " +
         fmt(row_err, 3) + ", low-token permutation difference " + fmt(perm_err, 3) + " in float64";
}

std::string amsff_gradients() {
  torch::manual_seed(11);
  Amsff m(8, 8, AttentionConfig{1, 2, 8});
  m->to(torch::kFloat64);
  const auto shallow = torch::randn({1, 8, 2, 2}, torch::kFloat64);
  const auto deep = torch::randn({1, 8, 1, 1}, torch::kFloat64);
  const auto r = torch::randn({1, 8, 1, 1}, torch::kFloat64);
  expect(m->build_tokens(shallow, deep).size(1) == 5, "expected 5 tokens");
  const auto results = test::gradient_check(*m, [&] { return (m->fuse(shallow, deep) * r).sum(); });
  double worst = 0.0;
  std::string worst_name;
  for (const auto& g : results)
    if (g.relative_error >= worst) worst = g.relative_error, worst_name = g.name;
  expect(worst < 1e-3, "relative error " + fmt(worst) + " on " + worst_name);
  return std::to_string(results.size()) + " parameter tensors, worst relative error " + fmt(worst, 3) + " (" +
         worst_name + ")";
}

std::string psm_oracle() {
  const WindowSpec w3{3, 3, 3, 224}, w2{2, 2, 3, 112};
  ActivationMap flat{7, 7, std::vector<double>(49, 0.0)};
  expect(score_windows(flat, w3).size() == 25, "3x3 window count");
  expect(score_windows(flat, w2).size() == 36, "2x2 window count");

  std::mt19937_64 rng(99);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<int> level(0, 3);
  double worst_iou = 0.0;
  for (int t = 0; t < 200; ++t) {
    ActivationMap map{7, 7, std::vector<double>(49)};
    // Every fourth map is coarsely quantised so that score ties occur.
    for (auto& v : map.values) v = t % 4 == 0 ? level(rng) : gauss(rng);
    for (int tag : {0, 1}) {
      const auto& w = tag == 0 ? w3 : w2;
      const auto got = nms_select(score_windows(map, w, tag), w.count, 0.25).kept;
      const auto ref = test::brute_force_select(map, w, 0.25, tag);
      expect(got.size() == ref.size(), "map " + std::to_string(t) + ": kept count differs");
      for (std::size_t i = 0; i < ref.size(); ++i) {
        expect(got[i].rect_feature == ref[i].rect_feature, "map " + std::to_string(t) + ": rect differs");
        expect(got[i].score == ref[i].score, "map " + std::to_string(t) + ": score differs");
      }
      for (std::size_t i = 0; i < got.size(); ++i)
        for (std::size_t j = i + 1; j < got.size(); ++j)
          worst_iou = std::max(worst_iou, iou(got[i].rect_feature, got[j].rect_feature));
    }
  }
  expect(worst_iou <= 0.25, "kept pair IoU " + fmt(worst_iou));
  return "200 maps match brute force exactly (rects and scores), window counts 25/36, max kept IoU " +
         fmt(worst_iou, 4);
}

std::string coordinate_mapping() {
  auto mapped = [](FeatureRect r, int crop) {
    PatchProposal p;
    p.rect_feature = r;
    return map_to_image(p, crop, 224, 7, 7).rect_image;
  };
  const auto a = mapped({0, 0, 3, 3}, 224);
  expect(a == ImageRect{0, 0, 224}, "3x3 at (0,0) should give the full frame");
  const auto b = mapped({5, 5, 2, 2}, 112);
  expect(b == ImageRect{112, 112, 112}, "2x2 at (5,5) should shift to [112,224)");
  const auto c = mapped({0, 0, 7, 7}, 224);
  expect(c == ImageRect{0, 0, 224}, "7x7 should give the full frame");
  return "(0,0,3x3)->[0,224) from centre 48; (5,5,2x2)->[112,224) from centre 192; full map->[0,224) from "
         "centre 112";
}

std::string metrics_oracle() {
  std::mt19937_64 rng(5);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    std::uniform_int_distribution<int> len(1, 80);
    std::uniform_int_distribution<int> level(0, t % 2 ? 20 : 1 << 20);
    std::vector<double> pos(len(rng)), neg(len(rng));
    for (auto& v : pos) v = level(rng) / double(1 << 20);
    for (auto& v : neg) v = level(rng) / double(1 << 20);
    double pairs = 0.0;
    for (double p : pos)
      for (double n : neg) pairs += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
    pairs /= static_cast<double>(pos.size() * neg.size());
    std::vector<double> s(pos);
    s.insert(s.end(), neg.begin(), neg.end());
    std::vector<int> l(pos.size(), 1);
    l.resize(s.size(), 0);
    const double area = roc_area(roc_curve(s, l));
    worst = std::max({worst, std::abs(pairs - area), std::abs(auc(pos, neg) - area)});

    auto warp = [](std::vector<double> v) {
      for (auto& x : v) x = std::exp(3.0 * x) - 7.0;
      return v;
    };
    expect(auc(warp(pos), warp(neg)) == auc(pos, neg), "monotone transform changed the AUC");
  }
  expect(worst < 1e-9, "pairwise vs trapezoid difference " + fmt(worst));
  const double example = auc(std::vector<double>{0.8, 0.6}, std::vector<double>{0.7, 0.2});
  expect(example == 0.75, "worked example gave " + fmt(example, 17));
  return "100 random sets, max |pairwise - trapezoid| " + fmt(worst, 3) +
         ", example AUC 0.75 exact, monotone transform invariant";
}

struct ToyRun {
  fs::path ckpt;
  bool ok = false;
};

std::string toy_overfit(ToyRun& run) {
  const auto dir = test::scratch("acceptance-toy");
  run.ckpt = dir / "toy.ckpt";
  const auto data = load_dataset(toy_real, toy_fake);
  expect(data.items.size() == 32, "expected 16 + 16 toy images");
  TrainConfig cfg;
  cfg.max_steps = 200;
  cfg.seed = 0;
  cfg.model_preset = "toy";
  TrainOptions opts;
  opts.out = run.ckpt;
  opts.model = ModelConfig::toy();
  const auto t0 = std::chrono::steady_clock::now();
  const auto summary = train(data, cfg, opts);
  const double train_s = seconds_since(t0);
  const double final_loss = summary.losses.back();

  const auto records = build_manifest({{toy_real, 0, "real", Protocol::unprocessed},
                                       {toy_fake, 1, "toy", Protocol::unprocessed}});
  auto ckpt = load_checkpoint(run.ckpt);
  GlffDetector detector(ckpt.model);
  const auto report = protocol_report(records, detector);
  const auto& cell = report.cells.at(0);
  const double total = seconds_since(t0);
  run.ok = true;
  expect(final_loss < 0.05, "final loss " + fmt(final_loss));
  expect(cell.oa == 1.0, "training OA " + fmt(cell.oa));
  expect(cell.auc == 1.0, "training AUC " + fmt(cell.auc));
  expect(total < 600.0, "runtime " + fmt(total, 4) + " s");
  return "200 steps, final loss " + fmt(final_loss, 4) + ", OA " + fmt(cell.oa) + ", AUC " + fmt(cell.auc) +
         ", train " + fmt(train_s, 4) + " s, total " + fmt(total, 4) + " s";
}

std::string augmentation_statistics() {
  TrainConfig cfg;  // prob 0.1, sigma [0,3], quality [30,100]
  int blur = 0, jpeg = 0;
  double smin = 1e9, smax = -1e9;
  int qmin = 1000, qmax = -1;
  for (int i = 0; i < 10000; ++i) {
    auto rng = sample_rng(0, static_cast<std::uint64_t>(i), 0);
    const auto r = draw_augmentation(cfg, rng);
    blur += r.blurred;
    jpeg += r.jpeg;
    smin = std::min(smin, r.sigma), smax = std::max(smax, r.sigma);
    qmin = std::min(qmin, r.quality), qmax = std::max(qmax, r.quality);
  }
  expect(std::abs(blur - 1000) <= 90, "blur fired " + std::to_string(blur) + " times");
  expect(std::abs(jpeg - 1000) <= 90, "JPEG fired " + std::to_string(jpeg) + " times");
  expect(smin >= 0.0 && smax <= 3.0, "sigma range [" + fmt(smin) + ", " + fmt(smax) + "]");
  expect(qmin >= 30 && qmax <= 100, "quality range");

  ProtocolConfig pcfg;
  const cv::Mat tiny(8, 8, CV_8UC3, cv::Scalar(10, 100, 200));
  int pq_min = 1000, pq_max = -1;
  double ps_min = 1e9, ps_max = -1e9;
  for (int i = 0; i < 10000; ++i) {
    auto rng = substream(0, {static_cast<std::uint64_t>(i)});
    for (const auto& op : common_postprocess(tiny, pcfg, rng).ops) {
      if (op.name == "jpeg") {
        const int qv = op.params["quality"];
        pq_min = std::min(pq_min, qv), pq_max = std::max(pq_max, qv);
      } else {
        const double sv = op.params["sigma"];
        ps_min = std::min(ps_min, sv), ps_max = std::max(ps_max, sv);
      }
    }
  }
  expect(pq_min >= 20 && pq_max <= 90, "protocol quality range");
  expect(ps_min >= 1.0 && ps_max <= 4.0, "protocol sigma range");
  return "blur " + std::to_string(blur) + ", JPEG " + std::to_string(jpeg) + " of 10000; sigma [" + fmt(smin, 3) +
         ", " + fmt(smax, 3) + "], quality [" + std::to_string(qmin) + ", " + std::to_string(qmax) +
         "]; protocol quality [" + std::to_string(pq_min) + ", " + std::to_string(pq_max) + "], sigma [" +
         fmt(ps_min, 3) + ", " + fmt(ps_max, 3) + "]";
}

std::string pipeline_integrity() {
  // Count and order through the video codec.
  std::vector<cv::Mat> frames;
  for (const auto& p : list_images(toy_fake)) frames.push_back(load_rgb(p));
  for (const auto& p : list_images(toy_real)) frames.push_back(load_rgb(p));
  double worst_psnr = 0.0;
  for (int g : {1, 2, 25, 64}) {
    ProtocolConfig cfg;
    cfg.group_size = g;
    const auto out = multi_image_compress(frames, cfg);
    expect(out.size() == frames.size(), "group size " + std::to_string(g) + ": count changed");
    for (std::size_t k = 0; k < out.size(); ++k) {
      const double psnr = test::psnr(out[k].image, frames[k]);
      expect(std::isfinite(psnr) && psnr < 361.0, "group size " + std::to_string(g) + ": lossless frame");
      worst_psnr = std::max(worst_psnr, psnr);
      std::size_t best = 0;
      double best_d = 1e300;
      for (std::size_t j = 0; j < frames.size(); ++j) {
        const double d = cv::norm(out[k].image, frames[j], cv::NORM_L2);
        if (d < best_d) best_d = d, best = j;
      }
      expect(best == k, "group size " + std::to_string(g) + ": order changed at " + std::to_string(k));
    }
  }

  // Byte-reproducible manifests and bit-exact replay through the CLI.
  const auto dir = test::scratch("acceptance-pipeline");
  for (const char* sub : {"a", "b"}) {
    const int code = run_cli("process --protocol common --seed 7 --in-dir " + q(toy_fake) + " --out-dir " +
                                 q(dir / sub),
                             dir / (std::string(sub) + ".log"));
    expect(code == 0, "process exited with " + std::to_string(code));
  }
  const auto manifest = read_file(dir / "a" / "manifest.jsonl");
  expect(!manifest.empty() && manifest == read_file(dir / "b" / "manifest.jsonl"), "manifests differ");
  int replayed = 0;
  for (const auto& r : read_manifest(dir / "a" / "manifest.jsonl")) {
    const auto pristine = load_rgb(toy_fake / fs::path(r.path).filename());
    const auto again = replay_ops(pristine, r.ops);
    expect(again.has_value(), "ops not replayable");
    expect(cv::norm(*again, load_rgb(r.path), cv::NORM_INF) == 0.0, "replay differs for " + r.path);
    ++replayed;
  }
  return "32 frames keep count and order for group sizes 1/2/25/64 (max PSNR " + fmt(worst_psnr, 4) +
         " dB), manifests byte-identical, " + std::to_string(replayed) + " replays bit-exact";
}

std::string adversarial_sanity(const ToyRun& run) {
  expect(run.ok, "toy checkpoint unavailable");
  auto ckpt = load_checkpoint(run.ckpt);
  GlffDetector detector(ckpt.model);
  const AdversarialConfig cfg;  // 100 steps, step 0.01, L2 budget 3
  int lowered = 0, total = 0;
  double worst_l2 = 0.0, mean_before = 0.0, mean_after = 0.0;
  const auto paths = list_images(toy_fake);
  for (const auto& p : paths) {
    const auto image = load_image(p, detector.input_size()).pixels;
    const auto zero = adversarial_perturb(image, detector, AdversarialConfig{0, 0.01, 3.0});
    expect(torch::equal(zero.image, image), "steps = 0 changed the image");
    const auto r = adversarial_perturb(image, detector, cfg);
    worst_l2 = std::max(worst_l2, r.l2);
    expect(r.l2 <= cfg.l2_budget + 1e-5, "L2 " + fmt(r.l2) + " exceeds the budget");
    lowered += r.fake_probability_after < r.fake_probability_before;
    mean_before += r.fake_probability_before;
    mean_after += r.fake_probability_after;
    ++total;
  }
  expect(lowered * 10 >= total * 9, std::to_string(lowered) + " of " + std::to_string(total) + " lowered");
  return std::to_string(lowered) + "/" + std::to_string(total) + " fakes lowered (mean p_fake " +
         fmt(mean_before / total, 4) + " -> " + fmt(mean_after / total, 4) + "), max L2 " + fmt(worst_l2, 4) +
         " <= 3, steps=0 identity";
}

std::string ablation_plumbing() {
  const auto dir = test::scratch("acceptance-ablate");
  std::ostringstream summary;
  for (const char* v : {"full", "global_only", "local_only", "no_psm", "no_amsff"}) {
    const auto out = dir / v;
    const int code = run_cli(std::string("ablate --variant ") + v + " --real-dir " + q(toy_real) + " --fake-dir " +
                                 q(toy_fake) + " --out-dir " + q(out) + " --max-steps 2 --batch-size 8",
                             dir / (std::string(v) + ".log"));
    expect(code == 0, std::string(v) + " exited with " + std::to_string(code));
    expect(read_file(out / "metrics.csv").rfind("protocol,generator,n_pos,n_neg,oa,auc\n", 0) == 0,
           std::string(v) + ": metrics.csv missing or malformed");
    const auto c = nlohmann::json::parse(read_file(out / "counters.json"));
    const long amsff = c["amsff_fuse"], psm = c["psm_select"], rnd = c["random_select"];
    const long global = c["global_branch"], local = c["local_branch"];
    const std::string name = v;
    if (name == "no_amsff") expect(amsff == 0 && psm > 0, "no_amsff still ran AMSFF");
    else expect(amsff > 0, name + ": AMSFF never ran");
    if (name == "no_psm") expect(psm == 0 && rnd > 0, "no_psm still ran PSM");
    if (name == "global_only") expect(local == 0 && psm == 0, "global_only ran the local branch");
    if (name == "local_only") expect(global == 0 && local > 0, "local_only ran the global branch");
    if (name == "full") expect(psm > 0 && rnd == 0 && global > 0 && local > 0, "full variant bypassed a module");
    summary << name << " (amsff " << amsff << ", psm " << psm << ", random " << rnd << ") ";
  }
  return "metrics.csv for every variant; counters: " + summary.str();
}

}  // namespace

int main() {
  std::map<int, bool> results;
  ToyRun toy;
  const std::vector<std::pair<int, std::function<std::string()>>> criteria = {
      {1, shape_suite},
      {2, amsff_oracle},
      {3, amsff_gradients},
      {4, psm_oracle},
      {5, coordinate_mapping},
      {6, metrics_oracle},
      {7, [&] { return toy_overfit(toy); }},
      {8, augmentation_statistics},
      {9, pipeline_integrity},
      {10, [&] { return adversarial_sanity(toy); }},
      {11, ablation_plumbing},
  };
  for (const auto& [n, fn] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = false;
    try {
      detail = fn();
      ok = true;
    } catch (const std::exception& e) {
      detail = e.what();
    }
    results[n] = ok;
    std::cout << "criterion " << n << ": " << (ok ? "PASS" : "FAIL") << " - " << detail << " ["
              << fmt(seconds_since(t0), 4) << " s]" << std::endl;
  }
  int passed = 0;
  for (const auto& [n, ok] : results) passed += ok;
  std::cout << passed << "/" << results.size() << " criteria passed" << std::endl;
  return passed == static_cast<int>(results.size()) ? 0 : 1;
}
