#include "testing.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>

#include "glff/checkpoint.hpp"
#include "helpers.hpp"

using namespace glff;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Runs the CLI with `args` (already shell-quoted where needed).
Run glff_cli(const std::string& args, const std::string& env = "") {
  static int n = 0;
  const auto dir = fs::temp_directory_path() / "glff-test-cli-io";
  fs::create_directories(dir);
  const auto out = dir / ("out" + std::to_string(n) + ".txt");
  const auto err = dir / ("err" + std::to_string(n++) + ".txt");
  const std::string cmd =
      env + " '" GLFF_CLI "' " + args + " > '" + out.string() + "' 2> '" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

const fs::path toy_real = test::data_dir() / "toy" / "real";
const fs::path toy_fake = test::data_dir() / "toy" / "fake";

int count_lines(const std::string& text) { return static_cast<int>(std::count(text.begin(), text.end(), '\n')); }

/// Small directory of copies of toy images.
fs::path small_dir(const std::string& name, int n) {
  const auto dir = test::scratch(name);
  int i = 0;
  for (const auto& e : fs::directory_iterator(toy_fake)) {
    if (i == n) break;
    fs::copy_file(e.path(), dir / ("f" + std::to_string(i++) + ".png"));
  }
  return dir;
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  auto r = glff_cli("train --real-dir /nonexistent --fake-dir " + q(toy_fake) + " --out /tmp/x.ckpt");
  CHECK(r.code == 2);
  CHECK(r.err.find("--real-dir") != std::string::npos);
  CHECK(glff_cli("").code == 2);
  CHECK(glff_cli("frobnicate").code == 2);
  CHECK(glff_cli("train --real-dir " + q(toy_real)).code == 2);
  CHECK(glff_cli("--help").code == 0);
}

TEST_CASE("process: unknown protocol and missing encoder") {
  const auto out = test::scratch("cli-proc-bad");
  auto r = glff_cli("process --protocol sharpen --in-dir " + q(toy_fake) + " --out-dir " + q(out) + " --seed 1");
  CHECK(r.code == 2);
  CHECK(glff_cli("process --protocol unprocessed --in-dir " + q(toy_fake) + " --out-dir " + q(out) + " --seed 1")
            .code == 2);
  r = glff_cli("process --protocol multicompress --in-dir " + q(toy_fake) + " --out-dir " + q(out) + " --seed 1",
               "GLFF_ENCODER=/nonexistent/ffmpeg");
  CHECK(r.code == 2);
  CHECK(r.err.find("GLFF_ENCODER") != std::string::npos);
  r = glff_cli("process --protocol antiforensics --in-dir " + q(toy_fake) + " --out-dir " + q(out) + " --seed 1");
  CHECK(r.code == 2);
  CHECK(r.err.find("--ckpt") != std::string::npos);
}

TEST_CASE("process common: same seed, identical manifests and images") {
  const auto a = test::scratch("cli-common-a");
  const auto b = test::scratch("cli-common-b");
  const auto c = test::scratch("cli-common-c");
  for (const auto& out : {a, b})
    REQUIRE(glff_cli("process --protocol common --in-dir " + q(toy_fake) + " --out-dir " + q(out) + " --seed 7")
                .code == 0);
  REQUIRE(glff_cli("process --protocol common --in-dir " + q(toy_fake) + " --out-dir " + q(c) + " --seed 8").code ==
          0);
  const auto ma = read_file(a / "manifest.jsonl");
  CHECK(count_lines(ma) == 16);
  CHECK(ma == read_file(b / "manifest.jsonl"));
  CHECK(ma != read_file(c / "manifest.jsonl"));
  for (const auto& e : fs::directory_iterator(a))
    if (e.path().extension() == ".png") CHECK(read_file(e.path()) == read_file(b / e.path().filename()));
  const auto first = nlohmann::json::parse(ma.substr(0, ma.find('\n')));
  CHECK(first["protocol"] == "common");
  CHECK(first["generator"] == "fake");
}

TEST_CASE("process multicompress keeps the image count") {
  const auto in = small_dir("cli-mc-in", 5);
  const auto out = test::scratch("cli-mc-out");
  auto r = glff_cli("process --protocol multicompress --group-size 2 --in-dir " + q(in) + " --out-dir " + q(out) +
                    " --seed 1");
  REQUIRE(r.code == 0);
  CHECK(count_lines(read_file(out / "manifest.jsonl")) == 5);
  int pngs = 0;
  for (const auto& e : fs::directory_iterator(out)) pngs += e.path().extension() == ".png";
  CHECK(pngs == 5);
}

TEST_CASE("train, resume, eval, manifest and config files") {
  const auto dir = test::scratch("cli-train");
  const auto ckpt = dir / "m.ckpt";
  const std::string common = "--real-dir " + q(toy_real) + " --fake-dir " + q(toy_fake) +
                             " --model toy --batch-size 4 --augment-prob 0";
  auto r = glff_cli("train " + common + " --max-steps 2 --out " + q(ckpt));
  REQUIRE(r.code == 0);
  CHECK(fs::exists(ckpt));
  CHECK(count_lines(read_file(dir / "m.ckpt.log.csv")) == 3);

  r = glff_cli("train " + common + " --max-steps 3 --out " + q(ckpt) + " --resume " + q(ckpt));
  REQUIRE(r.code == 0);
  CHECK(r.out.find("trained steps 3..3") != std::string::npos);
  const auto log = read_file(dir / "m.ckpt.log.csv");
  CHECK(count_lines(log) == 4);
  CHECK(log.find("\n3,") != std::string::npos);
  CHECK(load_checkpoint(ckpt).meta["step"] == 3);

  // Manifest with relative paths, then eval twice.
  const auto manifest = dir / "m.jsonl";
  REQUIRE(glff_cli("manifest --real " + q(toy_real) + " --fake " + q(toy_fake.string() + ":toy") + " --out " +
                   q(manifest))
              .code == 0);
  CHECK(count_lines(read_file(manifest)) == 32);
  CHECK(read_file(manifest).find("\"path\":\"/") == std::string::npos);
  for (const char* sub : {"e1", "e2"})
    REQUIRE(glff_cli("eval --ckpt " + q(ckpt) + " --manifest " + q(manifest) + " --out-dir " + q(dir / sub)).code ==
            0);
  const auto metrics = read_file(dir / "e1" / "metrics.csv");
  CHECK(metrics.rfind("protocol,generator,n_pos,n_neg,oa,auc\n", 0) == 0);
  CHECK(metrics == read_file(dir / "e2" / "metrics.csv"));
  CHECK(read_file(dir / "e1" / "roc" / "unprocessed__toy.csv") ==
        read_file(dir / "e2" / "roc" / "unprocessed__toy.csv"));

  // A manifest with only reals is a usage error.
  const auto reals = dir / "reals.jsonl";
  REQUIRE(glff_cli("manifest --real " + q(toy_real) + " --out " + q(reals)).code == 0);
  CHECK(glff_cli("eval --ckpt " + q(ckpt) + " --manifest " + q(reals) + " --out-dir " + q(dir / "e3")).code == 2);
  // So is a manifest naming a missing image.
  std::ofstream(dir / "broken.jsonl")
      << R"({"path":"gone.png","label":1,"generator":"g","protocol":"common","ops":[]})" << "\n";
  CHECK(glff_cli("eval --ckpt " + q(ckpt) + " --manifest " + q(dir / "broken.jsonl") + " --out-dir " +
                 q(dir / "e4"))
            .code == 2);

  // Config file values apply; explicit flags override them.
  std::ofstream(dir / "run.cfg") << "# quick run\nmax_steps = 1\nbatch_size = 2\nmodel = toy\naugment_prob = 0\n";
  r = glff_cli("train --config " + q(dir / "run.cfg") + " --real-dir " + q(toy_real) + " --fake-dir " +
               q(toy_fake) + " --out " + q(dir / "c.ckpt"));
  REQUIRE(r.code == 0);
  CHECK(count_lines(read_file(dir / "c.ckpt.log.csv")) == 2);
  r = glff_cli("train --config " + q(dir / "run.cfg") + " --max-steps 2 --real-dir " + q(toy_real) +
               " --fake-dir " + q(toy_fake) + " --out " + q(dir / "d.ckpt"));
  REQUIRE(r.code == 0);
  CHECK(count_lines(read_file(dir / "d.ckpt.log.csv")) == 3);
  std::ofstream(dir / "bad.cfg") << "max_steps = many\n";
  CHECK(glff_cli("train --config " + q(dir / "bad.cfg") + " --real-dir " + q(toy_real) + " --fake-dir " +
                 q(toy_fake) + " --out " + q(dir / "e.ckpt"))
            .code == 2);
}

TEST_CASE("visualize: six rects on the reference configuration, deterministic") {
  const auto dir = test::scratch("cli-vis");
  {
    GlffModel m(ModelConfig::resnet50());
    save_checkpoint(dir / "resnet50.ckpt", m);
  }
  const auto image = toy_fake / "fake_00.png";
  REQUIRE(fs::exists(image));
  auto r = glff_cli("visualize --ckpt " + q(dir / "resnet50.ckpt") + " --image " + q(image) + " --out " + q(dir / "a"));
  REQUIRE(r.code == 0);
  CHECK(r.out.find("rects 6, heatmap 7x7 -> 224x224") != std::string::npos);
  const auto heat = cv::imread((dir / "a" / "heatmap.png").string());
  CHECK(heat.rows == 224);
  CHECK(heat.cols == 224);
  const auto rects = nlohmann::json::parse(read_file(dir / "a" / "proposals.json"));
  CHECK(rects.size() == 6);
  REQUIRE(glff_cli("visualize --ckpt " + q(dir / "resnet50.ckpt") + " --image " + q(image) + " --out " + q(dir / "b"))
              .code == 0);
  for (const char* f : {"heatmap.png", "overlay.png", "proposals.json"})
    CHECK(read_file(dir / "a" / f) == read_file(dir / "b" / f));
}

TEST_CASE("ablate: unknown variants are usage errors") {
  const auto out = test::scratch("cli-ablate-bad");
  for (const char* v : {"no_attention", "stage:9,9", "stage:x", "windows:0x0:3"}) {
    INFO(v);
    CHECK(glff_cli(std::string("ablate --variant ") + v + " --real-dir " + q(toy_real) + " --fake-dir " +
                   q(toy_fake) + " --out-dir " + q(out) + " --max-steps 1")
              .code == 2);
  }
}
