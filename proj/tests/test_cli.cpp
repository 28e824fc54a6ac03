#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "pcu4d/data.hpp"

namespace fs = std::filesystem;
using namespace pcu4d;

namespace {

std::string cli() {
  const char* p = std::getenv("PCU4D_CLI_PATH");
  return p ? p : PCU4D_CLI_PATH;
}

struct Result {
  int code;
  std::string out;
};

Result run(const std::string& args) {
  const fs::path log = fs::temp_directory_path() / "pcu4d_cli_test.out";
  const std::string cmd = "\"" + cli() + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream f(log);
  std::stringstream ss;
  ss << f.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  fs::path d = fs::temp_directory_path() / ("pcu4d_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST_CASE("help exits zero and lists defaults") {
  auto r = run("--help");
  CHECK(r.code == 0);
  auto t = run("train --help");
  CHECK(t.code == 0);
  CHECK(t.out.find("[0.0001]") != std::string::npos);
  CHECK(t.out.find("[256]") != std::string::npos);
}

TEST_CASE("usage errors exit with code 2") {
  const auto d = scratch("usage");
  CHECK(run("").code == 2);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("synth --points 0 --out " + q(d)).code == 2);
  CHECK(run("synth --shape cube --out " + q(d)).code == 2);
  CHECK(run("train --manifest x.json --no-adversarial --lambda-adv 0.2").code == 2);
  CHECK(run("train --manifest x.json --fps 24").code == 2);
  CHECK(run("bench --runs 5").code == 2);
  CHECK(run("bench --grid 12x3").code == 2);
  CHECK(run("upsample --manifest x.json").code == 2);
}

TEST_CASE("runtime failures exit with code 1") {
  const auto d = scratch("runtime");
  std::ofstream(d / "bad.json") << "{\"fps\": 25, \"frames\": [\"a.ply\"]}";
  auto r = run("train --manifest " + q(d / "bad.json") + " --out " + q(d / "run"));
  CHECK(r.code == 1);
  CHECK(r.out.find("error:") != std::string::npos);
}

TEST_CASE("synth, train, upsample, eval and features pipeline") {
  const auto d = scratch("pipeline");
  REQUIRE(run("synth --points 600 --frames 5 --seed 3 --out " + q(d / "seq")).code == 0);
  CHECK(fs::exists(d / "seq" / "frame_004.ply"));
  auto m = load_manifest(d / "seq" / "manifest.json");
  CHECK(m.frames.size() == 5);
  CHECK(load_frame(m.frames[0]).points.size() == 600);

  const std::string model = " --L 48 --n 3 --S 2";
  const std::string man = " --manifest " + q(d / "seq" / "manifest.json");
  REQUIRE(run("train" + man + model + " --epochs 0 --out " + q(d / "zero")).code == 0);
  CHECK(fs::exists(d / "zero" / "epoch_000.ckpt"));
  CHECK(fs::exists(d / "zero" / "latest.ckpt"));

  REQUIRE(run("train" + man + model + " --epochs 1 --out " + q(d / "run")).code == 0);
  CHECK(fs::exists(d / "run" / "epoch_001.ckpt"));
  const std::string log = slurp(d / "run" / "log.csv");
  CHECK(log.rfind("epoch,step,lr,l_cd,l_density,l_adv_g,l_d,cd_eval", 0) == 0);

  const std::string ck = " --ckpt " + q(d / "run" / "latest.ckpt");
  REQUIRE(run("upsample" + ck + man + model + " --out " + q(d / "up")).code == 0);
  auto up = load_manifest(d / "up" / "manifest.json");
  REQUIRE(up.frames.size() == 3);
  for (const auto& f : up.frames) CHECK(load_frame(f).points.size() == 2 * 48 * 3);

  // Head shape mismatch is a runtime error with a message.
  auto bad = run("upsample" + ck + man + " --L 48 --n 3 --S 3 --out " + q(d / "up3"));
  CHECK(bad.code == 1);

  REQUIRE(run("eval" + ck + man + model + " --static --out " + q(d / "report.json")).code == 0);
  auto report = nlohmann::json::parse(slurp(d / "report.json"));
  CHECK(report.contains("mean_cd_x1e3"));
  CHECK(report["per_window"].size() == 3);
  CHECK(report.contains("static"));

  auto gt = run("eval --ground-truth" + man + model);
  REQUIRE(gt.code == 0);
  CHECK(nlohmann::json::parse(gt.out)["mean_cd_x1e3"].get<double>() == 0.0);

  REQUIRE(run("features" + ck + man + model + " --out " + q(d / "feat")).code == 0);
  CHECK(fs::exists(d / "feat" / "layer0.ply"));
  CHECK(fs::exists(d / "feat" / "layer2.ply"));
  CHECK(load_colors(d / "feat" / "layer1.ply").size() == 3 * 48);
}

TEST_CASE("short manifest is rejected by upsample") {
  const auto d = scratch("short");
  REQUIRE(run("synth --points 300 --frames 2 --out " + q(d / "seq")).code == 0);
  REQUIRE(run("train --manifest " + q(d / "seq" / "manifest.json") + " --L 32 --n 2 --epochs 0 --out " +
              q(d / "run")).code == 0);
  auto r = run("upsample --ckpt " + q(d / "run" / "latest.ckpt") + " --manifest " +
               q(d / "seq" / "manifest.json") + " --L 32 --n 3 --out " + q(d / "up"));
  CHECK(r.code == 1);
  CHECK(r.out.find("fewer than n") != std::string::npos);
}

TEST_CASE("training runs are reproducible byte for byte") {
  const auto d = scratch("determinism");
  REQUIRE(run("synth --points 400 --frames 4 --out " + q(d / "seq")).code == 0);
  const std::string args = "train --manifest " + q(d / "seq" / "manifest.json") + " --L 32 --n 2 --epochs 2 --out ";
  REQUIRE(run(args + q(d / "a")).code == 0);
  REQUIRE(run(args + q(d / "b")).code == 0);
  for (const char* f : {"log.csv", "epoch_001.ckpt", "epoch_002.ckpt"}) {
    INFO(f);
    CHECK(slurp(d / "a" / f) == slurp(d / "b" / f));
  }
}

TEST_CASE("bench writes the expected columns") {
  const auto d = scratch("bench");
  auto r = run("bench --grid 64/2 --grid 32/4 --runs 20 --warmup 3 --frames 2 --out " + q(d / "bench.csv"));
  REQUIRE(r.code == 0);
  std::istringstream csv(slurp(d / "bench.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "input_size,scale,median_s,p90_s");
  int rows = 0;
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
}
