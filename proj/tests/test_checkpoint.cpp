#include <catch_amalgamated.hpp>

#include <filesystem>
#include <sstream>

#include "pcu4d/checkpoint.hpp"
#include "pcu4d/data.hpp"

using namespace pcu4d;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("pcu4d_ckpt_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("stream round trip preserves names, dims and bits") {
  std::vector<NamedTensor> in{{"a", {2, 3}, {1, 2, 3, 4, 5, 6}}, {"bias", {4}, {0.1f, -0.0f, 1e-30f, 3.5f}}};
  std::stringstream ss;
  write_checkpoint(ss, in);
  auto out = read_checkpoint(ss);
  REQUIRE(out.size() == 2);
  CHECK(out[0].name == "a");
  CHECK(out[0].dims == std::vector<std::uint32_t>{2, 3});
  CHECK(out[1].data == in[1].data);
  CHECK(std::signbit(out[1].data[1]));
}

TEST_CASE("header bytes are the magic followed by a little-endian count") {
  std::stringstream ss;
  write_checkpoint(ss, {{"x", {1}, {1.0f}}});
  const std::string s = ss.str();
  CHECK(s.substr(0, 7) == "PCU4D01");
  CHECK(static_cast<unsigned char>(s[7]) == 1);
  CHECK(s[8] == 0);
}

TEST_CASE("corrupt checkpoints are rejected") {
  std::stringstream bad("NOTACKPT");
  CHECK_THROWS_AS(read_checkpoint(bad), CheckpointError);
  std::stringstream ss;
  write_checkpoint(ss, {{"x", {4}, {1, 2, 3, 4}}});
  std::string s = ss.str();
  std::stringstream truncated(s.substr(0, s.size() - 3));
  CHECK_THROWS_AS(read_checkpoint(truncated), CheckpointError);
  std::stringstream mismatch;
  CHECK_THROWS(write_checkpoint(mismatch, {{"x", {3}, {1, 2}}}));
}

TEST_CASE("generator and discriminator round trip through a file") {
  auto dir = temp_dir("roundtrip");
  GeneratorConfig gc;
  auto g = init_generator(gc, 3);
  auto d = init_discriminator(DiscriminatorConfig{}, 4);
  save_checkpoint(dir / "m.ckpt", g, &d);
  auto g2 = init_generator(gc, 99);
  auto d2 = init_discriminator(DiscriminatorConfig{}, 98);
  load_checkpoint(dir / "m.ckpt", g2, &d2);
  CHECK(g2.layers[1].attn == g.layers[1].attn);
  CHECK(g2.head.weight == g.head.weight);
  CHECK(d2.head[0].weight == d.head[0].weight);

  SyntheticSpec s;
  s.points = 64;
  s.frames = 3;
  auto cloud = fuse(normalize(gen_synthetic_sequence(s)).frames);
  CHECK(upsample(cloud, g, gc) == upsample(cloud, g2, gc));
}

TEST_CASE("loading into a differently shaped model fails loudly") {
  auto dir = temp_dir("shape");
  GeneratorConfig gc;
  save_checkpoint(dir / "m.ckpt", init_generator(gc, 1));
  GeneratorConfig other;
  other.pds.scale = 4;
  auto g = init_generator(other, 1);
  CHECK_THROWS_AS(load_checkpoint(dir / "m.ckpt", g), CheckpointError);
  auto d = init_discriminator(DiscriminatorConfig{}, 1);
  auto g2 = init_generator(gc, 1);
  CHECK_THROWS_AS(load_checkpoint(dir / "m.ckpt", g2, &d), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt", g2), CheckpointError);
}
