#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcu4d/data.hpp"
#include "pcu4d/upsampler.hpp"

namespace pcu4d {

struct BenchCase {
  std::size_t input_size = 0;  // points per frame
  std::size_t scale = 0;
};

/// Input size / scale pairs of the reference timing table.
inline std::vector<BenchCase> default_bench_grid() {
  return {{1024, 3}, {1024, 2}, {512, 4}, {512, 2}, {256, 8}, {256, 4}};
}

struct BenchRow {
  BenchCase c;
  double median_s = 0.0;
  double p90_s = 0.0;
};

struct BenchOptions {
  std::size_t frames = 3;
  std::size_t warmup = 3;
  std::size_t runs = 20;
  std::uint64_t seed = 7;
};

/// Nearest-rank quantile of an unsorted sample.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quantile: empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

/// Times the generator forward pass (graph construction included) on a
/// synthetic fused window for each case.
inline std::vector<BenchRow> run_bench(const std::vector<BenchCase>& grid, const BenchOptions& opt) {
  if (opt.runs == 0) throw std::invalid_argument("bench: runs must be >= 1");
  std::vector<BenchRow> rows;
  for (const auto& c : grid) {
    GeneratorConfig cfg;
    cfg.pds.scale = c.scale;
    const GeneratorParams params = init_generator(cfg, opt.seed);
    SyntheticSpec spec;
    spec.points = c.input_size;
    spec.frames = opt.frames;
    spec.seed = opt.seed;
    const FusedCloud cloud = fuse(normalize(gen_synthetic_sequence(spec)).frames);
    std::vector<double> times;
    for (std::size_t r = 0; r < opt.warmup + opt.runs; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      Tape tape;
      auto trace = generator_forward(tape, cloud, params, cfg, false);
      if (tape.value(trace.output).rows != c.scale * cloud.size()) throw std::logic_error("bench: bad output size");
      const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
      if (r >= opt.warmup) times.push_back(dt.count());
    }
    rows.push_back({c, quantile(times, 0.5), quantile(times, 0.9)});
  }
  return rows;
}

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = "input_size,scale,median_s,p90_s\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.6f,%.6f\n", r.c.input_size, r.c.scale, r.median_s, r.p90_s);
    out += buf;
  }
  return out;
}

}  // namespace pcu4d
