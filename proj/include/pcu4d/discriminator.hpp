#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pcu4d/autodiff.hpp"
#include "pcu4d/geometry.hpp"
#include "pcu4d/layers.hpp"

namespace pcu4d {

struct SetAbstractionConfig {
  double keep = 0.5;
  double radius = 0.1;
  std::vector<std::size_t> widths;  // per-point MLP, input width first
  std::size_t ball_cap = 32;
};

struct DiscriminatorConfig {
  std::vector<SetAbstractionConfig> levels{{0.5, 0.1, {3, 32, 64}, 32}, {0.25, 0.2, {64, 128}, 32}};
  std::vector<std::size_t> head{128, 64, 1};

  void validate() const {
    if (levels.empty()) throw std::invalid_argument("discriminator: need at least one level");
    if (levels.front().widths.empty() || levels.front().widths.front() != 3)
      throw std::invalid_argument("discriminator: first level consumes xyz (width 3)");
    for (std::size_t l = 0; l < levels.size(); ++l) {
      const auto& lv = levels[l];
      if (!(lv.keep > 0.0 && lv.keep <= 1.0)) throw std::invalid_argument("discriminator: keep must be in (0, 1]");
      if (!(lv.radius > 0.0)) throw std::invalid_argument("discriminator: radius must be positive");
      if (lv.widths.size() < 2 || lv.ball_cap == 0) throw std::invalid_argument("discriminator: bad level widths");
      if (l > 0 && lv.widths.front() != levels[l - 1].widths.back())
        throw std::invalid_argument("discriminator: level widths do not chain");
    }
    if (head.size() < 2 || head.front() != levels.back().widths.back() || head.back() != 1)
      throw std::invalid_argument("discriminator: head must map pooled features to one score");
  }
};

struct SetAbstractionParams {
  double keep = 0.5;
  double radius = 0.1;
  std::size_t ball_cap = 32;
  std::vector<LinearParams> mlp;
};

struct DiscriminatorParams {
  std::vector<SetAbstractionParams> levels;
  std::vector<LinearParams> head;
};

template <typename P>
  requires std::same_as<std::remove_const_t<P>, DiscriminatorParams>
void for_each_tensor(P& p, const std::string& prefix, auto&& f) {
  for (std::size_t l = 0; l < p.levels.size(); ++l)
    for (std::size_t m = 0; m < p.levels[l].mlp.size(); ++m)
      for_each_tensor(p.levels[l].mlp[m], prefix + "sa" + std::to_string(l) + ".mlp" + std::to_string(m), f);
  for (std::size_t m = 0; m < p.head.size(); ++m) for_each_tensor(p.head[m], prefix + "head" + std::to_string(m), f);
}

inline DiscriminatorParams init_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  DiscriminatorParams d;
  for (const auto& lv : cfg.levels) {
    SetAbstractionParams sa{lv.keep, lv.radius, lv.ball_cap, {}};
    for (std::size_t i = 0; i + 1 < lv.widths.size(); ++i) sa.mlp.push_back(linear_init(lv.widths[i], lv.widths[i + 1], rng));
    d.levels.push_back(std::move(sa));
  }
  for (std::size_t i = 0; i + 1 < cfg.head.size(); ++i) d.head.push_back(linear_init(cfg.head[i], cfg.head[i + 1], rng));
  return d;
}

struct SetAbstractionResult {
  Tensor xyz;  // centroids
  Var features;
};

/// One PointNet++-style level: farthest point sampling picks centroids
/// (seeded at the lexicographically smallest point, so the choice does not
/// depend on point order); every point goes through the per-point MLP; each
/// centroid takes the elementwise max over its r-ball, itself included.
inline SetAbstractionResult set_abstraction_level(Tape& tape, const Tensor& xyz, Var features,
                                                  const SetAbstractionParams& level, bool trainable = true) {
  if (tape.value(features).rows != xyz.rows) throw ShapeError("set_abstraction: feature rows != points");
  if (level.mlp.empty() || level.mlp.front().in() != tape.value(features).cols)
    throw ShapeError("set_abstraction: feature width does not match mlp input");
  auto centroids = fps(xyz, level.keep, FpsSeed::lexicographic(), Metric::xyz).centers;
  NeighborList ball = ball_query(xyz, centroids, level.radius, level.ball_cap, Metric::xyz);

  Var h = features;
  for (const auto& lin : level.mlp) h = tape.leaky_relu(apply_linear(tape, h, lin, trainable), kLeakySlope);

  std::vector<std::size_t> members, offsets{0};
  for (std::size_t q = 0; q < centroids.size(); ++q) {
    members.push_back(centroids[q]);
    members.insert(members.end(), ball.neighbors[q].begin(), ball.neighbors[q].end());
    offsets.push_back(members.size());
  }
  SetAbstractionResult r;
  r.xyz = Tensor(centroids.size(), 3);
  for (std::size_t q = 0; q < centroids.size(); ++q)
    for (std::size_t c = 0; c < 3; ++c) r.xyz(q, c) = xyz(centroids[q], c);
  r.features = tape.segment_max(tape.gather_rows(h, std::move(members)), std::move(offsets));
  return r;
}

/// Realness score (1 x 1, unsquashed) for an (N x 3) point set. Gradients flow
/// to `points` through the first level's per-point MLP.
inline Var discriminator_forward(Tape& tape, Var points, const DiscriminatorParams& params, bool trainable = true) {
  const Tensor xyz = tape.value(points);
  if (xyz.rows == 0) throw std::invalid_argument("discriminator: empty cloud");
  if (xyz.cols != 3) throw ShapeError("discriminator: points must be N x 3");
  if (params.levels.empty() || params.head.empty()) throw ShapeError("discriminator: uninitialized parameters");
  Tensor cur = xyz;
  Var f = points;
  for (const auto& lv : params.levels) {
    auto r = set_abstraction_level(tape, cur, f, lv, trainable);
    cur = std::move(r.xyz);
    f = r.features;
  }
  Var pooled = tape.segment_max(f, {0, tape.value(f).rows});
  for (std::size_t i = 0; i < params.head.size(); ++i) {
    pooled = apply_linear(tape, pooled, params.head[i], trainable);
    if (i + 1 < params.head.size()) pooled = tape.leaky_relu(pooled, kLeakySlope);
  }
  return pooled;
}

inline double discriminator_score(const Tensor& points, const DiscriminatorParams& params) {
  Tape tape;
  return tape.value(discriminator_forward(tape, tape.constant(points), params, false))(0, 0);
}

}  // namespace pcu4d
