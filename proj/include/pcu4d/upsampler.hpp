#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcu4d/autodiff.hpp"
#include "pcu4d/geometry.hpp"
#include "pcu4d/layers.hpp"

namespace pcu4d {

/// Parallel Double Sampling settings. Branch A convolves over the ball of
/// radius r_small thinned by farthest point sampling (fraction s); branch B
/// over the k nearest neighbors. r_large is the companion radius used by the
/// density loss.
struct PdsConfig {
  double r_small = 0.06;
  double r_large = 0.1;
  double s = 0.25;
  std::size_t k = 9;
  std::size_t ball_cap = 32;
  std::size_t channels_in = 64;
  std::size_t channels_out = 64;
  std::size_t scale = 2;

  void validate() const {
    if (!(s > 0.0 && s <= 1.0)) throw std::invalid_argument("pds: s must be in (0, 1]");
    if (!(r_small > 0.0)) throw std::invalid_argument("pds: r_small must be positive");
    if (k == 0) throw std::invalid_argument("pds: k must be >= 1");
    if (scale == 0) throw std::invalid_argument("pds: scale factor must be >= 1");
    if (ball_cap == 0 || channels_in == 0 || channels_out == 0) throw std::invalid_argument("pds: zero width");
  }
};

struct GeneratorConfig {
  /// Edge-convolution stack widths; widths[0] is the (x, y, z, t) input.
  std::vector<std::size_t> widths{4, 32, 64, 64};
  std::size_t layer_k = 9;
  PdsConfig pds;
  bool use_attention = true;
  /// Rebuild the k-NN graph in feature space before every layer after the
  /// first; otherwise reuse the coordinate graph throughout.
  bool rebuild_graph = true;
  Metric coord_metric = Metric::xyzt;

  std::size_t scale() const { return pds.scale; }

  void validate() const {
    if (widths.size() < 2) throw std::invalid_argument("generator: need at least one edge-conv layer");
    if (widths.front() != 4) throw std::invalid_argument("generator: first width must be 4 (x, y, z, t)");
    if (widths.back() != pds.channels_in) throw std::invalid_argument("generator: last width must equal pds input");
    if (layer_k == 0) throw std::invalid_argument("generator: layer k must be >= 1");
    pds.validate();
  }
};

/// Output size of an upscaling task: H = S * L * n.
struct UpscaleSpec {
  std::size_t L = 0;
  std::size_t n = 0;
  std::size_t S = 0;

  std::size_t H() const { return S * L * n; }
};

struct PdsParams {
  LinearParams branch_a;  // 2*C_in -> C_in, ball + fps neighbors
  LinearParams branch_b;  // 2*C_in -> C_in, k-NN neighbors
  LinearParams fusion;    // 2*C_in -> C_out
};

struct GeneratorParams {
  std::vector<EdgeConvAttnParams> layers;
  PdsParams pds;
  LinearParams head;  // C_out -> 3*S
};

template <typename P>
  requires std::same_as<std::remove_const_t<P>, PdsParams>
void for_each_tensor(P& p, const std::string& prefix, auto&& f) {
  for_each_tensor(p.branch_a, prefix + ".branch_a", f);
  for_each_tensor(p.branch_b, prefix + ".branch_b", f);
  for_each_tensor(p.fusion, prefix + ".fusion", f);
}

template <typename P>
  requires std::same_as<std::remove_const_t<P>, GeneratorParams>
void for_each_tensor(P& p, const std::string& prefix, auto&& f) {
  for (std::size_t l = 0; l < p.layers.size(); ++l)
    for_each_tensor(p.layers[l], prefix + "layer" + std::to_string(l), f);
  for_each_tensor(p.pds, prefix + "pds", f);
  for_each_tensor(p.head, prefix + "head", f);
}

inline GeneratorParams init_generator(const GeneratorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  GeneratorParams g;
  for (std::size_t l = 0; l + 1 < cfg.widths.size(); ++l) {
    LayerShape shape{cfg.widths[l], cfg.widths[l + 1], cfg.widths[l + 1], cfg.layer_k};
    g.layers.push_back(layer_init(shape, seed + 1000 * (l + 1)));
  }
  std::mt19937_64 rng(seed);
  const std::size_t C = cfg.pds.channels_in;
  g.pds.branch_a = linear_init(2 * C, C, rng);
  g.pds.branch_b = linear_init(2 * C, C, rng);
  g.pds.fusion = linear_init(2 * C, cfg.pds.channels_out, rng);
  g.head = linear_init(cfg.pds.channels_out, 3 * cfg.pds.scale, rng);
  return g;
}

/// Neighborhoods used by the two PDS branches; they depend on coordinates only.
struct PdsGraphs {
  EdgeList sampled;  // ball(r_small) thinned by fps, per point
  EdgeList nearest;  // k-NN
};

/// Branch A keeps, for every point, the fraction s of its r_small ball chosen
/// by farthest point sampling seeded at the ball's nearest member. Branch B
/// takes the k nearest neighbors under `metric`.
inline PdsGraphs pds_graphs(const Tensor& coords, const PdsConfig& cfg, Metric metric = Metric::xyzt) {
  cfg.validate();
  PdsGraphs g;
  NeighborList ball = ball_query(coords, cfg.r_small, cfg.ball_cap, Metric::xyz);
  for (auto& nb : ball.neighbors) {
    if (nb.empty()) continue;
    nb = fps(coords, nb, cfg.s, FpsSeed::at(nb.front()), Metric::xyz).centers;
  }
  g.sampled = to_edges(ball);
  g.nearest = to_edges(knn(coords, cfg.k, metric));
  return g;
}

/// Mean-aggregated edge convolution: mean_j leaky(W [f_i || f_j - f_i] + b).
inline Var mean_edge_conv(Tape& tape, Var features, const EdgeList& graph, const LinearParams& p,
                          bool trainable = true) {
  Var msg = tape.leaky_relu(edge_linear(tape, features, graph, p, trainable), kLeakySlope);
  return tape.segment_mean(msg, graph.offsets);
}

/// Both branches, concatenation, and the fusion linear 2*C -> C_out.
inline Var pds_forward(Tape& tape, Var features, const PdsGraphs& graphs, const PdsParams& p,
                       bool trainable = true) {
  const Tensor& F = tape.value(features);
  if (p.branch_a.in() != 2 * F.cols || p.branch_b.in() != 2 * F.cols)
    throw ShapeError("pds_forward: feature width does not match branch weights");
  if (graphs.sampled.segments() != F.rows || graphs.nearest.segments() != F.rows)
    throw ShapeError("pds_forward: graphs do not cover every point");
  Var a = mean_edge_conv(tape, features, graphs.sampled, p.branch_a, trainable);
  Var b = mean_edge_conv(tape, features, graphs.nearest, p.branch_b, trainable);
  return apply_linear(tape, tape.concat_cols(a, b), p.fusion, trainable);
}

/// Intermediate values of one generator evaluation.
struct GeneratorTrace {
  Var output;                       // (S * N) x 3
  std::vector<Var> layer_features;  // output of every edge-conv layer
  Var pds_features;
};

/// Edge-conv stack, PDS, then an offset head emitting S displacements per
/// input point. Output row i * S + s is input_xyz(i) + offset(i, s).
inline GeneratorTrace generator_forward(Tape& tape, const FusedCloud& cloud, const GeneratorParams& params,
                                        const GeneratorConfig& cfg, bool trainable = true) {
  if (cloud.points.empty()) throw std::invalid_argument("generator_forward: empty cloud");
  if (params.layers.size() + 1 != cfg.widths.size())
    throw ShapeError("generator_forward: parameter layers do not match config widths");
  const std::size_t N = cloud.size();
  const std::size_t S = cfg.scale();
  if (params.head.out() != 3 * S) throw ShapeError("generator_forward: offset head width does not match scale");

  const Tensor coords = cloud.coords();
  const EdgeList coord_graph = to_edges(build_dynamic_graph(coords, cfg.layer_k, cfg.coord_metric));

  GeneratorTrace trace;
  Var f = tape.constant(coords);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    EdgeList rebuilt;
    const EdgeList* graph = &coord_graph;
    if (l > 0 && cfg.rebuild_graph) {
      rebuilt = to_edges(build_dynamic_graph(tape.value(f), params.layers[l].shape.k, Metric::all));
      graph = &rebuilt;
    }
    f = tape.leaky_relu(edge_conv_attention(tape, f, *graph, params.layers[l], cfg.use_attention, trainable),
                        kLeakySlope);
    trace.layer_features.push_back(f);
  }

  const PdsGraphs graphs = pds_graphs(coords, cfg.pds, cfg.coord_metric);
  trace.pds_features = pds_forward(tape, f, graphs, params.pds, trainable);
  Var offsets = apply_linear(tape, tape.leaky_relu(trace.pds_features, kLeakySlope), params.head, trainable);

  std::vector<std::size_t> anchor(N * S);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t s = 0; s < S; ++s) anchor[i * S + s] = i;
  Var anchors = tape.gather_rows(tape.constant(cloud.xyz()), std::move(anchor));
  trace.output = tape.add(anchors, tape.reshape(offsets, N * S, 3));
  return trace;
}

/// Inference convenience: upscaled xyz points of a fused window.
inline std::vector<Point3> upsample(const FusedCloud& cloud, const GeneratorParams& params,
                                    const GeneratorConfig& cfg) {
  Tape tape;
  auto trace = generator_forward(tape, cloud, params, cfg, false);
  return to_points(tape.value(trace.output));
}

}  // namespace pcu4d
