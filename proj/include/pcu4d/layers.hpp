#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "pcu4d/autodiff.hpp"
#include "pcu4d/geometry.hpp"
#include "pcu4d/tensor.hpp"

namespace pcu4d {

inline constexpr double kLeakySlope = 0.2;

/// Dense affine map: weight (in x out), bias (1 x out).
struct LinearParams {
  Tensor weight;
  Tensor bias;

  std::size_t in() const { return weight.rows; }
  std::size_t out() const { return weight.cols; }
};

template <typename P>
concept LinearLike = std::same_as<std::remove_const_t<P>, LinearParams>;

template <LinearLike P, typename F>
void for_each_tensor(P& p, const std::string& prefix, F&& f) {
  f(prefix + ".weight", p.weight);
  f(prefix + ".bias", p.bias);
}

/// Glorot-uniform matrix, entries representable as float32.
inline Tensor glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(fan_in, fan_out);
  for (auto& x : t.data) x = static_cast<double>(static_cast<float>(dist(rng)));
  return t;
}

inline LinearParams linear_init(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return {glorot(in, out, rng), Tensor(1, out)};
}

inline Var bind(Tape& tape, const Tensor& p, bool trainable) {
  return trainable ? tape.param(p) : tape.constant(p);
}

inline Var apply_linear(Tape& tape, Var x, const LinearParams& p, bool trainable = true) {
  return tape.linear(x, bind(tape, p.weight, trainable), bind(tape, p.bias, trainable));
}

/// Evaluates W [f_i || f_j - f_i] + b for every edge (i, j) without forming
/// the concatenation: with W = [Wa; Wb] this equals f_i (Wa - Wb) + f_j Wb + b,
/// so the products are taken per point and then gathered per edge.
inline Var edge_linear(Tape& tape, Var features, const EdgeList& edges, const LinearParams& p,
                       bool trainable = true) {
  const std::size_t C = tape.value(features).cols;
  if (p.weight.rows != 2 * C) throw ShapeError("edge_linear: weight rows must be twice the feature width");
  Var w = bind(tape, p.weight, trainable);
  Var wa = tape.slice_rows(w, 0, C);
  Var wb = tape.slice_rows(w, C, 2 * C);
  Var center_part = tape.matmul(features, tape.sub(wa, wb));
  Var neighbor_part = tape.matmul(features, wb);
  Var per_edge = tape.add(tape.gather_rows(center_part, edges.source), tape.gather_rows(neighbor_part, edges.target));
  return tape.add_row(per_edge, bind(tape, p.bias, trainable));
}

// ---------------------------------------------------------------------------
// Edge convolution with attention

struct LayerShape {
  std::size_t in = 0;
  std::size_t hidden = 0;
  std::size_t out = 0;
  std::size_t k = 9;
};

/// Message MLP (2*in -> hidden -> out, leaky-ReLU between) plus single-head
/// attention: a center projection (in x out) and a scoring vector over
/// [projected center || message] (2*out x 1).
struct EdgeConvAttnParams {
  LayerShape shape;
  LinearParams mlp1;
  LinearParams mlp2;
  Tensor proj;
  Tensor attn;
};

template <typename P>
  requires std::same_as<std::remove_const_t<P>, EdgeConvAttnParams>
void for_each_tensor(P& p, const std::string& prefix, auto&& f) {
  for_each_tensor(p.mlp1, prefix + ".mlp1", f);
  for_each_tensor(p.mlp2, prefix + ".mlp2", f);
  f(prefix + ".proj", p.proj);
  f(prefix + ".attn", p.attn);
}

inline void validate(const LayerShape& s) {
  if (s.in == 0 || s.hidden == 0 || s.out == 0 || s.k == 0)
    throw std::invalid_argument("layer shape dimensions must be positive");
}

/// Glorot-uniform weights, zero biases; deterministic in `seed`.
inline EdgeConvAttnParams layer_init(const LayerShape& shape, std::uint64_t seed) {
  validate(shape);
  std::mt19937_64 rng(seed);
  EdgeConvAttnParams p;
  p.shape = shape;
  p.mlp1 = linear_init(2 * shape.in, shape.hidden, rng);
  p.mlp2 = linear_init(shape.hidden, shape.out, rng);
  p.proj = glorot(shape.in, shape.out, rng);
  p.attn = glorot(2 * shape.out, 1, rng);
  return p;
}

/// k-NN graph in the space spanned by `points`: raw (x, y, z, t) for the
/// first layer, learned features afterwards.
inline NeighborList build_dynamic_graph(const Tensor& points, std::size_t k, Metric metric = Metric::all) {
  return knn(points, k, metric);
}

/// One edge convolution with attentional aggregation on the tape.
///
/// For each point i and neighbor j: m_ij = MLP([f_i || f_j - f_i]),
/// e_ij = leaky(attn . [proj f_i || m_ij]), alpha = softmax_j(e_ij) and
/// o_i = sum_j alpha_ij m_ij. Without attention the aggregation is the plain
/// mean. Points without neighbors output zeros.
///
/// `graph` must hold one segment per feature row, in row order. When
/// `attention_out` is given it receives the (E x 1) attention weights.
inline Var edge_conv_attention(Tape& tape, Var features, const EdgeList& graph, const EdgeConvAttnParams& p,
                               bool use_attention = true, bool trainable = true, Var* attention_out = nullptr) {
  const Tensor& F = tape.value(features);
  if (F.cols != p.shape.in)
    throw ShapeError("edge_conv_attention: feature width " + std::to_string(F.cols) + " != layer input " +
                     std::to_string(p.shape.in));
  if (graph.segments() != F.rows) throw ShapeError("edge_conv_attention: graph does not cover every point");

  Var hidden = tape.leaky_relu(edge_linear(tape, features, graph, p.mlp1, trainable), kLeakySlope);
  Var messages = apply_linear(tape, hidden, p.mlp2, trainable);
  if (!use_attention) return tape.segment_mean(messages, graph.offsets);

  const std::size_t C = p.shape.out;
  Var attn = bind(tape, p.attn, trainable);
  Var center_score = tape.matmul(tape.matmul(features, bind(tape, p.proj, trainable)), tape.slice_rows(attn, 0, C));
  Var message_score = tape.matmul(messages, tape.slice_rows(attn, C, 2 * C));
  Var logits = tape.leaky_relu(tape.add(tape.gather_rows(center_score, graph.source), message_score), kLeakySlope);
  Var alpha = tape.segment_softmax(logits, graph.offsets);
  if (attention_out) *attention_out = alpha;
  return tape.segment_weighted_sum(messages, alpha, graph.offsets);
}

/// Evaluates one layer outside of training: builds the k-NN graph over
/// `graph_points` with the layer's k and returns the output features.
inline Tensor edge_conv_attention_forward(const Tensor& graph_points, const Tensor& features,
                                          const EdgeConvAttnParams& p, bool use_attention = true,
                                          Metric metric = Metric::all) {
  if (graph_points.rows != features.rows) throw ShapeError("edge_conv_attention_forward: row mismatch");
  Tape tape;
  EdgeList graph = to_edges(build_dynamic_graph(graph_points, p.shape.k, metric));
  Var out = edge_conv_attention(tape, tape.constant(features), graph, p, use_attention, false);
  return tape.value(out);
}

/// Scalar parameter count and size at 4 bytes per parameter.
struct ParamCount {
  std::size_t count = 0;
  std::size_t bytes = 0;
};

template <typename P>
ParamCount param_count(const P& params) {
  ParamCount c;
  for_each_tensor(params, "", [&](const std::string&, const Tensor& t) { c.count += t.size(); });
  c.bytes = 4 * c.count;
  return c;
}

}  // namespace pcu4d
