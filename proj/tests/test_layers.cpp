#include <catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "pcu4d/layers.hpp"

using namespace pcu4d;

namespace {

struct Case {
  Tensor pts;
  EdgeList graph;
  EdgeConvAttnParams p;
};

Case make_case(std::size_t n, std::size_t in, std::size_t out, std::size_t k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Case c;
  c.pts = oracle::random_cloud(n, in, rng);
  c.graph = to_edges(knn(c.pts, k, Metric::all));
  c.p = layer_init({in, out, out, k}, seed);
  // Nonzero biases exercise their gradients.
  for (auto& v : c.p.mlp1.bias.data) v = 0.1 * oracle::random_cloud(1, 1, rng)(0, 0);
  for (auto& v : c.p.mlp2.bias.data) v = 0.1 * oracle::random_cloud(1, 1, rng)(0, 0);
  return c;
}

}  // namespace

TEST_CASE("layer init is deterministic and float representable") {
  auto a = layer_init({4, 8, 8, 9}, 5), b = layer_init({4, 8, 8, 9}, 5);
  CHECK(a.mlp1.weight == b.mlp1.weight);
  CHECK(a.attn == b.attn);
  for (double v : a.mlp1.weight.data) CHECK(static_cast<double>(static_cast<float>(v)) == v);
  CHECK(a.mlp1.weight.rows == 8);
  CHECK(a.mlp1.weight.cols == 8);
  CHECK_THROWS(layer_init({0, 8, 8, 9}, 1));
}

TEST_CASE("edge conv output shape and width checks") {
  auto c = make_case(20, 4, 16, 5, 1);
  Tape t;
  Var y = edge_conv_attention(t, t.constant(c.pts), c.graph, c.p);
  CHECK(t.value(y).rows == 20);
  CHECK(t.value(y).cols == 16);
  Tape t2;
  CHECK_THROWS_AS(edge_conv_attention(t2, t2.constant(Tensor(20, 5)), c.graph, c.p), ShapeError);
}

TEST_CASE("attention weights sum to one per point") {
  auto c = make_case(40, 4, 8, 9, 2);
  Tape t;
  Var alpha{};
  edge_conv_attention(t, t.constant(c.pts), c.graph, c.p, true, true, &alpha);
  const Tensor& a = t.value(alpha);
  for (std::size_t s = 0; s < c.graph.segments(); ++s) {
    double sum = 0.0;
    for (std::size_t e = c.graph.offsets[s]; e < c.graph.offsets[s + 1]; ++e) {
      CHECK(a(e, 0) >= 0.0);
      sum += a(e, 0);
    }
    CHECK(sum == Catch::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("without attention the aggregation is the plain mean of messages") {
  auto c = make_case(15, 3, 6, 4, 3);
  Tape t;
  Var x = t.constant(c.pts);
  Var mean_out = edge_conv_attention(t, x, c.graph, c.p, false);
  // Uniform attention weights reproduce the mean.
  Tensor uniform(c.graph.edges(), 1);
  for (std::size_t s = 0; s < c.graph.segments(); ++s)
    for (std::size_t e = c.graph.offsets[s]; e < c.graph.offsets[s + 1]; ++e)
      uniform(e, 0) = 1.0 / static_cast<double>(c.graph.offsets[s + 1] - c.graph.offsets[s]);
  Var hidden = t.leaky_relu(edge_linear(t, x, c.graph, c.p.mlp1, false));
  Var msg = apply_linear(t, hidden, c.p.mlp2, false);
  Var ref = t.segment_weighted_sum(msg, t.constant(uniform), c.graph.offsets);
  for (std::size_t i = 0; i < t.value(ref).size(); ++i)
    CHECK(t.value(mean_out).data[i] == Catch::Approx(t.value(ref).data[i]).margin(1e-12));
}

TEST_CASE("attention parameters get zero gradient when attention is off") {
  auto c = make_case(25, 4, 8, 5, 4);
  Tape t;
  Var y = edge_conv_attention(t, t.constant(c.pts), c.graph, c.p, false);
  t.backward(check::readout(t, y));
  for (double g : t.param_grad(c.p.attn).data) CHECK(g == 0.0);
  for (double g : t.param_grad(c.p.proj).data) CHECK(g == 0.0);
  bool any = false;
  for (double g : t.param_grad(c.p.mlp1.weight).data) any = any || g != 0.0;
  CHECK(any);
}

TEST_CASE("split evaluation of the edge linear equals the explicit concatenation") {
  auto c = make_case(12, 3, 5, 4, 5);
  Tape t;
  Var x = t.constant(c.pts);
  Var fast = edge_linear(t, x, c.graph, c.p.mlp1, false);
  Tensor cat(c.graph.edges(), 6);
  for (std::size_t e = 0; e < c.graph.edges(); ++e)
    for (std::size_t k = 0; k < 3; ++k) {
      cat(e, k) = c.pts(c.graph.source[e], k);
      cat(e, 3 + k) = c.pts(c.graph.target[e], k) - c.pts(c.graph.source[e], k);
    }
  Var slow = t.linear(t.constant(cat), t.constant(c.p.mlp1.weight), t.constant(c.p.mlp1.bias));
  for (std::size_t i = 0; i < t.value(slow).size(); ++i)
    CHECK(t.value(fast).data[i] == Catch::Approx(t.value(slow).data[i]).margin(1e-12));
}

TEST_CASE("layer is equivariant to point relabelling") {
  auto c = make_case(30, 4, 8, 6, 6);
  std::mt19937_64 rng(6);
  std::vector<std::size_t> perm = all_indices(30);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor q(30, 4);
  for (std::size_t i = 0; i < 30; ++i)
    for (std::size_t k = 0; k < 4; ++k) q(i, k) = c.pts(perm[i], k);
  Tensor a = edge_conv_attention_forward(c.pts, c.pts, c.p);
  Tensor b = edge_conv_attention_forward(q, q, c.p);
  for (std::size_t i = 0; i < 30; ++i)
    for (std::size_t k = 0; k < 8; ++k) CHECK(b(i, k) == Catch::Approx(a(perm[i], k)).margin(1e-12));
}

TEST_CASE("edge conv gradients match finite differences") {
  for (std::uint64_t seed = 10; seed < 16; ++seed) {
    auto c = make_case(18, 4, 6, 4, seed);
    const bool attn = seed % 2 == 0;
    auto feat = check::tape_grad(
        [&](Tape& t, Var x) { return check::readout(t, edge_conv_attention(t, x, c.graph, c.p, attn)); }, c.pts);
    INFO("features " << feat.max_rel_error);
    CHECK(feat.pass);
    for (Tensor* w : {&c.p.mlp1.weight, &c.p.mlp1.bias, &c.p.mlp2.weight, &c.p.proj, &c.p.attn}) {
      if (!attn && (w == &c.p.proj || w == &c.p.attn)) continue;
      auto r = check::param_grad(
          [&](Tape& t) { return check::readout(t, edge_conv_attention(t, t.constant(c.pts), c.graph, c.p, attn)); },
          *w);
      INFO("param " << r.max_rel_error);
      CHECK(r.pass);
    }
  }
}

TEST_CASE("param count of a single layer") {
  auto p = layer_init({4, 32, 32, 9}, 1);
  // mlp1 8*32+32, mlp2 32*32+32, proj 4*32, attn 64
  CHECK(param_count(p).count == 288 + 1056 + 128 + 64);
  CHECK(param_count(p).bytes == 4 * param_count(p).count);
}
