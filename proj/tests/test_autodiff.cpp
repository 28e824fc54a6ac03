#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "pcu4d/autodiff.hpp"

using namespace pcu4d;

namespace {

Tensor rand_t(std::size_t r, std::size_t c, std::mt19937_64& rng) { return oracle::random_cloud(r, c, rng); }

void require_pass(const GradCheckReport& r) {
  INFO("max rel error " << r.max_rel_error << ", excluded " << r.excluded);
  REQUIRE(r.pass);
  REQUIRE(r.excluded < r.analytic.size());
}

}  // namespace

TEST_CASE("backward requires a scalar output") {
  Tape t;
  Var x = t.leaf(Tensor(2, 2, 1.0));
  CHECK_THROWS_AS(t.backward(x), ShapeError);
}

TEST_CASE("linear forward matches hand computation") {
  Tape t;
  Tensor x(1, 2);
  x.data = {1, 2};
  Tensor w(2, 2);
  w.data = {1, 2, 3, 4};
  Tensor b(1, 2);
  b.data = {0.5, -0.5};
  Var y = t.linear(t.constant(x), t.constant(w), t.constant(b));
  CHECK(t.value(y).data == std::vector<double>{7.5, 9.5});
}

TEST_CASE("matmul shape mismatch throws") {
  Tape t;
  CHECK_THROWS_AS(t.matmul(t.constant(Tensor(2, 3)), t.constant(Tensor(2, 3))), ShapeError);
}

TEST_CASE("elementwise and matrix ops have correct gradients") {
  std::mt19937_64 rng(1);
  const Tensor w = rand_t(4, 3, rng), b = rand_t(1, 3, rng), other = rand_t(5, 4, rng);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x0 = rand_t(5, 4, rng);
    require_pass(check::tape_grad(
        [&](Tape& t, Var x) { return check::readout(t, t.linear(x, t.constant(w), t.constant(b))); }, x0));
    require_pass(check::tape_grad(
        [&](Tape& t, Var x) { return check::readout(t, t.mul(x, t.add(x, t.constant(other)))); }, x0));
    require_pass(check::tape_grad([&](Tape& t, Var x) { return check::readout(t, t.leaky_relu(t.sub(x, t.constant(other)))); }, x0));
    require_pass(check::tape_grad(
        [&](Tape& t, Var x) {
          Var g = t.gather_rows(x, {4, 0, 0, 2});
          Var c = t.concat_cols(g, t.slice_rows(x, 1, 5));
          return check::readout(t, t.reshape(t.scale(c, 1.5), 2, 16));
        },
        x0));
    require_pass(check::tape_grad(
        [&](Tape& t, Var x) { return check::readout(t, t.add_row(x, t.slice_rows(x, 2, 3))); }, x0));
  }
}

TEST_CASE("weight gradient of matmul") {
  std::mt19937_64 rng(2);
  const Tensor x = rand_t(6, 3, rng);
  Tensor w = rand_t(3, 2, rng);
  require_pass(check::param_grad([&](Tape& t) { return check::readout(t, t.matmul(t.constant(x), t.param(w))); }, w));
}

TEST_CASE("segment softmax sums to one and has correct gradients") {
  std::mt19937_64 rng(3);
  std::vector<std::size_t> off{0, 3, 3, 7, 8};
  Tape t;
  Var a = t.segment_softmax(t.constant(rand_t(8, 1, rng)), off);
  const Tensor& v = t.value(a);
  for (std::size_t s = 0; s + 1 < off.size(); ++s) {
    if (off[s] == off[s + 1]) continue;
    double sum = 0.0;
    for (std::size_t e = off[s]; e < off[s + 1]; ++e) sum += v(e, 0);
    CHECK(sum == Catch::Approx(1.0).epsilon(1e-12));
  }
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor vals = rand_t(8, 3, rng);
    require_pass(check::tape_grad(
        [&](Tape& tp, Var x) {
          return check::readout(tp, tp.segment_weighted_sum(tp.constant(vals), tp.segment_softmax(x, off), off));
        },
        rand_t(8, 1, rng)));
    const Tensor wts = rand_t(8, 1, rng);
    require_pass(check::tape_grad(
        [&](Tape& tp, Var x) { return check::readout(tp, tp.segment_weighted_sum(x, tp.constant(wts), off)); },
        rand_t(8, 3, rng)));
    require_pass(check::tape_grad([&](Tape& tp, Var x) { return check::readout(tp, tp.segment_mean(x, off)); },
                                  rand_t(8, 3, rng)));
  }
}

TEST_CASE("segment max routes the gradient to the argmax") {
  Tape t;
  Tensor x(3, 1);
  x.data = {1.0, 5.0, 2.0};
  Var v = t.leaf(x);
  Var m = t.segment_max(v, {0, 3});
  CHECK(t.value(m)(0, 0) == 5.0);
  auto g = t.backward(t.sum(m));
  CHECK(g.at(v.id).data == std::vector<double>{0.0, 1.0, 0.0});
  Tape t2;
  CHECK_THROWS(t2.segment_max(t2.constant(x), {0, 0, 3}));
}

TEST_CASE("empty segments give zero for mean and weighted sum") {
  Tape t;
  Var m = t.segment_mean(t.constant(Tensor(2, 2, 1.0)), {0, 0, 2});
  CHECK(t.value(m)(0, 0) == 0.0);
  CHECK(t.value(m)(1, 1) == 1.0);
}

TEST_CASE("chamfer on the tape matches the oracle and differentiates") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor p = rand_t(7 + trial, 3, rng), q = rand_t(5 + trial, 3, rng);
    Tape t;
    CHECK(t.value(t.chamfer(t.constant(p), q))(0, 0) == Catch::Approx(oracle::chamfer(p, q)).epsilon(1e-12));
    require_pass(check::tape_grad([&](Tape& tp, Var x) { return tp.chamfer(x, q); }, p));
    require_pass(check::tape_grad([&](Tape& tp, Var x) { return tp.chamfer(x, q, true); }, p));
  }
}

TEST_CASE("lsgan value and gradient") {
  Tape t;
  Tensor s(2, 1);
  s.data = {1.0, 3.0};
  Var v = t.leaf(s);
  Var l = t.lsgan(v, 1.0);
  CHECK(t.value(l)(0, 0) == Catch::Approx(1.0));
  auto g = t.backward(l);
  CHECK(g.at(v.id).data[1] == Catch::Approx(1.0));
}

TEST_CASE("grad_check flags kinks instead of failing on them") {
  auto f = [](std::span<const double> x) { return std::abs(x[0]) + x[1] * x[1]; };
  std::vector<double> point{0.0, 2.0}, analytic{0.0, 4.0};
  auto r = grad_check(f, analytic, point);
  CHECK(r.non_smooth[0]);
  CHECK_FALSE(r.non_smooth[1]);
  CHECK(r.pass);
  std::vector<double> wrong{0.0, 3.0};
  CHECK_FALSE(grad_check(f, wrong, point).pass);
}

TEST_CASE("grad_check accepts a vanishing derivative only within roundoff") {
  // x0 does not affect f; its central difference is pure rounding noise.
  auto f = [](std::span<const double> x) { return 25.0 + 0.0 * x[0] + x[1] * x[1] + 1e-17 * x[0]; };
  std::vector<double> point{0.3, 1.5};
  std::vector<double> exact{1e-17, 3.0};
  auto r = grad_check(f, exact, point);
  CHECK(r.pass);
  std::vector<double> small_error{1e-6, 3.0};
  CHECK_FALSE(grad_check(f, small_error, point).pass);
}

TEST_CASE("adam first step moves each weight by about lr") {
  Tensor w(1, 2);
  w.data = {1.0, -1.0};
  Tensor g(1, 2);
  g.data = {0.5, -2.0};
  AdamState st;
  st.config.lr = 0.01;
  std::vector<Tensor*> ps{&w};
  std::vector<Tensor> gs{g};
  adam_step(ps, gs, st);
  CHECK(w.data[0] == Catch::Approx(0.99).epsilon(1e-6));
  CHECK(w.data[1] == Catch::Approx(-0.99).epsilon(1e-6));
  gs[0].data[0] = std::nan("");
  CHECK_THROWS(adam_step(ps, gs, st));
}

TEST_CASE("zero gradient leaves Adam parameters unchanged") {
  Tensor w(2, 2, 0.25);
  AdamState st;
  std::vector<Tensor*> ps{&w};
  std::vector<Tensor> gs{Tensor(2, 2)};
  for (int i = 0; i < 3; ++i) adam_step(ps, gs, st);
  CHECK(w.data == std::vector<double>(4, 0.25));
}

TEST_CASE("step schedule decays tenfold every ten epochs") {
  LrSchedule s;
  CHECK(schedule_step(s, 0) == 1e-4);
  CHECK(schedule_step(s, 9) == 1e-4);
  CHECK(schedule_step(s, 10) == Catch::Approx(1e-5));
  CHECK(schedule_step(s, 25) == Catch::Approx(1e-6));
  s.mode = LrSchedule::Mode::linear;
  CHECK(s.at(5) == Catch::Approx(1e-4 * (1 - 0.9 * 0.5)));
}
