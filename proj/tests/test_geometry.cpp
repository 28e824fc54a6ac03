#include <catch_amalgamated.hpp>

#include <algorithm>
#include <random>
#include <set>

#include "oracles.hpp"
#include "pcu4d/geometry.hpp"

using namespace pcu4d;

namespace {

Tensor points(std::initializer_list<std::initializer_list<double>> rows) {
  Tensor t(rows.size(), rows.begin()->size());
  std::size_t i = 0;
  for (const auto& r : rows) {
    std::size_t c = 0;
    for (double v : r) t(i, c++) = v;
    ++i;
  }
  return t;
}

}  // namespace

TEST_CASE("knn on a line picks the closest indices") {
  auto p = points({{0, 0, 0, 0}, {1, 0, 0, 0}, {3, 0, 0, 0}, {6, 0, 0, 0}});
  auto nl = knn(p, 2, Metric::xyz);
  CHECK(nl.neighbors[0] == std::vector<std::size_t>{1, 2});
  CHECK(nl.neighbors[3] == std::vector<std::size_t>{2, 1});
}

TEST_CASE("knn with k above N-1 returns every other point") {
  auto p = points({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}});
  auto nl = knn(p, 9, Metric::xyz);
  for (const auto& nb : nl.neighbors) CHECK(nb.size() == 2);
}

TEST_CASE("knn ties break toward the lower index") {
  auto p = points({{0, 0, 0}, {1, 0, 0}, {-1, 0, 0}, {0, 1, 0}});
  auto nl = knn(p, 2, Metric::xyz);
  CHECK(nl.neighbors[0] == std::vector<std::size_t>{1, 2});
}

TEST_CASE("knn rejects bad arguments") {
  CHECK_THROWS(knn(Tensor(0, 3), 3, Metric::xyz));
  CHECK_THROWS(knn(Tensor(4, 3), 0, Metric::xyz));
  CHECK_THROWS(knn(Tensor(4, 3), 2, Metric::xyzt));
}

TEST_CASE("knn matches the brute-force oracle on grid-sized clouds") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 64 + rng() % 400, k = 1 + rng() % 12;
    const Metric m = trial % 2 ? Metric::xyzt : Metric::xyz;
    const std::size_t dims = m == Metric::xyz ? 3 : 4;
    Tensor p = oracle::random_cloud(n, 4, rng);
    auto nl = knn(p, k, m);
    for (std::size_t i = 0; i < n; ++i) REQUIRE(nl.neighbors[i] == oracle::knn(p, i, k, dims));
  }
}

TEST_CASE("knn handles heavily duplicated points") {
  std::mt19937_64 rng(3);
  Tensor p(200, 3);
  for (std::size_t i = 0; i < p.rows; ++i)
    for (std::size_t c = 0; c < 3; ++c) p(i, c) = static_cast<double>(rng() % 3);
  auto nl = knn(p, 7, Metric::xyz);
  for (std::size_t i = 0; i < p.rows; ++i) REQUIRE(nl.neighbors[i] == oracle::knn(p, i, 7, 3));
}

TEST_CASE("knn over feature space uses every column") {
  std::mt19937_64 rng(5);
  Tensor p = oracle::random_cloud(120, 16, rng);
  auto nl = knn(p, 5, Metric::all);
  for (std::size_t i = 0; i < p.rows; ++i) REQUIRE(nl.neighbors[i] == oracle::knn(p, i, 5, 16));
}

TEST_CASE("ball query is strict, excludes self and truncates") {
  auto p = points({{0, 0, 0}, {0.5, 0, 0}, {1.0, 0, 0}, {0.2, 0, 0}});
  auto nl = ball_query(p, 0.5, 8);
  CHECK(nl.neighbors[0] == std::vector<std::size_t>{3});
  auto capped = ball_query(p, 2.0, 1);
  CHECK(capped.neighbors[0] == std::vector<std::size_t>{3});
  CHECK_THROWS(ball_query(p, 0.0, 4));
  CHECK_THROWS(ball_query(p, 1.0, 0));
}

TEST_CASE("ball query matches the oracle") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 10 + rng() % 300;
    const double r = 0.05 + 0.4 * std::uniform_real_distribution<double>()(rng);
    const std::size_t cap = 1 + rng() % 40;
    Tensor p = oracle::random_cloud(n, 3, rng);
    auto nl = ball_query(p, r, cap);
    for (std::size_t i = 0; i < n; ++i) REQUIRE(nl.neighbors[i] == oracle::ball(p, i, r, cap, 3));
  }
}

TEST_CASE("fps on square corners") {
  auto p = points({{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}});
  auto sel = fps(p, 0.5).centers;
  CHECK(sel == std::vector<std::size_t>{0, 2});
  CHECK(fps(p, 1.0).centers.size() == 4);
  CHECK(fps_count(0.25, 9) == 3);
  CHECK(fps_count(0.1, 30) == 3);
  CHECK(fps_count(0.01, 5) == 1);
  CHECK_THROWS(fps(p, 0.0));
  CHECK_THROWS(fps(p, 1.5));
}

TEST_CASE("fps matches the greedy oracle and has no duplicates") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + rng() % 200;
    Tensor p = oracle::random_cloud(n, 3, rng);
    const std::size_t count = 1 + rng() % n;
    auto all = all_indices(n);
    auto sel = fps_select(p, all, count).centers;
    REQUIRE(sel == oracle::fps(p, all, count, 0, 3));
    REQUIRE(std::set<std::size_t>(sel.begin(), sel.end()).size() == count);
  }
}

TEST_CASE("fps seeded at the lexicographic minimum ignores point order") {
  std::mt19937_64 rng(9);
  Tensor p = oracle::random_cloud(80, 3, rng);
  std::vector<std::size_t> perm = all_indices(80);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor q(80, 3);
  for (std::size_t i = 0; i < 80; ++i)
    for (std::size_t c = 0; c < 3; ++c) q(i, c) = p(perm[i], c);
  auto a = fps(p, 0.3, FpsSeed::lexicographic()).centers;
  auto b = fps(q, 0.3, FpsSeed::lexicographic()).centers;
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(perm[b[i]] == a[i]);
}

TEST_CASE("fps over a candidate subset and given seed") {
  auto p = points({{0, 0, 0}, {5, 0, 0}, {1, 0, 0}, {2, 0, 0}});
  std::vector<std::size_t> cand{2, 3, 0};
  CHECK(fps_select(p, cand, 2, FpsSeed::at(3)).centers == std::vector<std::size_t>{3, 0});
  CHECK_THROWS(fps_select(p, cand, 2, FpsSeed::at(1)));
}

TEST_CASE("nearest returns the closest reference index") {
  auto ref = points({{0, 0, 0}, {1, 0, 0}});
  auto q = points({{0.2, 0, 0}, {0.9, 0, 0}, {0.5, 0, 0}});
  CHECK(nearest(ref, q) == std::vector<std::size_t>{0, 1, 0});
}

TEST_CASE("fuse and split round trip with time levels") {
  std::vector<Frame> frames(3);
  for (std::size_t f = 0; f < 3; ++f)
    for (std::size_t i = 0; i < 4; ++i) frames[f].points.push_back({double(f), double(i), 0.0});
  auto fc = fuse(frames);
  CHECK(fc.size() == 12);
  CHECK(fc.points[0][3] == 0.0);
  CHECK(fc.points[4][3] == 0.5);
  CHECK(fc.points[11][3] == 1.0);
  auto back = split(fc);
  for (std::size_t f = 0; f < 3; ++f) CHECK(back[f].points == frames[f].points);
  frames[1].points.pop_back();
  CHECK_THROWS(fuse(frames));
  CHECK(fuse(std::vector<Frame>{frames[0]}).points[0][3] == 1.0);
}

TEST_CASE("normalize maps into the unit ball and inverts") {
  std::vector<Frame> frames(2);
  frames[0].points = {{1, 2, 3}, {3, 2, 1}};
  frames[1].points = {{5, 5, 5}, {-1, 0, 2}};
  auto norm = normalize(frames);
  double max_norm = 0.0;
  for (const auto& f : norm.frames)
    for (const auto& p : f.points) max_norm = std::max(max_norm, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
  CHECK(max_norm == Catch::Approx(1.0));
  auto back = norm.transform.invert(norm.frames[1]);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t c = 0; c < 3; ++c) CHECK(back.points[i][c] == Catch::Approx(frames[1].points[i][c]));

  std::vector<Frame> same(1);
  same[0].points = {{2, 2, 2}, {2, 2, 2}};
  auto deg = normalize(same);
  CHECK(deg.transform.degenerate);
  CHECK(deg.frames[0].points[0] == Point3{0, 0, 0});
}

TEST_CASE("frames with non-finite coordinates are rejected") {
  Frame f;
  f.points = {{0, 0, std::nan("")}};
  CHECK_THROWS(validate_frame(f));
  CHECK_THROWS(fuse({f}));
}
