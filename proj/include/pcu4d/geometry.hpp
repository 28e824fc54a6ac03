#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pcu4d/parallel.hpp"
#include "pcu4d/tensor.hpp"

namespace pcu4d {

using Point3 = std::array<double, 3>;
using Point4 = std::array<double, 4>;

/// One point cloud of a sequence. `time_value` is assigned at fusion.
struct Frame {
  std::vector<Point3> points;
  std::size_t time_index = 0;
  double time_value = 0.0;
};

/// n consecutive frames concatenated into one (x, y, z, t) set, oldest frame
/// first. Frame i of n carries t = i / (n - 1), so the newest frame sits at t = 1.
struct FusedCloud {
  std::vector<Point4> points;
  std::size_t frame_count = 0;
  std::size_t per_frame_count = 0;
  std::vector<std::size_t> provenance;

  std::size_t size() const { return points.size(); }

  Tensor coords() const {
    Tensor t(points.size(), 4);
    for (std::size_t i = 0; i < points.size(); ++i)
      for (std::size_t c = 0; c < 4; ++c) t(i, c) = points[i][c];
    return t;
  }

  Tensor xyz() const {
    Tensor t(points.size(), 3);
    for (std::size_t i = 0; i < points.size(); ++i)
      for (std::size_t c = 0; c < 3; ++c) t(i, c) = points[i][c];
    return t;
  }
};

enum class QueryKind { knn, ball, fps_subset };

/// Which leading columns of a point matrix take part in distances.
enum class Metric { xyz, xyzt, all };

/// Result of a spatial query. For knn and ball queries `neighbors[q]` lists
/// the neighbors of `centers[q]` in ascending (distance, index) order. For an
/// fps query `centers` holds the selected indices in selection order and
/// `neighbors` is empty.
struct NeighborList {
  QueryKind kind = QueryKind::knn;
  std::vector<std::size_t> centers;
  std::vector<std::vector<std::size_t>> neighbors;
};

/// Flattened view of a NeighborList: edges of center q occupy
/// [offsets[q], offsets[q + 1]).
struct EdgeList {
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> source;  // center point index per edge
  std::vector<std::size_t> target;  // neighbor point index per edge

  std::size_t segments() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::size_t edges() const { return target.size(); }
};

inline EdgeList to_edges(const NeighborList& nl) {
  EdgeList e;
  e.offsets.reserve(nl.centers.size() + 1);
  e.offsets.push_back(0);
  for (std::size_t q = 0; q < nl.centers.size(); ++q) {
    for (std::size_t j : nl.neighbors[q]) {
      e.source.push_back(nl.centers[q]);
      e.target.push_back(j);
    }
    e.offsets.push_back(e.target.size());
  }
  return e;
}

inline std::size_t metric_dims(Metric m, std::size_t cols) {
  std::size_t d = m == Metric::xyz ? 3 : m == Metric::xyzt ? 4 : cols;
  if (d > cols || d == 0) {
    throw ShapeError("metric needs " + std::to_string(d) + " columns, points have " +
                     std::to_string(cols));
  }
  return d;
}

inline double sq_dist(const double* a, const double* b, std::size_t dims) {
  double s = 0.0;
  for (std::size_t c = 0; c < dims; ++c) {
    double d = a[c] - b[c];
    s += d * d;
  }
  return s;
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

namespace detail {

struct Candidate {
  double d2;
  std::size_t index;
  friend bool operator<(const Candidate& a, const Candidate& b) {
    return a.d2 < b.d2 || (a.d2 == b.d2 && a.index < b.index);
  }
};

/// Bounded sorted buffer of the k best (distance, index) pairs.
class BestK {
 public:
  explicit BestK(std::size_t k) : k_(k) { items_.reserve(k + 1); }

  void offer(Candidate c) {
    if (items_.size() == k_ && !(c < items_.back())) return;
    auto pos = std::upper_bound(items_.begin(), items_.end(), c);
    items_.insert(pos, c);
    if (items_.size() > k_) items_.pop_back();
  }

  bool full() const { return items_.size() == k_; }
  double worst() const { return items_.back().d2; }
  const std::vector<Candidate>& items() const { return items_; }

 private:
  std::size_t k_;
  std::vector<Candidate> items_;
};

}  // namespace detail

/// Uniform hash grid over the xyz columns of a point matrix. Cells are stored
/// densely in CSR form with point indices ascending inside each cell.
class UniformGrid {
 public:
  UniformGrid(const Tensor& points, double cell_size) {
    if (points.cols < 3) throw ShapeError("grid needs xyz columns");
    if (!(cell_size > 0.0)) throw std::invalid_argument("grid cell size must be positive");
    std::array<double, 3> lo{}, hi{};
    for (std::size_t c = 0; c < 3; ++c) {
      lo[c] = std::numeric_limits<double>::infinity();
      hi[c] = -std::numeric_limits<double>::infinity();
    }
    for (std::size_t i = 0; i < points.rows; ++i)
      for (std::size_t c = 0; c < 3; ++c) {
        lo[c] = std::min(lo[c], points(i, c));
        hi[c] = std::max(hi[c], points(i, c));
      }
    if (points.rows == 0) lo = hi = {0.0, 0.0, 0.0};
    origin_ = lo;
    // Enlarge cells until the dense table stays proportional to the point count.
    const double max_cells = std::max<double>(64.0, 8.0 * static_cast<double>(points.rows));
    cell_ = cell_size;
    for (;;) {
      double total = 1.0;
      for (std::size_t c = 0; c < 3; ++c) {
        dims_[c] = static_cast<long>(std::floor((hi[c] - lo[c]) / cell_)) + 1;
        total *= static_cast<double>(dims_[c]);
      }
      if (total <= max_cells) break;
      cell_ *= 2.0;
    }
    std::size_t ncells = static_cast<std::size_t>(dims_[0] * dims_[1] * dims_[2]);
    start_.assign(ncells + 1, 0);
    std::vector<std::size_t> cell_of(points.rows);
    for (std::size_t i = 0; i < points.rows; ++i) {
      auto c = cell_coords(points.row(i).data());
      cell_of[i] = flat(c);
      ++start_[cell_of[i] + 1];
    }
    for (std::size_t c = 0; c < ncells; ++c) start_[c + 1] += start_[c];
    items_.resize(points.rows);
    std::vector<std::size_t> fill(start_.begin(), start_.end() - 1);
    for (std::size_t i = 0; i < points.rows; ++i) items_[fill[cell_of[i]]++] = i;
  }

  double cell_size() const { return cell_; }
  const std::array<long, 3>& dims() const { return dims_; }

  std::array<long, 3> cell_coords(const double* p) const {
    std::array<long, 3> c{};
    for (std::size_t a = 0; a < 3; ++a) c[a] = static_cast<long>(std::floor((p[a] - origin_[a]) / cell_));
    return c;
  }

  /// Calls fn(point_index) for every point in cells whose Chebyshev cell
  /// distance from `center` is exactly `ring`.
  template <typename Fn>
  void for_each_in_ring(const std::array<long, 3>& center, long ring, Fn&& fn) const {
    std::array<long, 3> lo{}, hi{};
    for (std::size_t a = 0; a < 3; ++a) {
      lo[a] = std::max(0L, center[a] - ring);
      hi[a] = std::min(dims_[a] - 1, center[a] + ring);
      if (lo[a] > hi[a]) return;
    }
    for (long x = lo[0]; x <= hi[0]; ++x)
      for (long y = lo[1]; y <= hi[1]; ++y)
        for (long z = lo[2]; z <= hi[2]; ++z) {
          long cheb = std::max({std::labs(x - center[0]), std::labs(y - center[1]), std::labs(z - center[2])});
          if (cheb != ring) continue;
          std::size_t f = flat({x, y, z});
          for (std::size_t s = start_[f]; s < start_[f + 1]; ++s) fn(items_[s]);
        }
  }

  /// True once the block of half-width `ring` around `center` covers the grid.
  bool covers_all(const std::array<long, 3>& center, long ring) const {
    for (std::size_t a = 0; a < 3; ++a)
      if (center[a] - ring > 0 || center[a] + ring < dims_[a] - 1) return false;
    return true;
  }

 private:
  std::size_t flat(const std::array<long, 3>& c) const {
    return static_cast<std::size_t>((c[0] * dims_[1] + c[1]) * dims_[2] + c[2]);
  }

  double cell_ = 1.0;
  std::array<double, 3> origin_{};
  std::array<long, 3> dims_{1, 1, 1};
  std::vector<std::size_t> start_;
  std::vector<std::size_t> items_;
};

inline constexpr std::size_t kBruteForceBelow = 64;

namespace detail {

inline std::vector<Candidate> knn_brute(const Tensor& ref, const double* q, std::size_t dims, std::size_t k,
                                        std::size_t exclude) {
  BestK best(k);
  for (std::size_t j = 0; j < ref.rows; ++j) {
    if (j == exclude) continue;
    best.offer({sq_dist(q, ref.row(j).data(), dims), j});
  }
  return best.items();
}

inline std::vector<Candidate> knn_grid(const UniformGrid& grid, const Tensor& ref, const double* q,
                                       std::size_t dims, std::size_t k, std::size_t exclude) {
  BestK best(k);
  auto center = grid.cell_coords(q);
  const double slack = 1e-9 * (1.0 + grid.cell_size());
  for (long ring = 0;; ++ring) {
    grid.for_each_in_ring(center, ring, [&](std::size_t j) {
      if (j == exclude) return;
      best.offer({sq_dist(q, ref.row(j).data(), dims), j});
    });
    if (grid.covers_all(center, ring)) break;
    // Unvisited points lie at spatial distance >= ring * cell from q; the
    // t column and extra feature columns only add to that.
    double bound = std::max(0.0, static_cast<double>(ring) * grid.cell_size() - slack);
    if (best.full() && best.worst() < bound * bound) break;
  }
  return best.items();
}

inline double knn_cell_size(const Tensor& ref, std::size_t k) {
  std::array<double, 3> lo{}, hi{};
  for (std::size_t c = 0; c < 3; ++c) {
    lo[c] = std::numeric_limits<double>::infinity();
    hi[c] = -lo[c];
  }
  for (std::size_t i = 0; i < ref.rows; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      lo[c] = std::min(lo[c], ref(i, c));
      hi[c] = std::max(hi[c], ref(i, c));
    }
  double extent = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2], 1e-12});
  double per_cell = std::max<double>(2.0, static_cast<double>(k));
  double cells = std::max(1.0, static_cast<double>(ref.rows) / per_cell);
  return extent / std::cbrt(cells);
}

}  // namespace detail

/// k nearest other points of each query under squared Euclidean distance over
/// the metric's columns. Ties break by lower point index. Lists have length
/// min(k, N - 1).
inline NeighborList knn(const Tensor& points, std::span<const std::size_t> queries, std::size_t k,
                        Metric metric = Metric::xyzt) {
  if (points.rows == 0) throw std::invalid_argument("knn: empty cloud");
  if (k == 0) throw std::invalid_argument("knn: k must be >= 1");
  const std::size_t dims = metric_dims(metric, points.cols);
  const std::size_t kk = std::min(k, points.rows - 1);
  NeighborList out;
  out.kind = QueryKind::knn;
  out.centers.assign(queries.begin(), queries.end());
  out.neighbors.resize(queries.size());
  for (std::size_t q : queries)
    if (q >= points.rows) throw std::out_of_range("knn: query index out of range");
  if (kk == 0) return out;

  const bool use_grid = points.rows >= kBruteForceBelow && dims >= 3 && points.cols >= 3;
  std::optional<UniformGrid> grid;
  if (use_grid) grid.emplace(points, detail::knn_cell_size(points, kk));
  parallel_for(queries.size(), [&](std::size_t qi) {
    std::size_t q = queries[qi];
    const double* p = points.row(q).data();
    auto found = grid ? detail::knn_grid(*grid, points, p, dims, kk, q)
                      : detail::knn_brute(points, p, dims, kk, q);
    auto& dst = out.neighbors[qi];
    dst.reserve(found.size());
    for (const auto& c : found) dst.push_back(c.index);
  });
  return out;
}

inline NeighborList knn(const Tensor& points, std::size_t k, Metric metric = Metric::xyzt) {
  auto q = all_indices(points.rows);
  return knn(points, q, k, metric);
}

/// Nearest reference row for every query row (no self exclusion, ties by
/// lower reference index).
inline std::vector<std::size_t> nearest(const Tensor& reference, const Tensor& queries,
                                        Metric metric = Metric::xyz) {
  if (reference.rows == 0) throw std::invalid_argument("nearest: empty reference set");
  const std::size_t dims = metric_dims(metric, reference.cols);
  if (queries.cols < dims) throw ShapeError("nearest: query dimensionality mismatch");
  const std::size_t none = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> out(queries.rows);
  std::optional<UniformGrid> grid;
  if (reference.rows >= kBruteForceBelow && dims >= 3) grid.emplace(reference, detail::knn_cell_size(reference, 1));
  parallel_for(queries.rows, [&](std::size_t i) {
    const double* p = queries.row(i).data();
    auto found = grid ? detail::knn_grid(*grid, reference, p, dims, 1, none)
                      : detail::knn_brute(reference, p, dims, 1, none);
    out[i] = found.front().index;
  });
  return out;
}

/// All other points strictly within `radius` of each query (self excluded),
/// ascending by (distance, index), truncated to `max_neighbors`.
inline NeighborList ball_query(const Tensor& points, std::span<const std::size_t> queries, double radius,
                               std::size_t max_neighbors, Metric metric = Metric::xyz) {
  if (!(radius > 0.0)) throw std::invalid_argument("ball_query: radius must be positive");
  if (max_neighbors == 0) throw std::invalid_argument("ball_query: max_neighbors must be >= 1");
  const std::size_t dims = metric_dims(metric, points.cols);
  const double r2 = radius * radius;
  NeighborList out;
  out.kind = QueryKind::ball;
  out.centers.assign(queries.begin(), queries.end());
  out.neighbors.resize(queries.size());
  for (std::size_t q : queries)
    if (q >= points.rows) throw std::out_of_range("ball_query: query index out of range");

  std::optional<UniformGrid> grid;
  if (points.rows >= kBruteForceBelow) grid.emplace(points, radius);
  parallel_for(queries.size(), [&](std::size_t qi) {
    std::size_t q = queries[qi];
    const double* p = points.row(q).data();
    std::vector<detail::Candidate> hits;
    auto consider = [&](std::size_t j) {
      if (j == q) return;
      double d2 = sq_dist(p, points.row(j).data(), dims);
      if (d2 < r2) hits.push_back({d2, j});
    };
    if (grid) {
      auto c = grid->cell_coords(p);
      // Cells are at least `radius` wide, so one ring suffices.
      grid->for_each_in_ring(c, 0, consider);
      grid->for_each_in_ring(c, 1, consider);
    } else {
      for (std::size_t j = 0; j < points.rows; ++j) consider(j);
    }
    std::sort(hits.begin(), hits.end());
    if (hits.size() > max_neighbors) hits.resize(max_neighbors);
    auto& dst = out.neighbors[qi];
    dst.reserve(hits.size());
    for (const auto& h : hits) dst.push_back(h.index);
  });
  return out;
}

inline NeighborList ball_query(const Tensor& points, double radius, std::size_t max_neighbors,
                               Metric metric = Metric::xyz) {
  auto q = all_indices(points.rows);
  return ball_query(points, q, radius, max_neighbors, metric);
}

/// How farthest point sampling picks its first point.
struct FpsSeed {
  enum class Rule { lowest_index, given, lexicographic_min, random };
  Rule rule = Rule::lowest_index;
  std::size_t index = 0;
  std::uint64_t rng_seed = 0;

  static FpsSeed lowest() { return {}; }
  static FpsSeed at(std::size_t i) { return {Rule::given, i, 0}; }
  /// Smallest (x, y, z) lexicographically; independent of point labelling.
  static FpsSeed lexicographic() { return {Rule::lexicographic_min, 0, 0}; }
  static FpsSeed random(std::uint64_t seed) { return {Rule::random, 0, seed}; }
};

/// Number of points kept by fps for a keep fraction s.
inline std::size_t fps_count(double fraction, std::size_t n) {
  if (n == 0) return 0;
  // The epsilon absorbs representation error such as 0.1 * 30 = 3.0000000000000004.
  double c = std::ceil(fraction * static_cast<double>(n) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(c, 1.0)), 1, n);
}

/// Greedy max-min farthest point sampling of exactly `count` candidates:
/// each step adds the candidate farthest from everything chosen so far,
/// ties going to the lower point index.
inline NeighborList fps_select(const Tensor& points, std::span<const std::size_t> candidates, std::size_t count,
                               FpsSeed seed = FpsSeed::lowest(), Metric metric = Metric::xyz) {
  if (candidates.empty()) throw std::invalid_argument("fps: empty candidate set");
  if (count == 0 || count > candidates.size()) throw std::invalid_argument("fps: count must be in [1, |candidates|]");
  const std::size_t dims = metric_dims(metric, points.cols);
  const std::size_t n = candidates.size();

  std::size_t first = 0;  // position within candidates
  switch (seed.rule) {
    case FpsSeed::Rule::lowest_index:
      for (std::size_t c = 1; c < n; ++c)
        if (candidates[c] < candidates[first]) first = c;
      break;
    case FpsSeed::Rule::given: {
      auto it = std::find(candidates.begin(), candidates.end(), seed.index);
      if (it == candidates.end()) throw std::invalid_argument("fps: seed index is not a candidate");
      first = static_cast<std::size_t>(it - candidates.begin());
      break;
    }
    case FpsSeed::Rule::lexicographic_min:
      for (std::size_t c = 1; c < n; ++c) {
        auto a = points.row(candidates[c]), b = points.row(candidates[first]);
        if (std::lexicographical_compare(a.begin(), a.begin() + 3, b.begin(), b.begin() + 3)) first = c;
      }
      break;
    case FpsSeed::Rule::random: {
      std::mt19937_64 rng(seed.rng_seed);
      first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
      break;
    }
  }

  NeighborList out;
  out.kind = QueryKind::fps_subset;
  out.centers.reserve(count);
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::vector<char> taken(n, 0);
  std::size_t current = first;
  for (std::size_t step = 0; step < count; ++step) {
    out.centers.push_back(candidates[current]);
    taken[current] = 1;
    if (step + 1 == count) break;
    const double* p = points.row(candidates[current]).data();
    std::size_t best = n;
    for (std::size_t c = 0; c < n; ++c) {
      if (taken[c]) continue;
      min_d2[c] = std::min(min_d2[c], sq_dist(p, points.row(candidates[c]).data(), dims));
      if (best == n || min_d2[c] > min_d2[best] ||
          (min_d2[c] == min_d2[best] && candidates[c] < candidates[best]))
        best = c;
    }
    current = best;
  }
  return out;
}

/// Keeps ceil(s * |candidates|) indices chosen by fps_select.
inline NeighborList fps(const Tensor& points, std::span<const std::size_t> candidates, double fraction,
                        FpsSeed seed = FpsSeed::lowest(), Metric metric = Metric::xyz) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("fps: fraction must be in (0, 1]");
  if (candidates.empty()) throw std::invalid_argument("fps: empty candidate set");
  return fps_select(points, candidates, fps_count(fraction, candidates.size()), seed, metric);
}

inline NeighborList fps(const Tensor& points, double fraction, FpsSeed seed = FpsSeed::lowest(),
                        Metric metric = Metric::xyz) {
  auto c = all_indices(points.rows);
  return fps(points, c, fraction, seed, metric);
}

// ---------------------------------------------------------------------------
// Frames, fusion and normalization

inline bool finite(const Point3& p) {
  return std::isfinite(p[0]) && std::isfinite(p[1]) && std::isfinite(p[2]);
}

inline void validate_frame(const Frame& f) {
  if (f.points.empty()) throw std::invalid_argument("frame has no points");
  for (const auto& p : f.points)
    if (!finite(p)) throw std::invalid_argument("frame contains a non-finite coordinate");
}

inline Tensor to_tensor(const std::vector<Point3>& pts) {
  Tensor t(pts.size(), 3);
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t c = 0; c < 3; ++c) t(i, c) = pts[i][c];
  return t;
}

inline std::vector<Point3> to_points(const Tensor& t) {
  if (t.cols < 3) throw ShapeError("to_points: need at least 3 columns");
  std::vector<Point3> pts(t.rows);
  for (std::size_t i = 0; i < t.rows; ++i) pts[i] = {t(i, 0), t(i, 1), t(i, 2)};
  return pts;
}

/// Maps p to (p - centroid) / scale.
struct Transform {
  Point3 centroid{0.0, 0.0, 0.0};
  double scale = 1.0;
  bool degenerate = false;

  Point3 apply(const Point3& p) const {
    return {(p[0] - centroid[0]) / scale, (p[1] - centroid[1]) / scale, (p[2] - centroid[2]) / scale};
  }
  Point3 invert(const Point3& p) const {
    return {p[0] * scale + centroid[0], p[1] * scale + centroid[1], p[2] * scale + centroid[2]};
  }
  Frame apply(const Frame& f) const {
    Frame out = f;
    for (auto& p : out.points) p = apply(p);
    return out;
  }
  Frame invert(const Frame& f) const {
    Frame out = f;
    for (auto& p : out.points) p = invert(p);
    return out;
  }
};

struct Normalized {
  std::vector<Frame> frames;
  Transform transform;
};

/// Centers the union of all points at the origin and scales it into the unit
/// ball. All-identical input keeps scale 1 and sets `transform.degenerate`.
inline Normalized normalize(const std::vector<Frame>& frames) {
  if (frames.empty()) throw std::invalid_argument("normalize: no frames");
  Point3 sum{0.0, 0.0, 0.0};
  std::size_t count = 0;
  for (const auto& f : frames) {
    validate_frame(f);
    for (const auto& p : f.points) {
      for (std::size_t c = 0; c < 3; ++c) sum[c] += p[c];
      ++count;
    }
  }
  Transform tf;
  for (std::size_t c = 0; c < 3; ++c) tf.centroid[c] = sum[c] / static_cast<double>(count);
  double max_norm = 0.0;
  for (const auto& f : frames)
    for (const auto& p : f.points) {
      double s = 0.0;
      for (std::size_t c = 0; c < 3; ++c) s += (p[c] - tf.centroid[c]) * (p[c] - tf.centroid[c]);
      max_norm = std::max(max_norm, std::sqrt(s));
    }
  if (max_norm > 1e-12) {
    tf.scale = max_norm;
  } else {
    tf.scale = 1.0;
    tf.degenerate = true;
  }
  Normalized out{{}, tf};
  out.frames.reserve(frames.size());
  for (const auto& f : frames) out.frames.push_back(tf.apply(f));
  return out;
}

inline double fusion_time(std::size_t i, std::size_t n) {
  return n == 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(n - 1);
}

/// Fuses frames given oldest first. All frames must have the same count.
inline FusedCloud fuse(const std::vector<Frame>& frames) {
  if (frames.empty()) throw std::invalid_argument("fuse: no frames");
  const std::size_t L = frames.front().points.size();
  for (const auto& f : frames) {
    validate_frame(f);
    if (f.points.size() != L)
      throw std::invalid_argument("fuse: frames have different point counts; resample upstream first");
  }
  FusedCloud fc;
  fc.frame_count = frames.size();
  fc.per_frame_count = L;
  fc.points.reserve(L * frames.size());
  fc.provenance.reserve(L * frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    double t = fusion_time(i, frames.size());
    for (const auto& p : frames[i].points) {
      fc.points.push_back({p[0], p[1], p[2], t});
      fc.provenance.push_back(i);
    }
  }
  return fc;
}

/// Inverse of fuse on coordinates.
inline std::vector<Frame> split(const FusedCloud& fc) {
  std::vector<Frame> frames(fc.frame_count);
  for (std::size_t i = 0; i < fc.frame_count; ++i) {
    frames[i].time_index = i;
    frames[i].time_value = fusion_time(i, fc.frame_count);
  }
  for (std::size_t j = 0; j < fc.points.size(); ++j) {
    const auto& p = fc.points[j];
    frames[fc.provenance[j]].points.push_back({p[0], p[1], p[2]});
  }
  return frames;
}

}  // namespace pcu4d
