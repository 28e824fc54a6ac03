#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "pcu4d/autodiff.hpp"
#include "pcu4d/geometry.hpp"

namespace pcu4d {

/// Weights of the generator objective: chamfer, density, adversarial.
struct LossWeights {
  double chamfer = 1.0;
  double density = 0.5;
  double adversarial = 0.1;
};

/// Least-squares GAN targets: a for fakes and b for reals (discriminator),
/// c for what the generator wants its fakes scored as.
struct LsganConstants {
  double a = 0.0;
  double b = 1.0;
  double c = 1.0;
};

struct DensityConfig {
  double radius = 0.1;
  std::size_t n_max = 32;
};

/// Sum over both directions of squared nearest-neighbor distances. With
/// `normalized` each direction is averaged instead (the reporting metric).
inline double chamfer(const Tensor& pr, const Tensor& pt, bool normalized = false) {
  if (pr.rows == 0 || pt.rows == 0) throw std::invalid_argument("chamfer: empty point set");
  if (pr.cols != 3 || pt.cols != 3) throw ShapeError("chamfer: point sets must be N x 3");
  auto r2t = nearest(pt, pr);
  auto t2r = nearest(pr, pt);
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < pr.rows; ++i) a += sq_dist(pr.row(i).data(), pt.row(r2t[i]).data(), 3);
  for (std::size_t j = 0; j < pt.rows; ++j) b += sq_dist(pr.row(t2r[j]).data(), pt.row(j).data(), 3);
  if (normalized) return a / static_cast<double>(pr.rows) + b / static_cast<double>(pt.rows);
  return a + b;
}

inline double chamfer(const std::vector<Point3>& pr, const std::vector<Point3>& pt, bool normalized = false) {
  return chamfer(to_tensor(pr), to_tensor(pt), normalized);
}

/// Per-point neighbor count within the radius (self excluded) over n_max.
inline std::vector<double> density(const Tensor& cloud, const DensityConfig& cfg) {
  if (!(cfg.radius > 0.0) || cfg.n_max == 0) throw std::invalid_argument("density: invalid config");
  std::vector<double> d(cloud.rows, 0.0);
  if (cloud.rows == 0) return d;
  auto ball = ball_query(cloud, cfg.radius, std::max<std::size_t>(1, cloud.rows), Metric::xyz);
  for (std::size_t i = 0; i < cloud.rows; ++i)
    d[i] = static_cast<double>(ball.neighbors[i].size()) / static_cast<double>(cfg.n_max);
  return d;
}

/// Squared density difference between each point and its spatially nearest
/// counterpart in the other set, summed over both directions.
inline double density_loss(const Tensor& pr, const Tensor& pt, const DensityConfig& cfg) {
  if (pr.rows == 0 || pt.rows == 0) throw std::invalid_argument("density_loss: empty point set");
  const auto dr = density(pr, cfg), dt = density(pt, cfg);
  const auto r2t = nearest(pt, pr), t2r = nearest(pr, pt);
  double loss = 0.0;
  for (std::size_t i = 0; i < pr.rows; ++i) loss += (dr[i] - dt[r2t[i]]) * (dr[i] - dt[r2t[i]]);
  for (std::size_t j = 0; j < pt.rows; ++j) loss += (dr[t2r[j]] - dt[j]) * (dr[t2r[j]] - dt[j]);
  return loss;
}

inline double lsgan_generator_loss(std::span<const double> fake, const LsganConstants& k) {
  if (fake.empty()) throw std::invalid_argument("lsgan_generator_loss: no scores");
  double s = 0.0;
  for (double x : fake) s += (x - k.c) * (x - k.c);
  return 0.5 * s / static_cast<double>(fake.size());
}

inline double lsgan_discriminator_loss(std::span<const double> real, std::span<const double> fake,
                                       const LsganConstants& k) {
  if (real.empty() || fake.empty()) throw std::invalid_argument("lsgan_discriminator_loss: no scores");
  if (k.a == k.b) throw std::invalid_argument("lsgan: real and fake targets must differ");
  double r = 0.0, f = 0.0;
  for (double x : real) r += (x - k.b) * (x - k.b);
  for (double x : fake) f += (x - k.a) * (x - k.a);
  return 0.5 * r / static_cast<double>(real.size()) + 0.5 * f / static_cast<double>(fake.size());
}

struct LossBreakdown {
  double total = 0.0;
  double chamfer = 0.0;
  double density = 0.0;
  double adversarial = 0.0;
};

inline LossBreakdown total_generator_loss(const Tensor& pr, const Tensor& pt, std::span<const double> fake_scores,
                                          const LossWeights& w, const LsganConstants& k, const DensityConfig& dc) {
  LossBreakdown b;
  b.chamfer = chamfer(pr, pt);
  b.density = density_loss(pr, pt, dc);
  b.adversarial = lsgan_generator_loss(fake_scores, k);
  b.total = w.chamfer * b.chamfer + w.density * b.density + w.adversarial * b.adversarial;
  return b;
}

/// Tape form of the generator objective. The density term enters as a
/// constant: neighbor counts are piecewise constant in the coordinates, so
/// its gradient is zero almost everywhere. A zero weight drops the term.
struct TapeLoss {
  Var total;
  LossBreakdown parts;
};

inline TapeLoss total_generator_loss(Tape& tape, Var pred, const Tensor& target, std::optional<Var> fake_scores,
                                     const LossWeights& w, const LsganConstants& k, const DensityConfig& dc) {
  TapeLoss out;
  std::vector<std::pair<double, Var>> terms;
  Var cd = tape.chamfer(pred, target);
  out.parts.chamfer = tape.value(cd)(0, 0);
  if (w.chamfer != 0.0) terms.emplace_back(w.chamfer, cd);
  if (w.density != 0.0) {
    out.parts.density = density_loss(tape.value(pred), target, dc);
    terms.emplace_back(w.density, tape.constant(Tensor(1, 1, out.parts.density)));
  }
  if (fake_scores) {
    Var adv = tape.lsgan(*fake_scores, k.c);
    out.parts.adversarial = tape.value(adv)(0, 0);
    if (w.adversarial != 0.0) terms.emplace_back(w.adversarial, adv);
  }
  out.total = tape.weighted_sum(terms);
  out.parts.total = tape.value(out.total)(0, 0);
  return out;
}

}  // namespace pcu4d
