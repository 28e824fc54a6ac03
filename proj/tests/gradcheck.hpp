#pragma once

// Finite-difference checks of tape gradients with respect to one input.

#include <functional>
#include <span>
#include <vector>

#include "pcu4d/autodiff.hpp"

namespace check {

using Builder = std::function<pcu4d::Var(pcu4d::Tape&, pcu4d::Var)>;

/// Gradient of the scalar built by `f` with respect to the leaf `x0`,
/// compared against central differences.
inline pcu4d::GradCheckReport tape_grad(const Builder& f, const pcu4d::Tensor& x0, double h = 1e-4,
                                        double tol = 1e-3) {
  pcu4d::Tape tape;
  pcu4d::Var x = tape.leaf(x0);
  pcu4d::Var out = f(tape, x);
  auto grads = tape.backward(out);
  pcu4d::Tensor g = grads.count(x.id) ? grads.at(x.id) : pcu4d::Tensor(x0.rows, x0.cols);
  auto value = [&](std::span<const double> p) {
    pcu4d::Tensor t = x0;
    t.data.assign(p.begin(), p.end());
    pcu4d::Tape tp;
    return tp.value(f(tp, tp.leaf(t)))(0, 0);
  };
  return pcu4d::grad_check(value, g.data, x0.data, h, tol);
}

/// Gradient with respect to a parameter tensor `p` that `f` binds through
/// tape.param; `p` is perturbed in place and restored.
inline pcu4d::GradCheckReport param_grad(const std::function<pcu4d::Var(pcu4d::Tape&)>& f, pcu4d::Tensor& p,
                                         double h = 1e-4, double tol = 1e-3) {
  pcu4d::Tape tape;
  pcu4d::Var out = f(tape);
  tape.backward(out);
  pcu4d::Tensor g = tape.param_grad(p);
  const pcu4d::Tensor keep = p;
  auto value = [&](std::span<const double> x) {
    p.data.assign(x.begin(), x.end());
    pcu4d::Tape tp;
    double v = tp.value(f(tp))(0, 0);
    return v;
  };
  auto r = pcu4d::grad_check(value, g.data, keep.data, h, tol);
  p = keep;
  return r;
}

/// Smooth scalar readout of a matrix: sum of w_ij * x_ij with fixed
/// pseudo-random weights, so every entry matters.
inline pcu4d::Var readout(pcu4d::Tape& tape, pcu4d::Var x, unsigned salt = 1) {
  const pcu4d::Tensor& v = tape.value(x);
  pcu4d::Tensor w(v.rows, v.cols);
  for (std::size_t i = 0; i < w.size(); ++i) w.data[i] = 0.5 + 0.37 * static_cast<double>((i * 7 + salt * 13) % 11) / 11.0;
  return tape.sum(tape.mul(x, tape.constant(w)));
}

}  // namespace check
