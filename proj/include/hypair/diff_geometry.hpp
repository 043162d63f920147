#pragma once

#include <cmath>
#include <stdexcept>

#include "hypair/geometry.hpp"
#include "hypair/tape.hpp"

// Tape compositions of the ball operations. Forward values agree with the
// plain functions in geometry.hpp; the tape additionally provides exact
// reverse-mode gradients. Row-vector variants (1,d) operate on single points;
// the pairwise builders produce full (m,n) distance matrices from row-stacked
// point sets, which keeps the recorded graph small for batched losses.

namespace hypair {

// Conformal factor 2 / (1 - c||x||^2) as a 1x1 node.
inline Var tape_conformal(Tape& t, Var x, const BallConfig& cfg) {
  Var sq = t.dot(x, x);
  return t.affine(t.recip(t.affine(sq, -cfg.curvature, 1.0)), 2.0, 0.0);
}

inline Var tape_mobius_add(Tape& t, Var x, Var y, const BallConfig& cfg) {
  const double c = cfg.curvature;
  Var xy = t.dot(x, y);
  Var xx = t.dot(x, x);
  Var yy = t.dot(y, y);
  Var ax = t.add(t.affine(xy, 2.0 * c, 1.0), t.affine(yy, c, 0.0));
  Var ay = t.affine(xx, -c, 1.0);
  Var num = t.add(t.smul(ax, x), t.smul(ay, y));
  Var den = t.add(t.affine(xy, 2.0 * c, 1.0), t.affine(t.mul(xx, yy), c * c, 0.0));
  return t.sdiv(num, den);
}

// Exponential map at x. The composition divides by ||v||, so it requires a
// nonzero tangent vector; the fused Tape::expmap0_rows handles v = 0.
inline Var tape_expmap(Tape& t, Var x, Var v, const BallConfig& cfg) {
  const double sc = std::sqrt(cfg.curvature);
  Var nv = t.norm(v);
  Var lam = tape_conformal(t, x, cfg);
  Var arg = t.affine(t.mul(lam, nv), sc / 2.0, 0.0);
  Var coef = t.div(t.tanh_(arg), t.affine(nv, sc, 0.0));
  return tape_mobius_add(t, x, t.smul(coef, v), cfg);
}

inline Var tape_expmap0(Tape& t, Var v, const BallConfig& cfg) {
  return t.expmap0_rows(v, cfg.curvature);
}

inline Var tape_poincare_dist(Tape& t, Var x, Var y, const BallConfig& cfg) {
  const double sc = std::sqrt(cfg.curvature);
  Var m = tape_mobius_add(t, t.neg(x), y, cfg);
  Var arg = t.affine(t.norm(m), sc, 0.0);
  return t.affine(t.atanh_(arg, cfg.eps_boundary), 2.0 / sc, 0.0);
}

// Distance to the origin, 2/sqrt(c) atanh(sqrt(c)||h||), rows independently:
// (m,d) -> (1,m).
inline Var tape_radius_rows(Tape& t, Var h, const BallConfig& cfg) {
  const double sc = std::sqrt(cfg.curvature);
  Var r = t.sqrt_(t.sqnorm_rows(h));
  Var arg = t.affine(r, sc, 0.0);
  return t.affine(t.atanh_(arg, cfg.eps_boundary), 2.0 / sc, 0.0);
}

// Cosine distance 1 - <a,b>/(||a|| ||b||) between two vector nodes.
inline Var tape_cosine_dist(Tape& t, Var a, Var b) {
  Var ip = t.dot(a, b);
  Var nn = t.mul(t.norm(a), t.norm(b));
  return t.affine(t.div(ip, nn), -1.0, 1.0);
}

// All-pairs cosine distances between row sets: (m,d) x (n,d) -> (m,n).
inline Var tape_pairwise_cosine_dist(Tape& t, Var a, Var b) {
  Var an = t.normalize_rows(a);
  Var bn = t.normalize_rows(b);
  return t.affine(t.matmul(an, t.transpose(bn)), -1.0, 1.0);
}

// All-pairs ball distances between row sets of interior points.
// Uses ||(-x) + y||^2 = ||x - y||^2 / (1 - 2c<x,y> + c^2 ||x||^2 ||y||^2),
// which matches the Mobius route algebraically and needs only one matmul.
inline Var tape_pairwise_poincare_dist(Tape& t, Var a, Var b, const BallConfig& cfg) {
  const double c = cfg.curvature;
  const double sc = std::sqrt(c);
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.cols != bv.cols) throw std::invalid_argument("pairwise dist: dimension mismatch");
  Var g = t.matmul(a, t.transpose(b));
  Var sa = t.sqnorm_rows(a);
  Var sb = t.sqnorm_rows(b);
  Var ones_m = t.input(Matrix(1, av.rows, 1.0));
  Var ones_n = t.input(Matrix(1, bv.rows, 1.0));
  Var diff2 = t.add(t.sub(t.outer(sa, ones_n), t.affine(g, 2.0, 0.0)), t.outer(ones_m, sb));
  Var den = t.add(t.affine(g, -2.0 * c, 1.0), t.affine(t.outer(sa, sb), c * c, 0.0));
  Var arg = t.affine(t.sqrt_(t.div(diff2, den)), sc, 0.0);
  return t.affine(t.atanh_(arg, cfg.eps_boundary), 2.0 / sc, 0.0);
}

// All-pairs squared Euclidean distances: (m,d) x (n,d) -> (m,n).
inline Var tape_pairwise_sq_euclidean(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.cols != bv.cols) throw std::invalid_argument("pairwise dist: dimension mismatch");
  Var g = t.matmul(a, t.transpose(b));
  Var sa = t.sqnorm_rows(a);
  Var sb = t.sqnorm_rows(b);
  Var ones_m = t.input(Matrix(1, av.rows, 1.0));
  Var ones_n = t.input(Matrix(1, bv.rows, 1.0));
  return t.add(t.sub(t.outer(sa, ones_n), t.affine(g, 2.0, 0.0)), t.outer(ones_m, sb));
}

}  // namespace hypair
