#pragma once

#include <cmath>
#include <stdexcept>

#include "hypair/core.hpp"

// Poincare-ball operations. The ball of curvature c > 0 is the set
// {x : c * ||x||^2 < 1}; all constructors and operations keep points a
// safety margin eps_boundary away from the boundary, where the conformal
// factor and atanh blow up.

namespace hypair {

using EuclideanVec = Vec;

struct BallConfig {
  double curvature = 1.0;
  int dim = 2;
  double eps_boundary = 1e-5;
  double eps_div = 1e-15;
  // Euclidean norm bound applied to encoder outputs before the exponential
  // map (keeps lifted points away from the boundary).
  double max_norm = 1.0;

  void validate() const {
    if (!(curvature > 0.0)) throw std::invalid_argument("BallConfig: curvature must be > 0");
    if (dim < 1) throw std::invalid_argument("BallConfig: dim must be >= 1");
    if (!(eps_boundary > 0.0) || eps_boundary > 1e-3)
      throw std::invalid_argument("BallConfig: eps_boundary must be in (0, 1e-3]");
    if (!(max_norm > 0.0)) throw std::invalid_argument("BallConfig: max_norm must be > 0");
  }

  // Largest admissible squared norm: c * ||x||^2 <= (1 - eps_boundary)^2.
  double max_sqnorm() const {
    const double m = 1.0 - eps_boundary;
    return m * m / curvature;
  }
};

class PoincarePoint {
 public:
  PoincarePoint() = default;

  // Projects radially onto the safety margin if the input lies outside it.
  PoincarePoint(Vec coords, const BallConfig& cfg) : coords_(std::move(coords)) {
    if (!all_finite(coords_)) throw std::invalid_argument("PoincarePoint: non-finite input");
    const double sq = hypair::sqnorm(coords_);
    const double max_sq = cfg.max_sqnorm();
    if (sq > max_sq) {
      const double scale = std::sqrt(max_sq / sq);
      for (double& x : coords_) x *= scale;
    }
  }

  static PoincarePoint origin(int dim) {
    PoincarePoint p;
    p.coords_.assign(dim, 0.0);
    return p;
  }

  const Vec& coords() const { return coords_; }
  int dim() const { return static_cast<int>(coords_.size()); }
  double sqnorm() const { return hypair::sqnorm(coords_); }

 private:
  Vec coords_;
};

inline PoincarePoint project_to_ball(const Vec& x, const BallConfig& cfg) {
  return PoincarePoint(x, cfg);
}

// lambda_x = 2 / (1 - c ||x||^2); equals 2 at the origin, >= 2 inside.
inline double conformal_factor(const PoincarePoint& x, const BallConfig& cfg) {
  return 2.0 / (1.0 - cfg.curvature * x.sqnorm());
}

inline PoincarePoint mobius_add(const PoincarePoint& h, const PoincarePoint& w,
                                const BallConfig& cfg) {
  const double c = cfg.curvature;
  const double hw = vdot(h.coords(), w.coords());
  const double hh = h.sqnorm();
  const double ww = w.sqnorm();
  const double ch = 1.0 + 2.0 * c * hw + c * ww;
  const double cw = 1.0 - c * hh;
  double den = 1.0 + 2.0 * c * hw + c * c * hh * ww;
  if (std::abs(den) < cfg.eps_div) den = den < 0 ? -cfg.eps_div : cfg.eps_div;
  Vec out(h.dim());
  for (int i = 0; i < h.dim(); ++i)
    out[i] = (ch * h.coords()[i] + cw * w.coords()[i]) / den;
  return PoincarePoint(std::move(out), cfg);
}

inline PoincarePoint neg(const PoincarePoint& x, const BallConfig& cfg) {
  Vec out = x.coords();
  for (double& v : out) v = -v;
  return PoincarePoint(std::move(out), cfg);
}

// exp_x(v) = x (+)_c (v / (sqrt(c)||v||) * tanh(sqrt(c) lambda_x ||v|| / 2)).
// ||v|| -> 0 returns x (continuous extension).
inline PoincarePoint expmap(const PoincarePoint& x, const EuclideanVec& v,
                            const BallConfig& cfg) {
  if (!all_finite(v)) throw std::invalid_argument("expmap: non-finite tangent vector");
  const double nv = vnorm(v);
  if (nv < cfg.eps_div) return x;
  const double sc = std::sqrt(cfg.curvature);
  const double lam = conformal_factor(x, cfg);
  const double t = std::tanh(sc * lam * nv / 2.0) / (sc * nv);
  Vec scaled(v.size());
  for (size_t i = 0; i < v.size(); ++i) scaled[i] = t * v[i];
  return mobius_add(x, PoincarePoint(std::move(scaled), cfg), cfg);
}

inline PoincarePoint expmap0(const EuclideanVec& v, const BallConfig& cfg) {
  return expmap(PoincarePoint::origin(static_cast<int>(v.size())), v, cfg);
}

// d(x, y) = (2 / sqrt(c)) atanh(sqrt(c) ||(-x) (+)_c y||), the atanh argument
// clamped at 1 - eps_boundary.
inline double poincare_dist(const PoincarePoint& x, const PoincarePoint& y,
                            const BallConfig& cfg) {
  if (x.coords() == y.coords()) return 0.0;
  const double sc = std::sqrt(cfg.curvature);
  const PoincarePoint m = mobius_add(neg(x, cfg), y, cfg);
  double arg = sc * std::sqrt(m.sqnorm());
  const double cap = 1.0 - cfg.eps_boundary;
  if (arg > cap) arg = cap;
  return 2.0 / sc * std::atanh(arg);
}

// Distance from the origin; the embedding's hyperbolic radius.
inline double radius(const PoincarePoint& h, const BallConfig& cfg) {
  const double sc = std::sqrt(cfg.curvature);
  double arg = sc * std::sqrt(h.sqnorm());
  const double cap = 1.0 - cfg.eps_boundary;
  if (arg > cap) arg = cap;
  return 2.0 / sc * std::atanh(arg);
}

inline EuclideanVec clip_features(const EuclideanVec& v, double max_norm) {
  if (!all_finite(v)) throw std::invalid_argument("clip_features: non-finite input");
  const double nv = vnorm(v);
  if (nv <= max_norm) return v;
  EuclideanVec out(v.size());
  const double scale = max_norm / nv;
  for (size_t i = 0; i < v.size(); ++i) out[i] = scale * v[i];
  return out;
}

}  // namespace hypair
