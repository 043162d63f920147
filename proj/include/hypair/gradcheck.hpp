#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hypair/core.hpp"
#include "hypair/diff_geometry.hpp"
#include "hypair/geometry.hpp"
#include "hypair/losses.hpp"
#include "hypair/tape.hpp"

namespace hypair {

struct GradCheckEntry {
  std::string op;
  double max_rel_err = 0.0;
};

namespace detail {

// One differentiable operation under test: the builder maps a single input
// node (shape rows x cols, entries drawn from [lo, hi]) to any output node;
// the harness reduces the output to a weighted scalar. `admissible` rejects
// draws too close to a kink (clip threshold, argmin tie) for central
// differences to be meaningful.
struct OpCheck {
  std::string name;
  int rows = 0;
  int cols = 0;
  double lo = -1.0;
  double hi = 1.0;
  std::function<Var(Tape&, Var)> build;
  std::function<bool(const Matrix&)> admissible;
};

inline Matrix draw_gradcheck_input(Rng& rng, const OpCheck& op) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Matrix m(op.rows, op.cols);
    for (double& x : m.data) x = rng.uniform(op.lo, op.hi);
    if (!op.admissible || op.admissible(m)) return m;
  }
  throw std::runtime_error("gradcheck: no admissible input for " + op.name);
}

inline Matrix gradcheck_weights(int rows, int cols) {
  Matrix w(rows, cols);
  for (int i = 0; i < w.size(); ++i) w.data[i] = 0.3 + 0.07 * (i + 1);
  return w;
}

inline uint64_t fnv1a_str(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (char ch : s) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::vector<OpCheck> gradcheck_ops() {
  std::vector<OpCheck> ops;
  BallConfig ball;
  ball.dim = 4;

  auto halves = [](Tape& t, Var x) {
    const int half = t.value(x).rows / 2;
    return std::pair<Var, Var>(t.rows(x, 0, half), t.rows(x, half, t.value(x).rows));
  };

  ops.push_back({"add", 6, 4, -1.0, 1.0, [halves](Tape& t, Var x) {
                   auto [a, b] = halves(t, x);
                   return t.add(a, b);
                 }, nullptr});
  ops.push_back({"sub", 6, 4, -1.0, 1.0, [halves](Tape& t, Var x) {
                   auto [a, b] = halves(t, x);
                   return t.sub(a, b);
                 }, nullptr});
  ops.push_back({"mul", 6, 4, -1.0, 1.0, [halves](Tape& t, Var x) {
                   auto [a, b] = halves(t, x);
                   return t.mul(a, b);
                 }, nullptr});
  ops.push_back({"div", 6, 4, 0.5, 1.5, [halves](Tape& t, Var x) {
                   auto [a, b] = halves(t, x);
                   return t.div(a, b);
                 }, nullptr});
  ops.push_back({"affine", 3, 4, -1.0, 1.0,
                 [](Tape& t, Var x) { return t.affine(x, 1.7, -0.3); }, nullptr});
  ops.push_back({"smul", 3, 3, 0.2, 1.0, [](Tape& t, Var x) {
                   return t.smul(t.element(x, 0, 0), t.rows(x, 1, 3));
                 }, nullptr});
  ops.push_back({"sdiv", 3, 3, 0.4, 1.2, [](Tape& t, Var x) {
                   return t.sdiv(t.rows(x, 1, 3), t.element(x, 0, 0));
                 }, nullptr});
  ops.push_back({"recip", 1, 1, 0.3, 1.5, [](Tape& t, Var x) { return t.recip(x); }, nullptr});
  ops.push_back({"dot", 2, 5, -1.0, 1.0, [](Tape& t, Var x) {
                   return t.dot(t.row(x, 0), t.row(x, 1));
                 }, nullptr});
  ops.push_back({"norm", 1, 5, 0.2, 1.0, [](Tape& t, Var x) { return t.norm(x); }, nullptr});
  ops.push_back({"sum", 3, 4, -1.0, 1.0, [](Tape& t, Var x) { return t.sum(x); }, nullptr});
  ops.push_back({"mean_rows", 4, 3, -1.0, 1.0,
                 [](Tape& t, Var x) { return t.mean_rows(x); }, nullptr});
  ops.push_back({"matmul", 7, 3, -1.0, 1.0, [](Tape& t, Var x) {
                   return t.matmul(t.rows(x, 0, 4), t.transpose(t.rows(x, 4, 7)));
                 }, nullptr});
  ops.push_back({"transpose", 3, 5, -1.0, 1.0,
                 [](Tape& t, Var x) { return t.transpose(x); }, nullptr});
  ops.push_back({"outer", 2, 4, -1.0, 1.0, [](Tape& t, Var x) {
                   return t.outer(t.row(x, 0), t.row(x, 1));
                 }, nullptr});
  ops.push_back({"tanh", 3, 4, -2.0, 2.0, [](Tape& t, Var x) { return t.tanh_(x); }, nullptr});
  ops.push_back({"atanh", 3, 4, -0.9, 0.9,
                 [](Tape& t, Var x) { return t.atanh_(x, 1e-5); }, nullptr});
  ops.push_back({"sqrt", 3, 4, 0.1, 2.0, [](Tape& t, Var x) { return t.sqrt_(x); }, nullptr});
  ops.push_back({"log", 3, 4, 0.1, 2.0, [](Tape& t, Var x) { return t.log_(x); }, nullptr});
  ops.push_back({"exp", 3, 4, -2.0, 2.0, [](Tape& t, Var x) { return t.exp_(x); }, nullptr});
  ops.push_back({"softmax_rows", 3, 5, -2.0, 2.0,
                 [](Tape& t, Var x) { return t.softmax_rows(x); }, nullptr});
  ops.push_back({"sqnorm_rows", 3, 4, -1.0, 1.0,
                 [](Tape& t, Var x) { return t.sqnorm_rows(x); }, nullptr});
  ops.push_back({"normalize_rows", 3, 4, 0.2, 1.0,
                 [](Tape& t, Var x) { return t.normalize_rows(x); }, nullptr});
  ops.push_back({"clip_rows", 3, 4, 0.3, 0.8,
                 [](Tape& t, Var x) { return t.clip_rows(x, 1.0); },
                 [](const Matrix& m) {
                   for (int r = 0; r < m.rows; ++r)
                     if (std::abs(vnorm(m.row_vec(r)) - 1.0) < 1e-3) return false;
                   return true;
                 }});
  ops.push_back({"expmap0_rows", 3, 4, -0.35, 0.35,
                 [](Tape& t, Var x) { return t.expmap0_rows(x, 1.0); }, nullptr});
  ops.push_back({"concat_rows", 6, 4, -1.0, 1.0, [](Tape& t, Var x) {
                   return t.concat_rows({t.rows(x, 4, 6), t.rows(x, 0, 2), t.rows(x, 2, 4)});
                 }, nullptr});
  ops.push_back({"row_slice", 5, 4, -1.0, 1.0,
                 [](Tape& t, Var x) { return t.rows(x, 1, 3); }, nullptr});
  ops.push_back({"element", 3, 4, -1.0, 1.0,
                 [](Tape& t, Var x) { return t.element(x, 1, 2); }, nullptr});
  ops.push_back({"col_min", 4, 3, -1.0, 1.0, [](Tape& t, Var x) { return t.col_min(x); },
                 [](const Matrix& m) {
                   for (int j = 0; j < m.cols; ++j)
                     for (int i = 0; i < m.rows; ++i)
                       for (int k = i + 1; k < m.rows; ++k)
                         if (std::abs(m(i, j) - m(k, j)) < 1e-3) return false;
                   return true;
                 }});
  ops.push_back({"set_diag", 4, 3, -1.0, 1.0, [](Tape& t, Var x) {
                   return t.set_diag(t.rows(x, 0, 3), t.row(x, 3));
                 }, nullptr});
  ops.push_back({"gather_rows", 4, 3, -1.0, 1.0, [](Tape& t, Var x) {
                   return t.gather_rows(x, {0, 2, 1, 2});
                 }, nullptr});

  ops.push_back({"conformal_factor", 1, 4, -0.35, 0.35, [ball](Tape& t, Var x) {
                   return tape_conformal(t, x, ball);
                 }, nullptr});
  ops.push_back({"mobius_add", 2, 4, -0.35, 0.35, [ball](Tape& t, Var x) {
                   return tape_mobius_add(t, t.row(x, 0), t.row(x, 1), ball);
                 }, nullptr});
  ops.push_back({"expmap", 2, 4, -0.35, 0.35, [ball](Tape& t, Var x) {
                   return tape_expmap(t, t.row(x, 0), t.row(x, 1), ball);
                 },
                 [](const Matrix& m) { return vnorm(m.row_vec(1)) > 0.05; }});
  ops.push_back({"poincare_dist", 2, 4, -0.35, 0.35, [ball](Tape& t, Var x) {
                   return tape_poincare_dist(t, t.row(x, 0), t.row(x, 1), ball);
                 },
                 [](const Matrix& m) {
                   Vec d = m.row_vec(0);
                   const Vec y = m.row_vec(1);
                   for (size_t i = 0; i < d.size(); ++i) d[i] -= y[i];
                   return vnorm(d) > 0.05;
                 }});
  ops.push_back({"pairwise_poincare_dist", 5, 4, -0.35, 0.35, [ball](Tape& t, Var x) {
                   return tape_pairwise_poincare_dist(t, t.rows(x, 0, 3), t.rows(x, 3, 5), ball);
                 },
                 [](const Matrix& m) {
                   for (int i = 0; i < 3; ++i)
                     for (int j = 3; j < 5; ++j) {
                       Vec d = m.row_vec(i);
                       const Vec y = m.row_vec(j);
                       for (size_t k = 0; k < d.size(); ++k) d[k] -= y[k];
                       if (vnorm(d) < 0.05) return false;
                     }
                   return true;
                 }});
  ops.push_back({"cosine_dist", 2, 4, 0.2, 1.0, [](Tape& t, Var x) {
                   return tape_cosine_dist(t, t.row(x, 0), t.row(x, 1));
                 }, nullptr});
  ops.push_back({"pairwise_cosine_dist", 5, 4, 0.2, 1.0, [](Tape& t, Var x) {
                   return tape_pairwise_cosine_dist(t, t.rows(x, 0, 3), t.rows(x, 3, 5));
                 }, nullptr});
  ops.push_back({"pairwise_sq_euclidean", 5, 4, -1.0, 1.0, [](Tape& t, Var x) {
                   return tape_pairwise_sq_euclidean(t, t.rows(x, 0, 3), t.rows(x, 3, 5));
                 }, nullptr});
  ops.push_back({"radius_rows", 3, 4, 0.1, 0.35, [ball](Tape& t, Var x) {
                   return tape_radius_rows(t, x, ball);
                 }, nullptr});

  // Full batch objective, both similarity rules. Rows 0..3 are two 2-query
  // image sets, rows 4..5 the two text embeddings.
  auto batch_loss_op = [ball](Similarity sim) {
    return [ball, sim](Tape& t, Var x) {
      LossConfig cfg;
      cfg.space = sim == Similarity::kPoincare ? Space::kHyperbolic : Space::kEuclidean;
      cfg.similarity = sim;
      cfg.rqs_probability = 1.0;
      cfg.temperature = 0.1;
      Rng rng(7);
      const std::vector<Var> images = {t.rows(x, 0, 2), t.rows(x, 2, 4)};
      return tape_batch_loss(t, images, t.rows(x, 4, 6), t.input(Matrix(1, 1, 0.1)), cfg, rng,
                             ball)
          .loss;
    };
  };
  // The loss takes an argmin over queries for every (image, text) pair;
  // reject draws where any pair's two query distances nearly tie, since
  // central differences straddle the selection switch there.
  auto batch_loss_admissible = [ball](Similarity sim) {
    return [ball, sim](const Matrix& m) {
      for (int img = 0; img < 2; ++img)
        for (int txt = 4; txt < 6; ++txt) {
          const Vec u = m.row_vec(txt);
          const double d0 = query_dist(m.row_vec(2 * img), u, sim, ball);
          const double d1 = query_dist(m.row_vec(2 * img + 1), u, sim, ball);
          if (std::abs(d0 - d1) < 1e-3) return false;
        }
      return true;
    };
  };
  ops.push_back({"batch_loss_cosine", 6, 4, 0.1, 0.35, batch_loss_op(Similarity::kCosine),
                 batch_loss_admissible(Similarity::kCosine)});
  ops.push_back({"batch_loss_poincare", 6, 4, 0.1, 0.35, batch_loss_op(Similarity::kPoincare),
                 batch_loss_admissible(Similarity::kPoincare)});
  return ops;
}

}  // namespace detail

// Checks every differentiable exported operation against central finite
// differences on `points` random interior inputs; reports the worst relative
// error per operation.
inline std::vector<GradCheckEntry> run_gradcheck(int points, uint64_t seed) {
  if (points <= 0) throw std::invalid_argument("gradcheck: points must be positive");
  std::vector<GradCheckEntry> out;
  for (const detail::OpCheck& op : detail::gradcheck_ops()) {
    GradCheckEntry entry{op.name, 0.0};
    Rng rng(derive_seed(seed, detail::fnv1a_str(op.name)));
    for (int p = 0; p < points; ++p) {
      const Matrix x = detail::draw_gradcheck_input(rng, op);
      auto scalar_of = [&](const Vec& flat) {
        Tape t;
        Matrix m(op.rows, op.cols);
        m.data = flat;
        Var in = t.input(std::move(m));
        Var y = op.build(t, in);
        const Matrix& yv = t.value(y);
        Var w = t.input(detail::gradcheck_weights(yv.rows, yv.cols));
        return t.scalar(t.sum(t.mul(y, w)));
      };
      Tape t;
      Var in = t.input(x);
      Var y = op.build(t, in);
      const Matrix& yv = t.value(y);
      Var w = t.input(detail::gradcheck_weights(yv.rows, yv.cols));
      t.backward(t.sum(t.mul(y, w)));
      const Vec analytic = t.adjoint(in).data;
      const Vec fd = finite_diff_grad(scalar_of, x.data);
      entry.max_rel_err = std::max(entry.max_rel_err, grad_rel_err(analytic, fd));
    }
    out.push_back(std::move(entry));
  }
  return out;
}

}  // namespace hypair
