#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "hypair/core.hpp"
#include "hypair/diff_geometry.hpp"
#include "hypair/geometry.hpp"
#include "hypair/tape.hpp"

// Contrastive alignment losses over a set of query embeddings and a text
// embedding. Each image yields N query embeddings; alignment scores the text
// against the closest query. The batch objective is a symmetric softmax
// cross-entropy over all image/text pairs (in-batch negatives), with an
// optional positive-only mode that keeps just the alignment terms.

namespace hypair {

enum class Space { kEuclidean, kHyperbolic };
enum class Similarity { kCosine, kPoincare };
enum class LossMode { kPositiveOnly, kInfonce };

struct LossConfig {
  Space space = Space::kEuclidean;
  Similarity similarity = Similarity::kCosine;
  LossMode mode = LossMode::kInfonce;
  // Probability of the deterministic argmin pick for the positive pair;
  // 1 - rqs_probability of a uniformly random query instead. 1.0 disables
  // the random selection entirely.
  double rqs_probability = 0.5;
  double temperature = 0.05;

  void validate() const {
    if (similarity == Similarity::kPoincare && space != Space::kHyperbolic)
      throw std::invalid_argument("loss config: poincare similarity requires hyperbolic space");
    if (rqs_probability < 0.0 || rqs_probability > 1.0)
      throw std::invalid_argument("loss config: rqs_probability outside [0, 1]");
    if (temperature <= 0.0) throw std::invalid_argument("loss config: temperature must be positive");
  }
};

struct AlignResult {
  double loss = 0.0;
  int selected = -1;
};

// 1 - <a,b>/(||a|| ||b||), in [0, 2].
inline double cosine_dist(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_dist: length mismatch");
  const double na = vnorm(a);
  const double nb = vnorm(b);
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine_dist: zero vector");
  return 1.0 - vdot(a, b) / (na * nb);
}

namespace detail {

inline double query_dist(const Vec& e, const Vec& u, Similarity sim, const BallConfig& ball) {
  if (sim == Similarity::kCosine) return cosine_dist(e, u);
  return poincare_dist(PoincarePoint(e, ball), PoincarePoint(u, ball), ball);
}

// Minimum distance over query rows; ties break to the lowest index.
inline AlignResult align_min(const Matrix& queries, const Vec& u, Similarity sim,
                             const BallConfig& ball) {
  if (queries.rows < 1) throw std::invalid_argument("align: empty query set");
  AlignResult best{query_dist(queries.row_vec(0), u, sim, ball), 0};
  for (int j = 1; j < queries.rows; ++j) {
    const double d = query_dist(queries.row_vec(j), u, sim, ball);
    if (d < best.loss) best = {d, j};
  }
  return best;
}

}  // namespace detail

// Closest query by cosine distance on raw (Euclidean) embeddings.
inline AlignResult align_euclidean(const Matrix& queries, const Vec& u) {
  return detail::align_min(queries, u, Similarity::kCosine, BallConfig{});
}

// Closest query by ball distance on lifted embeddings.
inline AlignResult align_hyper_poincare(const Matrix& queries, const Vec& u,
                                        const BallConfig& ball) {
  return detail::align_min(queries, u, Similarity::kPoincare, ball);
}

// Closest query by cosine distance on lifted embeddings (direction only).
inline AlignResult align_hyper_cosine(const Matrix& queries, const Vec& u) {
  return detail::align_min(queries, u, Similarity::kCosine, BallConfig{});
}

// With probability p the deterministic argmin query; otherwise a uniformly
// random query. Returns the distance to whichever query was selected.
inline AlignResult align_rqs(const Matrix& queries, const Vec& u, double p, Rng& rng,
                             Similarity sim = Similarity::kCosine,
                             const BallConfig& ball = BallConfig{}) {
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("align_rqs: probability outside [0, 1]");
  const AlignResult det = detail::align_min(queries, u, sim, ball);
  if (rng.bernoulli(p)) return det;
  const int j = rng.uniform_int(queries.rows);
  return {detail::query_dist(queries.row_vec(j), u, sim, ball), j};
}

namespace detail {

// Positive-pair query picks for the whole batch, consuming one stream in
// batch order so plain and tape evaluations agree draw for draw.
inline std::vector<int> pick_positive_queries(const std::vector<int>& argmins, int n_queries,
                                              double p, Rng& rng) {
  std::vector<int> picks(argmins.size());
  for (size_t i = 0; i < argmins.size(); ++i) {
    if (rng.bernoulli(p))
      picks[i] = argmins[i];
    else
      picks[i] = rng.uniform_int(n_queries);
  }
  return picks;
}

}  // namespace detail

// Batch objective. Builds the B x B matrix D[i][t] = min over queries of
// dist(E_i, u_t); the diagonal uses the (possibly random) positive-pair
// selection. InfoNCE mode averages softmax cross-entropy over rows and
// columns of -D/temperature; positive-only mode averages the diagonal.
inline double infonce_batch(const std::vector<Matrix>& images, const std::vector<Vec>& texts,
                            const LossConfig& cfg, Rng& rng,
                            const BallConfig& ball = BallConfig{}) {
  cfg.validate();
  if (images.size() != texts.size()) throw std::invalid_argument("infonce: length mismatch");
  const int b = static_cast<int>(images.size());
  if (b == 0) throw std::invalid_argument("infonce: empty batch");

  Matrix dist(b, b);
  std::vector<int> argmins(b);
  for (int i = 0; i < b; ++i) {
    if (images[i].rows != images[0].rows)
      throw std::invalid_argument("infonce: inconsistent query counts");
    for (int t = 0; t < b; ++t) {
      const AlignResult r = detail::align_min(images[i], texts[t], cfg.similarity, ball);
      dist(i, t) = r.loss;
      if (t == i) argmins[i] = r.selected;
    }
  }
  const std::vector<int> picks =
      detail::pick_positive_queries(argmins, images[0].rows, cfg.rqs_probability, rng);
  for (int i = 0; i < b; ++i)
    dist(i, i) = detail::query_dist(images[i].row_vec(picks[i]), texts[i], cfg.similarity, ball);

  if (cfg.mode == LossMode::kPositiveOnly) {
    double s = 0.0;
    for (int i = 0; i < b; ++i) s += dist(i, i);
    return s / b;
  }

  auto row_ce = [&](bool transpose) {
    double total = 0.0;
    for (int i = 0; i < b; ++i) {
      double mx = -1e300;
      for (int t = 0; t < b; ++t) {
        const double s = -(transpose ? dist(t, i) : dist(i, t)) / cfg.temperature;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (int t = 0; t < b; ++t)
        z += std::exp(-(transpose ? dist(t, i) : dist(i, t)) / cfg.temperature - mx);
      const double pos = -dist(i, i) / cfg.temperature - mx;
      total += std::log(z) - pos;
    }
    return total / b;
  };
  return 0.5 * (row_ce(false) + row_ce(true));
}

struct TapeBatchLoss {
  Var loss;
  // Query picked for each positive pair (drives the selection histogram).
  std::vector<int> positive_selected;
};

// Tape counterpart of infonce_batch: image_sets holds one (N x d) node per
// example, texts one (B x d) node with matching row order. The temperature
// node must be a positive scalar (pass an input node for a fixed value or a
// parameter-derived node to learn it).
inline TapeBatchLoss tape_batch_loss(Tape& t, const std::vector<Var>& image_sets, Var texts,
                                     Var temperature, const LossConfig& cfg, Rng& rng,
                                     const BallConfig& ball = BallConfig{}) {
  cfg.validate();
  const int b = static_cast<int>(image_sets.size());
  if (b == 0) throw std::invalid_argument("batch loss: empty batch");
  if (t.value(texts).rows != b) throw std::invalid_argument("batch loss: length mismatch");

  // Per-example distance rows and deterministic argmin picks.
  std::vector<Var> dist_rows(b);
  std::vector<Var> per_image(b);
  std::vector<int> argmins(b);
  const int n_queries = t.value(image_sets[0]).rows;
  for (int i = 0; i < b; ++i) {
    if (t.value(image_sets[i]).rows != n_queries)
      throw std::invalid_argument("batch loss: inconsistent query counts");
    Var d = cfg.similarity == Similarity::kCosine
                ? tape_pairwise_cosine_dist(t, image_sets[i], texts)
                : tape_pairwise_poincare_dist(t, image_sets[i], texts, ball);
    per_image[i] = d;
    Var mins = t.col_min(d);
    dist_rows[i] = mins;
    argmins[i] = t.argmin_rows(mins)[i];
  }
  const std::vector<int> picks =
      detail::pick_positive_queries(argmins, n_queries, cfg.rqs_probability, rng);

  std::vector<Var> diag(b);
  for (int i = 0; i < b; ++i) diag[i] = t.element(per_image[i], picks[i], i);
  Var diag_col = t.concat_rows(diag);

  TapeBatchLoss out;
  out.positive_selected = picks;
  if (cfg.mode == LossMode::kPositiveOnly) {
    out.loss = t.affine(t.sum(diag_col), 1.0 / b, 0.0);
    return out;
  }

  Var dist = t.set_diag(t.concat_rows(dist_rows), diag_col);
  Var scores = t.neg(t.sdiv(dist, temperature));
  auto diagonal_ce = [&](Var s) {
    Var sm = t.softmax_rows(s);
    std::vector<Var> logs(b);
    for (int i = 0; i < b; ++i) logs[i] = t.log_(t.element(sm, i, i));
    return t.affine(t.sum(t.concat_rows(logs)), -1.0 / b, 0.0);
  };
  out.loss = t.affine(t.add(diagonal_ce(scores), diagonal_ce(t.transpose(scores))), 0.5, 0.0);
  return out;
}

}  // namespace hypair
