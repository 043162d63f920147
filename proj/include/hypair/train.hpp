#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "hypair/core.hpp"
#include "hypair/geometry.hpp"
#include "hypair/losses.hpp"
#include "hypair/model.hpp"
#include "hypair/synthdata.hpp"
#include "hypair/tape.hpp"
#include "hypair/textaug.hpp"

namespace hypair {

struct TrainConfig {
  int steps = 2000;
  int batch_size = 64;
  // Linear warmup from lr_start to lr_peak over warmup_steps, then cosine
  // decay down to lr_floor at the final step.
  double lr_start = 3e-5;
  double lr_peak = 3e-3;
  double lr_floor = 3e-4;
  int warmup_steps = 100;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double weight_decay = 0.05;
  double adam_eps = 1e-8;
  LossConfig loss;
  BallConfig ball;         // embedding dim, curvature, clip threshold
  int rtp_max_window = 0;  // 0 disables caption pruning
  uint64_t seed = 0;
  int log_interval = 10;

  void validate() const {
    if (steps <= 0) throw std::invalid_argument("train config: steps must be positive");
    if (batch_size <= 0) throw std::invalid_argument("train config: batch size must be positive");
    if (!(lr_start > 0.0) || !(lr_peak > 0.0) || !(lr_floor > 0.0))
      throw std::invalid_argument("train config: learning rates must be positive");
    if (warmup_steps < 0 || warmup_steps > steps)
      throw std::invalid_argument("train config: warmup steps out of range");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw std::invalid_argument("train config: betas must lie in [0, 1)");
    if (!(weight_decay >= 0.0))
      throw std::invalid_argument("train config: weight decay must be non-negative");
    if (!(adam_eps > 0.0)) throw std::invalid_argument("train config: adam eps must be positive");
    if (rtp_max_window < 0)
      throw std::invalid_argument("train config: rtp max window must be non-negative");
    if (log_interval <= 0)
      throw std::invalid_argument("train config: log interval must be positive");
    loss.validate();
    ball.validate();
  }
};

// Learning rate for a 0-based step: linear warmup to the peak, cosine decay
// to the floor at the final step. lr(0) = lr_start, lr(warmup) = lr_peak.
inline double lr_at_step(const TrainConfig& cfg, int step) {
  if (step < 0 || step >= cfg.steps)
    throw std::out_of_range("lr_at_step: step outside the training range");
  if (step < cfg.warmup_steps)
    return cfg.lr_start +
           (cfg.lr_peak - cfg.lr_start) * (static_cast<double>(step) / cfg.warmup_steps);
  const int decay_span = cfg.steps - 1 - cfg.warmup_steps;
  if (decay_span <= 0) return cfg.lr_peak;
  const double progress = static_cast<double>(step - cfg.warmup_steps) / decay_span;
  return cfg.lr_floor +
         0.5 * (cfg.lr_peak - cfg.lr_floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

struct AdamWHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double weight_decay = 0.05;
  double eps = 1e-8;
};

struct AdamWState {
  std::vector<Matrix> m;  // first moments, aligned with param entries
  std::vector<Matrix> v;  // second moments
  int64_t t = 0;
};

inline AdamWState init_adamw_state(const ModelParams& p) {
  AdamWState st;
  for (const auto& [name, w] : p.entries) {
    st.m.emplace_back(w.rows, w.cols);
    st.v.emplace_back(w.rows, w.cols);
  }
  return st;
}

// One decoupled-weight-decay Adam update with bias-corrected moments:
//   w <- w - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * w)
inline void adamw_step(ModelParams& p, const std::vector<Matrix>& grads, AdamWState& st,
                       const AdamWHyper& h) {
  if (grads.size() != p.entries.size() || st.m.size() != p.entries.size())
    throw std::invalid_argument("adamw_step: gradient/state count mismatch");
  st.t += 1;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(st.t));
  for (size_t i = 0; i < grads.size(); ++i) {
    Matrix& w = p.entries[i].second;
    const Matrix& g = grads[i];
    if (!w.same_shape(g))
      throw std::invalid_argument("adamw_step: gradient shape mismatch for " +
                                  p.entries[i].first);
    Matrix& m = st.m[i];
    Matrix& v = st.v[i];
    for (int j = 0; j < w.size(); ++j) {
      m.data[j] = h.beta1 * m.data[j] + (1.0 - h.beta1) * g.data[j];
      v.data[j] = h.beta2 * v.data[j] + (1.0 - h.beta2) * g.data[j] * g.data[j];
      const double update = (m.data[j] / bc1) / (std::sqrt(v.data[j] / bc2) + h.eps);
      w.data[j] -= h.lr * (update + h.weight_decay * w.data[j]);
    }
  }
}

struct StepLog {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  // Hyperbolic runs log ball radii; Euclidean runs log Euclidean norms.
  double image_radius_mean = 0.0;
  double image_radius_std = 0.0;
  double text_radius_mean = 0.0;
  double text_radius_std = 0.0;
  // Smallest pairwise cosine among the batch's text embeddings; -1 when the
  // batch has fewer than two texts.
  double text_min_pair_cosine = -1.0;
  std::vector<int> selected_counts;  // positive-pick histogram for this batch

  bool operator==(const StepLog&) const = default;
};

struct TrainingDiverged : std::runtime_error {
  int step;
  explicit TrainingDiverged(int s)
      : std::runtime_error("training diverged at step " + std::to_string(s) +
                           ": loss is not finite"),
        step(s) {}
};

struct TrainResult {
  ModelParams params;
  std::vector<StepLog> logs;
  bool collapsed = false;   // all pairwise text cosines exceeded 0.99
  int collapse_step = -1;   // first step where the detector fired
};

namespace detail {

inline double min_pairwise_cosine(const Matrix& rows) {
  if (rows.rows < 2) return -1.0;
  double best = 1.0;
  for (int i = 0; i < rows.rows; ++i) {
    const Vec a = rows.row_vec(i);
    for (int j = i + 1; j < rows.rows; ++j) {
      const Vec b = rows.row_vec(j);
      const double den = std::max(vnorm(a) * vnorm(b), 1e-30);
      best = std::min(best, vdot(a, b) / den);
    }
  }
  return best;
}

}  // namespace detail

// Deterministic contrastive training loop. Batches are sampled uniformly
// with replacement; the batch, caption-pruning, and positive-pick random
// streams are derived independently per step so enabling one knob never
// shifts another's draws.
inline TrainResult train(const std::vector<PairRecord>& dataset, ModelParams params,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
  const bool hyperbolic = cfg.loss.space == Space::kHyperbolic;
  const bool learned_tau = params.has("log_temperature");
  constexpr uint64_t kBatchTag = 0x426174636853616dULL;
  constexpr uint64_t kRtpTag = 0x5274704472617773ULL;
  constexpr uint64_t kRqsTag = 0x5271734472617773ULL;

  AdamWState state = init_adamw_state(params);
  TrainResult result;

  for (int step = 0; step < cfg.steps; ++step) {
    Rng batch_rng(derive_seed(cfg.seed, kBatchTag, static_cast<uint64_t>(step)));
    std::vector<int> batch(cfg.batch_size);
    for (int& idx : batch) idx = batch_rng.uniform_int(static_cast<int>(dataset.size()));

    Rng rtp_rng(derive_seed(cfg.seed, kRtpTag, static_cast<uint64_t>(step)));
    Tape t;
    const TapeParams tp = load_params(t, params);
    std::vector<Var> images;
    std::vector<Var> text_rows;
    images.reserve(batch.size());
    text_rows.reserve(batch.size());
    for (int idx : batch) {
      const PairRecord& rec = dataset[static_cast<size_t>(idx)];
      Var img = encode_image(t, tp, t.input(rec.patches)).embeddings;
      TokenSeq tokens = rec.tokens;
      if (cfg.rtp_max_window > 0)
        tokens = random_text_prune(tokens, cfg.rtp_max_window, rtp_rng).first;
      Var txt = encode_text(t, tp, tokens);
      if (hyperbolic) {
        img = lift_to_ball(t, img, cfg.ball);
        txt = lift_to_ball(t, txt, cfg.ball);
      }
      images.push_back(img);
      text_rows.push_back(txt);
    }
    Var texts = t.concat_rows(text_rows);
    Var tau = learned_tau ? t.exp_(tp.at("log_temperature"))
                          : t.input(Matrix(1, 1, cfg.loss.temperature));
    Rng pick_rng(derive_seed(cfg.seed, kRqsTag, static_cast<uint64_t>(step)));
    const TapeBatchLoss bl = tape_batch_loss(t, images, texts, tau, cfg.loss, pick_rng, cfg.ball);
    const double loss_value = t.scalar(bl.loss);
    if (!std::isfinite(loss_value)) throw TrainingDiverged(step);

    t.backward(bl.loss);
    std::vector<Matrix> grads;
    grads.reserve(tp.vars.size());
    double grad_sq = 0.0;
    for (const auto& [name, var] : tp.vars) {
      grads.push_back(t.adjoint(var));
      for (double gx : grads.back().data) grad_sq += gx * gx;
    }

    const double min_cos = detail::min_pairwise_cosine(t.value(texts));
    if (!result.collapsed && min_cos > 0.99) {
      result.collapsed = true;
      result.collapse_step = step;
    }

    if (step % cfg.log_interval == 0 || step == cfg.steps - 1) {
      StepLog log;
      log.step = step;
      log.lr = lr_at_step(cfg, step);
      log.loss = loss_value;
      log.grad_norm = std::sqrt(grad_sq);
      std::vector<double> img_rad;
      std::vector<double> txt_rad;
      for (const Var& img : images) {
        const Matrix& e = t.value(img);
        double acc = 0.0;
        for (int r = 0; r < e.rows; ++r) {
          const Vec row = e.row_vec(r);
          acc += hyperbolic ? radius(PoincarePoint(row, cfg.ball), cfg.ball) : vnorm(row);
        }
        img_rad.push_back(acc / e.rows);
      }
      const Matrix& te = t.value(texts);
      for (int r = 0; r < te.rows; ++r) {
        const Vec row = te.row_vec(r);
        txt_rad.push_back(hyperbolic ? radius(PoincarePoint(row, cfg.ball), cfg.ball)
                                     : vnorm(row));
      }
      std::tie(log.image_radius_mean, log.image_radius_std) = mean_std(img_rad);
      std::tie(log.text_radius_mean, log.text_radius_std) = mean_std(txt_rad);
      log.text_min_pair_cosine = min_cos;
      const int n_queries = t.value(images[0]).rows;
      log.selected_counts.assign(static_cast<size_t>(n_queries), 0);
      for (int sel : bl.positive_selected) log.selected_counts[static_cast<size_t>(sel)] += 1;
      result.logs.push_back(std::move(log));
    }

    const AdamWHyper h{lr_at_step(cfg, step), cfg.beta1, cfg.beta2, cfg.weight_decay,
                       cfg.adam_eps};
    adamw_step(params, grads, state, h);
  }
  result.params = std::move(params);
  return result;
}

// One CSV row per StepLog; selection columns are sized by the query count.
inline void write_steps_csv(const std::vector<StepLog>& logs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_steps_csv: cannot open " + path);
  const size_t n_sel = logs.empty() ? 0 : logs.front().selected_counts.size();
  out << "step,lr,loss,grad_norm,image_radius_mean,image_radius_std,"
         "text_radius_mean,text_radius_std,text_min_pair_cosine";
  for (size_t i = 0; i < n_sel; ++i) out << ",sel_" << i;
  out << "\n";
  char buf[64];
  auto fmt = [&](double x) {
    std::snprintf(buf, sizeof(buf), "%.6g", x);
    out << buf;
  };
  for (const StepLog& log : logs) {
    out << log.step << ",";
    fmt(log.lr);
    out << ",";
    fmt(log.loss);
    out << ",";
    fmt(log.grad_norm);
    out << ",";
    fmt(log.image_radius_mean);
    out << ",";
    fmt(log.image_radius_std);
    out << ",";
    fmt(log.text_radius_mean);
    out << ",";
    fmt(log.text_radius_std);
    out << ",";
    fmt(log.text_min_pair_cosine);
    for (int c : log.selected_counts) out << "," << c;
    out << "\n";
  }
  if (!out) throw std::runtime_error("write_steps_csv: write failed for " + path);
}

}  // namespace hypair
