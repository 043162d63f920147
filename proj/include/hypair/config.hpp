#pragma once

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "hypair/eval.hpp"
#include "hypair/geometry.hpp"
#include "hypair/losses.hpp"
#include "hypair/model.hpp"
#include "hypair/synthdata.hpp"
#include "hypair/train.hpp"

namespace hypair {

// Raised for malformed experiment configs; callers map it to a validation
// failure (exit code 1) rather than a runtime failure.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require_known(const nlohmann::json& j, const std::string& where,
                          std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed)
      if (it.key() == a) {
        ok = true;
        break;
      }
    if (!ok)
      throw ConfigError("config: unknown field " +
                        (where.empty() ? it.key() : where + "." + it.key()));
  }
}

inline const nlohmann::json& require_object(const nlohmann::json& doc, const char* name) {
  const nlohmann::json& j = doc.at(name);
  if (!j.is_object()) throw ConfigError("config: " + std::string(name) + " must be an object");
  return j;
}

template <typename T>
void read_field(const nlohmann::json& j, const std::string& where, const char* name, T& out) {
  if (!j.contains(name)) return;
  try {
    out = j.at(name).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config: invalid value for " + where + "." + name);
  }
}

inline std::string read_enum(const nlohmann::json& j, const std::string& where, const char* name,
                             const std::string& current,
                             std::initializer_list<const char*> allowed) {
  std::string s = current;
  read_field(j, where, name, s);
  for (const char* a : allowed)
    if (s == a) return s;
  throw ConfigError("config: invalid value '" + s + "' for " + where + "." + name);
}

}  // namespace detail

inline std::vector<std::string> default_variants() {
  return {"euclidean",  "euclidean_rqs",      "euclidean_rqs_rtp", "hyperbolic",
          "hyperbolic_poincare", "hyperbolic_rqs", "hyperbolic_rtp",    "hyperbolic_rqs_rtp"};
}

// One experiment document with sections {data, model, loss, train, eval}
// plus top-level seed and variants. Every field has a default; unknown
// fields are rejected by name.
struct RunConfig {
  HierarchySpec data;
  int train_count = 512;
  int test_count = 256;
  ModelConfig model;
  LossConfig loss;
  double curvature = 1.0;
  double max_norm = 1.0;
  TrainConfig train;
  std::string eval_split = "test";
  uint64_t seed = 0;
  std::vector<std::string> variants = default_variants();

  ModelConfig model_config() const {
    data.validate();
    ModelConfig m = model;
    m.dim_in = data.dim_in;
    m.vocab_size = build_data_vocab(data).size();
    return m;
  }

  BallConfig ball_config() const {
    BallConfig b;
    b.curvature = curvature;
    b.dim = model.dim;
    b.max_norm = max_norm;
    return b;
  }

  TrainConfig train_config() const {
    TrainConfig t = train;
    t.loss = loss;
    t.ball = ball_config();
    t.seed = seed;
    return t;
  }

  EvalConfig eval_config() const { return {loss, ball_config()}; }

  void validate() const {
    if (train_count <= 0 || test_count <= 0)
      throw ConfigError("config: data.train_count and data.test_count must be positive");
    if (eval_split != "train" && eval_split != "test")
      throw ConfigError("config: invalid value '" + eval_split + "' for eval.split");
    if (variants.empty()) throw ConfigError("config: variants must not be empty");
    model_config().validate();
    train_config().validate();
  }
};

inline RunConfig parse_config(const nlohmann::json& doc) {
  using detail::read_field;
  using detail::require_known;
  using detail::require_object;
  if (!doc.is_object()) throw ConfigError("config: top-level document must be an object");
  require_known(doc, "", {"seed", "variants", "data", "model", "loss", "train", "eval"});
  RunConfig cfg;
  read_field(doc, "", "seed", cfg.seed);
  read_field(doc, "", "variants", cfg.variants);

  if (doc.contains("data")) {
    const nlohmann::json& d = require_object(doc, "data");
    require_known(d, "data",
                  {"depth", "branching", "patches", "dim_in", "patch_noise", "filler_rate",
                   "seed", "train_count", "test_count"});
    read_field(d, "data", "depth", cfg.data.depth);
    read_field(d, "data", "branching", cfg.data.branching);
    read_field(d, "data", "patches", cfg.data.patches);
    read_field(d, "data", "dim_in", cfg.data.dim_in);
    read_field(d, "data", "patch_noise", cfg.data.patch_noise);
    read_field(d, "data", "filler_rate", cfg.data.filler_rate);
    read_field(d, "data", "seed", cfg.data.seed);
    read_field(d, "data", "train_count", cfg.train_count);
    read_field(d, "data", "test_count", cfg.test_count);
  }
  if (doc.contains("model")) {
    const nlohmann::json& m = require_object(doc, "model");
    require_known(m, "model",
                  {"n_queries", "dim", "dim_hidden", "dim_token", "init_scale",
                   "learn_temperature"});
    read_field(m, "model", "n_queries", cfg.model.n_queries);
    read_field(m, "model", "dim", cfg.model.dim);
    read_field(m, "model", "dim_hidden", cfg.model.dim_hidden);
    read_field(m, "model", "dim_token", cfg.model.dim_token);
    read_field(m, "model", "init_scale", cfg.model.init_scale);
    read_field(m, "model", "learn_temperature", cfg.model.learn_temperature);
  }
  if (doc.contains("loss")) {
    const nlohmann::json& l = require_object(doc, "loss");
    require_known(l, "loss",
                  {"space", "similarity", "mode", "rqs_probability", "temperature", "curvature",
                   "max_norm"});
    const std::string space = detail::read_enum(
        l, "loss", "space", cfg.loss.space == Space::kHyperbolic ? "hyperbolic" : "euclidean",
        {"euclidean", "hyperbolic"});
    cfg.loss.space = space == "hyperbolic" ? Space::kHyperbolic : Space::kEuclidean;
    const std::string sim = detail::read_enum(
        l, "loss", "similarity",
        cfg.loss.similarity == Similarity::kPoincare ? "poincare" : "cosine",
        {"cosine", "poincare"});
    cfg.loss.similarity = sim == "poincare" ? Similarity::kPoincare : Similarity::kCosine;
    const std::string mode = detail::read_enum(
        l, "loss", "mode", cfg.loss.mode == LossMode::kPositiveOnly ? "positive_only" : "infonce",
        {"infonce", "positive_only"});
    cfg.loss.mode = mode == "positive_only" ? LossMode::kPositiveOnly : LossMode::kInfonce;
    read_field(l, "loss", "rqs_probability", cfg.loss.rqs_probability);
    read_field(l, "loss", "temperature", cfg.loss.temperature);
    read_field(l, "loss", "curvature", cfg.curvature);
    read_field(l, "loss", "max_norm", cfg.max_norm);
  }
  if (doc.contains("train")) {
    const nlohmann::json& t = require_object(doc, "train");
    require_known(t, "train",
                  {"steps", "batch_size", "lr_start", "lr_peak", "lr_floor", "warmup_steps",
                   "beta1", "beta2", "weight_decay", "adam_eps", "rtp_max_window",
                   "log_interval"});
    read_field(t, "train", "steps", cfg.train.steps);
    read_field(t, "train", "batch_size", cfg.train.batch_size);
    read_field(t, "train", "lr_start", cfg.train.lr_start);
    read_field(t, "train", "lr_peak", cfg.train.lr_peak);
    read_field(t, "train", "lr_floor", cfg.train.lr_floor);
    read_field(t, "train", "warmup_steps", cfg.train.warmup_steps);
    read_field(t, "train", "beta1", cfg.train.beta1);
    read_field(t, "train", "beta2", cfg.train.beta2);
    read_field(t, "train", "weight_decay", cfg.train.weight_decay);
    read_field(t, "train", "adam_eps", cfg.train.adam_eps);
    read_field(t, "train", "rtp_max_window", cfg.train.rtp_max_window);
    read_field(t, "train", "log_interval", cfg.train.log_interval);
  }
  if (doc.contains("eval")) {
    const nlohmann::json& e = require_object(doc, "eval");
    require_known(e, "eval", {"split"});
    read_field(e, "eval", "split", cfg.eval_split);
  }
  return cfg;
}

inline RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
  return parse_config(doc);
}

// The eight comparison rows: each variant pins space, similarity, the
// positive-pick probability (0.5 when randomized, 1.0 otherwise), and the
// pruning window (7 when pruning, 0 otherwise). Contrastive mode is always
// the batch objective; the remaining knobs come from the base config.
inline RunConfig apply_variant(RunConfig cfg, const std::string& name) {
  LossConfig& l = cfg.loss;
  l.mode = LossMode::kInfonce;
  l.space = Space::kHyperbolic;
  l.similarity = Similarity::kCosine;
  l.rqs_probability = 1.0;
  cfg.train.rtp_max_window = 0;
  if (name == "euclidean") {
    l.space = Space::kEuclidean;
  } else if (name == "euclidean_rqs") {
    l.space = Space::kEuclidean;
    l.rqs_probability = 0.5;
  } else if (name == "euclidean_rqs_rtp") {
    l.space = Space::kEuclidean;
    l.rqs_probability = 0.5;
    cfg.train.rtp_max_window = 7;
  } else if (name == "hyperbolic") {
  } else if (name == "hyperbolic_poincare") {
    l.similarity = Similarity::kPoincare;
  } else if (name == "hyperbolic_rqs") {
    l.rqs_probability = 0.5;
  } else if (name == "hyperbolic_rtp") {
    cfg.train.rtp_max_window = 7;
  } else if (name == "hyperbolic_rqs_rtp") {
    l.rqs_probability = 0.5;
    cfg.train.rtp_max_window = 7;
  } else {
    throw ConfigError("config: unknown variant '" + name + "'");
  }
  return cfg;
}

}  // namespace hypair
