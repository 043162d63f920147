#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "hypair/core.hpp"
#include "hypair/geometry.hpp"
#include "hypair/tape.hpp"
#include "hypair/textaug.hpp"

// Two-tower encoder: N learned query vectors cross-attend over image patch
// features to produce N query embeddings; captions are mean-pooled token
// embeddings with a linear projection. Both towers can be lifted onto the
// ball (clip, then exponential map at the origin) for hyperbolic training.

namespace hypair {

struct ModelConfig {
  int n_queries = 8;
  int dim = 16;        // embedding dim shared by both towers
  int dim_hidden = 32;
  int dim_token = 32;
  int dim_in = 32;     // patch feature dim
  int vocab_size = 93;
  double init_scale = 0.1;
  bool learn_temperature = false;

  void validate() const {
    if (n_queries < 1) throw std::invalid_argument("model: n_queries must be >= 1");
    if (dim < 1) throw std::invalid_argument("model: dim must be >= 1");
    if (dim_hidden < 1) throw std::invalid_argument("model: dim_hidden must be >= 1");
    if (dim_token < 1) throw std::invalid_argument("model: dim_token must be >= 1");
    if (dim_in < 1) throw std::invalid_argument("model: dim_in must be >= 1");
    if (vocab_size < 2) throw std::invalid_argument("model: vocab_size must be >= 2");
    if (!(init_scale > 0.0)) throw std::invalid_argument("model: init_scale must be > 0");
  }
};

// Named parameter store kept sorted by name so iteration order, gradient
// layout and checkpoints all agree.
struct ModelParams {
  std::vector<std::pair<std::string, Matrix>> entries;

  const Matrix& at(const std::string& name) const {
    for (const auto& [n, m] : entries)
      if (n == name) return m;
    throw std::invalid_argument("params: unknown parameter " + name);
  }
  Matrix& at(const std::string& name) {
    for (auto& [n, m] : entries)
      if (n == name) return m;
    throw std::invalid_argument("params: unknown parameter " + name);
  }
  bool has(const std::string& name) const {
    for (const auto& [n, m] : entries)
      if (n == name) return true;
    return false;
  }
  int size() const { return static_cast<int>(entries.size()); }
};

struct ParamShape {
  std::string name;
  int rows;
  int cols;
};

inline std::vector<ParamShape> param_shapes(const ModelConfig& cfg) {
  std::vector<ParamShape> s = {
      {"attn_key", cfg.dim_hidden, cfg.dim_hidden},
      {"attn_value", cfg.dim_hidden, cfg.dim_hidden},
      {"output_projection", cfg.dim_hidden, cfg.dim},
      {"patch_projection", cfg.dim_in, cfg.dim_hidden},
      {"queries", cfg.n_queries, cfg.dim_hidden},
      {"text_projection", cfg.dim_token, cfg.dim},
      {"token_embedding", cfg.vocab_size, cfg.dim_token},
  };
  if (cfg.learn_temperature) s.push_back({"log_temperature", 1, 1});
  std::sort(s.begin(), s.end(),
            [](const ParamShape& a, const ParamShape& b) { return a.name < b.name; });
  return s;
}

// Entries filled uniform(-init_scale, init_scale) in sorted-name order from
// a single derived stream; the learnable temperature starts at its
// configured value instead.
inline ModelParams init_params(const ModelConfig& cfg, uint64_t seed,
                               double temperature_init = 0.05) {
  cfg.validate();
  constexpr uint64_t kInitTag = 0x506172616d496e69ULL;  // stream label
  Rng rng(derive_seed(seed, kInitTag));
  ModelParams p;
  for (const ParamShape& s : param_shapes(cfg)) {
    Matrix m(s.rows, s.cols);
    if (s.name == "log_temperature") {
      m.data[0] = std::log(temperature_init);
    } else {
      for (double& x : m.data) x = rng.uniform(-cfg.init_scale, cfg.init_scale);
    }
    p.entries.emplace_back(s.name, std::move(m));
  }
  return p;
}

// Parameter nodes on a tape, aligned with ModelParams order.
struct TapeParams {
  std::vector<std::pair<std::string, Var>> vars;

  Var at(const std::string& name) const {
    for (const auto& [n, v] : vars)
      if (n == name) return v;
    throw std::invalid_argument("tape params: unknown parameter " + name);
  }
  bool has(const std::string& name) const {
    for (const auto& [n, v] : vars)
      if (n == name) return true;
    return false;
  }
};

inline TapeParams load_params(Tape& t, const ModelParams& p) {
  TapeParams tp;
  for (const auto& [name, m] : p.entries) tp.vars.emplace_back(name, t.input(m));
  return tp;
}

struct ImageEncoding {
  Var embeddings;  // N x d
  Var attention;   // N x P, rows sum to 1
};

// Each query attends over projected patch features; scores are scaled by
// 1/sqrt(hidden dim) before the row softmax.
inline ImageEncoding encode_image(Tape& t, const TapeParams& tp, Var patches) {
  Var x = t.matmul(patches, tp.at("patch_projection"));
  Var keys = t.matmul(x, tp.at("attn_key"));
  Var values = t.matmul(x, tp.at("attn_value"));
  const double scale = 1.0 / std::sqrt(static_cast<double>(t.value(keys).cols));
  Var scores = t.affine(t.matmul(tp.at("queries"), t.transpose(keys)), scale, 0.0);
  Var attn = t.softmax_rows(scores);
  Var mixed = t.matmul(attn, values);
  return {t.matmul(mixed, tp.at("output_projection")), attn};
}

// Mean of the token embeddings, projected to the shared dim: (1 x d).
inline Var encode_text(Tape& t, const TapeParams& tp, const TokenSeq& tokens) {
  if (tokens.empty()) throw std::invalid_argument("encode_text: empty token sequence");
  Var emb = t.gather_rows(tp.at("token_embedding"), tokens);
  return t.matmul(t.mean_rows(emb), tp.at("text_projection"));
}

// Norm clip followed by the exponential map at the origin, row-wise.
inline Var lift_to_ball(Tape& t, Var rows, const BallConfig& cfg) {
  cfg.validate();
  return t.expmap0_rows(t.clip_rows(rows, cfg.max_norm), cfg.curvature);
}

// Plain (no-gradient) encodes for evaluation paths.
inline Matrix encode_image_values(const ModelParams& p, const Matrix& patches) {
  Tape t;
  const TapeParams tp = load_params(t, p);
  return t.value(encode_image(t, tp, t.input(patches)).embeddings);
}

inline Vec encode_text_values(const ModelParams& p, const TokenSeq& tokens) {
  Tape t;
  const TapeParams tp = load_params(t, p);
  return t.value(encode_text(t, tp, tokens)).data;
}

// ---- Checkpoint I/O ----
// Single JSON document: {"header": {...}, "params": {name: {"shape": [r, c],
// "data": [row-major...]}}}. Doubles serialize with shortest round-trip
// precision, so save/load/save is byte-identical.

inline void save_checkpoint(const ModelParams& p, const nlohmann::json& header,
                            const std::string& path) {
  nlohmann::json doc;
  doc["header"] = header;
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, m] : p.entries) {
    params[name] = {{"shape", {m.rows, m.cols}}, {"data", m.data}};
  }
  doc["params"] = std::move(params);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << doc.dump(2) << "\n";
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

struct Checkpoint {
  ModelParams params;
  nlohmann::json header;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_checkpoint: " + path + ": " + e.what());
  }
  if (!doc.contains("header") || !doc.contains("params"))
    throw std::runtime_error("load_checkpoint: missing header or params in " + path);
  Checkpoint ck;
  ck.header = doc.at("header");
  for (const auto& item : doc.at("params").items()) {
    const auto& shape = item.value().at("shape");
    Matrix m(shape.at(0).get<int>(), shape.at(1).get<int>());
    const Vec data = item.value().at("data").get<Vec>();
    if (static_cast<int>(data.size()) != m.size())
      throw std::runtime_error("load_checkpoint: shape mismatch for " + item.key());
    m.data = data;
    ck.params.entries.emplace_back(item.key(), std::move(m));
  }
  // nlohmann iterates objects in sorted key order already; keep the
  // guarantee explicit.
  std::sort(ck.params.entries.begin(), ck.params.entries.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return ck;
}

}  // namespace hypair
