#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "hypair/core.hpp"
#include "hypair/textaug.hpp"

// Deterministic generator of hierarchical image/caption pairs. A rooted tree
// assigns every node a random unit direction; a leaf's prototype is the
// normalized sum of its path directions, so nearby leaves share most of
// their signal. Records sample a leaf, add patch noise around the prototype,
// and emit a caption naming the path with optional filler words.

namespace hypair {

constexpr int kFillerCount = 8;

struct HierarchySpec {
  int depth = 3;
  int branching = 4;
  int patches = 4;
  int dim_in = 32;
  double patch_noise = 0.1;
  double filler_rate = 0.2;
  uint64_t seed = 0;

  long long leaf_count() const {
    long long n = 1;
    for (int l = 0; l < depth; ++l) n *= branching;
    return n;
  }

  void validate() const {
    if (depth < 1) throw std::invalid_argument("hierarchy: depth must be >= 1");
    if (branching < 2) throw std::invalid_argument("hierarchy: branching must be >= 2");
    if (patches < 1) throw std::invalid_argument("hierarchy: patches must be >= 1");
    if (dim_in < 1) throw std::invalid_argument("hierarchy: dim_in must be >= 1");
    if (patch_noise < 0.0) throw std::invalid_argument("hierarchy: patch_noise must be >= 0");
    if (filler_rate < 0.0 || filler_rate >= 1.0)
      throw std::invalid_argument("hierarchy: filler_rate outside [0, 1)");
    if (leaf_count() > 1000000) throw std::invalid_argument("hierarchy: too many leaves");
  }
};

struct PairRecord {
  int id = 0;
  Matrix patches;
  TokenSeq tokens;
  std::vector<int> class_path;  // per-level node index, root to leaf
  int depth = 0;

  bool operator==(const PairRecord&) const = default;
};

struct Hierarchy {
  HierarchySpec spec;
  std::vector<std::vector<Vec>> directions;  // [level-1][node index]

  std::vector<int> path_of_leaf(long long leaf) const {
    std::vector<int> path(spec.depth);
    long long idx = leaf;
    for (int l = spec.depth; l >= 1; --l) {
      path[l - 1] = static_cast<int>(idx);
      idx /= spec.branching;
    }
    return path;
  }

  Vec leaf_prototype(long long leaf) const {
    Vec acc(spec.dim_in, 0.0);
    const std::vector<int> path = path_of_leaf(leaf);
    for (int l = 1; l <= spec.depth; ++l) {
      const Vec& dir = directions[l - 1][path[l - 1]];
      for (int j = 0; j < spec.dim_in; ++j) acc[j] += dir[j];
    }
    const double n = vnorm(acc);
    if (n > 1e-12)
      for (double& x : acc) x /= n;
    return acc;
  }
};

// Node directions keyed by (seed, level, node index) only, so any record
// subset sees the same tree.
inline Hierarchy build_hierarchy(const HierarchySpec& spec) {
  spec.validate();
  Hierarchy h{spec, {}};
  long long width = 1;
  for (int l = 1; l <= spec.depth; ++l) {
    width *= spec.branching;
    std::vector<Vec> level(static_cast<size_t>(width));
    for (long long i = 0; i < width; ++i) {
      Rng rng(derive_seed(spec.seed, static_cast<uint64_t>(l), static_cast<uint64_t>(i)));
      level[static_cast<size_t>(i)] = rng.unit_vec(spec.dim_in);
    }
    h.directions.push_back(std::move(level));
  }
  return h;
}

inline std::string filler_token(int i) { return "f" + std::to_string(i); }
inline std::string level_token(int level, int idx) {
  return "c" + std::to_string(level) + "_" + std::to_string(idx);
}

// Fillers first, then every tree-level label; depends only on the hierarchy
// shape, never on sampled records.
inline Vocab build_data_vocab(const HierarchySpec& spec) {
  spec.validate();
  Vocab v;
  for (int f = 0; f < kFillerCount; ++f) v.add(filler_token(f));
  long long width = 1;
  for (int l = 1; l <= spec.depth; ++l) {
    width *= spec.branching;
    for (long long i = 0; i < width; ++i)
      v.add(level_token(l, static_cast<int>(i)));
  }
  return v;
}

// Record streams are keyed by (seed, record id), so splits generated with
// different id offsets are disjoint and order-independent.
inline std::vector<PairRecord> generate(const HierarchySpec& spec, int count,
                                        int id_offset = 0) {
  spec.validate();
  if (count < 1) throw std::invalid_argument("generate: count must be >= 1");
  const Hierarchy h = build_hierarchy(spec);
  const Vocab vocab = build_data_vocab(spec);
  constexpr uint64_t kRecordTag = 0x5265636f72644b65ULL;  // stream label

  std::vector<PairRecord> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int id = id_offset + i;
    Rng rng(derive_seed(spec.seed, kRecordTag, static_cast<uint64_t>(id)));
    PairRecord rec;
    rec.id = id;
    rec.depth = spec.depth;
    const long long leaf = rng.uniform_int(static_cast<int>(spec.leaf_count()));
    rec.class_path = h.path_of_leaf(leaf);

    const Vec proto = h.leaf_prototype(leaf);
    rec.patches = Matrix(spec.patches, spec.dim_in);
    for (int p = 0; p < spec.patches; ++p)
      for (int j = 0; j < spec.dim_in; ++j)
        rec.patches(p, j) = proto[j] + spec.patch_noise * rng.gaussian();

    for (int l = 1; l <= spec.depth; ++l) {
      if (rng.bernoulli(spec.filler_rate))
        rec.tokens.push_back(vocab.id(filler_token(rng.uniform_int(kFillerCount))));
      rec.tokens.push_back(vocab.id(level_token(l, rec.class_path[l - 1])));
    }
    if (rng.bernoulli(spec.filler_rate))
      rec.tokens.push_back(vocab.id(filler_token(rng.uniform_int(kFillerCount))));

    out.push_back(std::move(rec));
  }
  return out;
}

inline void write_jsonl(const std::vector<PairRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_jsonl: cannot open " + path);
  for (const PairRecord& r : records) {
    nlohmann::json j;
    j["id"] = r.id;
    j["depth"] = r.depth;
    j["class_path"] = r.class_path;
    j["tokens"] = r.tokens;
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < r.patches.rows; ++i) rows.push_back(r.patches.row_vec(i));
    j["patches"] = std::move(rows);
    out << j.dump() << "\n";
  }
  if (!out) throw std::runtime_error("write_jsonl: write failed for " + path);
}

inline std::vector<PairRecord> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_jsonl: cannot open " + path);
  std::vector<PairRecord> out;
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& why) {
    throw std::runtime_error("read_jsonl: line " + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(e.what());
    }
    if (!j.is_object()) fail("not a JSON object");
    static const std::vector<std::string> kFields = {"class_path", "depth", "id", "patches",
                                                     "tokens"};
    for (const auto& item : j.items()) {
      bool known = false;
      for (const std::string& f : kFields) known = known || item.key() == f;
      if (!known) fail("unknown field '" + item.key() + "'");
    }
    for (const std::string& f : kFields)
      if (!j.contains(f)) fail("missing field '" + f + "'");

    PairRecord rec;
    try {
      rec.id = j.at("id").get<int>();
      rec.depth = j.at("depth").get<int>();
      rec.class_path = j.at("class_path").get<std::vector<int>>();
      rec.tokens = j.at("tokens").get<TokenSeq>();
      const auto& rows = j.at("patches");
      if (!rows.is_array() || rows.empty()) fail("patches must be a non-empty array");
      const int r = static_cast<int>(rows.size());
      const int c = static_cast<int>(rows.at(0).size());
      if (c < 1) fail("patch rows must be non-empty");
      rec.patches = Matrix(r, c);
      for (int i = 0; i < r; ++i) {
        const Vec row = rows.at(i).get<Vec>();
        if (static_cast<int>(row.size()) != c) fail("ragged patch rows");
        rec.patches.set_row(i, row);
      }
    } catch (const nlohmann::json::exception& e) {
      fail(e.what());
    }
    if (static_cast<int>(rec.class_path.size()) != rec.depth)
      fail("class_path length does not match depth");
    if (rec.tokens.empty()) fail("empty token list");
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace hypair
