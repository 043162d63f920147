#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hypair/core.hpp"

// Caption tokenization and random window pruning: a contiguous span of
// tokens is deleted to inject controlled text noise during training.

namespace hypair {

using TokenSeq = std::vector<int>;

struct Vocab {
  static constexpr int kUnk = 0;

  std::vector<std::string> id_to_token{"<unk>"};
  std::unordered_map<std::string, int> token_to_id;

  // Adds tokens in order, skipping duplicates; ids are assigned densely
  // after the reserved unknown id.
  static Vocab build(const std::vector<std::string>& tokens) {
    Vocab v;
    for (const std::string& tok : tokens) v.add(tok);
    return v;
  }

  int add(const std::string& tok) {
    auto it = token_to_id.find(tok);
    if (it != token_to_id.end()) return it->second;
    const int id = static_cast<int>(id_to_token.size());
    id_to_token.push_back(tok);
    token_to_id.emplace(tok, id);
    return id;
  }

  int id(const std::string& tok) const {
    auto it = token_to_id.find(tok);
    return it == token_to_id.end() ? kUnk : it->second;
  }

  const std::string& token(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("vocab: id out of range");
    return id_to_token[id];
  }

  int size() const { return static_cast<int>(id_to_token.size()); }
};

// Whitespace-split tokens mapped through the vocabulary; unknown words map
// to the reserved unknown id.
inline TokenSeq tokenize(const std::string& text, const Vocab& vocab) {
  std::istringstream in(text);
  TokenSeq out;
  std::string tok;
  while (in >> tok) out.push_back(vocab.id(tok));
  if (out.empty()) throw std::invalid_argument("tokenize: empty text");
  return out;
}

// Removes tokens [start, start + window).
inline TokenSeq prune_window(const TokenSeq& t, int start, int window) {
  if (window < 0 || start < 0 || start + window > static_cast<int>(t.size()))
    throw std::invalid_argument("prune_window: span out of range");
  TokenSeq out;
  out.reserve(t.size() - window);
  out.insert(out.end(), t.begin(), t.begin() + start);
  out.insert(out.end(), t.begin() + start + window, t.end());
  return out;
}

// Draws a window length uniform on {0..max_window} (clamped so at least one
// token survives), then a uniform start position, and deletes that span.
// Returns the pruned sequence and the number of removed tokens.
inline std::pair<TokenSeq, int> random_text_prune(const TokenSeq& t, int max_window, Rng& rng) {
  if (t.empty()) throw std::invalid_argument("random_text_prune: empty sequence");
  if (max_window < 0) throw std::invalid_argument("random_text_prune: negative max_window");
  const int len = static_cast<int>(t.size());
  int w = rng.uniform_int(max_window + 1);
  w = std::min(w, len - 1);
  const int start = rng.uniform_int(len - w + 1);
  return {prune_window(t, start, w), w};
}

}  // namespace hypair
