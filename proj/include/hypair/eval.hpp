#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "hypair/core.hpp"
#include "hypair/geometry.hpp"
#include "hypair/losses.hpp"
#include "hypair/model.hpp"
#include "hypair/synthdata.hpp"

namespace hypair {

struct EvalConfig {
  LossConfig loss;  // space and similarity pick the distance rule
  BallConfig ball;

  void validate() const {
    loss.validate();
    ball.validate();
  }
};

struct RetrievalReport {
  // Text retrieval (rows: image queries ranking all texts) and image
  // retrieval (columns) recall at 1/5/10, as percentages.
  double tr1 = 0.0, tr5 = 0.0, tr10 = 0.0;
  double ir1 = 0.0, ir5 = 0.0, ir10 = 0.0;
  uint64_t score_checksum = 0;

  bool operator==(const RetrievalReport&) const = default;
};

// FNV-1a over the row-major bytes of the matrix.
inline uint64_t fnv1a_checksum(const Matrix& m) {
  uint64_t h = 1469598103934665603ULL;
  for (double x : m.data) {
    uint64_t bits;
    std::memcpy(&bits, &x, sizeof(bits));
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffULL;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

namespace detail {

// 0-based rank of the diagonal entry within its row under ascending
// distance; equal entries with a lower index rank ahead (deterministic).
inline int rank_in_row(const Matrix& dist, int i) {
  const double truth = dist(i, i);
  int rank = 0;
  for (int j = 0; j < dist.cols; ++j) {
    if (j == i) continue;
    if (dist(i, j) < truth || (dist(i, j) == truth && j < i)) ++rank;
  }
  return rank;
}

inline int rank_in_col(const Matrix& dist, int j) {
  const double truth = dist(j, j);
  int rank = 0;
  for (int i = 0; i < dist.rows; ++i) {
    if (i == j) continue;
    if (dist(i, j) < truth || (dist(i, j) == truth && i < j)) ++rank;
  }
  return rank;
}

// Lift one plain embedding row: clip the Euclidean norm, then exponential-map
// at the origin.
inline Vec lift_row(const Vec& v, const BallConfig& ball) {
  return expmap0(clip_features(v, ball.max_norm), ball).coords();
}

}  // namespace detail

// Recall metrics from a full pairwise distance matrix (row i: image i
// against every text; lower is closer; diagonal entries are the true pairs).
inline RetrievalReport retrieval_from_scores(const Matrix& dist) {
  if (dist.rows == 0) throw std::invalid_argument("retrieval: empty score matrix");
  if (dist.rows != dist.cols)
    throw std::invalid_argument("retrieval: score matrix must be square");
  const int b = dist.rows;
  int tr[3] = {0, 0, 0};
  int ir[3] = {0, 0, 0};
  const int ks[3] = {1, 5, 10};
  for (int i = 0; i < b; ++i) {
    const int rr = detail::rank_in_row(dist, i);
    const int rc = detail::rank_in_col(dist, i);
    for (int t = 0; t < 3; ++t) {
      tr[t] += rr < ks[t];
      ir[t] += rc < ks[t];
    }
  }
  RetrievalReport r;
  const double scale = 100.0 / b;
  r.tr1 = tr[0] * scale;
  r.tr5 = tr[1] * scale;
  r.tr10 = tr[2] * scale;
  r.ir1 = ir[0] * scale;
  r.ir5 = ir[1] * scale;
  r.ir10 = ir[2] * scale;
  r.score_checksum = fnv1a_checksum(dist);
  return r;
}

// Full pairwise distance matrix between every image's query set and every
// text embedding, using the deterministic min-over-queries rule.
inline Matrix score_matrix(const std::vector<PairRecord>& dataset, const ModelParams& params,
                           const EvalConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("eval: empty test set");
  const bool hyperbolic = cfg.loss.space == Space::kHyperbolic;
  const int b = static_cast<int>(dataset.size());
  std::vector<Matrix> images;
  std::vector<Vec> texts;
  images.reserve(dataset.size());
  texts.reserve(dataset.size());
  for (const PairRecord& rec : dataset) {
    Matrix e = encode_image_values(params, rec.patches);
    Vec u = encode_text_values(params, rec.tokens);
    if (hyperbolic) {
      for (int r = 0; r < e.rows; ++r) e.set_row(r, detail::lift_row(e.row_vec(r), cfg.ball));
      u = detail::lift_row(u, cfg.ball);
    }
    images.push_back(std::move(e));
    texts.push_back(std::move(u));
  }
  Matrix dist(b, b);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < b; ++j)
      dist(i, j) = detail::align_min(images[i], texts[j], cfg.loss.similarity, cfg.ball).loss;
  return dist;
}

inline RetrievalReport retrieval_at_k(const std::vector<PairRecord>& dataset,
                                      const ModelParams& params, const EvalConfig& cfg) {
  return retrieval_from_scores(score_matrix(dataset, params, cfg));
}

struct SelectionHistogram {
  std::vector<int64_t> counts;  // picks per query index
  double entropy = 0.0;         // nats
};

// -sum (c_i/M) ln(c_i/M); zero counts contribute 0; empty histogram -> 0.
inline double histogram_entropy(const std::vector<int64_t>& counts) {
  int64_t total = 0;
  for (int64_t c : counts) {
    if (c < 0) throw std::invalid_argument("entropy: negative count");
    total += c;
  }
  if (total == 0) return 0.0;
  double h = 0.0;
  for (int64_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log(p);
  }
  return h;
}

// Deterministic argmin query per example, counted over the whole dataset.
inline SelectionHistogram selection_histogram(const std::vector<PairRecord>& dataset,
                                              const ModelParams& params, const EvalConfig& cfg) {
  cfg.validate();
  const bool hyperbolic = cfg.loss.space == Space::kHyperbolic;
  const int n_queries = params.at("queries").rows;
  SelectionHistogram hist;
  hist.counts.assign(static_cast<size_t>(n_queries), 0);
  for (const PairRecord& rec : dataset) {
    Matrix e = encode_image_values(params, rec.patches);
    Vec u = encode_text_values(params, rec.tokens);
    if (hyperbolic) {
      for (int r = 0; r < e.rows; ++r) e.set_row(r, detail::lift_row(e.row_vec(r), cfg.ball));
      u = detail::lift_row(u, cfg.ball);
    }
    const int sel = detail::align_min(e, u, cfg.loss.similarity, cfg.ball).selected;
    hist.counts[static_cast<size_t>(sel)] += 1;
  }
  hist.entropy = histogram_entropy(hist.counts);
  return hist;
}

struct GroupStat {
  std::string key;
  int64_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;
};

struct RadiusReport {
  std::vector<double> image_radius;  // per example, mean over its queries
  std::vector<std::vector<double>> image_query_radius;
  std::vector<double> text_radius;
  double image_mean = 0.0, image_std = 0.0;
  double text_mean = 0.0, text_std = 0.0;
  std::vector<GroupStat> by_leaf;   // image radii grouped by leaf class
  std::vector<GroupStat> by_level;  // image radii grouped by ancestor node
  // 50 bins on [0, 2*max_norm]; out-of-range radii land in the edge bins.
  std::vector<int64_t> image_hist;
  std::vector<int64_t> text_hist;
  double bin_width = 0.0;
};

inline constexpr int kRadiusBins = 50;

// Ball radii of every embedding under the trained encoder, with per-class
// summaries and fixed-bin histograms. Euclidean runs have no ball radius.
inline RadiusReport radius_report(const std::vector<PairRecord>& dataset,
                                  const ModelParams& params, const EvalConfig& cfg) {
  cfg.validate();
  if (cfg.loss.space != Space::kHyperbolic)
    throw std::invalid_argument("radius report: hyperbolic mode required");
  RadiusReport rep;
  rep.bin_width = 2.0 * cfg.ball.max_norm / kRadiusBins;
  rep.image_hist.assign(kRadiusBins, 0);
  rep.text_hist.assign(kRadiusBins, 0);
  auto bin_of = [&](double r) {
    int bin = static_cast<int>(r / rep.bin_width);
    if (bin < 0) bin = 0;
    if (bin >= kRadiusBins) bin = kRadiusBins - 1;
    return static_cast<size_t>(bin);
  };
  std::map<int, Vec> leaf_groups;
  std::map<std::pair<int, int>, Vec> level_groups;
  for (const PairRecord& rec : dataset) {
    const Matrix e = encode_image_values(params, rec.patches);
    Vec per_query;
    for (int r = 0; r < e.rows; ++r) {
      const Vec lifted = detail::lift_row(e.row_vec(r), cfg.ball);
      per_query.push_back(radius(PoincarePoint(lifted, cfg.ball), cfg.ball));
    }
    double mean_r = 0.0;
    for (double r : per_query) mean_r += r;
    mean_r /= static_cast<double>(per_query.size());
    rep.image_radius.push_back(mean_r);
    rep.image_query_radius.push_back(std::move(per_query));
    rep.image_hist[bin_of(mean_r)] += 1;

    const Vec u = detail::lift_row(encode_text_values(params, rec.tokens), cfg.ball);
    const double text_r = radius(PoincarePoint(u, cfg.ball), cfg.ball);
    rep.text_radius.push_back(text_r);
    rep.text_hist[bin_of(text_r)] += 1;

    if (!rec.class_path.empty()) {
      leaf_groups[rec.class_path.back()].push_back(mean_r);
      for (size_t level = 0; level < rec.class_path.size(); ++level)
        level_groups[{static_cast<int>(level), rec.class_path[level]}].push_back(mean_r);
    }
  }
  std::tie(rep.image_mean, rep.image_std) = mean_std(rep.image_radius);
  std::tie(rep.text_mean, rep.text_std) = mean_std(rep.text_radius);
  for (const auto& [leaf, radii] : leaf_groups) {
    GroupStat g;
    g.key = "leaf_" + std::to_string(leaf);
    g.count = static_cast<int64_t>(radii.size());
    std::tie(g.mean, g.stddev) = mean_std(radii);
    rep.by_leaf.push_back(std::move(g));
  }
  for (const auto& [key, radii] : level_groups) {
    GroupStat g;
    g.key = "level" + std::to_string(key.first) + "_node" + std::to_string(key.second);
    g.count = static_cast<int64_t>(radii.size());
    std::tie(g.mean, g.stddev) = mean_std(radii);
    rep.by_level.push_back(std::move(g));
  }
  return rep;
}

namespace detail {

inline std::string fmt6(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", x);
  return buf;
}

}  // namespace detail

inline void write_retrieval_json(const RetrievalReport& r, const std::string& path) {
  nlohmann::json doc;
  doc["tr1"] = r.tr1;
  doc["tr5"] = r.tr5;
  doc["tr10"] = r.tr10;
  doc["ir1"] = r.ir1;
  doc["ir5"] = r.ir5;
  doc["ir10"] = r.ir10;
  doc["score_checksum"] = r.score_checksum;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_retrieval_json: cannot open " + path);
  out << doc.dump(2) << "\n";
  if (!out) throw std::runtime_error("write_retrieval_json: write failed for " + path);
}

inline RetrievalReport read_retrieval_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_retrieval_json: cannot open " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("read_retrieval_json: " + path + ": " + e.what());
  }
  const char* keys[] = {"tr1", "tr5", "tr10", "ir1", "ir5", "ir10", "score_checksum"};
  for (const char* k : keys)
    if (!doc.contains(k))
      throw std::runtime_error("read_retrieval_json: missing field " + std::string(k));
  RetrievalReport r;
  r.tr1 = doc["tr1"].get<double>();
  r.tr5 = doc["tr5"].get<double>();
  r.tr10 = doc["tr10"].get<double>();
  r.ir1 = doc["ir1"].get<double>();
  r.ir5 = doc["ir5"].get<double>();
  r.ir10 = doc["ir10"].get<double>();
  r.score_checksum = doc["score_checksum"].get<uint64_t>();
  return r;
}

inline void write_selection_csv(const SelectionHistogram& hist, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_selection_csv: cannot open " + path);
  out << "query,count,frequency\n";
  int64_t total = 0;
  for (int64_t c : hist.counts) total += c;
  for (size_t i = 0; i < hist.counts.size(); ++i) {
    const double freq =
        total == 0 ? 0.0 : static_cast<double>(hist.counts[i]) / static_cast<double>(total);
    out << i << "," << hist.counts[i] << "," << detail::fmt6(freq) << "\n";
  }
  if (!out) throw std::runtime_error("write_selection_csv: write failed for " + path);
}

// Sections: overall stats, per-leaf and per-ancestor groups, then histogram
// rows whose key is the bin's lower edge (mean/std cells left empty).
inline void write_radius_csv(const RadiusReport& rep, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_radius_csv: cannot open " + path);
  out << "section,key,count,mean,std\n";
  auto stat_row = [&](const std::string& section, const GroupStat& g) {
    out << section << "," << g.key << "," << g.count << "," << detail::fmt6(g.mean) << ","
        << detail::fmt6(g.stddev) << "\n";
  };
  stat_row("overall", {"image", static_cast<int64_t>(rep.image_radius.size()), rep.image_mean,
                       rep.image_std});
  stat_row("overall",
           {"text", static_cast<int64_t>(rep.text_radius.size()), rep.text_mean, rep.text_std});
  for (const GroupStat& g : rep.by_leaf) stat_row("leaf", g);
  for (const GroupStat& g : rep.by_level) stat_row("level", g);
  for (size_t i = 0; i < rep.image_hist.size(); ++i)
    out << "hist_image," << detail::fmt6(static_cast<double>(i) * rep.bin_width) << ","
        << rep.image_hist[i] << ",,\n";
  for (size_t i = 0; i < rep.text_hist.size(); ++i)
    out << "hist_text," << detail::fmt6(static_cast<double>(i) * rep.bin_width) << ","
        << rep.text_hist[i] << ",,\n";
  if (!out) throw std::runtime_error("write_radius_csv: write failed for " + path);
}

}  // namespace hypair
