#include "hypair/eval.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "hypair/core.hpp"
#include "hypair/losses.hpp"
#include "hypair/model.hpp"
#include "hypair/synthdata.hpp"
#include "reference/reference_values.hpp"

namespace {

using hypair::EvalConfig;
using hypair::HierarchySpec;
using hypair::Matrix;
using hypair::ModelConfig;
using hypair::ModelParams;
using hypair::PairRecord;
using hypair::RadiusReport;
using hypair::RetrievalReport;
using hypair::Rng;
using hypair::SelectionHistogram;
using hypair::Similarity;
using hypair::Space;
using hypair::Vec;
using hypair::read_retrieval_json;

HierarchySpec tiny_spec() {
  HierarchySpec spec;
  spec.depth = 2;
  spec.branching = 2;
  spec.patches = 2;
  spec.dim_in = 8;
  spec.patch_noise = 0.05;
  spec.filler_rate = 0.1;
  spec.seed = 9;
  return spec;
}

ModelConfig tiny_model(const HierarchySpec& spec) {
  ModelConfig cfg;
  cfg.n_queries = 2;
  cfg.dim = 4;
  cfg.dim_hidden = 8;
  cfg.dim_token = 8;
  cfg.dim_in = spec.dim_in;
  cfg.vocab_size = build_data_vocab(spec).size();
  return cfg;
}

EvalConfig hyper_cfg() {
  EvalConfig cfg;
  cfg.loss.space = Space::kHyperbolic;
  cfg.loss.similarity = Similarity::kCosine;
  cfg.ball.dim = 4;
  return cfg;
}

EvalConfig euclid_cfg() {
  EvalConfig cfg;
  cfg.loss.space = Space::kEuclidean;
  cfg.loss.similarity = Similarity::kCosine;
  cfg.ball.dim = 4;
  return cfg;
}

// Brute-force recall via a stable ascending sort over (distance, index).
RetrievalReport brute_force_reference(const Matrix& dist) {
  const int b = dist.rows;
  RetrievalReport r;
  int tr[3] = {0, 0, 0};
  int ir[3] = {0, 0, 0};
  const int ks[3] = {1, 5, 10};
  for (int i = 0; i < b; ++i) {
    std::vector<std::pair<double, int>> row, col;
    for (int j = 0; j < b; ++j) {
      row.emplace_back(dist(i, j), j);
      col.emplace_back(dist(j, i), j);
    }
    std::sort(row.begin(), row.end());
    std::sort(col.begin(), col.end());
    for (int t = 0; t < 3; ++t) {
      for (int pos = 0; pos < std::min(ks[t], b); ++pos) {
        tr[t] += row[static_cast<size_t>(pos)].second == i;
        ir[t] += col[static_cast<size_t>(pos)].second == i;
      }
    }
  }
  const double scale = 100.0 / b;
  r.tr1 = tr[0] * scale;
  r.tr5 = tr[1] * scale;
  r.tr10 = tr[2] * scale;
  r.ir1 = ir[0] * scale;
  r.ir5 = ir[1] * scale;
  r.ir10 = ir[2] * scale;
  return r;
}

TEST(Eval, PerfectDiagonalScoresFullMarks) {
  Matrix dist(6, 6, 1.0);
  for (int i = 0; i < 6; ++i) dist(i, i) = 0.0;
  const RetrievalReport r = retrieval_from_scores(dist);
  EXPECT_DOUBLE_EQ(r.tr1, 100.0);
  EXPECT_DOUBLE_EQ(r.tr5, 100.0);
  EXPECT_DOUBLE_EQ(r.tr10, 100.0);
  EXPECT_DOUBLE_EQ(r.ir1, 100.0);
  EXPECT_DOUBLE_EQ(r.ir5, 100.0);
  EXPECT_DOUBLE_EQ(r.ir10, 100.0);
}

TEST(Eval, AntiDiagonalTwoByTwo) {
  Matrix dist(2, 2, 1.0);
  dist(0, 1) = 0.0;
  dist(1, 0) = 0.0;
  const RetrievalReport r = retrieval_from_scores(dist);
  EXPECT_DOUBLE_EQ(r.tr1, 0.0);
  EXPECT_DOUBLE_EQ(r.ir1, 0.0);
  EXPECT_DOUBLE_EQ(r.tr5, 100.0);
  EXPECT_DOUBLE_EQ(r.ir5, 100.0);
}

TEST(Eval, TiesRankByIndex) {
  const Matrix dist(3, 3);  // all equal: text i ranks i-th for image i
  const RetrievalReport r = retrieval_from_scores(dist);
  EXPECT_NEAR(r.tr1, 100.0 / 3, 1e-12);
  EXPECT_DOUBLE_EQ(r.tr5, 100.0);
  EXPECT_NEAR(r.ir1, 100.0 / 3, 1e-12);
}

TEST(Eval, RandomMatricesMatchBruteForceRanking) {
  Rng rng(404);
  for (int trial = 0; trial < 20; ++trial) {
    const int b = 10;
    Matrix dist(b, b);
    // Coarse integer grid so ties actually occur.
    for (double& x : dist.data) x = static_cast<double>(rng.uniform_int(4));
    const RetrievalReport got = retrieval_from_scores(dist);
    const RetrievalReport want = brute_force_reference(dist);
    EXPECT_DOUBLE_EQ(got.tr1, want.tr1);
    EXPECT_DOUBLE_EQ(got.tr5, want.tr5);
    EXPECT_DOUBLE_EQ(got.tr10, want.tr10);
    EXPECT_DOUBLE_EQ(got.ir1, want.ir1);
    EXPECT_DOUBLE_EQ(got.ir5, want.ir5);
    EXPECT_DOUBLE_EQ(got.ir10, want.ir10);
    EXPECT_LE(got.tr1, got.tr5);
    EXPECT_LE(got.tr5, got.tr10);
    EXPECT_LE(got.ir1, got.ir5);
    EXPECT_LE(got.ir5, got.ir10);
  }
}

TEST(Eval, MetricsInvariantUnderIncreasingTransform) {
  Rng rng(405);
  Matrix dist(12, 12);
  for (double& x : dist.data) x = rng.uniform(0.0, 3.0);
  Matrix warped = dist;
  for (double& x : warped.data) x = std::exp(x);
  const RetrievalReport a = retrieval_from_scores(dist);
  const RetrievalReport b = retrieval_from_scores(warped);
  EXPECT_DOUBLE_EQ(a.tr1, b.tr1);
  EXPECT_DOUBLE_EQ(a.tr5, b.tr5);
  EXPECT_DOUBLE_EQ(a.tr10, b.tr10);
  EXPECT_DOUBLE_EQ(a.ir1, b.ir1);
  EXPECT_DOUBLE_EQ(a.ir5, b.ir5);
  EXPECT_DOUBLE_EQ(a.ir10, b.ir10);
  EXPECT_NE(a.score_checksum, b.score_checksum);
}

TEST(Eval, ChecksumDependsOnOrder) {
  Matrix a(1, 2);
  a(0, 0) = 1.0;
  a(0, 1) = 2.0;
  Matrix b(1, 2);
  b(0, 0) = 2.0;
  b(0, 1) = 1.0;
  EXPECT_NE(hypair::fnv1a_checksum(a), hypair::fnv1a_checksum(b));
  EXPECT_EQ(hypair::fnv1a_checksum(a), hypair::fnv1a_checksum(a));
}

TEST(Eval, RetrievalRejectsBadInput) {
  EXPECT_THROW(retrieval_from_scores(Matrix(0, 0)), std::invalid_argument);
  EXPECT_THROW(retrieval_from_scores(Matrix(2, 3)), std::invalid_argument);
  EXPECT_THROW(hypair::score_matrix({}, ModelParams{}, hyper_cfg()), std::invalid_argument);
}

TEST(Eval, CosineRanksUnchangedByHyperbolicLift) {
  const HierarchySpec spec = tiny_spec();
  const auto data = generate(spec, 12);
  const ModelParams params = init_params(tiny_model(spec), 51);
  const RetrievalReport euclid = retrieval_at_k(data, params, euclid_cfg());
  const RetrievalReport hyper = retrieval_at_k(data, params, hyper_cfg());
  EXPECT_DOUBLE_EQ(euclid.tr1, hyper.tr1);
  EXPECT_DOUBLE_EQ(euclid.tr5, hyper.tr5);
  EXPECT_DOUBLE_EQ(euclid.tr10, hyper.tr10);
  EXPECT_DOUBLE_EQ(euclid.ir1, hyper.ir1);
  EXPECT_DOUBLE_EQ(euclid.ir5, hyper.ir5);
  EXPECT_DOUBLE_EQ(euclid.ir10, hyper.ir10);
}

TEST(Eval, EntropyOracles) {
  EXPECT_DOUBLE_EQ(hypair::histogram_entropy({0, 7, 0}), 0.0);
  EXPECT_DOUBLE_EQ(hypair::histogram_entropy({}), 0.0);
  EXPECT_NEAR(hypair::histogram_entropy({5, 5, 5, 5, 5, 5, 5, 5}), hypair::ref::kLn8, 1e-12);
  EXPECT_NEAR(hypair::histogram_entropy({3, 1}), hypair::ref::kEntropy31, 1e-12);
  EXPECT_THROW(hypair::histogram_entropy({2, -1}), std::invalid_argument);
}

TEST(Eval, SelectionHistogramMatchesBruteForceArgmin) {
  const HierarchySpec spec = tiny_spec();
  const auto data = generate(spec, 20);
  const ModelParams params = init_params(tiny_model(spec), 52);
  const EvalConfig cfg = euclid_cfg();
  const SelectionHistogram hist = selection_histogram(data, params, cfg);
  std::vector<int64_t> expected(2, 0);
  for (const PairRecord& rec : data) {
    const Matrix e = encode_image_values(params, rec.patches);
    const Vec u = encode_text_values(params, rec.tokens);
    int best = 0;
    double best_d = hypair::cosine_dist(e.row_vec(0), u);
    for (int j = 1; j < e.rows; ++j) {
      const double d = hypair::cosine_dist(e.row_vec(j), u);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    expected[static_cast<size_t>(best)] += 1;
  }
  ASSERT_EQ(hist.counts.size(), expected.size());
  EXPECT_EQ(hist.counts[0], expected[0]);
  EXPECT_EQ(hist.counts[1], expected[1]);
  int64_t total = hist.counts[0] + hist.counts[1];
  EXPECT_EQ(total, 20);
  EXPECT_DOUBLE_EQ(hist.entropy, hypair::histogram_entropy(hist.counts));
}

TEST(Eval, RadiusReportZeroEncoderSitsAtOrigin) {
  const HierarchySpec spec = tiny_spec();
  const auto data = generate(spec, 10);
  ModelParams params = init_params(tiny_model(spec), 53);
  for (auto& [name, m] : params.entries) m = Matrix(m.rows, m.cols);
  const RadiusReport rep = radius_report(data, params, hyper_cfg());
  for (double r : rep.image_radius) EXPECT_DOUBLE_EQ(r, 0.0);
  for (double r : rep.text_radius) EXPECT_DOUBLE_EQ(r, 0.0);
  EXPECT_DOUBLE_EQ(rep.image_mean, 0.0);
  EXPECT_EQ(rep.image_hist[0], 10);
  for (size_t i = 1; i < rep.image_hist.size(); ++i) EXPECT_EQ(rep.image_hist[i], 0);
  for (const auto& g : rep.by_leaf) EXPECT_DOUBLE_EQ(g.mean, 0.0);
}

TEST(Eval, RadiusSaturatedEncoderReachesBallDiameterBound) {
  const HierarchySpec spec = tiny_spec();
  const auto data = generate(spec, 10);
  ModelParams params = init_params(tiny_model(spec), 54);
  for (auto& [name, m] : params.entries)
    for (double& x : m.data) x *= 1e4;
  const RadiusReport rep = radius_report(data, params, hyper_cfg());
  // Clipped norm 1 at c = 1 round-trips to radius 2 exactly.
  for (double r : rep.image_radius) EXPECT_NEAR(r, 2.0, 1e-9);
  for (double r : rep.text_radius) EXPECT_NEAR(r, 2.0, 1e-9);
  EXPECT_EQ(rep.image_hist.back(), 10);
  EXPECT_EQ(rep.text_hist.back(), 10);
}

TEST(Eval, RadiusGroupStatsMatchMemberAverages) {
  const HierarchySpec spec = tiny_spec();
  const auto data = generate(spec, 24);
  const ModelParams params = init_params(tiny_model(spec), 55);
  const RadiusReport rep = radius_report(data, params, hyper_cfg());

  ASSERT_EQ(rep.image_radius.size(), data.size());
  for (const auto& g : rep.by_leaf) {
    Vec members;
    for (size_t i = 0; i < data.size(); ++i)
      if ("leaf_" + std::to_string(data[i].class_path.back()) == g.key)
        members.push_back(rep.image_radius[i]);
    EXPECT_EQ(g.count, static_cast<int64_t>(members.size()));
    const auto [mean, stddev] = hypair::mean_std(members);
    EXPECT_DOUBLE_EQ(g.mean, mean);
    EXPECT_DOUBLE_EQ(g.stddev, stddev);
  }
  // Every level's groups partition the dataset.
  for (size_t level = 0; level < 2; ++level) {
    int64_t total = 0;
    for (const auto& g : rep.by_level)
      if (g.key.rfind("level" + std::to_string(level) + "_", 0) == 0) total += g.count;
    EXPECT_EQ(total, static_cast<int64_t>(data.size()));
  }
  // Per-query dumps average to the per-example radius.
  for (size_t i = 0; i < data.size(); ++i) {
    double acc = 0.0;
    for (double r : rep.image_query_radius[i]) acc += r;
    EXPECT_NEAR(rep.image_radius[i], acc / rep.image_query_radius[i].size(), 1e-12);
  }
}

TEST(Eval, RadiusReportRejectsEuclideanMode) {
  const HierarchySpec spec = tiny_spec();
  const auto data = generate(spec, 4);
  const ModelParams params = init_params(tiny_model(spec), 56);
  EXPECT_THROW(radius_report(data, params, euclid_cfg()), std::invalid_argument);
}

TEST(Eval, RetrievalJsonRoundTrip) {
  RetrievalReport r;
  r.tr1 = 12.5;
  r.tr5 = 37.5;
  r.tr10 = 62.5;
  r.ir1 = 25.0 / 3;
  r.ir5 = 50.0;
  r.ir10 = 87.5;
  r.score_checksum = 0xdeadbeefcafef00dULL;
  const std::string path = testing::TempDir() + "retrieval.json";
  write_retrieval_json(r, path);
  EXPECT_EQ(read_retrieval_json(path), r);
  {
    std::ofstream out(path);
    out << R"({"tr1": 1.0})";
  }
  try {
    read_retrieval_json(path);
    FAIL() << "expected missing-field error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("tr5"), std::string::npos);
  }
  std::remove(path.c_str());
}

TEST(Eval, SelectionCsvShape) {
  SelectionHistogram hist;
  hist.counts = {3, 0, 1};
  const std::string path = testing::TempDir() + "selection.csv";
  write_selection_csv(hist, path);
  std::ifstream in(path);
  std::string line;
  ASSERT_TRUE(std::getline(in, line));
  EXPECT_EQ(line, "query,count,frequency");
  ASSERT_TRUE(std::getline(in, line));
  EXPECT_EQ(line, "0,3,0.75");
  size_t rows = 1;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3u);
  in.close();

  write_selection_csv(SelectionHistogram{}, path);
  std::ifstream empty(path);
  ASSERT_TRUE(std::getline(empty, line));
  EXPECT_EQ(line, "query,count,frequency");
  EXPECT_FALSE(std::getline(empty, line));
  std::remove(path.c_str());
}

TEST(Eval, RadiusCsvRowCount) {
  const HierarchySpec spec = tiny_spec();
  const auto data = generate(spec, 16);
  const ModelParams params = init_params(tiny_model(spec), 57);
  const RadiusReport rep = radius_report(data, params, hyper_cfg());
  const std::string path = testing::TempDir() + "radius.csv";
  write_radius_csv(rep, path);
  std::ifstream in(path);
  std::string line;
  ASSERT_TRUE(std::getline(in, line));
  EXPECT_EQ(line, "section,key,count,mean,std");
  size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 2 + rep.by_leaf.size() + rep.by_level.size() + 100);
  std::remove(path.c_str());
}

}  // namespace
