#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hypair/config.hpp"
#include "hypair/eval.hpp"
#include "hypair/gradcheck.hpp"
#include "hypair/model.hpp"
#include "hypair/synthdata.hpp"
#include "hypair/train.hpp"

namespace fs = std::filesystem;

namespace {

struct CliOptions {
  std::string config_path;
  std::string out_dir = "out";
  bool seed_set = false;
  uint64_t seed = 0;
  int gradcheck_points = 100;
};

hypair::RunConfig load_run_config(const CliOptions& opt) {
  hypair::RunConfig cfg =
      opt.config_path.empty() ? hypair::RunConfig{} : hypair::load_config_file(opt.config_path);
  if (opt.seed_set) cfg.seed = opt.seed;
  cfg.validate();
  return cfg;
}

std::vector<hypair::PairRecord> load_split(const std::string& out_dir, const std::string& split) {
  const std::string path = out_dir + "/dataset/" + split + ".jsonl";
  if (!fs::exists(path))
    throw hypair::ConfigError("dataset file not found: " + path + " (run gen-data first)");
  return hypair::read_jsonl(path);
}

hypair::Checkpoint load_checkpoint_checked(const std::string& path) {
  if (!fs::exists(path)) throw hypair::ConfigError("checkpoint file not found: " + path);
  return hypair::load_checkpoint(path);
}

nlohmann::json checkpoint_header(const hypair::RunConfig& cfg) {
  const hypair::ModelConfig m = cfg.model_config();
  nlohmann::json h;
  h["seed"] = cfg.seed;
  h["space"] = cfg.loss.space == hypair::Space::kHyperbolic ? "hyperbolic" : "euclidean";
  h["similarity"] =
      cfg.loss.similarity == hypair::Similarity::kPoincare ? "poincare" : "cosine";
  h["model"] = {{"n_queries", m.n_queries},     {"dim", m.dim},
                {"dim_hidden", m.dim_hidden},   {"dim_token", m.dim_token},
                {"dim_in", m.dim_in},           {"vocab_size", m.vocab_size},
                {"learn_temperature", m.learn_temperature}};
  return h;
}

int cmd_gen_data(const CliOptions& opt) {
  const hypair::RunConfig cfg = load_run_config(opt);
  fs::create_directories(opt.out_dir + "/dataset");
  const auto train_recs = generate(cfg.data, cfg.train_count, 0);
  const auto test_recs = generate(cfg.data, cfg.test_count, cfg.train_count);
  write_jsonl(train_recs, opt.out_dir + "/dataset/train.jsonl");
  write_jsonl(test_recs, opt.out_dir + "/dataset/test.jsonl");
  std::printf("wrote %zu train / %zu test records (vocab %d) under %s/dataset\n",
              train_recs.size(), test_recs.size(),
              static_cast<int>(build_data_vocab(cfg.data).size()), opt.out_dir.c_str());
  return 0;
}

// Trains with the given run config and writes checkpoint.json + steps.csv
// into `dir`; shared by the train and repro subcommands.
hypair::TrainResult run_training(const hypair::RunConfig& cfg,
                                 const std::vector<hypair::PairRecord>& records,
                                 const std::string& dir) {
  fs::create_directories(dir);
  const hypair::ModelParams init =
      init_params(cfg.model_config(), cfg.seed, cfg.loss.temperature);
  hypair::TrainResult result = train(records, init, cfg.train_config());
  save_checkpoint(result.params, checkpoint_header(cfg), dir + "/checkpoint.json");
  write_steps_csv(result.logs, dir + "/steps.csv");
  return result;
}

int cmd_train(const CliOptions& opt) {
  const hypair::RunConfig cfg = load_run_config(opt);
  const auto records = load_split(opt.out_dir, "train");
  const hypair::TrainResult result = run_training(cfg, records, opt.out_dir);
  std::printf("trained %d steps; final loss %.6g\n", cfg.train.steps,
              result.logs.empty() ? 0.0 : result.logs.back().loss);
  if (result.collapsed)
    std::printf("warning: text embeddings collapsed at step %d\n", result.collapse_step);
  return 0;
}

int cmd_eval(const CliOptions& opt) {
  const hypair::RunConfig cfg = load_run_config(opt);
  const hypair::Checkpoint ck = load_checkpoint_checked(opt.out_dir + "/checkpoint.json");
  const auto records = load_split(opt.out_dir, cfg.eval_split);
  const hypair::RetrievalReport rep = retrieval_at_k(records, ck.params, cfg.eval_config());
  write_retrieval_json(rep, opt.out_dir + "/retrieval.json");
  std::printf("TR@1 %.6g  TR@5 %.6g  TR@10 %.6g\n", rep.tr1, rep.tr5, rep.tr10);
  std::printf("IR@1 %.6g  IR@5 %.6g  IR@10 %.6g\n", rep.ir1, rep.ir5, rep.ir10);
  std::printf("score checksum %" PRIu64 "\n", rep.score_checksum);
  return 0;
}

int cmd_analyze(const CliOptions& opt) {
  const hypair::RunConfig cfg = load_run_config(opt);
  const hypair::Checkpoint ck = load_checkpoint_checked(opt.out_dir + "/checkpoint.json");
  const auto records = load_split(opt.out_dir, cfg.eval_split);
  const hypair::SelectionHistogram hist =
      selection_histogram(records, ck.params, cfg.eval_config());
  write_selection_csv(hist, opt.out_dir + "/selection.csv");
  std::printf("selection entropy %.6g nats over %zu queries\n", hist.entropy,
              hist.counts.size());
  if (cfg.loss.space == hypair::Space::kHyperbolic) {
    const hypair::RadiusReport rad = radius_report(records, ck.params, cfg.eval_config());
    write_radius_csv(rad, opt.out_dir + "/radius.csv");
    std::printf("image radius %.6g +- %.6g; text radius %.6g +- %.6g\n", rad.image_mean,
                rad.image_std, rad.text_mean, rad.text_std);
  } else {
    std::fprintf(stderr, "note: euclidean mode has no ball radii; radius.csv skipped\n");
  }
  return 0;
}

int cmd_gradcheck(const CliOptions& opt) {
  const uint64_t seed = opt.seed_set ? opt.seed : 0;
  const auto entries = hypair::run_gradcheck(opt.gradcheck_points, seed);
  constexpr double kTol = 1e-4;
  bool ok = true;
  for (const auto& e : entries) {
    std::printf("%-24s max rel err %.3e %s\n", e.op.c_str(), e.max_rel_err,
                e.max_rel_err < kTol ? "ok" : "FAIL");
    ok = ok && e.max_rel_err < kTol;
  }
  if (!ok) {
    std::fprintf(stderr, "gradcheck failed: at least one op at or above %.0e\n", kTol);
    return 2;
  }
  return 0;
}

int cmd_repro(const CliOptions& opt) {
  const hypair::RunConfig base = load_run_config(opt);
  fs::create_directories(opt.out_dir + "/dataset");
  const auto train_recs = generate(base.data, base.train_count, 0);
  const auto test_recs = generate(base.data, base.test_count, base.train_count);
  write_jsonl(train_recs, opt.out_dir + "/dataset/train.jsonl");
  write_jsonl(test_recs, opt.out_dir + "/dataset/test.jsonl");
  const auto& eval_recs = base.eval_split == "train" ? train_recs : test_recs;

  std::string summary =
      "variant,tr1,tr5,tr10,ir1,ir5,ir10,entropy,"
      "image_radius_mean,image_radius_std,text_radius_mean,text_radius_std,"
      "final_loss,collapsed\n";
  char buf[64];
  auto fmt = [&](double x) {
    std::snprintf(buf, sizeof(buf), "%.6g", x);
    return std::string(buf);
  };
  for (const std::string& name : base.variants) {
    const hypair::RunConfig cfg = apply_variant(base, name);
    cfg.validate();
    const std::string dir = opt.out_dir + "/variants/" + name;
    std::printf("[%s] training %d steps...\n", name.c_str(), cfg.train.steps);
    std::fflush(stdout);
    const hypair::TrainResult result = run_training(cfg, train_recs, dir);
    const hypair::RetrievalReport rep =
        retrieval_at_k(eval_recs, result.params, cfg.eval_config());
    write_retrieval_json(rep, dir + "/retrieval.json");
    const hypair::SelectionHistogram hist =
        selection_histogram(eval_recs, result.params, cfg.eval_config());
    write_selection_csv(hist, dir + "/selection.csv");
    std::string radius_cells = ",,,";
    if (cfg.loss.space == hypair::Space::kHyperbolic) {
      const hypair::RadiusReport rad = radius_report(eval_recs, result.params, cfg.eval_config());
      write_radius_csv(rad, dir + "/radius.csv");
      radius_cells = fmt(rad.image_mean) + "," + fmt(rad.image_std) + "," +
                     fmt(rad.text_mean) + "," + fmt(rad.text_std);
    }
    summary += name + "," + fmt(rep.tr1) + "," + fmt(rep.tr5) + "," + fmt(rep.tr10) + "," +
               fmt(rep.ir1) + "," + fmt(rep.ir5) + "," + fmt(rep.ir10) + "," +
               fmt(hist.entropy) + "," + radius_cells + "," +
               fmt(result.logs.empty() ? 0.0 : result.logs.back().loss) + "," +
               (result.collapsed ? "1" : "0") + "\n";
    std::printf("[%s] TR@1 %.6g entropy %.6g\n", name.c_str(), rep.tr1, hist.entropy);
    std::fflush(stdout);
  }
  std::ofstream out(opt.out_dir + "/summary.csv");
  if (!out) throw std::runtime_error("repro: cannot open " + opt.out_dir + "/summary.csv");
  out << summary;
  out.close();
  std::printf("wrote %s/summary.csv (%zu variants)\n", opt.out_dir.c_str(),
              base.variants.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hyperbolic image-text toolkit: synthetic data, contrastive training, analytics"};
  app.require_subcommand(1);
  CliOptions opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "experiment config (JSON)");
    sub->add_option("--out", opt.out_dir, "artifact directory (default: out)");
    sub->add_option_function<uint64_t>(
        "--seed",
        [&](const uint64_t& s) {
          opt.seed = s;
          opt.seed_set = true;
        },
        "override the top-level seed");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "write synthetic train/test JSONL splits");
  CLI::App* tr = app.add_subcommand("train", "run the contrastive training loop");
  CLI::App* ev = app.add_subcommand("eval", "retrieval metrics from a checkpoint");
  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference check of every tape op");
  CLI::App* an = app.add_subcommand("analyze", "selection histogram and radius report");
  CLI::App* rp = app.add_subcommand("repro", "full pipeline over all configured variants");
  for (CLI::App* sub : {gen, tr, ev, gc, an, rp}) add_common(sub);
  gc->add_option("--points", opt.gradcheck_points, "interior points per op (default 100)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen_data(opt);
    if (*tr) return cmd_train(opt);
    if (*ev) return cmd_eval(opt);
    if (*gc) return cmd_gradcheck(opt);
    if (*an) return cmd_analyze(opt);
    if (*rp) return cmd_repro(opt);
    std::fprintf(stderr, "no subcommand selected\n");
    return 1;
  } catch (const hypair::ConfigError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 1;
  } catch (const hypair::TrainingDiverged& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  }
}
