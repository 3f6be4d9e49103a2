// SPDX-License-Identifier: Apache-2.0
//
// tcdfern: generate / preprocess / train / eval / infer / vote-ablation / gradcheck.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "tcdfern/errors.hpp"
#include "tcdfern/eval.hpp"
#include "tcdfern/io.hpp"
#include "tcdfern/synth.hpp"
#include "tcdfern/trainer.hpp"
#include "tcdfern/voting.hpp"

namespace fs = std::filesystem;
using namespace tcdfern;

namespace {

constexpr double kGradTolerance = 1e-3;
constexpr int kExitGradcheck = 9;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

int exit_code_for(const Error& e) {
  const std::string c = e.category();
  if (c == "missing-file") return 2;
  if (c == "config") return 3;
  if (c == "corrupt") return 4;
  if (c == "incompatible") return 5;
  if (c == "structural") return 6;
  if (c == "data-integrity") return 7;
  if (c == "divergence") return 8;
  return 1;
}

// config file, then TCDFERN_SEED, then explicit flags
io::RunConfig resolve(const Common& c) {
  io::RunConfig rc = c.config.empty() ? io::RunConfig{} : io::load_run_config(c.config);
  if (const char* env = std::getenv("TCDFERN_SEED")) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
      rc.set_seed(v);
    } catch (const std::exception&) {
      throw ConfigError(std::string("TCDFERN_SEED is not an unsigned integer: '") + env + "'");
    }
  }
  if (c.seed) rc.set_seed(*c.seed);
  if (c.threads) rc.train.threads = *c.threads;
  rc.gen.tau = rc.model.tau;
  rc.validate();
  return rc;
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Run configuration (key = value lines)");
  cmd->add_option("--seed", c.seed, "Seed for generation, initialization, shuffling and dropout");
}

const std::vector<std::string> kCaseNames = {"empty", "tx-room", "rx-room", "both"};
const std::vector<std::string> kBinaryNames = {"empty", "presence"};

io::PreparedData load(const fs::path& dir, const io::RunConfig& rc) {
  return io::load_prepared(dir, rc.model.tau, rc.gen.stride, rc.reference_count);
}

const das::SampleSet& pick_split(const io::PreparedData& d, const std::string& split) {
  if (split == "test") return d.test;
  if (split == "train") return d.train;
  throw ConfigError("unknown split '" + split + "' (expected train or test)");
}

std::vector<std::vector<double>> predict_all(const model::ModelParams& params, const model::ModelConfig& cfg,
                                             const das::SampleSet& set, int threads) {
  train::SampleSetSource src(set);
  return train::evaluate(params, cfg, src, 256, threads).probs;
}

// ---- commands ---------------------------------------------------------------

int cmd_generate(const Common& c, const fs::path& out, const std::optional<std::string>& scenario,
                 const std::optional<int>& train_n, const std::optional<int>& test_n) {
  io::RunConfig rc = resolve(c);
  if (scenario) rc.scenario = *scenario;
  if (train_n) rc.train_per_case = *train_n;
  if (test_n) rc.test_per_case = *test_n;
  rc.validate();
  const auto gd = synth::gen_dataset(synth::parse_scenario(rc.scenario), rc.train_per_case, rc.test_per_case, rc.gen);
  io::write_generated(out, gd);
  io::write_text(out / "run.cfg", io::run_config_text(rc));
  std::printf("generated %s: %u train ticks, %u test ticks, %d pair(s), %d/%d windows per case -> %s\n",
              rc.scenario.c_str(), gd.train.header.n_ticks, gd.test.header.n_ticks, gd.train.header.pairs,
              rc.train_per_case, rc.test_per_case, out.string().c_str());
  return 0;
}

int cmd_preprocess(const Common& c, const fs::path& data, const fs::path& out) {
  const io::RunConfig rc = resolve(c);
  io::PreprocessStats st_train, st_test;
  const auto train_ds = io::read_dataset(data / "train.csib");
  const auto test_ds = io::read_dataset(data / "test.csib");
  auto train_set = io::preprocess(train_ds, rc.model.tau, rc.gen.stride, rc.reference_count, &st_train);
  auto test_set = io::preprocess(test_ds, rc.model.tau, rc.gen.stride, rc.reference_count, &st_test);
  io::copy_references(train_set, test_set);
  if (train_set.references().empty()) std::fprintf(stderr, "warning: no empty-room segments, no reference b\n");
  io::write_features(out / "train.dasf", train_set);
  io::write_features(out / "test.dasf", test_set);
  std::printf("preprocessed %zu train / %zu test windows (%zu degenerate columns, %zu short segments) -> %s\n",
              train_set.size(), test_set.size(),
              st_train.normalize.degenerate_columns + st_test.normalize.degenerate_columns,
              st_train.windowing.short_streams + st_test.windowing.short_streams, out.string().c_str());
  return 0;
}

int cmd_train(const Common& c, const fs::path& data, const fs::path& out, const std::optional<std::string>& variant,
              const std::optional<int>& epochs) {
  io::RunConfig rc = resolve(c);
  if (variant) rc.model.variant = model::parse_variant(*variant);
  if (epochs) rc.train.epochs = *epochs;
  rc.validate();
  const auto d = load(data, rc);
  train::SampleSetSource src(d.train);
  std::fprintf(stderr, "training %s on %zu windows, %zu parameters\n",
               std::string(model::variant_name(rc.model.variant)).c_str(), d.train.size(),
               model::init_params(rc.model, rc.train.seed).parameter_count());
  const auto result = train::train(src, rc.model, rc.train, [](int epoch, const train::EpochRecord& r) {
    std::fprintf(stderr, "epoch %3d  loss %.5f  val_loss %.5f  val_acc %.4f  (%.1fs)\n", epoch, r.train_loss,
                 r.val_loss, r.val_accuracy, r.wall_seconds);
  });
  if (result.history.diverged) std::fprintf(stderr, "warning: training diverged; keeping the last finite state\n");
  if (result.history.best_epoch < 0) throw DivergenceError("training produced no finite epoch");
  io::write_checkpoint(out, result.params, rc.model, rc.train.seed);

  eval::KeyValueReport hist;
  hist.add("variant", std::string(model::variant_name(rc.model.variant)));
  hist.add("seed", static_cast<long>(rc.train.seed));
  hist.add("config_hash", std::to_string(rc.model.hash()));
  hist.add("epochs_run", static_cast<long>(result.history.epochs.size()));
  hist.add("best_epoch", static_cast<long>(result.history.best_epoch));
  hist.add("diverged", std::string(result.history.diverged ? "true" : "false"));
  hist.add("early_stopped", std::string(result.history.early_stopped ? "true" : "false"));
  for (std::size_t e = 0; e < result.history.epochs.size(); ++e) {
    const auto& r = result.history.epochs[e];
    const std::string p = "epoch" + std::to_string(e);
    hist.add(p + ".train_loss", r.train_loss);
    hist.add(p + ".val_loss", r.val_loss);
    hist.add(p + ".val_accuracy", r.val_accuracy);
  }
  io::write_text(out.string() + ".history", hist.text());
  std::printf("best epoch %d, val accuracy %.4f -> %s\n", result.history.best_epoch,
              result.history.epochs[static_cast<std::size_t>(result.history.best_epoch)].val_accuracy,
              out.string().c_str());
  return 0;
}

int cmd_eval(const Common& c, const fs::path& checkpoint, const fs::path& data, const fs::path& report,
             const std::string& split) {
  const io::RunConfig rc = resolve(c);
  const auto ck = io::read_checkpoint(checkpoint, rc.model);
  const auto d = load(data, rc);
  const auto& set = pick_split(d, split);
  const auto probs = predict_all(ck.params, rc.model, set, rc.train.threads);

  std::vector<int> preds4, labels4;
  std::map<int, std::pair<std::vector<int>, std::vector<int>>> per_pair;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const int p = static_cast<int>(std::max_element(probs[i].begin(), probs[i].end()) - probs[i].begin()) + 1;
    preds4.push_back(p);
    labels4.push_back(set.label(i));
    per_pair[set.pair_id(i)].first.push_back(p - 1);
    per_pair[set.pair_id(i)].second.push_back(set.label(i) - 1);
  }
  eval::KeyValueReport rep;
  rep.add("variant", std::string(model::variant_name(rc.model.variant)));
  rep.add("split", split);
  rep.add("samples", static_cast<long>(set.size()));
  for (int s = 1; s <= 3; ++s) {
    const auto [p, l] = eval::regroup_scenario(preds4, labels4, s);
    const std::string prefix = "scenario" + std::to_string(s);
    rep.add(prefix + ".samples", static_cast<long>(l.size()));
    if (l.empty()) continue;
    const auto cm = eval::confusion(p, l, eval::scenario_classes(s));
    const auto m = eval::metrics(cm);
    rep.add_metrics(prefix, m);
    rep.add_confusion(prefix + ".confusion", cm);
    std::printf("== scenario %d (%s)\n%s%s", s, s == 1 ? "empty vs TX-room" : s == 2 ? "empty vs both" : "4-case",
                eval::confusion_table(cm, s == 3 ? kCaseNames : kBinaryNames).c_str(),
                eval::metrics_table(m, s == 3 ? kCaseNames : kBinaryNames).c_str());
  }
  if (per_pair.size() > 1) {
    for (const auto& [pair, pl] : per_pair) {
      const auto m = eval::metrics(eval::confusion(pl.first, pl.second, 4));
      rep.add_metrics("pair" + std::to_string(pair), m);
      std::printf("== pair %d 4-case accuracy %.4f\n", pair, m.accuracy);
    }
  }
  io::write_text(report, rep.text());
  std::printf("report -> %s\n", report.string().c_str());
  return 0;
}

int cmd_infer(const Common& c, const fs::path& checkpoint, const fs::path& data, const std::string& split,
              const std::optional<fs::path>& out, int smooth) {
  const io::RunConfig rc = resolve(c);
  const auto ck = io::read_checkpoint(checkpoint, rc.model);
  const auto d = load(data, rc);
  const auto& set = pick_split(d, split);
  const auto probs = predict_all(ck.params, rc.model, set, rc.train.threads);
  const auto topo = voting::Topology::star(d.pairs);

  std::map<std::int64_t, std::vector<voting::PairPrediction>> by_tick;
  for (std::size_t i = 0; i < set.size(); ++i) {
    voting::PairPrediction pp;
    pp.pair_id = set.pair_id(i);
    std::copy(probs[i].begin(), probs[i].end(), pp.probs.begin());
    by_tick[set.end_tick(i)].push_back(pp);
  }
  std::optional<voting::DecisionSmoother> smoother;
  if (smooth > 1) smoother.emplace(smooth);
  std::string text;
  char buf[96];
  for (const auto& [tick, preds] : by_tick) {
    if (preds.size() != topo.rx_room_of_pair.size()) continue;
    text += "tick " + std::to_string(tick);
    for (auto dec : voting::predict_rooms(preds, topo)) {
      if (smoother) dec = smoother->push(dec);
      std::snprintf(buf, sizeof(buf), "  room%d=%s(%.3f)", dec.room_id, dec.occupied ? "occupied" : "empty",
                    dec.confidence);
      text += buf;
    }
    text += "\n";
  }
  if (out) {
    io::write_text(*out, text);
    std::printf("%zu decisions -> %s\n", by_tick.size(), out->string().c_str());
  } else {
    std::fputs(text.c_str(), stdout);
  }
  return 0;
}

int cmd_vote(const Common& c, const fs::path& checkpoint, const fs::path& data, const fs::path& report,
             const std::string& split) {
  const io::RunConfig rc = resolve(c);
  const auto ck = io::read_checkpoint(checkpoint, rc.model);
  const auto d = load(data, rc);
  const auto& set = pick_split(d, split);
  const auto topo = voting::Topology::star(d.pairs);
  const auto probs = predict_all(ck.params, rc.model, set, rc.train.threads);
  const auto samples = eval::synchronized_samples(set, probs, topo);
  const auto vr = eval::voting_ablation(samples, topo);
  eval::KeyValueReport rep;
  rep.add("samples", static_cast<long>(vr.samples));
  for (const auto& [pair, acc] : vr.pair_tx_accuracy) rep.add("pair" + std::to_string(pair) + ".tx_accuracy", acc);
  rep.add("mean_pair_tx_accuracy", vr.mean_pair_tx_accuracy);
  rep.add("worst_pair_tx_accuracy", vr.worst_pair_tx_accuracy);
  rep.add("voted_tx_accuracy", vr.voted_tx_accuracy);
  rep.add("delta_vs_mean", vr.delta_vs_mean);
  for (const auto& [room, acc] : vr.rx_accuracy) rep.add("room" + std::to_string(room) + ".rx_accuracy", acc);
  io::write_text(report, rep.text());
  for (const auto& [pair, acc] : vr.pair_tx_accuracy) std::printf("pair %d alone: TX accuracy %.4f\n", pair, acc);
  std::printf("voted: TX accuracy %.4f (delta vs mean %+.4f) over %zu observations\nreport -> %s\n",
              vr.voted_tx_accuracy, vr.delta_vs_mean, vr.samples, report.string().c_str());
  return 0;
}

int cmd_gradcheck(const Common& c, bool tiny, const std::optional<std::string>& variant, int batch) {
  io::RunConfig rc = resolve(c);
  model::ModelConfig cfg = tiny ? model::ModelConfig::tiny() : rc.model;
  if (variant) cfg.variant = model::parse_variant(*variant);
  else if (!tiny) cfg.variant = rc.model.variant;
  const auto start = std::chrono::steady_clock::now();
  const auto params = model::init_params(cfg, rc.train.seed);
  const auto in = train::random_batch(cfg, batch, rc.train.seed);
  const auto res = train::gradient_check(params, cfg, in);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (const auto& [name, err] : res.per_tensor) std::printf("  %-28s %.3e\n", name.c_str(), err);
  std::printf("max relative error %.3e over %zu coordinates (worst %s[%zu]), %.2fs\n", res.max_rel_error,
              res.coordinates, res.worst_tensor.c_str(), res.worst_index, secs);
  if (res.max_rel_error >= kGradTolerance) {
    std::fprintf(stderr, "error[gradcheck]: max relative error %.3e >= %.0e\n", res.max_rel_error, kGradTolerance);
    return kExitGradcheck;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TCD-FERN device-free presence detection from WiFi CSI"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--threads", common.threads, "Parallel evaluation width")->check(CLI::Range(1, 256));

  fs::path out, data, checkpoint, report;
  std::optional<fs::path> out_opt;
  std::optional<std::string> scenario, variant;
  std::optional<int> train_n, test_n, epochs;
  std::string split = "test";
  bool tiny = false;
  int smooth = 1, batch = 4;

  auto* gen = app.add_subcommand("generate", "Write a seeded synthetic dataset");
  add_common(gen, common);
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--scenario", scenario, "two-room or three-room");
  gen->add_option("--train-per-case", train_n, "Training windows per case and pair");
  gen->add_option("--test-per-case", test_n, "Test windows per case and pair");

  auto* pre = app.add_subcommand("preprocess", "Normalize, window and fuse a dataset into feature files");
  add_common(pre, common);
  pre->add_option("--data", data, "Dataset directory")->required();
  pre->add_option("--out", out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_common(tr, common);
  tr->add_option("--data", data, "Dataset or features directory")->required();
  tr->add_option("--out", out, "Checkpoint path")->required();
  tr->add_option("--variant", variant, "FERN, D-FERN, T-FERN, C-FERN or TCD-FERN");
  tr->add_option("--epochs", epochs, "Override train.epochs");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint and write a metric report");
  add_common(ev, common);
  ev->add_option("--checkpoint", checkpoint, "Checkpoint path")->required();
  ev->add_option("--data", data, "Dataset or features directory")->required();
  ev->add_option("--report", report, "Key-value report path")->required();
  ev->add_option("--split", split, "train or test");

  auto* inf = app.add_subcommand("infer", "Per-room occupancy decisions for every synchronized window");
  add_common(inf, common);
  inf->add_option("--checkpoint", checkpoint, "Checkpoint path")->required();
  inf->add_option("--data", data, "Dataset or features directory")->required();
  inf->add_option("--split", split, "train or test");
  inf->add_option("--out", out_opt, "Write decisions here instead of stdout");
  inf->add_option("--smooth", smooth, "Majority window over consecutive decisions")->check(CLI::Range(1, 1000));

  auto* vote = app.add_subcommand("vote-ablation", "TX-room accuracy per pair versus after voting");
  add_common(vote, common);
  vote->add_option("--checkpoint", checkpoint, "Checkpoint path")->required();
  vote->add_option("--data", data, "Multi-pair dataset or features directory")->required();
  vote->add_option("--report", report, "Key-value report path")->required();
  vote->add_option("--split", split, "train or test");

  auto* gc = app.add_subcommand("gradcheck", "Compare tape gradients with central differences");
  add_common(gc, common);
  gc->add_flag("--tiny", tiny, "Use the tiny configuration (tau 5, input 12, cond 4, 3 units)");
  gc->add_option("--variant", variant, "Model variant");
  gc->add_option("--batch", batch, "Batch size of the random probe")->check(CLI::Range(1, 64));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) return cmd_generate(common, out, scenario, train_n, test_n);
    if (*pre) return cmd_preprocess(common, data, out);
    if (*tr) return cmd_train(common, data, out, variant, epochs);
    if (*ev) return cmd_eval(common, checkpoint, data, report, split);
    if (*inf) return cmd_infer(common, checkpoint, data, split, out_opt, smooth);
    if (*vote) return cmd_vote(common, checkpoint, data, report, split);
    if (*gc) return cmd_gradcheck(common, tiny, variant, batch);
  } catch (const Error& e) {
    std::fprintf(stderr, "error[%s]: %s\n", e.category(), e.what());
    return exit_code_for(e);
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error[io]: %s\n", e.what());
    return 10;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error[internal]: %s\n", e.what());
    return 1;
  }
  return 0;
}
