// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion. Exit status is 0 when
// every selected criterion ran to completion; --strict also fails on FAIL.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tcdfern/eval.hpp"
#include "tcdfern/io.hpp"

using namespace tcdfern;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Shell {
  int status = -1;
  std::string output;
};

Shell run(const std::string& cmd) {
  Shell s;
  FILE* p = ::popen((cmd + " 2>&1").c_str(), "r");
  if (!p) return s;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, p)) s.output += buf;
  const int st = ::pclose(p);
  s.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return s;
}

std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

struct Prepared {
  das::SampleSet train, test;
};

Prepared prepare(synth::Scenario scenario, int train_per_case, int test_per_case, const synth::GenConfig& g) {
  const auto gd = synth::gen_dataset(scenario, train_per_case, test_per_case, g);
  Prepared p{io::preprocess(gd.train, g.tau, g.stride), io::preprocess(gd.test, g.tau, g.stride)};
  io::copy_references(p.train, p.test);
  return p;
}

// ---- 1: gradient fidelity ------------------------------------------------------

Outcome gradient_fidelity(const fs::path& cli) {
  const auto t0 = Clock::now();
  const auto r = run(quote(cli) + " gradcheck --tiny");
  const double secs = seconds_since(t0);
  const auto at = r.output.find("max relative error ");
  if (r.status != 0 || at == std::string::npos) return {false, "gradcheck exited " + std::to_string(r.status)};
  const double err = std::stod(r.output.substr(at + 19));
  return {err < 1e-3 && secs < 60.0, fmt("max relative error %.3e", err) + fmt(" (bound 1e-3), %.2fs", secs)};
}

// ---- 2: shape audit ------------------------------------------------------------

Outcome shape_audit() {
  using ad::Shape;
  const model::ModelConfig cfg;
  const auto params = model::init_params(cfg, 7);
  ad::Rng rng(1);
  ad::Tape tape;
  model::ParamVars p(tape, params, false);
  std::vector<double> row(static_cast<std::size_t>(cfg.input_dim));
  for (auto& v : row) v = uniform(rng, 0.0, 1.0);
  const auto x = tape.constant(model::Tensor({1, cfg.input_dim}, row));
  const auto sd = model::spatial_domain_trace(x, p, cfg, false, rng);

  das::DasSample s;
  s.spatial = das::WindowMatrix(cfg.tau, cfg.input_dim);
  for (auto& v : s.spatial.values) v = uniform(rng, 0.0, 1.0);
  s.moving.assign(static_cast<std::size_t>(cfg.tau), 0.0);
  for (auto& v : s.moving) v = uniform(rng, -0.1, 0.1);
  const auto last = s.spatial.row(cfg.tau - 1);
  s.last_spatial.assign(last.begin(), last.end());
  das::ReferenceSpatial b{std::vector<double>(static_cast<std::size_t>(cfg.input_dim), 0.5)};
  const auto tr = model::forward(s, b, params, cfg, false);

  // static stack input per step: spatial row plus the condition
  const int gru_in = params.at("static.gru1.w_input").dim(0) + params.at("static.gru1.w_cond").dim(0);
  const int attended = static_cast<int>(tr.context.size() + tr.u.size());

  struct Cell {
    const char* name;
    Shape got, want;
  };
  const std::vector<Cell> cells{
      {"conv1", sd.conv1.shape(), {1, 222, 64}},
      {"conv2", sd.conv2.shape(), {1, 220, 32}},
      {"flatten", sd.flat.shape(), {1, 7040}},
      {"static GRU input", {cfg.tau, gru_in}, {50, 288}},
      {"static GRU output", tr.G.shape(), {50, 32}},
      {"attention + moving", {1, attended}, {1, 64}},
      {"probabilities", {static_cast<int>(tr.probs.size())}, {4}},
  };
  bool ok = true;
  std::string detail;
  for (const auto& c : cells) {
    if (c.got != c.want) {
      ok = false;
      detail += std::string(c.name) + " " + ad::shape_str(c.got) + " != " + ad::shape_str(c.want) + "; ";
    }
  }
  const auto n = static_cast<double>(params.parameter_count());
  const double rel = (n - 506988.0) / 506988.0;
  ok = ok && std::abs(rel) <= 0.02;
  return {ok, detail + "7 dimension cells checked, " + fmt("%.0f parameters", n) + fmt(" (%+.3f%% vs 506988)", 100 * rel)};
}

// ---- 3: invariant suites -------------------------------------------------------

Outcome invariant_suites(const fs::path& unit) {
  const auto t0 = Clock::now();
  const auto r = run(quote(unit));
  const double secs = seconds_since(t0);
  std::string summary;
  const auto at = r.output.find("[doctest] test cases:");
  if (at != std::string::npos) summary = r.output.substr(at + 10, r.output.find('\n', at) - at - 10);
  return {r.status == 0 && secs < 120.0, summary + fmt(", %.1fs (bound 120s)", secs)};
}

// ---- 4: end-to-end two-room ----------------------------------------------------

Outcome end_to_end(int epochs) {
  synth::GenConfig g;
  g.seed = 7;
  const auto data = prepare(synth::Scenario::TwoRoom, 2000, 400, g);
  model::ModelConfig mc;
  train::TrainConfig tc;
  tc.seed = 7;
  tc.epochs = epochs;
  train::SampleSetSource tr(data.train), te(data.test);
  const auto t0 = Clock::now();
  const auto res = train::train(tr, mc, tc);
  const double secs = seconds_since(t0);
  const auto ev = train::evaluate(res.params, mc, te);
  return {ev.accuracy >= 0.90 && secs < 600.0,
          fmt("4-case test accuracy %.4f (bound 0.90)", ev.accuracy) + fmt(", training %.0fs (bound 600s)", secs) +
              ", " + std::to_string(epochs) + " epochs"};
}

// ---- 5: voting direction -------------------------------------------------------

struct VotingSize {
  int train_per_case = 500;
  int test_per_case = 400;
  int epochs = 10;
};

Outcome voting_direction(const VotingSize& size) {
  double mean_pairs = 0, worst = 0, voted = 0;
  std::string per_seed;
  for (std::uint64_t seed : {1, 2, 3}) {
    synth::GenConfig g;
    g.seed = seed;
    const auto data = prepare(synth::Scenario::ThreeRoom, size.train_per_case, size.test_per_case, g);
    model::ModelConfig mc;
    train::TrainConfig tc;
    tc.seed = seed;
    tc.epochs = size.epochs;
    train::SampleSetSource tr(data.train), te(data.test);
    const auto res = train::train(tr, mc, tc);
    const auto ev = train::evaluate(res.params, mc, te);
    const auto topo = voting::Topology::star(2);
    const auto samples = eval::synchronized_samples(data.test, ev.probs, topo);
    const auto vr = eval::voting_ablation(samples, topo);
    mean_pairs += vr.mean_pair_tx_accuracy / 3;
    worst += vr.worst_pair_tx_accuracy / 3;
    voted += vr.voted_tx_accuracy / 3;
    per_seed += fmt(" seed%.0f:", static_cast<double>(seed));
    for (const auto& [pair, acc] : vr.pair_tx_accuracy) per_seed += fmt(" %.4f", acc);
    per_seed += fmt(" -> %.4f", vr.voted_tx_accuracy);
  }
  const bool ok = voted >= mean_pairs - 0.005 && voted >= worst + 0.01;
  return {ok, fmt("voted %.4f", voted) + fmt(", pair mean %.4f", mean_pairs) + fmt(", worst pair %.4f", worst) + ";" +
                  per_seed};
}

// ---- 6: ablation ordering ------------------------------------------------------

struct AblationSize {
  int train_per_case = 500;
  int test_per_case = 400;
  int epochs = 10;
};

Outcome ablation_ordering(const AblationSize& size) {
  std::vector<eval::AblationRow> rows;
  for (std::uint64_t seed : {1, 2, 3}) {
    synth::GenConfig g;
    g.seed = seed;
    const auto data = prepare(synth::Scenario::TwoRoom, size.train_per_case, size.test_per_case, g);
    train::TrainConfig tc;
    tc.seed = seed;
    tc.epochs = size.epochs;
    train::SampleSetSource tr(data.train), te(data.test);
    const auto variants = model::all_variants();
    const auto got = eval::run_ablation(tr, te, model::ModelConfig{}, tc, variants);
    rows.insert(rows.end(), got.begin(), got.end());
  }
  const auto s = eval::summarize_ablation(rows);
  const double tcd = s.mean_accuracy.at(model::Variant::TcdFern);
  const double fern = s.mean_accuracy.at(model::Variant::Fern);
  std::string detail;
  for (const auto& [v, acc] : s.mean_accuracy) detail += std::string(model::variant_name(v)) + fmt(" %.4f, ", acc);
  detail += "TCD-FERN max in " + std::to_string(s.tcd_max_count) + "/3 seeds";
  std::printf("%s", eval::ablation_table(rows).c_str());
  return {tcd >= fern - 0.01 && s.tcd_max_count >= 2, detail};
}

// ---- 7: conditional loss ordering ----------------------------------------------

Outcome conditional_loss_order() {
  synth::GenConfig g;
  g.seed = 17;
  const auto data = prepare(synth::Scenario::TwoRoom, 200, 100, g);
  const model::ModelConfig mc;
  const auto params = model::init_params(mc, 17);  // frozen, untrained

  std::vector<double> c1, c0;
  int n = 0;
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    if (data.test.label(i) != 1) continue;
    const auto s = data.test.sample(i);
    const auto tr = model::forward(s, data.test.reference(s.pair_id), params, mc, false);
    c1.insert(c1.end(), tr.c1.begin(), tr.c1.end());
    c0.insert(c0.end(), tr.c0.begin(), tr.c0.end());
    ++n;
  }
  ad::Tape tape;
  const auto a = tape.constant(model::Tensor({n, mc.cond_dim}, c1));
  const auto b = tape.constant(model::Tensor({n, mc.cond_dim}, c0));
  const std::vector<int> as_empty(static_cast<std::size_t>(n), 0), as_both(static_cast<std::size_t>(n), 3);
  const double l_empty = model::conditional_loss(a, b, as_empty, mc.margin).value().item();
  const double l_both = model::conditional_loss(a, b, as_both, mc.margin).value().item();

  double nu_max = 0;
  for (int r = 0; r < n; ++r) {
    double sq = 0;
    for (int j = 0; j < mc.cond_dim; ++j) {
      const double d = c1[static_cast<std::size_t>(r * mc.cond_dim + j)] - c0[static_cast<std::size_t>(r * mc.cond_dim + j)];
      sq += d * d;
    }
    nu_max = std::max(nu_max, std::sqrt(sq));
  }

  // Per-sample sweep of nu over (0, 4 margin): where does the ordering hold?
  double first_violation = -1;
  for (int k = 1; k < 400; ++k) {
    const double nu = 4.0 * mc.margin * k / 400.0;
    ad::Tape t;
    const auto x = t.constant(model::Tensor({1, 1}, {nu}));
    const auto z = t.constant(model::Tensor({1, 1}, {0.0}));
    const int y0 = 0, y3 = 3;
    const double e = model::conditional_loss(x, z, std::span<const int>(&y0, 1), mc.margin).value().item();
    const double f = model::conditional_loss(x, z, std::span<const int>(&y3, 1), mc.margin).value().item();
    if (!(e < f)) {
      first_violation = nu;
      break;
    }
  }
  const bool ok = nu_max < 4.0 * mc.margin && l_empty < l_both;
  std::string detail = std::to_string(n) + " empty-room windows, " + fmt("max nu %.4f", nu_max) +
                       fmt(", l_cond as case 1 %.5f", l_empty) + fmt(" < as case 4 %.5f", l_both);
  if (first_violation > 0)
    detail += fmt("; per-sample ordering first fails at nu = %.2f margin", first_violation / mc.margin);
  return {ok, detail};
}

// ---- 8: determinism ------------------------------------------------------------

Outcome determinism(const fs::path& cli, const fs::path& work) {
  const fs::path cfg = work / "determinism.cfg";
  {
    std::ofstream out(cfg);
    out << "seed = 21\ndata.train_per_case = 100\ndata.test_per_case = 40\ntrain.epochs = 2\n";
  }
  std::vector<std::string> reports;
  for (int runno : {1, 2}) {
    const fs::path dir = work / ("determinism_" + std::to_string(runno));
    fs::remove_all(dir);
    const std::string c = " --config " + quote(cfg);
    for (const std::string& step : {
             " generate" + c + " --out " + quote(dir / "data"),
             " preprocess" + c + " --data " + quote(dir / "data") + " --out " + quote(dir / "features"),
             " train" + c + " --data " + quote(dir / "features") + " --out " + quote(dir / "model.ckpt"),
             " eval" + c + " --data " + quote(dir / "features") + " --checkpoint " + quote(dir / "model.ckpt") +
                 " --report " + quote(dir / "report.txt"),
         }) {
      const auto r = run(quote(cli) + step);
      if (r.status != 0) return {false, "step failed:" + step + "\n" + r.output};
    }
    const auto bytes = io::read_file(dir / "report.txt");
    reports.emplace_back(bytes.begin(), bytes.end());
  }
  const bool same = reports[0] == reports[1] && !reports[0].empty();
  return {same, std::to_string(reports[0].size()) + "-byte reports " + (same ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  fs::path cli, unit, work = fs::temp_directory_path() / "tcdfern_acceptance";
  std::set<int> only;
  bool strict = false;
  int e2e_epochs = 15;
  VotingSize vsize;
  AblationSize asize;
  app.add_option("--cli", cli, "Path to the tcdfern tool")->required();
  app.add_option("--unit", unit, "Path to the unit test binary")->required();
  app.add_option("--work", work, "Scratch directory");
  app.add_option("--only", only, "Criteria to run (default all)");
  app.add_flag("--strict", strict, "Exit non-zero when any criterion fails");
  app.add_option("--e2e-epochs", e2e_epochs, "Epoch cap for the two-room run");
  app.add_option("--vote-train", vsize.train_per_case, "Three-room training windows per case");
  app.add_option("--vote-epochs", vsize.epochs, "Three-room epochs");
  app.add_option("--ablation-train", asize.train_per_case, "Ablation training windows per case");
  app.add_option("--ablation-epochs", asize.epochs, "Ablation epochs");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria{
      {1, {"gradient fidelity", [&] { return gradient_fidelity(cli); }}},
      {2, {"shape audit", [] { return shape_audit(); }}},
      {3, {"invariant suites", [&] { return invariant_suites(unit); }}},
      {4, {"two-room end to end", [&] { return end_to_end(e2e_epochs); }}},
      {5, {"voting direction", [&] { return voting_direction(vsize); }}},
      {6, {"ablation ordering", [&] { return ablation_ordering(asize); }}},
      {7, {"conditional loss ordering", [] { return conditional_loss_order(); }}},
      {8, {"determinism", [&] { return determinism(cli, work); }}},
  };
  int failed = 0;
  std::string lines;
  for (const auto& [id, entry] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = entry.second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    char head[96];
    std::snprintf(head, sizeof head, "criterion %d %s: %s", id, o.pass ? "PASS" : "FAIL", entry.first);
    const std::string line = std::string(head) + " | " + o.detail + fmt(" [%.0fs]", seconds_since(t0));
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    lines += line + "\n";
    failed += !o.pass;
  }
  std::ofstream(work / "acceptance.txt") << lines;
  return strict && failed > 0 ? 1 : 0;
}
