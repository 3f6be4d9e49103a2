// SPDX-License-Identifier: Apache-2.0
//
// Metrics, scenario regrouping, voting comparison and the ablation runner.
// Classes here are 0-based; the 4-case labels elsewhere are 1-based.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tcdfern/model.hpp"
#include "tcdfern/trainer.hpp"
#include "tcdfern/voting.hpp"

namespace tcdfern::eval {

struct ConfusionMatrix {
  int n_classes = 0;
  std::vector<std::vector<long>> counts;  // [label][predicted]

  long total() const;
  long support(int label) const;
  long predicted(int cls) const;
};

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels, int n_classes);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long support = 0;
};

struct MetricReport {
  double accuracy = 0.0;
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::vector<int> excluded_classes;  // zero support, left out of macro averages
};

MetricReport metrics(const ConfusionMatrix& cm);

/// Scenario 1: cases {1, 2} as binary "is the TX room occupied".
/// Scenario 2: cases {1, 4} as binary "is anyone present".
/// Scenario 3: the 4-case problem, identity.
/// Inputs are 1-based cases; outputs are 0-based classes.
std::pair<std::vector<int>, std::vector<int>> regroup_scenario(std::span<const int> preds4, std::span<const int> labels4,
                                                               int scenario);
int scenario_classes(int scenario);

/// One synchronized observation: every pair's prediction plus the truth per room.
struct VotingSample {
  std::vector<voting::PairPrediction> pairs;
  std::map<int, bool> room_occupied;
};

struct VotingReport {
  std::map<int, double> pair_tx_accuracy;  // TX room decided from one pair alone
  double mean_pair_tx_accuracy = 0.0;
  double worst_pair_tx_accuracy = 0.0;
  double voted_tx_accuracy = 0.0;
  double delta_vs_mean = 0.0;
  std::map<int, double> rx_accuracy;  // per RX room
  std::size_t samples = 0;
};

/// Groups windows that end on the same tick across pairs. Room truth comes
/// from the case labels: the TX room is occupied for cases 2 and 4, a pair's
/// RX room for cases 3 and 4. Ticks not covered by every pair are skipped.
std::vector<VotingSample> synchronized_samples(const das::SampleSet& set, std::span<const std::vector<double>> probs,
                                               const voting::Topology& topology);

VotingReport voting_ablation(std::span<const VotingSample> samples, const voting::Topology& topology);

struct AblationRow {
  model::Variant variant = model::Variant::TcdFern;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  int best_epoch = -1;
};

using AblationProgress = std::function<void(const AblationRow&)>;

/// Trains and tests every variant on the same data with the same seed.
std::vector<AblationRow> run_ablation(const train::SampleSource& train_set, const train::SampleSource& test_set,
                                      const model::ModelConfig& base, const train::TrainConfig& tcfg,
                                      std::span<const model::Variant> variants, const AblationProgress& progress = {});

struct AblationSummary {
  std::map<model::Variant, double> mean_accuracy;
  std::map<std::uint64_t, bool> tcd_is_max;  // per seed; ties count as max
  int tcd_max_count = 0;
};

AblationSummary summarize_ablation(std::span<const AblationRow> rows);

// ---- reports ----------------------------------------------------------------

/// Ordered key-value pairs, one `key = value` per line. Numbers use a fixed
/// format so equal runs give byte-identical files.
class KeyValueReport {
 public:
  void add(const std::string& key, const std::string& value);
  void add(const std::string& key, double value);
  void add(const std::string& key, long value);
  void add(const std::string& key, int value) { add(key, static_cast<long>(value)); }
  void add_metrics(const std::string& prefix, const MetricReport& m);
  void add_confusion(const std::string& prefix, const ConfusionMatrix& cm);

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  std::string text() const;
  static KeyValueReport parse(const std::string& text);
  const std::string& at(const std::string& key) const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::string format_number(double v);
std::string confusion_table(const ConfusionMatrix& cm, std::span<const std::string> names);
std::string metrics_table(const MetricReport& m, std::span<const std::string> names);
std::string ablation_table(std::span<const AblationRow> rows);

}  // namespace tcdfern::eval
