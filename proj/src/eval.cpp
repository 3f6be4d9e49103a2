// SPDX-License-Identifier: Apache-2.0
#include "tcdfern/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include "tcdfern/errors.hpp"

namespace tcdfern::eval {

long ConfusionMatrix::total() const {
  long t = 0;
  for (const auto& row : counts)
    for (long c : row) t += c;
  return t;
}

long ConfusionMatrix::support(int label) const {
  long t = 0;
  for (long c : counts[static_cast<std::size_t>(label)]) t += c;
  return t;
}

long ConfusionMatrix::predicted(int cls) const {
  long t = 0;
  for (const auto& row : counts) t += row[static_cast<std::size_t>(cls)];
  return t;
}

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels, int n_classes) {
  if (preds.size() != labels.size())
    throw StructuralError("confusion: " + std::to_string(preds.size()) + " predictions vs " +
                          std::to_string(labels.size()) + " labels");
  if (n_classes < 1) throw StructuralError("confusion: n_classes must be positive");
  ConfusionMatrix cm;
  cm.n_classes = n_classes;
  cm.counts.assign(static_cast<std::size_t>(n_classes), std::vector<long>(static_cast<std::size_t>(n_classes), 0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int p = preds[i], y = labels[i];
    if (p < 0 || p >= n_classes || y < 0 || y >= n_classes)
      throw DataIntegrityError("confusion: class index out of range at sample " + std::to_string(i));
    ++cm.counts[static_cast<std::size_t>(y)][static_cast<std::size_t>(p)];
  }
  return cm;
}

MetricReport metrics(const ConfusionMatrix& cm) {
  const long total = cm.total();
  if (total == 0) throw DataIntegrityError("metrics: confusion matrix is all zero");
  MetricReport r;
  long correct = 0;
  for (int i = 0; i < cm.n_classes; ++i) correct += cm.counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)];
  r.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  int included = 0;
  for (int i = 0; i < cm.n_classes; ++i) {
    ClassMetrics c;
    const long tp = cm.counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)];
    const long pred = cm.predicted(i);
    c.support = cm.support(i);
    c.precision = pred > 0 ? static_cast<double>(tp) / static_cast<double>(pred) : 0.0;
    c.recall = c.support > 0 ? static_cast<double>(tp) / static_cast<double>(c.support) : 0.0;
    c.f1 = (c.precision + c.recall) > 0.0 ? 2.0 * c.precision * c.recall / (c.precision + c.recall) : 0.0;
    r.per_class.push_back(c);
    if (c.support == 0) {
      r.excluded_classes.push_back(i);
      continue;
    }
    ++included;
    r.macro_precision += c.precision;
    r.macro_recall += c.recall;
    r.macro_f1 += c.f1;
  }
  r.macro_precision /= included;
  r.macro_recall /= included;
  r.macro_f1 /= included;
  return r;
}

int scenario_classes(int scenario) {
  if (scenario == 1 || scenario == 2) return 2;
  if (scenario == 3) return 4;
  throw ConfigError("unknown scenario " + std::to_string(scenario) + " (expected 1, 2 or 3)");
}

std::pair<std::vector<int>, std::vector<int>> regroup_scenario(std::span<const int> preds4, std::span<const int> labels4,
                                                               int scenario) {
  scenario_classes(scenario);
  if (preds4.size() != labels4.size()) throw StructuralError("regroup_scenario: length mismatch");
  std::vector<int> p, l;
  for (std::size_t i = 0; i < preds4.size(); ++i) {
    const int pc = preds4[i], yc = labels4[i];
    if (pc < 1 || pc > 4 || yc < 1 || yc > 4) throw DataIntegrityError("regroup_scenario: case outside 1..4");
    switch (scenario) {
      case 1:
        if (yc != 1 && yc != 2) continue;
        l.push_back(yc == 2 ? 1 : 0);
        p.push_back(pc == 2 || pc == 4 ? 1 : 0);
        break;
      case 2:
        if (yc != 1 && yc != 4) continue;
        l.push_back(yc == 4 ? 1 : 0);
        p.push_back(pc == 1 ? 0 : 1);
        break;
      default:
        l.push_back(yc - 1);
        p.push_back(pc - 1);
    }
  }
  return {std::move(p), std::move(l)};
}

std::vector<VotingSample> synchronized_samples(const das::SampleSet& set, std::span<const std::vector<double>> probs,
                                               const voting::Topology& topology) {
  topology.validate();
  if (probs.size() != set.size()) throw StructuralError("synchronized_samples: one probability row per window needed");
  std::map<std::int64_t, std::map<int, std::size_t>> by_tick;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const int pair = set.pair_id(i);
    if (!topology.rx_room_of_pair.count(pair)) continue;
    if (!by_tick[set.end_tick(i)].emplace(pair, i).second)
      throw DataIntegrityError("synchronized_samples: pair " + std::to_string(pair) + " has two windows ending at tick " +
                               std::to_string(set.end_tick(i)));
  }
  std::vector<VotingSample> out;
  for (const auto& [tick, windows] : by_tick) {
    if (windows.size() != topology.rx_room_of_pair.size()) continue;
    VotingSample vs;
    for (const auto& [pair, i] : windows) {
      const int c = set.label(i);
      if (c < 1 || c > 4) throw DataIntegrityError("synchronized_samples: unlabelled window at tick " + std::to_string(tick));
      voting::PairPrediction pp;
      pp.pair_id = pair;
      if (probs[i].size() != 4) throw StructuralError("synchronized_samples: expected 4 probabilities per window");
      std::copy(probs[i].begin(), probs[i].end(), pp.probs.begin());
      vs.pairs.push_back(pp);
      const bool tx = c == 2 || c == 4;
      const auto [it, fresh] = vs.room_occupied.emplace(topology.tx_room, tx);
      if (!fresh && it->second != tx)
        throw DataIntegrityError("synchronized_samples: pairs disagree on the TX room at tick " + std::to_string(tick));
      vs.room_occupied[topology.rx_room_of_pair.at(pair)] = c >= 3;
    }
    out.push_back(std::move(vs));
  }
  return out;
}

VotingReport voting_ablation(std::span<const VotingSample> samples, const voting::Topology& topology) {
  topology.validate();
  if (topology.rx_room_of_pair.size() < 2) throw ConfigError("voting_ablation needs at least 2 pairs");
  VotingReport rep;
  rep.samples = samples.size();
  if (samples.empty()) return rep;
  std::map<int, long> pair_correct, rx_correct;
  long voted_correct = 0;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto& smp = samples[s];
    const auto tx_truth = smp.room_occupied.find(topology.tx_room);
    if (tx_truth == smp.room_occupied.end())
      throw StructuralError("voting_ablation: sample " + std::to_string(s) + " lacks the TX room label");
    std::vector<voting::RoomProbability> merged;
    std::set<int> seen;
    for (const auto& pp : smp.pairs) {
      if (!topology.rx_room_of_pair.count(pp.pair_id))
        throw StructuralError("voting_ablation: unknown pair " + std::to_string(pp.pair_id));
      seen.insert(pp.pair_id);
      const auto m = voting::merge_tx(pp, topology.tx_room);
      merged.push_back(m);
      if (voting::decide(m).occupied == tx_truth->second) ++pair_correct[pp.pair_id];
      const int rx_room = topology.rx_room_of_pair.at(pp.pair_id);
      const auto rx_truth = smp.room_occupied.find(rx_room);
      if (rx_truth != smp.room_occupied.end() && voting::decide(voting::merge_rx(pp, rx_room)).occupied == rx_truth->second)
        ++rx_correct[rx_room];
    }
    if (seen.size() != topology.rx_room_of_pair.size())
      throw StructuralError("voting_ablation: sample " + std::to_string(s) + " misses a pair");
    if (voting::decide(voting::vote_tx(merged)).occupied == tx_truth->second) ++voted_correct;
  }
  const double n = static_cast<double>(samples.size());
  double sum = 0.0, worst = 1.0;
  for (const auto& [pair, room] : topology.rx_room_of_pair) {
    const double acc = static_cast<double>(pair_correct[pair]) / n;
    rep.pair_tx_accuracy[pair] = acc;
    sum += acc;
    worst = std::min(worst, acc);
    rep.rx_accuracy[room] = static_cast<double>(rx_correct[room]) / n;
  }
  rep.mean_pair_tx_accuracy = sum / static_cast<double>(topology.rx_room_of_pair.size());
  rep.worst_pair_tx_accuracy = worst;
  rep.voted_tx_accuracy = static_cast<double>(voted_correct) / n;
  rep.delta_vs_mean = rep.voted_tx_accuracy - rep.mean_pair_tx_accuracy;
  return rep;
}

std::vector<AblationRow> run_ablation(const train::SampleSource& train_set, const train::SampleSource& test_set,
                                      const model::ModelConfig& base, const train::TrainConfig& tcfg,
                                      std::span<const model::Variant> variants, const AblationProgress& progress) {
  std::vector<AblationRow> rows;
  std::vector<int> labels;
  for (std::size_t i = 0; i < test_set.size(); ++i) labels.push_back(test_set.label(i) - 1);
  for (const auto v : variants) {
    model::ModelConfig cfg = base;
    cfg.variant = v;
    const auto result = train::train(train_set, cfg, tcfg);
    const auto ev = train::evaluate(result.params, cfg, test_set, 256, tcfg.threads);
    const auto m = metrics(confusion(ev.predicted, labels, cfg.n_cases));
    AblationRow row;
    row.variant = v;
    row.seed = tcfg.seed;
    row.accuracy = m.accuracy;
    row.macro_f1 = m.macro_f1;
    row.best_epoch = result.history.best_epoch;
    rows.push_back(row);
    if (progress) progress(row);
  }
  return rows;
}

AblationSummary summarize_ablation(std::span<const AblationRow> rows) {
  AblationSummary s;
  std::map<model::Variant, std::pair<double, int>> acc;
  std::map<std::uint64_t, std::map<model::Variant, double>> by_seed;
  for (const auto& r : rows) {
    auto& a = acc[r.variant];
    a.first += r.accuracy;
    ++a.second;
    by_seed[r.seed][r.variant] = r.accuracy;
  }
  for (const auto& [v, a] : acc) s.mean_accuracy[v] = a.first / a.second;
  for (const auto& [seed, accs] : by_seed) {
    const auto tcd = accs.find(model::Variant::TcdFern);
    if (tcd == accs.end()) continue;
    bool is_max = true;
    for (const auto& [v, a] : accs)
      if (a > tcd->second) is_max = false;
    s.tcd_is_max[seed] = is_max;
    if (is_max) ++s.tcd_max_count;
  }
  return s;
}

// ---- reports ----------------------------------------------------------------

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void KeyValueReport::add(const std::string& key, const std::string& value) {
  if (key.empty() || key.find_first_of("=\n ") != std::string::npos)
    throw ConfigError("report key '" + key + "' must be non-empty without spaces or '='");
  if (value.find('\n') != std::string::npos) throw ConfigError("report value for '" + key + "' spans lines");
  for (const auto& [k, v] : entries_)
    if (k == key) throw ConfigError("duplicate report key '" + key + "'");
  entries_.emplace_back(key, value);
}

void KeyValueReport::add(const std::string& key, double value) { add(key, format_number(value)); }
void KeyValueReport::add(const std::string& key, long value) { add(key, std::to_string(value)); }

void KeyValueReport::add_metrics(const std::string& prefix, const MetricReport& m) {
  add(prefix + ".accuracy", m.accuracy);
  add(prefix + ".macro_precision", m.macro_precision);
  add(prefix + ".macro_recall", m.macro_recall);
  add(prefix + ".macro_f1", m.macro_f1);
  for (std::size_t i = 0; i < m.per_class.size(); ++i) {
    const std::string c = prefix + ".class" + std::to_string(i);
    add(c + ".precision", m.per_class[i].precision);
    add(c + ".recall", m.per_class[i].recall);
    add(c + ".f1", m.per_class[i].f1);
    add(c + ".support", m.per_class[i].support);
  }
  std::string excluded;
  for (int c : m.excluded_classes) excluded += (excluded.empty() ? "" : ",") + std::to_string(c);
  add(prefix + ".excluded_classes", excluded.empty() ? std::string("none") : excluded);
}

void KeyValueReport::add_confusion(const std::string& prefix, const ConfusionMatrix& cm) {
  for (int i = 0; i < cm.n_classes; ++i) {
    std::string row;
    for (int j = 0; j < cm.n_classes; ++j)
      row += (j ? "," : "") + std::to_string(cm.counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
    add(prefix + ".row" + std::to_string(i), row);
  }
}

std::string KeyValueReport::text() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
  return out;
}

KeyValueReport KeyValueReport::parse(const std::string& text) {
  KeyValueReport r;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw CorruptFileError("report line " + std::to_string(lineno) + ": expected 'key = value'");
    r.add(line.substr(0, eq), line.substr(eq + 3));
  }
  return r;
}

const std::string& KeyValueReport::at(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  throw ConfigError("report has no key '" + key + "'");
}

std::string confusion_table(const ConfusionMatrix& cm, std::span<const std::string> names) {
  std::ostringstream os;
  auto name = [&](int i) { return i < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(i)] : std::to_string(i); };
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%-14s", "label\\pred");
  os << buf;
  for (int j = 0; j < cm.n_classes; ++j) {
    std::snprintf(buf, sizeof(buf), "%10s", name(j).c_str());
    os << buf;
  }
  os << '\n';
  for (int i = 0; i < cm.n_classes; ++i) {
    std::snprintf(buf, sizeof(buf), "%-14s", name(i).c_str());
    os << buf;
    for (int j = 0; j < cm.n_classes; ++j) {
      std::snprintf(buf, sizeof(buf), "%10ld", cm.counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

std::string metrics_table(const MetricReport& m, std::span<const std::string> names) {
  std::ostringstream os;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%-14s%11s%11s%11s%9s\n", "class", "precision", "recall", "f1", "support");
  os << buf;
  for (std::size_t i = 0; i < m.per_class.size(); ++i) {
    const auto& c = m.per_class[i];
    const std::string n = i < names.size() ? names[i] : std::to_string(i);
    std::snprintf(buf, sizeof(buf), "%-14s%11.4f%11.4f%11.4f%9ld\n", n.c_str(), c.precision, c.recall, c.f1, c.support);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "%-14s%11.4f%11.4f%11.4f\n", "macro", m.macro_precision, m.macro_recall, m.macro_f1);
  os << buf;
  std::snprintf(buf, sizeof(buf), "accuracy %.4f\n", m.accuracy);
  os << buf;
  for (int c : m.excluded_classes) os << "note: class " << c << " has no support and is left out of macro averages\n";
  return os.str();
}

std::string ablation_table(std::span<const AblationRow> rows) {
  std::ostringstream os;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%-10s%8s%11s%11s%11s\n", "variant", "seed", "accuracy", "macro_f1", "best_epoch");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-10s%8llu%11.4f%11.4f%11d\n", std::string(model::variant_name(r.variant)).c_str(),
                  static_cast<unsigned long long>(r.seed), r.accuracy, r.macro_f1, r.best_epoch);
    os << buf;
  }
  return os.str();
}

}  // namespace tcdfern::eval
