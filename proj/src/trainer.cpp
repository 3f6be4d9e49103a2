// SPDX-License-Identifier: Apache-2.0
#include "tcdfern/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <thread>

#include "tcdfern/errors.hpp"
#include "tcdfern/random.hpp"

namespace tcdfern::train {

namespace {

bool all_labelled(const das::BatchInput& in) {
  return std::all_of(in.labels.begin(), in.labels.end(), [](int y) { return y >= 0; });
}

}  // namespace

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1) throw ConfigError("train config: epochs and batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("train config: learning_rate must be >= 0");
  if (patience < 1) throw ConfigError("train config: patience must be >= 1");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("train config: validation_fraction must lie in (0, 1)");
  }
  if (threads < 1) throw ConfigError("train config: threads must be >= 1");
}

bool TrainHistory::same_trajectory(const TrainHistory& other) const {
  if (epochs.size() != other.epochs.size() || best_epoch != other.best_epoch || diverged != other.diverged ||
      early_stopped != other.early_stopped) {
    return false;
  }
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const auto& a = epochs[i];
    const auto& b = other.epochs[i];
    if (a.train_loss != b.train_loss || a.val_loss != b.val_loss || a.val_accuracy != b.val_accuracy) return false;
  }
  return true;
}

void sgd_step(model::ModelParams& params, const Gradients& grads, double lr) {
  auto& entries = params.entries();
  if (grads.size() != entries.size()) throw StructuralError("sgd_step: gradient count mismatch");
  for (std::size_t k = 0; k < entries.size(); ++k) {
    if (grads[k].empty()) continue;
    auto& w = entries[k].value;
    if (grads[k].size() != w.size()) throw StructuralError("sgd_step: gradient shape mismatch for " + entries[k].name);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * grads[k][i];
  }
}

void adam_step(model::ModelParams& params, const Gradients& grads, AdamState& state, double lr, double beta1,
               double beta2, double eps) {
  auto& entries = params.entries();
  if (grads.size() != entries.size()) throw StructuralError("adam_step: gradient count mismatch");
  if (state.m.empty()) {
    state.m.resize(entries.size());
    state.v.resize(entries.size());
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < entries.size(); ++k) {
    if (grads[k].empty()) continue;
    auto& w = entries[k].value;
    const auto& g = grads[k];
    if (g.size() != w.size()) throw StructuralError("adam_step: gradient shape mismatch for " + entries[k].name);
    if (state.m[k].empty()) {
      state.m[k] = model::Tensor(w.shape(), 0.0);
      state.v[k] = model::Tensor(w.shape(), 0.0);
    }
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

das::BatchInput VectorSource::batch(std::span<const std::size_t> indices) const {
  std::vector<das::DasSample> picked;
  picked.reserve(indices.size());
  for (std::size_t i : indices) picked.push_back(samples_[i]);
  return das::assemble_batch(picked, b_);
}

std::vector<std::size_t> permutation(std::size_t n, ad::Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

StepResult compute_gradients(const model::ModelParams& params, const model::ModelConfig& cfg,
                             const das::BatchInput& batch, bool train, ad::Rng& dropout_rng) {
  ad::Tape tape;
  model::ParamVars pv(tape, params);
  auto trace = model::forward_batch(pv, params, cfg, batch, train, dropout_rng);
  const ad::Var loss = model::batch_loss(trace, batch, cfg);
  StepResult out;
  out.loss = loss.value().item();
  if (!std::isfinite(out.loss)) return out;
  tape.backward(loss);
  const auto& entries = params.entries();
  out.grads.resize(entries.size());
  for (std::size_t k = 0; k < entries.size(); ++k) {
    if (entries[k].trainable) out.grads[k] = pv[entries[k].name].grad();
  }
  out.bn_updates = std::move(trace.bn_updates);
  return out;
}

std::vector<double> fit_batch(model::ModelParams& params, const model::ModelConfig& cfg, const das::BatchInput& batch,
                              const TrainConfig& tcfg, int steps) {
  ad::Rng dropout_rng(splitmix64(tcfg.seed ^ 0xD1B54A32D192ED03ULL));
  AdamState state;
  std::vector<double> losses;
  for (int s = 0; s < steps; ++s) {
    auto step = compute_gradients(params, cfg, batch, true, dropout_rng);
    if (!std::isfinite(step.loss)) throw DivergenceError("fit_batch: non-finite loss at step " + std::to_string(s));
    losses.push_back(step.loss);
    if (tcfg.optimizer == OptimizerKind::Adam) {
      adam_step(params, step.grads, state, tcfg.learning_rate, tcfg.beta1, tcfg.beta2, tcfg.adam_eps);
    } else {
      sgd_step(params, step.grads, tcfg.learning_rate);
    }
    model::apply_bn_updates(params, step.bn_updates, cfg.bn_momentum);
  }
  return losses;
}

EvalResult evaluate(const model::ModelParams& params, const model::ModelConfig& cfg, const SampleSource& source,
                    int batch_size, int threads) {
  std::vector<std::size_t> all(source.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return evaluate(params, cfg, source, all, batch_size, threads);
}

EvalResult evaluate(const model::ModelParams& params, const model::ModelConfig& cfg, const SampleSource& source,
                    std::span<const std::size_t> indices, int batch_size, int threads) {
  EvalResult res;
  const std::size_t n = indices.size();
  res.probs.resize(n);
  res.predicted.assign(n, -1);
  if (n == 0) return res;
  const std::size_t bs = static_cast<std::size_t>(std::max(batch_size, 1));
  const std::size_t n_batches = (n + bs - 1) / bs;
  std::vector<double> batch_loss(n_batches, 0.0);
  std::vector<char> batch_labelled(n_batches, 0);

  auto run = [&](std::size_t worker, std::size_t workers) {
    for (std::size_t b = worker; b < n_batches; b += workers) {
      const std::size_t lo = b * bs;
      const std::size_t hi = std::min(n, lo + bs);
      const das::BatchInput in = source.batch(indices.subspan(lo, hi - lo));
      ad::Tape tape;
      model::ParamVars pv(tape, params, false);
      ad::Rng rng(0);
      const auto trace = model::forward_batch(pv, params, cfg, in, false, rng);
      const auto& probs = trace.probs.value();
      for (std::size_t i = lo; i < hi; ++i) {
        const double* row = probs.data() + (i - lo) * static_cast<std::size_t>(cfg.n_cases);
        res.probs[i].assign(row, row + cfg.n_cases);
        res.predicted[i] = static_cast<int>(std::max_element(row, row + cfg.n_cases) - row);
      }
      if (all_labelled(in)) {
        batch_loss[b] = model::batch_loss(trace, in, cfg).value().item() * static_cast<double>(hi - lo);
        batch_labelled[b] = 1;
      }
    }
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), n_batches);
  if (workers <= 1) {
    run(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w, workers);
    for (auto& t : pool) t.join();
  }

  double loss = 0.0;
  std::size_t counted = 0;
  for (std::size_t b = 0; b < n_batches; ++b) {
    if (!batch_labelled[b]) continue;
    loss += batch_loss[b];
    counted += std::min(n, (b + 1) * bs) - b * bs;
  }
  res.loss = counted ? loss / static_cast<double>(counted) : 0.0;
  std::size_t correct = 0, labelled = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = source.label(indices[i]);
    if (y <= 0) continue;
    ++labelled;
    if (res.predicted[i] == y - 1) ++correct;
  }
  res.accuracy = labelled ? static_cast<double>(correct) / static_cast<double>(labelled) : 0.0;
  return res;
}

TrainResult train(const SampleSource& samples, const model::ModelConfig& cfg, const TrainConfig& tcfg,
                  const ProgressFn& progress) {
  cfg.validate();
  tcfg.validate();
  const std::size_t n = samples.size();
  std::map<int, std::size_t> per_class;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = samples.label(i);
    if (y < 1 || y > cfg.n_cases) throw DataIntegrityError("train: sample " + std::to_string(i) + " has no valid label");
    ++per_class[y];
  }
  for (const auto& [y, count] : per_class) {
    if (count < 2) throw DataIntegrityError("train: case " + std::to_string(y) + " has fewer than 2 samples");
  }

  ad::Rng data_rng(splitmix64(tcfg.seed ^ 0x2545F4914F6CDD1DULL));
  ad::Rng dropout_rng(splitmix64(tcfg.seed ^ 0xD1B54A32D192ED03ULL));

  // Overlapping windows of one group must not straddle the split, so whole
  // groups are held out, stratified by class.
  std::map<std::size_t, std::vector<std::size_t>> members;
  std::map<int, std::vector<std::size_t>> groups_of_class;
  for (std::size_t i = 0; i < n; ++i) {
    auto& m = members[samples.group(i)];
    if (m.empty()) groups_of_class[samples.label(i)].push_back(samples.group(i));
    m.push_back(i);
  }
  std::vector<std::size_t> val_idx, train_idx;
  for (auto& [y, groups] : groups_of_class) {
    const auto perm = permutation(groups.size(), data_rng);
    std::size_t held = static_cast<std::size_t>(std::llround(tcfg.validation_fraction * static_cast<double>(groups.size())));
    if (groups.size() >= 2) held = std::clamp<std::size_t>(held, 1, groups.size() - 1);
    else held = 0;
    for (std::size_t j = 0; j < groups.size(); ++j) {
      const auto& m = members[groups[perm[j]]];
      auto& dst = j < held ? val_idx : train_idx;
      dst.insert(dst.end(), m.begin(), m.end());
    }
  }
  if (val_idx.empty()) {
    // too few groups: fall back to holding out single windows
    const auto order = permutation(n, data_rng);
    const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(tcfg.validation_fraction * static_cast<double>(n))));
    val_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    train_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());

  TrainResult result;
  model::ModelParams params = model::init_params(cfg, tcfg.seed);
  result.params = params;
  AdamState adam;
  double best_acc = -1.0, best_loss = INFINITY;
  int since_best = 0;

  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto perm = permutation(train_idx.size(), data_rng);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    std::vector<std::size_t> idx;
    for (std::size_t lo = 0; lo < perm.size(); lo += static_cast<std::size_t>(tcfg.batch_size)) {
      const std::size_t hi = std::min(perm.size(), lo + static_cast<std::size_t>(tcfg.batch_size));
      idx.clear();
      for (std::size_t i = lo; i < hi; ++i) idx.push_back(train_idx[perm[i]]);
      const das::BatchInput batch = samples.batch(idx);
      auto step = compute_gradients(params, cfg, batch, true, dropout_rng);
      const bool finite_grads = std::all_of(step.grads.begin(), step.grads.end(),
                                            [](const model::Tensor& g) { return g.all_finite(); });
      if (!std::isfinite(step.loss) || !finite_grads) {
        result.history.diverged = true;
        break;
      }
      if (tcfg.optimizer == OptimizerKind::Adam) {
        adam_step(params, step.grads, adam, tcfg.learning_rate, tcfg.beta1, tcfg.beta2, tcfg.adam_eps);
      } else {
        sgd_step(params, step.grads, tcfg.learning_rate);
      }
      model::apply_bn_updates(params, step.bn_updates, cfg.bn_momentum);
      loss_sum += step.loss * static_cast<double>(hi - lo);
      seen += hi - lo;
    }
    if (result.history.diverged) break;

    EpochRecord rec;
    rec.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    const auto val = evaluate(params, cfg, samples, val_idx, 256, tcfg.threads);
    rec.val_loss = val.loss;
    rec.val_accuracy = val.accuracy;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.epochs.push_back(rec);
    if (progress) progress(epoch, rec);

    if (!std::isfinite(rec.val_loss) || !params.all_finite()) {
      result.history.diverged = true;
      break;
    }
    if (rec.val_accuracy > best_acc || (rec.val_accuracy == best_acc && rec.val_loss < best_loss)) {
      best_acc = rec.val_accuracy;
      best_loss = rec.val_loss;
      result.params = params;
      result.history.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= tcfg.patience) {
      result.history.early_stopped = true;
      break;
    }
  }
  return result;
}

das::BatchInput random_batch(const model::ModelConfig& cfg, int batch, std::uint64_t seed) {
  ad::Rng rng(splitmix64(seed));
  das::BatchInput in;
  in.batch = batch;
  in.tau = cfg.tau;
  in.dim = cfg.input_dim;
  const auto D = static_cast<std::size_t>(cfg.input_dim);
  in.spatial.resize(static_cast<std::size_t>(cfg.tau) * batch * D);
  for (auto& v : in.spatial) v = uniform01(rng);
  in.moving.resize(static_cast<std::size_t>(cfg.tau) * batch);
  for (auto& v : in.moving) v = uniform(rng, -0.1, 0.1);
  in.last_spatial.resize(static_cast<std::size_t>(batch) * D);
  for (int i = 0; i < batch; ++i) {
    const std::size_t last = (static_cast<std::size_t>(cfg.tau - 1) * batch + i) * D;
    std::copy_n(in.spatial.begin() + static_cast<std::ptrdiff_t>(last), D,
                in.last_spatial.begin() + static_cast<std::ptrdiff_t>(i * D));
  }
  in.references.resize(D);
  for (auto& v : in.references) v = uniform01(rng);
  in.reference_index.assign(static_cast<std::size_t>(batch), 0);
  for (int i = 0; i < batch; ++i) in.labels.push_back(i % cfg.n_cases);
  return in;
}

GradCheckResult gradient_check(const model::ModelParams& params, const model::ModelConfig& cfg,
                               const das::BatchInput& batch, double eps) {
  auto loss_of = [&](const model::ModelParams& p, bool with_grad, Gradients* grads) {
    ad::Tape tape;
    model::ParamVars pv(tape, p, with_grad);
    ad::Rng unused(0);
    auto trace = model::forward_batch(pv, p, cfg, batch, false, unused, true);
    const ad::Var loss = model::batch_loss(trace, batch, cfg);
    if (with_grad) {
      tape.backward(loss);
      grads->resize(p.entries().size());
      for (std::size_t k = 0; k < p.entries().size(); ++k)
        if (p.entries()[k].trainable) (*grads)[k] = pv[p.entries()[k].name].grad();
    }
    return loss.value().item();
  };
  Gradients analytic;
  loss_of(params, true, &analytic);
  GradCheckResult res;
  model::ModelParams probe = params;
  for (std::size_t k = 0; k < probe.entries().size(); ++k) {
    auto& e = probe.entries()[k];
    if (!e.trainable) continue;
    double worst = 0.0;
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double orig = e.value[i];
      e.value[i] = orig + eps;
      const double up = loss_of(probe, false, nullptr);
      e.value[i] = orig - eps;
      const double down = loss_of(probe, false, nullptr);
      e.value[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++res.coordinates;
      worst = std::max(worst, rel);
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_tensor = e.name;
        res.worst_index = i;
      }
    }
    res.per_tensor[e.name] = worst;
  }
  return res;
}

}  // namespace tcdfern::train
