// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tcdfern/das.hpp"
#include "tcdfern/model.hpp"

namespace tcdfern::train {

enum class OptimizerKind { Sgd, Adam };
OptimizerKind parse_optimizer(const std::string& name);
std::string optimizer_name(OptimizerKind k);

struct TrainConfig {
  int epochs = 50;
  int batch_size = 64;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 7;
  int patience = 10;
  double validation_fraction = 0.2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int threads = 1;  // evaluation width

  void validate() const;
};

struct EpochRecord {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double wall_seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  bool diverged = false;
  bool early_stopped = false;

  /// Compares everything but wall time, which no run can reproduce.
  bool same_trajectory(const TrainHistory& other) const;
};

/// One gradient tensor per ModelParams entry; empty for non-trainable state.
using Gradients = std::vector<model::Tensor>;

struct AdamState {
  std::vector<model::Tensor> m;
  std::vector<model::Tensor> v;
  long step = 0;
};

void sgd_step(model::ModelParams& params, const Gradients& grads, double lr);
void adam_step(model::ModelParams& params, const Gradients& grads, AdamState& state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

/// Anything that can hand out labelled batches by index.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual int label(std::size_t i) const = 0;  // case 1..4, 0 when unknown
  virtual das::BatchInput batch(std::span<const std::size_t> indices) const = 0;
  /// Samples sharing a group overlap in time; validation holds out whole groups.
  virtual std::size_t group(std::size_t i) const { return i; }
};

class SampleSetSource final : public SampleSource {
 public:
  explicit SampleSetSource(const das::SampleSet& set) : set_(set) {}
  std::size_t size() const override { return set_.size(); }
  int label(std::size_t i) const override { return set_.label(i); }
  das::BatchInput batch(std::span<const std::size_t> indices) const override { return set_.batch(indices); }
  std::size_t group(std::size_t i) const override { return set_.window(i).stream; }

 private:
  const das::SampleSet& set_;
};

class VectorSource final : public SampleSource {
 public:
  VectorSource(std::span<const das::DasSample> samples, das::ReferenceSpatial b) : samples_(samples), b_(std::move(b)) {}
  std::size_t size() const override { return samples_.size(); }
  int label(std::size_t i) const override { return samples_[i].label.value_or(0); }
  das::BatchInput batch(std::span<const std::size_t> indices) const override;

 private:
  std::span<const das::DasSample> samples_;
  das::ReferenceSpatial b_;
};

/// Loss, gradients and batch-norm statistics of one training batch.
struct StepResult {
  double loss = 0.0;
  Gradients grads;
  std::vector<model::BatchNormUpdate> bn_updates;
};
StepResult compute_gradients(const model::ModelParams& params, const model::ModelConfig& cfg,
                             const das::BatchInput& batch, bool train, ad::Rng& dropout_rng);

/// Runs `steps` optimizer updates on one fixed batch; returns the loss before each step.
std::vector<double> fit_batch(model::ModelParams& params, const model::ModelConfig& cfg, const das::BatchInput& batch,
                              const TrainConfig& tcfg, int steps);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<std::vector<double>> probs;  // per requested index
  std::vector<int> predicted;              // 0-based class
};

/// Inference-mode pass over the given indices, sharded across `threads`.
/// Output order follows `indices` regardless of thread count.
EvalResult evaluate(const model::ModelParams& params, const model::ModelConfig& cfg, const SampleSource& source,
                    std::span<const std::size_t> indices, int batch_size = 256, int threads = 1);
EvalResult evaluate(const model::ModelParams& params, const model::ModelConfig& cfg, const SampleSource& source,
                    int batch_size = 256, int threads = 1);

struct TrainResult {
  model::ModelParams params;  // best-validation checkpoint
  TrainHistory history;
};

using ProgressFn = std::function<void(int epoch, const EpochRecord&)>;

/// Seeded training. Draw order: parameter init from `seed`, the validation
/// split and per-epoch shuffles from one stream derived from it, dropout masks
/// from another.
TrainResult train(const SampleSource& samples, const model::ModelConfig& cfg, const TrainConfig& tcfg,
                  const ProgressFn& progress = {});

std::vector<std::size_t> permutation(std::size_t n, ad::Rng& rng);

/// Random labelled batch (one pair, one reference) shaped for `cfg`.
das::BatchInput random_batch(const model::ModelConfig& cfg, int batch, std::uint64_t seed);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
  std::map<std::string, double> per_tensor;  // worst error per parameter tensor
};

/// Tape gradients of the total loss against central differences for every
/// trainable coordinate. Dropout is off; batch norm uses batch statistics.
GradCheckResult gradient_check(const model::ModelParams& params, const model::ModelConfig& cfg,
                               const das::BatchInput& batch, double eps = 1e-4);

}  // namespace tcdfern::train
