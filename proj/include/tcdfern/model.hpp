// SPDX-License-Identifier: Apache-2.0
//
// The time-selective conditional dual recurrent network and its ablations.
//
//   s_n, b --CNN (shared weights)--> c1, c0 ; c = c1 - c0 ; d = dense(c)
//   static stack : 2 conditional GRU layers over [S_t, c]  -> G (tau x H)
//   moving stack : 2 conditional GRU layers over [m_t, d]  -> u (last output)
//   attention    : softmax over time of sigmoid(dense(dense(G))) -> context
//   head         : softmax(dense(tanh(dense([context, u]))))
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tcdfern/das.hpp"
#include "tcdfern/tensor.hpp"

namespace tcdfern::model {

using ad::Tensor;
using ad::Var;

enum class Variant { Fern, DFern, TFern, CFern, TcdFern };

Variant parse_variant(std::string_view name);
std::string_view variant_name(Variant v);
std::vector<Variant> all_variants();

struct ModelConfig {
  int tau = 50;
  int input_dim = 224;
  int cond_dim = 64;
  int gru_units = 32;
  int conv1_filters = 64;
  int conv2_filters = 32;
  int kernel = 3;
  double dropout = 0.2;
  double margin = 1.0;
  double lambda = 0.5;
  int attn_hidden = 3;
  int head_hidden = 32;
  int n_cases = 4;
  double bn_momentum = 0.9;
  double bn_eps = 1e-3;
  Variant variant = Variant::TcdFern;

  void validate() const;

  int conv1_length() const { return input_dim - kernel + 1; }
  int conv2_length() const { return input_dim - 2 * (kernel - 1); }
  int flatten_dim() const { return conv2_length() * conv2_filters; }

  bool dual() const { return variant == Variant::DFern || variant == Variant::TcdFern; }
  bool attention() const { return variant == Variant::TFern || variant == Variant::TcdFern; }
  bool conditioned() const { return variant == Variant::CFern || variant == Variant::TcdFern; }
  /// lambda actually applied to the conditional loss (0 without the condition path).
  double effective_lambda() const { return conditioned() ? lambda : 0.0; }
  int head_input() const { return dual() ? 2 * gru_units : gru_units; }

  /// Stable textual form; its FNV-1a hash identifies checkpoints.
  std::string canonical() const;
  std::uint64_t hash() const;

  /// tau=5, input_dim=12, cond_dim=4, gru_units=3 with narrow CNN and head.
  static ModelConfig tiny();
};

/// Named tensors in creation order. Batch-norm running statistics are state,
/// not trainable parameters, but are counted and checkpointed.
class ModelParams {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool trainable = true;
  };

  void add(std::string name, Tensor value, bool trainable = true);
  bool contains(std::string_view name) const;
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t parameter_count() const;
  bool all_finite() const;

 private:
  std::vector<Entry> entries_;
};

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);
/// Every tensor set to zero (batch-norm variance and gamma to one).
ModelParams zero_params(const ModelConfig& cfg);

/// Tape handles of the parameters used in one forward pass.
class ParamVars {
 public:
  /// With requires_grad false the parameters enter the tape as constants.
  ParamVars(ad::Tape& tape, const ModelParams& params, bool requires_grad = true);
  const Var& operator[](std::string_view name) const;
  bool contains(std::string_view name) const;
  const std::map<std::string, Var, std::less<>>& all() const { return vars_; }

 private:
  std::map<std::string, Var, std::less<>> vars_;
};

struct BatchNormUpdate {
  std::string prefix;  // e.g. "static.bn_seq"
  Tensor mean;
  Tensor var;
};

struct BatchTrace {
  Var c1, c0, c, d;          // B x cond_dim (c0 gathered per sample), d is B x 1
  Var G;                     // (tau * B) x H, time-major
  Var time_weights;          // B x tau
  Var context;               // B x H
  Var u;                     // B x H
  Var logits;                // B x n_cases
  Var probs;                 // B x n_cases
  std::vector<Var> states;   // every hidden state of every layer, B x H each
  std::vector<BatchNormUpdate> bn_updates;
};

struct GruStackOutput {
  Var outputs;              // (tau * B) x H from the last layer
  Var last_output;          // B x H
  std::vector<Var> states;  // all layers, all steps
};

struct SpatialTrace {
  Var conv1;  // N x (input_dim - k + 1) x conv1_filters
  Var conv2;  // N x (input_dim - 2(k - 1)) x conv2_filters
  Var flat;   // N x flatten_dim
  Var out;    // N x cond_dim
};
SpatialTrace spatial_domain_trace(const Var& x, const ParamVars& p, const ModelConfig& cfg, bool train, ad::Rng& rng);

/// CNN spatial-domain feature over rows of x (N x input_dim) -> N x cond_dim.
Var spatial_domain_feature(const Var& x, const ParamVars& p, const ModelConfig& cfg, bool train, ad::Rng& rng);

/// c = c1 - c0 (c0 may be a single row broadcast over the batch).
Var condition(const Var& c1, const Var& c0);

/// One conditional GRU layer. seq is (tau * B) x D, cond is B x C or invalid.
/// Returns all outputs g (tau * B x H) and appends every hidden state.
Var conditional_gru_layer(const Var& seq, const Var* cond, const ParamVars& p, const std::string& prefix, int tau,
                          int batch, int units, std::vector<Var>* states);

/// Two stacked layers; the condition only enters the first.
GruStackOutput conditional_gru_forward(const Var& seq, const Var* cond, const ParamVars& p, const std::string& prefix,
                                       int tau, int batch, int units);

struct TimeSelection {
  Var context;  // B x H
  Var weights;  // B x tau
};
TimeSelection time_selection(const Var& G, const ParamVars& p, int tau, int batch);

struct HeadOutput {
  Var logits;
  Var probs;
};
HeadOutput feature_mapping(const Var& features, const ParamVars& p);

/// mean_n [ 1(y=0) nu^2 + 1(y!=0) max(y * margin - nu, 0)^2 ], nu = |c1 - c0|_2.
Var conditional_loss(const Var& c1, const Var& c0, std::span<const int> labels, double margin);
/// Mean over rows of -log(max(p_y, 1e-12)).
Var cross_entropy(const Var& probs, std::span<const int> labels);
/// cross-entropy + lambda * l_cond; l_cond may be invalid when lambda is 0.
Var total_loss(const Var& probs, std::span<const int> labels, const Var* l_cond, double lambda);

/// Full batched forward pass. With train set, dropout is active and batch
/// statistics normalize the GRU inputs (reported in bn_updates).
BatchTrace forward_batch(const ParamVars& p, const ModelParams& params, const ModelConfig& cfg,
                         const das::BatchInput& in, bool train, ad::Rng& rng);
/// As above with dropout (train) and batch statistics chosen separately.
BatchTrace forward_batch(const ParamVars& p, const ModelParams& params, const ModelConfig& cfg,
                         const das::BatchInput& in, bool train, ad::Rng& rng, bool batch_stats);

/// Loss of a forward trace against in.labels.
Var batch_loss(const BatchTrace& trace, const das::BatchInput& in, const ModelConfig& cfg);

/// Folds batch statistics into the running averages.
void apply_bn_updates(ModelParams& params, const std::vector<BatchNormUpdate>& updates, double momentum);

/// Per-sample values of every intermediate.
struct ForwardTrace {
  std::vector<double> c1, c0, c, d;
  Tensor G;  // tau x H
  std::vector<double> time_weights;
  std::vector<double> context;
  std::vector<double> u;
  std::vector<double> logits;
  std::vector<double> probs;
};

ForwardTrace forward(const das::DasSample& sample, const das::ReferenceSpatial& b, const ModelParams& params,
                     const ModelConfig& cfg, bool train, std::uint64_t seed = 0);

/// Inference-mode class probabilities for each input row, one vector per sample.
std::vector<std::vector<double>> predict_probs(const ModelParams& params, const ModelConfig& cfg,
                                               const das::BatchInput& in);

}  // namespace tcdfern::model
