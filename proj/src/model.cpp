// SPDX-License-Identifier: Apache-2.0
#include "tcdfern/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "tcdfern/errors.hpp"

namespace tcdfern::model {

namespace {

double symmetric(ad::Rng& rng, double limit) { return (2.0 * uniform01(rng) - 1.0) * limit; }

Tensor uniform_tensor(ad::Shape shape, double limit, ad::Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = symmetric(rng, limit);
  return t;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string stack_name(const ModelConfig& cfg, bool moving) {
  if (!cfg.dual()) return "seq";
  return moving ? "moving" : "static";
}

void add_gru_layer(ModelParams& p, ad::Rng& rng, const std::string& prefix, int in_dim, int cond_dim, int H) {
  const double in_limit = std::sqrt(3.0 / (in_dim + cond_dim));
  const double rec_limit = 1.0 / std::sqrt(static_cast<double>(H));
  p.add(prefix + ".w_input", uniform_tensor({in_dim, 3 * H}, in_limit, rng));
  if (cond_dim > 0) p.add(prefix + ".w_cond", uniform_tensor({cond_dim, 3 * H}, in_limit, rng));
  p.add(prefix + ".u_gates", uniform_tensor({H, 2 * H}, rec_limit, rng));
  p.add(prefix + ".u_candidate", uniform_tensor({H, H}, rec_limit, rng));
  p.add(prefix + ".bias", Tensor({3 * H}));
  p.add(prefix + ".w_output", uniform_tensor({H, H}, std::sqrt(3.0 / H), rng));
  p.add(prefix + ".b_output", Tensor({H}));
}

void add_batch_norm(ModelParams& p, const std::string& prefix, int width) {
  p.add(prefix + ".gamma", Tensor({width}, 1.0));
  p.add(prefix + ".beta", Tensor({width}, 0.0));
  p.add(prefix + ".mean", Tensor({width}, 0.0), false);
  p.add(prefix + ".var", Tensor({width}, 1.0), false);
}

void add_dense(ModelParams& p, ad::Rng& rng, const std::string& prefix, int in, int out) {
  p.add(prefix + ".weight", uniform_tensor({in, out}, std::sqrt(3.0 / in), rng));
  p.add(prefix + ".bias", Tensor({out}));
}

Var dense(const Var& x, const ParamVars& p, const std::string& prefix) {
  return ad::add_bias(ad::matmul(x, p[prefix + ".weight"]), p[prefix + ".bias"]);
}

Var normalize(const Var& x, const ParamVars& p, const ModelParams& params, const std::string& prefix, bool train,
              const ModelConfig& cfg, std::vector<BatchNormUpdate>& updates) {
  auto out = ad::batch_norm(x, p[prefix + ".gamma"], p[prefix + ".beta"], params.at(prefix + ".mean"),
                            params.at(prefix + ".var"), train, cfg.bn_eps);
  if (train) updates.push_back({prefix, std::move(out.batch_mean), std::move(out.batch_var)});
  return out.out;
}

}  // namespace

// ---- Config ------------------------------------------------------------------

Variant parse_variant(std::string_view name) {
  for (Variant v : all_variants()) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown model variant '" + std::string(name) + "' (expected FERN, D-FERN, T-FERN, C-FERN or TCD-FERN)");
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::Fern: return "FERN";
    case Variant::DFern: return "D-FERN";
    case Variant::TFern: return "T-FERN";
    case Variant::CFern: return "C-FERN";
    case Variant::TcdFern: return "TCD-FERN";
  }
  return "?";
}

std::vector<Variant> all_variants() {
  return {Variant::Fern, Variant::DFern, Variant::TFern, Variant::CFern, Variant::TcdFern};
}

void ModelConfig::validate() const {
  const auto bad = [](const std::string& what) { throw ConfigError("model config: " + what); };
  if (tau < 1 || input_dim < 1 || cond_dim < 1 || gru_units < 1 || conv1_filters < 1 || conv2_filters < 1 ||
      kernel < 1 || attn_hidden < 1 || head_hidden < 1 || n_cases < 2) {
    bad("dimensions must be positive");
  }
  if (conv2_length() <= 0) bad("input_dim too short for two convolutions of this kernel");
  if (!(dropout >= 0.0 && dropout < 1.0)) bad("dropout must lie in [0, 1)");
  if (!(margin > 0.0)) bad("margin must be > 0");
  if (!(lambda >= 0.0)) bad("lambda must be >= 0");
  if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) bad("bn_momentum must lie in [0, 1)");
  if (!(bn_eps > 0.0)) bad("bn_eps must be > 0");
}

std::string ModelConfig::canonical() const {
  std::ostringstream os;
  os.precision(17);
  os << "tau=" << tau << ";input_dim=" << input_dim << ";cond_dim=" << cond_dim << ";gru_units=" << gru_units
     << ";conv1_filters=" << conv1_filters << ";conv2_filters=" << conv2_filters << ";kernel=" << kernel
     << ";dropout=" << dropout << ";margin=" << margin << ";lambda=" << lambda << ";attn_hidden=" << attn_hidden
     << ";head_hidden=" << head_hidden << ";n_cases=" << n_cases << ";bn_momentum=" << bn_momentum
     << ";bn_eps=" << bn_eps << ";variant=" << variant_name(variant);
  return os.str();
}

std::uint64_t ModelConfig::hash() const { return fnv1a(canonical()); }

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.tau = 5;
  c.input_dim = 12;
  c.cond_dim = 4;
  c.gru_units = 3;
  c.conv1_filters = 4;
  c.conv2_filters = 3;
  c.head_hidden = 5;
  return c;
}

// ---- Params ------------------------------------------------------------------

void ModelParams::add(std::string name, Tensor value, bool trainable) {
  if (contains(name)) throw StructuralError("params: duplicate tensor " + name);
  entries_.push_back({std::move(name), std::move(value), trainable});
}

bool ModelParams::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

Tensor& ModelParams::at(std::string_view name) {
  for (auto& e : entries_) {
    if (e.name == name) return e.value;
  }
  throw StructuralError("params: no tensor named " + std::string(name));
}

const Tensor& ModelParams::at(std::string_view name) const { return const_cast<ModelParams*>(this)->at(name); }

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

bool ModelParams::all_finite() const {
  return std::all_of(entries_.begin(), entries_.end(), [](const Entry& e) { return e.value.all_finite(); });
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ad::Rng rng(seed);
  ModelParams p;
  const int H = cfg.gru_units;

  if (cfg.conditioned()) {
    p.add("cnn.conv1.kernel", uniform_tensor({cfg.kernel, 1, cfg.conv1_filters}, std::sqrt(3.0 / cfg.kernel), rng));
    p.add("cnn.conv1.bias", Tensor({cfg.conv1_filters}));
    p.add("cnn.conv2.kernel", uniform_tensor({cfg.kernel, cfg.conv1_filters, cfg.conv2_filters},
                                             std::sqrt(3.0 / (cfg.kernel * cfg.conv1_filters)), rng));
    p.add("cnn.conv2.bias", Tensor({cfg.conv2_filters}));
    add_dense(p, rng, "cnn.dense", cfg.flatten_dim(), cfg.cond_dim);
    if (cfg.dual()) add_dense(p, rng, "cond.moving", cfg.cond_dim, 1);
  }

  const int cond_static = cfg.conditioned() ? cfg.cond_dim : 0;
  if (cfg.dual()) {
    add_batch_norm(p, "static.bn_seq", cfg.input_dim);
    if (cond_static) add_batch_norm(p, "static.bn_cond", cond_static);
    add_gru_layer(p, rng, "static.gru1", cfg.input_dim, cond_static, H);
    add_gru_layer(p, rng, "static.gru2", H, 0, H);
    const int cond_moving = cfg.conditioned() ? 1 : 0;
    add_batch_norm(p, "moving.bn_seq", 1);
    if (cond_moving) add_batch_norm(p, "moving.bn_cond", cond_moving);
    add_gru_layer(p, rng, "moving.gru1", 1, cond_moving, H);
    add_gru_layer(p, rng, "moving.gru2", H, 0, H);
  } else {
    add_batch_norm(p, "seq.bn_seq", cfg.input_dim + 1);
    if (cond_static) add_batch_norm(p, "seq.bn_cond", cond_static);
    add_gru_layer(p, rng, "seq.gru1", cfg.input_dim + 1, cond_static, H);
    add_gru_layer(p, rng, "seq.gru2", H, 0, H);
  }

  if (cfg.attention()) {
    add_dense(p, rng, "attn.dense1", H, cfg.attn_hidden);
    add_dense(p, rng, "attn.dense2", cfg.attn_hidden, 1);
  }
  add_dense(p, rng, "head.dense1", cfg.head_input(), cfg.head_hidden);
  add_dense(p, rng, "head.dense2", cfg.head_hidden, cfg.n_cases);
  return p;
}

ModelParams zero_params(const ModelConfig& cfg) {
  ModelParams p = init_params(cfg, 0);
  for (auto& e : p.entries()) {
    const bool ones = e.name.ends_with(".var") || e.name.ends_with(".gamma");
    e.value.fill(ones ? 1.0 : 0.0);
  }
  return p;
}

ParamVars::ParamVars(ad::Tape& tape, const ModelParams& params, bool requires_grad) {
  for (const auto& e : params.entries()) {
    if (e.trainable) vars_.emplace(e.name, tape.parameter(e.value, requires_grad));
  }
}

const Var& ParamVars::operator[](std::string_view name) const {
  const auto it = vars_.find(name);
  if (it == vars_.end()) throw StructuralError("params: no trainable tensor named " + std::string(name));
  return it->second;
}

bool ParamVars::contains(std::string_view name) const { return vars_.find(name) != vars_.end(); }

// ---- Building blocks ------------------------------------------------------------

SpatialTrace spatial_domain_trace(const Var& x, const ParamVars& p, const ModelConfig& cfg, bool train, ad::Rng& rng) {
  const auto& shape = x.shape();
  if (shape.size() != 2 || shape[1] != cfg.input_dim) {
    throw StructuralError("spatial_domain_feature: expected N x " + std::to_string(cfg.input_dim) + " input, got " +
                          ad::shape_str(shape));
  }
  const int N = shape[0];
  SpatialTrace tr;
  const Var h = ad::reshape(x, {N, cfg.input_dim, 1});
  tr.conv1 = ad::tanh(ad::add_bias(ad::conv1d(h, p["cnn.conv1.kernel"]), p["cnn.conv1.bias"]));
  const Var h1 = ad::dropout(tr.conv1, cfg.dropout, train, rng);
  tr.conv2 = ad::tanh(ad::add_bias(ad::conv1d(h1, p["cnn.conv2.kernel"]), p["cnn.conv2.bias"]));
  const Var h2 = ad::dropout(tr.conv2, cfg.dropout, train, rng);
  tr.flat = ad::reshape(h2, {N, cfg.flatten_dim()});
  tr.out = dense(tr.flat, p, "cnn.dense");
  return tr;
}

Var spatial_domain_feature(const Var& x, const ParamVars& p, const ModelConfig& cfg, bool train, ad::Rng& rng) {
  return spatial_domain_trace(x, p, cfg, train, rng).out;
}

Var condition(const Var& c1, const Var& c0) { return ad::sub(c1, c0); }

Var conditional_gru_layer(const Var& seq, const Var* cond, const ParamVars& p, const std::string& prefix, int tau,
                          int batch, int units, std::vector<Var>* states) {
  const int H = units;
  if (seq.shape().size() != 2 || seq.shape()[0] != tau * batch) {
    throw StructuralError("conditional_gru_layer " + prefix + ": sequence " + ad::shape_str(seq.shape()) +
                          " is not (tau * B) x D with tau=" + std::to_string(tau) + ", B=" + std::to_string(batch));
  }
  ad::Tape& tape = *seq.tape();
  // Input projections for every step at once; the condition is the same at
  // every step, so projecting it once equals concatenating it tau times.
  const Var pre_x = ad::add_bias(ad::matmul(seq, p[prefix + ".w_input"]), p[prefix + ".bias"]);
  Var pre_c;
  if (cond) {
    if (!p.contains(prefix + ".w_cond")) throw StructuralError("conditional_gru_layer " + prefix + ": no condition weights");
    pre_c = ad::matmul(*cond, p[prefix + ".w_cond"]);
  }
  const Var& u_gates = p[prefix + ".u_gates"];
  const Var& u_cand = p[prefix + ".u_candidate"];

  Var h = tape.constant(Tensor({batch, H}, 0.0));
  std::vector<Var> hs;
  hs.reserve(static_cast<std::size_t>(tau));
  for (int t = 0; t < tau; ++t) {
    Var xt = ad::slice_rows(pre_x, t * batch, (t + 1) * batch);
    if (cond) xt = ad::add(xt, pre_c);
    const Var rz = ad::sigmoid(ad::add(ad::slice_cols(xt, 0, 2 * H), ad::matmul(h, u_gates)));
    const Var reset = ad::slice_cols(rz, 0, H);
    const Var update = ad::slice_cols(rz, H, 2 * H);
    const Var cand = ad::tanh(ad::add(ad::slice_cols(xt, 2 * H, 3 * H), ad::matmul(ad::mul(reset, h), u_cand)));
    h = ad::add(h, ad::mul(update, ad::sub(cand, h)));
    hs.push_back(h);
    if (states) states->push_back(h);
  }
  const Var all_states = ad::concat(std::span<const Var>(hs), 0);
  return ad::sigmoid(ad::add_bias(ad::matmul(all_states, p[prefix + ".w_output"]), p[prefix + ".b_output"]));
}

GruStackOutput conditional_gru_forward(const Var& seq, const Var* cond, const ParamVars& p, const std::string& prefix,
                                       int tau, int batch, int units) {
  GruStackOutput out;
  const Var g1 = conditional_gru_layer(seq, cond, p, prefix + ".gru1", tau, batch, units, &out.states);
  out.outputs = conditional_gru_layer(g1, nullptr, p, prefix + ".gru2", tau, batch, units, &out.states);
  out.last_output = ad::slice_rows(out.outputs, (tau - 1) * batch, tau * batch);
  return out;
}

TimeSelection time_selection(const Var& G, const ParamVars& p, int tau, int batch) {
  const Var hidden = dense(G, p, "attn.dense1");
  const Var score = ad::sigmoid(dense(hidden, p, "attn.dense2"));  // (tau * B) x 1
  const Var raw = ad::transpose(ad::reshape(score, {tau, batch}));  // B x tau
  TimeSelection ts;
  ts.weights = ad::softmax(raw, 1);
  ts.context = ad::time_weighted_sum(G, ts.weights);
  return ts;
}

HeadOutput feature_mapping(const Var& features, const ParamVars& p) {
  HeadOutput out;
  const Var hidden = ad::tanh(dense(features, p, "head.dense1"));
  out.logits = dense(hidden, p, "head.dense2");
  out.probs = ad::softmax(out.logits, 1);
  return out;
}

// ---- Losses ----------------------------------------------------------------------

Var conditional_loss(const Var& c1, const Var& c0, std::span<const int> labels, double margin) {
  const Tensor& a = c1.value();
  const Tensor& b = c0.value();
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1) || (b.dim(0) != a.dim(0) && b.dim(0) != 1)) {
    throw StructuralError("conditional_loss: shapes " + ad::shape_str(a.shape()) + " and " + ad::shape_str(b.shape()));
  }
  const int N = a.dim(0), D = a.dim(1);
  if (N == 0) throw StructuralError("conditional_loss: empty batch");
  if (static_cast<int>(labels.size()) != N) throw StructuralError("conditional_loss: label count != batch size");
  const bool bcast = b.dim(0) == 1 && N != 1;

  std::vector<double> nu(static_cast<std::size_t>(N));
  std::vector<int> y(labels.begin(), labels.end());
  double total = 0.0;
  for (int n = 0; n < N; ++n) {
    if (y[static_cast<std::size_t>(n)] < 0) throw StructuralError("conditional_loss: unlabelled sample");
    double sq = 0.0;
    for (int j = 0; j < D; ++j) {
      const double diff = a.at(n, j) - b.at(bcast ? 0 : n, j);
      sq += diff * diff;
    }
    const double v = std::sqrt(sq);
    nu[static_cast<std::size_t>(n)] = v;
    const int yn = y[static_cast<std::size_t>(n)];
    total += yn == 0 ? sq : std::pow(std::max(yn * margin - v, 0.0), 2);
  }
  ad::Tape& tape = *c1.tape();
  const int i1 = c1.id(), i0 = c0.id();
  return tape.record(Tensor::scalar(total / N), {c1, c0},
                     [i1, i0, N, D, bcast, margin, nu = std::move(nu), y = std::move(y)](ad::Tape& t, int self) {
    const double g = t.grad(self)[0] / N;
    const Tensor& a = t.value(i1);
    const Tensor& b = t.value(i0);
    Tensor* g1 = t.requires_grad(i1) ? &t.grad_accum(i1) : nullptr;
    Tensor* g0 = t.requires_grad(i0) ? &t.grad_accum(i0) : nullptr;
    for (int n = 0; n < N; ++n) {
      const int yn = y[static_cast<std::size_t>(n)];
      const double v = nu[static_cast<std::size_t>(n)];
      double coef;  // d(term)/d(diff) = coef * diff
      if (yn == 0) {
        coef = 2.0;
      } else if (v > 0.0 && v < yn * margin) {
        coef = -2.0 * (yn * margin - v) / v;
      } else {
        continue;
      }
      for (int j = 0; j < D; ++j) {
        const int r0 = bcast ? 0 : n;
        const double d = g * coef * (a.at(n, j) - b.at(r0, j));
        if (g1) g1->at(n, j) += d;
        if (g0) g0->at(r0, j) -= d;
      }
    }
  });
}

Var cross_entropy(const Var& probs, std::span<const int> labels) {
  const Tensor& p = probs.value();
  if (p.rank() != 2 || static_cast<int>(labels.size()) != p.dim(0)) {
    throw StructuralError("cross_entropy: probs " + ad::shape_str(p.shape()) + " vs " + std::to_string(labels.size()) +
                          " labels");
  }
  Tensor onehot(p.shape());
  for (int n = 0; n < p.dim(0); ++n) {
    const int y = labels[static_cast<std::size_t>(n)];
    if (y < 0 || y >= p.dim(1)) throw StructuralError("cross_entropy: label " + std::to_string(y) + " out of range");
    onehot.at(n, y) = 1.0;
  }
  // New nodes may reallocate the tape, so `p` is not used past this point.
  const int rows = p.dim(0);
  ad::Tape& tape = *probs.tape();
  const Var picked = ad::mul(ad::log_clamped(probs, 1e-12), tape.constant(std::move(onehot)));
  return ad::scale(ad::sum(picked), -1.0 / rows);
}

Var total_loss(const Var& probs, std::span<const int> labels, const Var* l_cond, double lambda) {
  Var loss = cross_entropy(probs, labels);
  if (l_cond && lambda != 0.0) loss = ad::add(loss, ad::scale(*l_cond, lambda));
  return loss;
}

// ---- Full network ------------------------------------------------------------------

BatchTrace forward_batch(const ParamVars& p, const ModelParams& params, const ModelConfig& cfg,
                         const das::BatchInput& in, bool train, ad::Rng& rng) {
  return forward_batch(p, params, cfg, in, train, rng, train);
}

BatchTrace forward_batch(const ParamVars& p, const ModelParams& params, const ModelConfig& cfg,
                         const das::BatchInput& in, bool train, ad::Rng& rng, bool batch_stats) {
  if (in.tau != cfg.tau || in.dim != cfg.input_dim) {
    throw StructuralError("forward: batch has tau=" + std::to_string(in.tau) + ", dim=" + std::to_string(in.dim) +
                          " but model expects tau=" + std::to_string(cfg.tau) + ", dim=" + std::to_string(cfg.input_dim));
  }
  const int B = in.batch, T = cfg.tau, D = cfg.input_dim;
  ad::Tape& tape = *p.all().begin()->second.tape();
  BatchTrace tr;

  const Var S = tape.constant(Tensor({T * B, D}, in.spatial));
  const Var M = tape.constant(Tensor({T * B, 1}, in.moving));

  if (cfg.conditioned()) {
    // Dropout draw order: s_n pass (conv1, conv2) then reference pass.
    const Var last = tape.constant(Tensor({B, D}, in.last_spatial));
    const Var refs = tape.constant(Tensor({in.reference_count(), D}, in.references));
    tr.c1 = spatial_domain_feature(last, p, cfg, train, rng);
    tr.c0 = ad::gather_rows(spatial_domain_feature(refs, p, cfg, train, rng), in.reference_index);
    tr.c = condition(tr.c1, tr.c0);
    if (cfg.dual()) tr.d = dense(tr.c, p, "cond.moving");
  }

  auto run_stack = [&](const std::string& name, const Var& seq, const Var* cond) {
    const Var seq_n = normalize(seq, p, params, name + ".bn_seq", batch_stats, cfg, tr.bn_updates);
    Var cond_n;
    if (cond) cond_n = normalize(*cond, p, params, name + ".bn_cond", batch_stats, cfg, tr.bn_updates);
    auto out = conditional_gru_forward(seq_n, cond ? &cond_n : nullptr, p, name, T, B, cfg.gru_units);
    tr.states.insert(tr.states.end(), out.states.begin(), out.states.end());
    return out;
  };

  Var features;
  if (cfg.dual()) {
    const auto st = run_stack(stack_name(cfg, false), S, cfg.conditioned() ? &tr.c : nullptr);
    const auto mv = run_stack(stack_name(cfg, true), M, cfg.conditioned() ? &tr.d : nullptr);
    tr.G = st.outputs;
    tr.u = mv.last_output;
    Var spatial_part = st.last_output;
    if (cfg.attention()) {
      const auto ts = time_selection(tr.G, p, T, B);
      tr.time_weights = ts.weights;
      tr.context = ts.context;
      spatial_part = ts.context;
    }
    features = ad::concat({spatial_part, tr.u}, 1);
  } else {
    const Var joint = ad::concat({S, M}, 1);
    const auto st = run_stack("seq", joint, cfg.conditioned() ? &tr.c : nullptr);
    tr.G = st.outputs;
    features = st.last_output;
    if (cfg.attention()) {
      const auto ts = time_selection(tr.G, p, T, B);
      tr.time_weights = ts.weights;
      tr.context = ts.context;
      features = ts.context;
    }
  }
  const auto head = feature_mapping(features, p);
  tr.logits = head.logits;
  tr.probs = head.probs;
  return tr;
}

Var batch_loss(const BatchTrace& trace, const das::BatchInput& in, const ModelConfig& cfg) {
  const double lambda = cfg.effective_lambda();
  if (lambda != 0.0) {
    const Var lc = conditional_loss(trace.c1, trace.c0, in.labels, cfg.margin);
    return total_loss(trace.probs, in.labels, &lc, lambda);
  }
  return total_loss(trace.probs, in.labels, nullptr, 0.0);
}

void apply_bn_updates(ModelParams& params, const std::vector<BatchNormUpdate>& updates, double momentum) {
  for (const auto& u : updates) {
    Tensor& mean = params.at(u.prefix + ".mean");
    Tensor& var = params.at(u.prefix + ".var");
    for (std::size_t i = 0; i < mean.size(); ++i) {
      mean[i] = momentum * mean[i] + (1.0 - momentum) * u.mean[i];
      var[i] = momentum * var[i] + (1.0 - momentum) * u.var[i];
    }
  }
}

ForwardTrace forward(const das::DasSample& sample, const das::ReferenceSpatial& b, const ModelParams& params,
                     const ModelConfig& cfg, bool train, std::uint64_t seed) {
  const das::BatchInput in = das::assemble_batch(std::span<const das::DasSample>(&sample, 1), b);
  ad::Tape tape;
  ParamVars p(tape, params, false);
  ad::Rng rng(seed);
  // One sample has no meaningful batch statistics, so normalization uses the
  // running averages; dropout still follows `train`.
  const BatchTrace tr = forward_batch(p, params, cfg, in, train, rng, false);
  auto vec = [](const Var& v) { return v.valid() ? v.value().to_vector() : std::vector<double>{}; };
  ForwardTrace out;
  out.c1 = vec(tr.c1);
  out.c0 = vec(tr.c0);
  out.c = vec(tr.c);
  out.d = vec(tr.d);
  out.G = tr.G.value();
  out.time_weights = vec(tr.time_weights);
  out.context = vec(tr.context);
  out.u = vec(tr.u);
  out.logits = vec(tr.logits);
  out.probs = vec(tr.probs);
  return out;
}

std::vector<std::vector<double>> predict_probs(const ModelParams& params, const ModelConfig& cfg,
                                               const das::BatchInput& in) {
  ad::Tape tape;
  ParamVars p(tape, params, false);
  ad::Rng rng(0);
  const BatchTrace tr = forward_batch(p, params, cfg, in, false, rng);
  const Tensor& probs = tr.probs.value();
  std::vector<std::vector<double>> out(static_cast<std::size_t>(in.batch));
  for (int i = 0; i < in.batch; ++i) {
    out[static_cast<std::size_t>(i)].assign(probs.data() + static_cast<std::size_t>(i) * cfg.n_cases,
                                            probs.data() + static_cast<std::size_t>(i + 1) * cfg.n_cases);
  }
  return out;
}

}  // namespace tcdfern::model
