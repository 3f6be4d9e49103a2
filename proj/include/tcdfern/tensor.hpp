// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode automatic differentiation.
//
// A Tape records every operation applied to Vars in creation order, which is
// a valid topological order, so backward() is a single reverse sweep. Values
// are 64-bit and row-major. Sequences fed to recurrent layers are time-major
// (row t * B + i is step t of sample i).
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <new>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tcdfern/random.hpp"

namespace tcdfern::ad {

using Shape = std::vector<int>;
using Rng = tcdfern::Rng;

std::string shape_str(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Every buffer starts on a 64-byte boundary. Eigen peels unaligned heads off
/// vectorized loops, so with malloc's alignment the summation order, and hence
/// the last bit of results, would depend on where a buffer happened to land.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

/// Dense n-dimensional array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::initializer_list<double> data);
  Tensor(Shape shape, const std::vector<double>& data);
  Tensor(Shape shape, Storage data);

  static Tensor scalar(double v) { return Tensor(Shape{1}, {v}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Leading extent of a matrix view: product of all dims but the last.
  int rows() const;
  /// Last dim.
  int cols() const { return shape_.empty() ? 0 : shape_.back(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  Storage& values() { return data_; }
  const Storage& values() const { return data_; }
  std::vector<double> to_vector() const { return {data_.begin(), data_.end()}; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols() + c]; }

  double item() const;
  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  Shape shape_;
  Storage data_;
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  /// Gradient after Tape::backward(); zeros when the loss does not depend on it.
  const Tensor& grad() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  /// Leaf that reads `value` in place; the tensor must outlive the tape.
  Var parameter(const Tensor& value, bool requires_grad = true);

  /// Records a node. `backward` runs only when the node and at least one
  /// parent require gradients.
  Var record(Tensor value, std::initializer_list<Var> parents, Backward backward);
  Var record(Tensor value, std::span<const Var> parents, Backward backward);

  /// Populates gradients of every requires-grad node from a scalar loss.
  /// Throws if called a second time before reset().
  void backward(const Var& loss);
  void reset();

  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

  const Tensor& value(int id) const;
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  const Tensor& grad(int id);
  /// Gradient buffer of a node, zero-initialized on first access.
  Tensor& grad_accum(int id);

 private:
  struct Node {
    Tensor value;
    const Tensor* borrowed = nullptr;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// ---- Operations ----------------------------------------------------------
// Every op validates shapes and throws StructuralError naming itself and the
// offending shapes.

/// Elementwise a + b. b may also be a single row (1 x C) broadcast over a's rows.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// alpha * a + beta
Var affine(const Var& a, double alpha, double beta);
Var scale(const Var& a, double alpha);

/// x + bias, bias of size cols(x) broadcast over every leading index.
Var add_bias(const Var& x, const Var& bias);
/// (N x K) . (K x M)
Var matmul(const Var& a, const Var& b);
/// input (B, L, Cin) or (L, Cin); kernels (k, Cin, Cout); stride 1, no padding.
Var conv1d(const Var& input, const Var& kernels);

Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var square(const Var& a);
/// log(max(a, floor)); gradient is zero where the floor is active.
Var log_clamped(const Var& a, double floor = 1e-12);

/// Softmax over `axis` of a 1-D or 2-D tensor, max-subtracted.
Var softmax(const Var& a, int axis);
Var concat(std::span<const Var> parts, int axis);
Var concat(std::initializer_list<Var> parts, int axis);
/// Mean over one axis of a 2-D tensor; the reduced axis is kept with extent 1.
Var mean(const Var& a, int axis);
Var sum_axis(const Var& a, int axis);
Var sum(const Var& a);
Var mean_all(const Var& a);

/// Inverted dropout: kept entries are divided by (1 - rate). Identity when
/// train is false or rate is 0. Draws one uniform per element, row-major.
Var dropout(const Var& a, double rate, bool train, Rng& rng);

Var reshape(const Var& a, Shape shape);
Var transpose(const Var& a);
Var slice_rows(const Var& a, int begin, int end);
Var slice_cols(const Var& a, int begin, int end);
Var gather_rows(const Var& a, std::span<const int> rows);

/// Per-sample weighted sum over time: seq is (T * B) x H time-major, weights is
/// B x T; output B x H with out[i] = sum_t weights[i, t] * seq[t * B + i].
Var time_weighted_sum(const Var& seq, const Var& weights);

struct BatchNormOutput {
  Var out;
  Tensor batch_mean;  // empty unless batch statistics were used
  Tensor batch_var;
};

/// Feature-wise normalization of an N x C input. With use_batch_stats the
/// biased batch mean/variance are used and differentiated through; otherwise
/// the running statistics are constants.
BatchNormOutput batch_norm(const Var& x, const Var& gamma, const Var& beta, const Tensor& running_mean,
                           const Tensor& running_var, bool use_batch_stats, double eps = 1e-3);

// ---- Verification --------------------------------------------------------

/// Central-difference check of tape gradients. Returns the worst
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8) over all entries.
double grad_check(const std::function<Var(Tape&, const Var&)>& f, const Tensor& theta, double eps = 1e-5);

}  // namespace tcdfern::ad
