// SPDX-License-Identifier: Apache-2.0
#include "tcdfern/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "tcdfern/errors.hpp"

namespace tcdfern::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using ConstStrided = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using MutStrided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

[[noreturn]] void fail(const std::string& op, const std::string& what) { throw StructuralError(op + ": " + what); }

Tape& tape_of(const Var& a, const char* op) {
  if (!a.valid()) fail(op, "operand is not bound to a tape");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b, const char* op) {
  Tape& t = tape_of(a, op);
  if (b.tape() != &t) fail(op, "operands live on different tapes");
  return t;
}

ConstMap as_matrix(const Tensor& t) { return ConstMap(t.data(), t.rows(), t.cols()); }
MutMap as_matrix(Tensor& t) { return MutMap(t.data(), t.rows(), t.cols()); }

bool is_row_broadcast(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return false;
  if (b.size() != static_cast<std::size_t>(a.cols())) return false;
  return b.rank() == 1 || (b.rank() == 2 && b.dim(0) == 1);
}

template <class Fwd, class Deriv>
Var unary(const Var& a, const char* /*op*/, Fwd fwd, Deriv deriv) {
  Tape& tape = *a.tape();
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  const int ia = a.id();
  return tape.record(std::move(y), {a}, [ia, deriv](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad_accum(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
  });
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw StructuralError("tensor: negative dimension in " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_)) {
    throw StructuralError("tensor: " + std::to_string(data_.size()) + " values for shape " + shape_str(shape_));
  }
}

Tensor::Tensor(Shape shape, std::initializer_list<double> data) : Tensor(std::move(shape), Storage(data)) {}

Tensor::Tensor(Shape shape, const std::vector<double>& data)
    : Tensor(std::move(shape), Storage(data.begin(), data.end())) {}

int Tensor::rows() const {
  if (shape_.empty()) return 0;
  int r = 1;
  for (std::size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
  return r;
}

double Tensor::item() const {
  if (data_.size() != 1) throw StructuralError("tensor: item() on shape " + shape_str(shape_));
  return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// ---- Var / Tape -------------------------------------------------------------

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), nullptr, {}, false, {}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), nullptr, {}, true, {}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::parameter(const Tensor& value, bool requires_grad) {
  nodes_.push_back(Node{{}, &value, {}, requires_grad, {}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, Backward backward) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> parents, Backward backward) {
  bool needs = false;
  for (const auto& p : parents) {
    if (p.tape() != this) throw StructuralError("tape: parent recorded on a different tape");
    needs = needs || requires_grad(p.id());
  }
  nodes_.push_back(Node{std::move(value), nullptr, {}, needs, needs ? std::move(backward) : Backward{}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Tensor& Tape::value(int id) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(id));
  return n.borrowed ? *n.borrowed : n.value;
}

Tensor& Tape::grad_accum(int id) {
  Node& n = nodes_.at(static_cast<std::size_t>(id));
  if (n.grad.empty()) n.grad = Tensor(value(id).shape(), 0.0);
  return n.grad;
}

const Tensor& Tape::grad(int id) { return grad_accum(id); }

void Tape::backward(const Var& loss) {
  if (backward_done_) throw Error("tape: backward() already ran on this tape; call reset() first");
  if (loss.tape() != this) throw StructuralError("tape: loss belongs to another tape");
  if (value(loss.id()).size() != 1) {
    throw StructuralError("tape: backward() needs a scalar loss, got " + shape_str(value(loss.id()).shape()));
  }
  backward_done_ = true;
  if (!requires_grad(loss.id())) return;
  grad_accum(loss.id())[0] = 1.0;
  for (int i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.backward && !n.grad.empty()) n.backward(*this, i);
  }
}

void Tape::reset() {
  nodes_.clear();
  backward_done_ = false;
}

// ---- Elementwise --------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  Tape& tape = tape_of(a, b, "add");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const bool bcast = is_row_broadcast(x, y);
  if (!bcast && x.shape() != y.shape()) fail("add", "shapes " + shape_str(x.shape()) + " and " + shape_str(y.shape()));
  Tensor out = x;
  const auto C = static_cast<std::size_t>(x.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bcast ? y[i % C] : y[i];
  const int ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b}, [ia, ib, bcast, C](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad_accum(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_accum(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[bcast ? i % C : i] += g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& tape = tape_of(a, b, "sub");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const bool bcast = is_row_broadcast(x, y);
  if (!bcast && x.shape() != y.shape()) fail("sub", "shapes " + shape_str(x.shape()) + " and " + shape_str(y.shape()));
  Tensor out = x;
  const auto C = static_cast<std::size_t>(x.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bcast ? y[i % C] : y[i];
  const int ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b}, [ia, ib, bcast, C](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad_accum(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_accum(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[bcast ? i % C : i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& tape = tape_of(a, b, "mul");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape() != y.shape()) fail("mul", "shapes " + shape_str(x.shape()) + " and " + shape_str(y.shape()));
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  const int ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b}, [ia, ib](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      const Tensor& y = t.value(ib);
      Tensor& ga = t.grad_accum(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    }
    if (t.requires_grad(ib)) {
      const Tensor& x = t.value(ia);
      Tensor& gb = t.grad_accum(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    }
  });
}

Var affine(const Var& a, double alpha, double beta) {
  tape_of(a, "affine");
  return unary(a, "affine", [=](double x) { return alpha * x + beta; }, [=](double, double) { return alpha; });
}

Var scale(const Var& a, double alpha) { return affine(a, alpha, 0.0); }

Var sigmoid(const Var& a) {
  tape_of(a, "sigmoid");
  return unary(
      a, "sigmoid",
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  tape_of(a, "tanh");
  return unary(a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var square(const Var& a) {
  tape_of(a, "square");
  return unary(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var log_clamped(const Var& a, double floor) {
  tape_of(a, "log_clamped");
  return unary(
      a, "log_clamped", [floor](double x) { return std::log(std::max(x, floor)); },
      [floor](double x, double) { return x > floor ? 1.0 / x : 0.0; });
}

// ---- Linear algebra --------------------------------------------------------------

Var add_bias(const Var& x, const Var& bias) {
  Tape& tape = tape_of(x, bias, "add_bias");
  const Tensor& v = x.value();
  const Tensor& b = bias.value();
  if (b.size() != static_cast<std::size_t>(v.cols())) {
    fail("add_bias", "bias " + shape_str(b.shape()) + " does not match last dim of " + shape_str(v.shape()));
  }
  Tensor out = v;
  const int R = v.rows(), C = v.cols();
  as_matrix(out).rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data(), C);
  const int ix = x.id(), ib = bias.id();
  return tape.record(std::move(out), {x, bias}, [ix, ib, R, C](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ix)) {
      Tensor& gx = t.grad_accum(ix);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_accum(ib);
      Eigen::Map<Eigen::RowVectorXd>(gb.data(), C) += ConstMap(g.data(), R, C).colwise().sum();
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  Tape& tape = tape_of(a, b, "matmul");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) {
    fail("matmul", "incompatible shapes " + shape_str(x.shape()) + " and " + shape_str(y.shape()));
  }
  Tensor out(Shape{x.dim(0), y.dim(1)});
  as_matrix(out).noalias() = as_matrix(x) * as_matrix(y);
  const int ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b}, [ia, ib](Tape& t, int self) {
    const auto g = as_matrix(t.grad(self));
    if (t.requires_grad(ia)) as_matrix(t.grad_accum(ia)).noalias() += g * as_matrix(t.value(ib)).transpose();
    if (t.requires_grad(ib)) as_matrix(t.grad_accum(ib)).noalias() += as_matrix(t.value(ia)).transpose() * g;
  });
}

Var conv1d(const Var& input, const Var& kernels) {
  Tape& tape = tape_of(input, kernels, "conv1d");
  const Tensor& x = input.value();
  const Tensor& w = kernels.value();
  if ((x.rank() != 2 && x.rank() != 3) || w.rank() != 3) {
    fail("conv1d", "input " + shape_str(x.shape()) + " must be (L, Cin) or (B, L, Cin), kernels (k, Cin, Cout), got " +
                       shape_str(w.shape()));
  }
  const bool batched = x.rank() == 3;
  const int B = batched ? x.dim(0) : 1;
  const int L = x.dim(batched ? 1 : 0);
  const int Cin = x.cols();
  const int K = w.dim(0);
  const int Cout = w.dim(2);
  if (w.dim(1) != Cin) fail("conv1d", "kernel " + shape_str(w.shape()) + " does not match input " + shape_str(x.shape()));
  const int Lo = L - K + 1;
  if (Lo < 1) fail("conv1d", "kernel size " + std::to_string(K) + " exceeds input length " + std::to_string(L));

  Tensor out(batched ? Shape{B, Lo, Cout} : Shape{Lo, Cout});
  for (int b = 0; b < B; ++b) {
    MutMap ob(out.data() + static_cast<std::size_t>(b) * Lo * Cout, Lo, Cout);
    const double* xb = x.data() + static_cast<std::size_t>(b) * L * Cin;
    for (int j = 0; j < K; ++j) {
      ob.noalias() += ConstMap(xb + static_cast<std::size_t>(j) * Cin, Lo, Cin) *
                      ConstMap(w.data() + static_cast<std::size_t>(j) * Cin * Cout, Cin, Cout);
    }
  }
  const int ix = input.id(), iw = kernels.id();
  return tape.record(std::move(out), {input, kernels}, [=](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(ix);
    const Tensor& w = t.value(iw);
    const bool gx_needed = t.requires_grad(ix);
    const bool gw_needed = t.requires_grad(iw);
    Tensor* gx = gx_needed ? &t.grad_accum(ix) : nullptr;
    Tensor* gw = gw_needed ? &t.grad_accum(iw) : nullptr;
    for (int b = 0; b < B; ++b) {
      ConstMap gb(g.data() + static_cast<std::size_t>(b) * Lo * Cout, Lo, Cout);
      for (int j = 0; j < K; ++j) {
        const std::size_t xoff = static_cast<std::size_t>(b) * L * Cin + static_cast<std::size_t>(j) * Cin;
        const std::size_t woff = static_cast<std::size_t>(j) * Cin * Cout;
        if (gx) {
          MutMap(gx->data() + xoff, Lo, Cin).noalias() += gb * ConstMap(w.data() + woff, Cin, Cout).transpose();
        }
        if (gw) {
          MutMap(gw->data() + woff, Cin, Cout).noalias() += ConstMap(x.data() + xoff, Lo, Cin).transpose() * gb;
        }
      }
    }
  });
}

// ---- Reductions and normalizers ---------------------------------------------------

Var softmax(const Var& a, int axis) {
  Tape& tape = tape_of(a, "softmax");
  const Tensor& x = a.value();
  if (x.rank() > 2 || axis < 0 || axis >= std::max(x.rank(), 1)) {
    fail("softmax", "axis " + std::to_string(axis) + " invalid for shape " + shape_str(x.shape()));
  }
  // Lay the tensor out as groups x n with a stride so one loop handles both axes.
  const int R = x.rank() == 2 ? x.dim(0) : 1;
  const int C = x.rank() == 2 ? x.dim(1) : x.dim(0);
  const bool along_cols = x.rank() == 1 || axis == 1;
  const int groups = along_cols ? R : C;
  const int n = along_cols ? C : R;
  const int step = along_cols ? 1 : C;
  auto index = [=](int gidx, int i) {
    return along_cols ? static_cast<std::size_t>(gidx) * C + i : static_cast<std::size_t>(i) * step + gidx;
  };
  Tensor y(x.shape());
  for (int gi = 0; gi < groups; ++gi) {
    double mx = -INFINITY;
    for (int i = 0; i < n; ++i) mx = std::max(mx, x[index(gi, i)]);
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += (y[index(gi, i)] = std::exp(x[index(gi, i)] - mx));
    for (int i = 0; i < n; ++i) y[index(gi, i)] /= total;
  }
  const int ia = a.id();
  return tape.record(std::move(y), {a}, [=](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad_accum(ia);
    for (int gi = 0; gi < groups; ++gi) {
      double dot = 0.0;
      for (int i = 0; i < n; ++i) dot += g[index(gi, i)] * y[index(gi, i)];
      for (int i = 0; i < n; ++i) ga[index(gi, i)] += y[index(gi, i)] * (g[index(gi, i)] - dot);
    }
  });
}

Var concat(std::initializer_list<Var> parts, int axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) fail("concat", "no operands");
  Tape& tape = tape_of(parts[0], "concat");
  const int rank = parts[0].value().rank();
  if (rank < 1 || rank > 2 || axis < 0 || axis >= rank) {
    fail("concat", "axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
  }
  std::vector<int> ids;
  std::vector<int> extents;
  Shape out_shape = parts[0].shape();
  out_shape[static_cast<std::size_t>(axis)] = 0;
  for (const auto& p : parts) {
    if (p.tape() != &tape) fail("concat", "operands live on different tapes");
    const Shape& s = p.shape();
    if (static_cast<int>(s.size()) != rank) fail("concat", "rank mismatch at " + shape_str(s));
    for (int d = 0; d < rank; ++d) {
      if (d != axis && s[static_cast<std::size_t>(d)] != parts[0].shape()[static_cast<std::size_t>(d)]) {
        fail("concat", "shapes " + shape_str(parts[0].shape()) + " and " + shape_str(s) + " differ off-axis");
      }
    }
    out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
    ids.push_back(p.id());
    extents.push_back(s[static_cast<std::size_t>(axis)]);
  }
  Tensor out(out_shape);
  // Rank 1 and axis 0 of rank 2 are both plain appends in row-major order.
  const bool append = axis == 0;
  const int R = rank == 2 ? out_shape[0] : 1;
  const int C = out_shape.back();
  if (append) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      std::copy(p.value().values().begin(), p.value().values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(off));
      off += p.value().size();
    }
  } else {
    int col = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const Tensor& v = parts[k].value();
      const int w = extents[k];
      for (int r = 0; r < R; ++r) {
        std::copy(v.data() + static_cast<std::size_t>(r) * w, v.data() + static_cast<std::size_t>(r + 1) * w,
                  out.data() + static_cast<std::size_t>(r) * C + col);
      }
      col += w;
    }
  }
  return tape.record(std::move(out), parts, [ids, extents, append, R, C](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    std::size_t off = 0;
    int col = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const int id = ids[k];
      const std::size_t n = t.value(id).size();
      if (t.requires_grad(id)) {
        Tensor& gp = t.grad_accum(id);
        if (append) {
          for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
        } else {
          const int w = extents[k];
          for (int r = 0; r < R; ++r) {
            for (int c = 0; c < w; ++c) gp[static_cast<std::size_t>(r) * w + c] += g[static_cast<std::size_t>(r) * C + col + c];
          }
        }
      }
      off += n;
      col += extents[k];
    }
  });
}

Var sum_axis(const Var& a, int axis) {
  Tape& tape = tape_of(a, "sum_axis");
  const Tensor& x = a.value();
  if (x.rank() != 2 || (axis != 0 && axis != 1)) {
    fail("sum_axis", "axis " + std::to_string(axis) + " invalid for shape " + shape_str(x.shape()));
  }
  const int R = x.dim(0), C = x.dim(1);
  Tensor out(axis == 0 ? Shape{1, C} : Shape{R, 1});
  if (axis == 0) {
    Eigen::Map<Eigen::RowVectorXd>(out.data(), C) = as_matrix(x).colwise().sum();
  } else {
    Eigen::Map<Eigen::VectorXd>(out.data(), R) = as_matrix(x).rowwise().sum();
  }
  const int ia = a.id();
  return tape.record(std::move(out), {a}, [ia, axis, R, C](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_accum(ia);
    for (int r = 0; r < R; ++r) {
      for (int c = 0; c < C; ++c) ga[static_cast<std::size_t>(r) * C + c] += axis == 0 ? g[static_cast<std::size_t>(c)] : g[static_cast<std::size_t>(r)];
    }
  });
}

Var mean(const Var& a, int axis) {
  tape_of(a, "mean");
  const Tensor& v = a.value();
  if (v.rank() != 2 || (axis != 0 && axis != 1)) {
    fail("mean", "axis " + std::to_string(axis) + " invalid for shape " + shape_str(v.shape()));
  }
  const int extent = v.dim(axis);  // sum_axis may reallocate the tape
  return scale(sum_axis(a, axis), 1.0 / extent);
}

Var sum(const Var& a) {
  Tape& tape = tape_of(a, "sum");
  const Tensor& x = a.value();
  const double total = std::accumulate(x.values().begin(), x.values().end(), 0.0);
  const int ia = a.id();
  return tape.record(Tensor::scalar(total), {a}, [ia](Tape& t, int self) {
    const double g = t.grad(self)[0];
    Tensor& ga = t.grad_accum(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Var mean_all(const Var& a) {
  tape_of(a, "mean_all");
  if (a.value().size() == 0) fail("mean_all", "empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var dropout(const Var& a, double rate, bool train, Rng& rng) {
  Tape& tape = tape_of(a, "dropout");
  if (rate < 0.0 || rate >= 1.0) fail("dropout", "rate " + std::to_string(rate) + " outside [0, 1)");
  if (!train || rate == 0.0) return a;
  const Tensor& x = a.value();
  Tensor mask(x.shape());
  const double keep = 1.0 - rate;
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = uniform01(rng) < keep ? 1.0 / keep : 0.0;
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * mask[i];
  const int ia = a.id();
  return tape.record(std::move(out), {a}, [ia, mask = std::move(mask)](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_accum(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
  });
}

// ---- Layout ----------------------------------------------------------------------

Var reshape(const Var& a, Shape shape) {
  Tape& tape = tape_of(a, "reshape");
  const Tensor& x = a.value();
  if (shape_size(shape) != x.size()) fail("reshape", shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor out(std::move(shape), x.values());
  const int ia = a.id();
  return tape.record(std::move(out), {a}, [ia](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_accum(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var transpose(const Var& a) {
  Tape& tape = tape_of(a, "transpose");
  const Tensor& x = a.value();
  if (x.rank() != 2) fail("transpose", "needs a matrix, got " + shape_str(x.shape()));
  Tensor out(Shape{x.dim(1), x.dim(0)});
  as_matrix(out) = as_matrix(x).transpose();
  const int ia = a.id();
  return tape.record(std::move(out), {a}, [ia](Tape& t, int self) {
    as_matrix(t.grad_accum(ia)) += as_matrix(t.grad(self)).transpose();
  });
}

Var slice_rows(const Var& a, int begin, int end) {
  Tape& tape = tape_of(a, "slice_rows");
  const Tensor& x = a.value();
  if (x.rank() != 2 || begin < 0 || end > x.dim(0) || begin >= end) {
    fail("slice_rows", "[" + std::to_string(begin) + ", " + std::to_string(end) + ") of " + shape_str(x.shape()));
  }
  const int C = x.dim(1);
  Tensor out(Shape{end - begin, C});
  const std::size_t off = static_cast<std::size_t>(begin) * C;
  std::copy(x.data() + off, x.data() + off + out.size(), out.data());
  const int ia = a.id();
  return tape.record(std::move(out), {a}, [ia, off](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_accum(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[off + i] += g[i];
  });
}

Var slice_cols(const Var& a, int begin, int end) {
  Tape& tape = tape_of(a, "slice_cols");
  const Tensor& x = a.value();
  if (x.rank() != 2 || begin < 0 || end > x.dim(1) || begin >= end) {
    fail("slice_cols", "[" + std::to_string(begin) + ", " + std::to_string(end) + ") of " + shape_str(x.shape()));
  }
  const int R = x.dim(0), C = x.dim(1), W = end - begin;
  Tensor out(Shape{R, W});
  as_matrix(out) = ConstStrided(x.data() + begin, R, W, Eigen::OuterStride<>(C));
  const int ia = a.id();
  return tape.record(std::move(out), {a}, [ia, R, C, W, begin](Tape& t, int self) {
    MutStrided(t.grad_accum(ia).data() + begin, R, W, Eigen::OuterStride<>(C)) += as_matrix(t.grad(self));
  });
}

Var gather_rows(const Var& a, std::span<const int> rows) {
  Tape& tape = tape_of(a, "gather_rows");
  const Tensor& x = a.value();
  if (x.rank() != 2) fail("gather_rows", "needs a matrix, got " + shape_str(x.shape()));
  const int C = x.dim(1);
  std::vector<int> idx(rows.begin(), rows.end());
  Tensor out(Shape{static_cast<int>(idx.size()), C});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= x.dim(0)) fail("gather_rows", "row " + std::to_string(idx[r]) + " out of " + shape_str(x.shape()));
    std::copy(x.data() + static_cast<std::size_t>(idx[r]) * C, x.data() + static_cast<std::size_t>(idx[r] + 1) * C,
              out.data() + r * C);
  }
  const int ia = a.id();
  return tape.record(std::move(out), {a}, [ia, C, idx = std::move(idx)](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_accum(ia);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (int c = 0; c < C; ++c) ga[static_cast<std::size_t>(idx[r]) * C + c] += g[r * C + c];
    }
  });
}

Var time_weighted_sum(const Var& seq, const Var& weights) {
  Tape& tape = tape_of(seq, weights, "time_weighted_sum");
  const Tensor& G = seq.value();
  const Tensor& w = weights.value();
  if (G.rank() != 2 || w.rank() != 2 || w.dim(0) * w.dim(1) != G.dim(0)) {
    fail("time_weighted_sum", "sequence " + shape_str(G.shape()) + " vs weights " + shape_str(w.shape()));
  }
  const int B = w.dim(0), T = w.dim(1), H = G.dim(1);
  Tensor out(Shape{B, H});
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < B; ++i) {
      const double wt = w.at(i, t);
      const double* row = G.data() + (static_cast<std::size_t>(t) * B + i) * H;
      double* o = out.data() + static_cast<std::size_t>(i) * H;
      for (int h = 0; h < H; ++h) o[h] += wt * row[h];
    }
  }
  const int ig = seq.id(), iw = weights.id();
  return tape.record(std::move(out), {seq, weights}, [ig, iw, B, T, H](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& G = t.value(ig);
    const Tensor& w = t.value(iw);
    Tensor* gG = t.requires_grad(ig) ? &t.grad_accum(ig) : nullptr;
    Tensor* gw = t.requires_grad(iw) ? &t.grad_accum(iw) : nullptr;
    for (int s = 0; s < T; ++s) {
      for (int i = 0; i < B; ++i) {
        const std::size_t row = (static_cast<std::size_t>(s) * B + i) * H;
        const double* gi = g.data() + static_cast<std::size_t>(i) * H;
        if (gG) {
          const double wt = w.at(i, s);
          for (int h = 0; h < H; ++h) (*gG)[row + h] += wt * gi[h];
        }
        if (gw) {
          double dot = 0.0;
          for (int h = 0; h < H; ++h) dot += gi[h] * G[row + h];
          gw->at(i, s) += dot;
        }
      }
    }
  });
}

BatchNormOutput batch_norm(const Var& x, const Var& gamma, const Var& beta, const Tensor& running_mean,
                           const Tensor& running_var, bool use_batch_stats, double eps) {
  Tape& tape = tape_of(x, "batch_norm");
  const Tensor& v = x.value();
  if (v.rank() != 2) fail("batch_norm", "needs N x C input, got " + shape_str(v.shape()));
  const int N = v.dim(0), C = v.dim(1);
  const auto c_sz = static_cast<std::size_t>(C);
  if (gamma.value().size() != c_sz || beta.value().size() != c_sz || running_mean.size() != c_sz ||
      running_var.size() != c_sz) {
    fail("batch_norm", "parameter sizes do not match " + std::to_string(C) + " features");
  }
  BatchNormOutput result;
  Tensor mu(Shape{C});
  Tensor var(Shape{C});
  if (use_batch_stats) {
    const auto X = as_matrix(v);
    Eigen::Map<Eigen::RowVectorXd> m(mu.data(), C);
    m = X.colwise().mean();
    Eigen::Map<Eigen::RowVectorXd>(var.data(), C) = (X.rowwise() - m).array().square().colwise().mean();
    result.batch_mean = mu;
    result.batch_var = var;
  } else {
    mu = running_mean;
    var = running_var;
  }
  Tensor inv_std(Shape{C});
  for (int c = 0; c < C; ++c) inv_std[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var[static_cast<std::size_t>(c)] + eps);
  Tensor xhat(v.shape());
  Tensor out(v.shape());
  const Tensor& gm = gamma.value();
  const Tensor& bt = beta.value();
  for (int r = 0; r < N; ++r) {
    for (int c = 0; c < C; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * C + c;
      xhat[i] = (v[i] - mu[static_cast<std::size_t>(c)]) * inv_std[static_cast<std::size_t>(c)];
      out[i] = gm[static_cast<std::size_t>(c)] * xhat[i] + bt[static_cast<std::size_t>(c)];
    }
  }
  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  result.out = tape.record(std::move(out), {x, gamma, beta},
                           [ix, ig, ib, N, C, use_batch_stats, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                               Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& gm = t.value(ig);
    if (t.requires_grad(ig)) {
      Tensor& gg = t.grad_accum(ig);
      for (std::size_t i = 0; i < g.size(); ++i) gg[i % static_cast<std::size_t>(C)] += g[i] * xhat[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_accum(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % static_cast<std::size_t>(C)] += g[i];
    }
    if (!t.requires_grad(ix)) return;
    Tensor& gx = t.grad_accum(ix);
    if (!use_batch_stats) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        const std::size_t c = i % static_cast<std::size_t>(C);
        gx[i] += g[i] * gm[c] * inv_std[c];
      }
      return;
    }
    std::vector<double> sum_d(static_cast<std::size_t>(C), 0.0), sum_dx(static_cast<std::size_t>(C), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t c = i % static_cast<std::size_t>(C);
      const double d = g[i] * gm[c];
      sum_d[c] += d;
      sum_dx[c] += d * xhat[i];
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t c = i % static_cast<std::size_t>(C);
      const double d = g[i] * gm[c];
      gx[i] += inv_std[c] / N * (N * d - sum_d[c] - xhat[i] * sum_dx[c]);
    }
  });
  return result;
}

// ---- Verification -------------------------------------------------------------------

double grad_check(const std::function<Var(Tape&, const Var&)>& f, const Tensor& theta, double eps) {
  Tensor analytic;
  {
    Tape tape;
    Var th = tape.variable(theta);
    Var loss = f(tape, th);
    tape.backward(loss);
    analytic = th.grad();
  }
  auto eval_at = [&](const Tensor& point) {
    Tape tape;
    return f(tape, tape.constant(point)).value().item();
  };
  double worst = 0.0;
  Tensor probe = theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    probe[i] = theta[i] + eps;
    const double up = eval_at(probe);
    probe[i] = theta[i] - eps;
    const double down = eval_at(probe);
    probe[i] = theta[i];
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace tcdfern::ad
