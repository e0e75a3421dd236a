#pragma once

#include <functional>
#include <random>
#include <span>
#include <vector>

#include "protofed/tensor.hpp"

namespace protofed::ad {

enum class OpKind {
  Leaf,
  MatMul,
  Add,
  Sub,
  Mul,
  ScalarMul,
  AddScalar,
  Relu,
  Tanh,
  Sigmoid,
  Exp,
  Log,
  Abs,
  SmoothL1,
  Softmax,
  LogSoftmax,
  Sum,
  Mean,
  Concat,
  Slice,
  Reshape,
  Conv1d,
  MaxPool1d,
  L2Norm,
  CosineSim,
  Dropout,
};

const char* op_name(OpKind kind);

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape() const noexcept { return tape_; }
  int id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Receives the output gradient and accumulates into each input's gradient.
/// `grad_in[i]` is null when input i does not require a gradient.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

/// Append-only record of a forward computation. Nodes are topologically
/// ordered by construction; `backward` walks them in exact reverse order.
/// Single-threaded: one tape per local update.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad);
  Var param(Tensor value) { return leaf(std::move(value), true); }
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op node. Throws NumericError if `value` is not finite. The
  /// node tracks gradients iff any input does.
  Var record(OpKind kind, Tensor value, std::vector<int> inputs, BackwardFn backward);

  const Tensor& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  const Tensor& grad(int id) const;
  bool requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }
  OpKind kind(int id) const { return nodes_.at(static_cast<std::size_t>(id)).kind; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse-mode sweep from a scalar loss. Afterwards every tracked leaf
  /// holds a gradient of its own shape (zeros if it did not participate).
  void backward(Var loss);

 private:
  struct Node {
    OpKind kind = OpKind::Leaf;
    Tensor value;
    Tensor grad;
    std::vector<int> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

// Shape-broadcasting elementwise binaries (numpy rules).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scalar_mul(Var x, double c);
Var add_scalar(Var x, double c);

/// [m,k]x[k,n] or batched [B,m,k]x[B,k,n].
Var matmul(Var a, Var b);

Var relu(Var x);
Var tanh(Var x);
Var sigmoid(Var x);
Var exp(Var x);
Var log(Var x);
Var abs(Var x);
/// Elementwise Huber-style penalty: 0.5x^2/delta inside |x|<delta, |x|-delta/2 outside.
Var smooth_l1(Var x, double delta = 1.0);

// Along the last axis.
Var softmax(Var x);
Var log_softmax(Var x);

Var sum(Var x);
Var mean(Var x);
/// Reduces one axis (removed from the result shape).
Var sum(Var x, std::size_t axis);
Var mean(Var x, std::size_t axis);

Var concat(std::span<const Var> xs, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end);
Var reshape(Var x, Shape shape);

/// Channels-last 1-D convolution: x [B,L,Cin], weight [Cout,Cin,K],
/// bias [Cout] -> [B,Lout,Cout] with explicit zero padding.
Var conv1d(Var x, Var weight, Var bias, std::size_t stride, std::size_t padding);
/// Channels-last max pooling over the length axis of [B,L,C].
Var maxpool1d(Var x, std::size_t kernel, std::size_t stride);

/// Euclidean norm along the last axis.
Var l2norm(Var x);

inline constexpr double kCosineEps = 1e-12;
/// Cosine similarity with `kCosineEps` added to each norm.
/// [d]x[d] -> scalar; [B,d]x[K,d] -> [B,K] (all row pairs).
Var cosine_sim(Var a, Var b);

/// Inverted dropout; identity when rate == 0.
Var dropout(Var x, double rate, std::mt19937_64& rng);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double c, Var x) { return scalar_mul(x, c); }

}  // namespace protofed::ad
