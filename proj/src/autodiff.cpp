#include "protofed/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "protofed/errors.hpp"

namespace protofed::ad {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::ScalarMul: return "scalar_mul";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Relu: return "relu";
    case OpKind::Tanh: return "tanh";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Abs: return "abs";
    case OpKind::SmoothL1: return "smooth_l1";
    case OpKind::Softmax: return "softmax";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Reshape: return "reshape";
    case OpKind::Conv1d: return "conv1d";
    case OpKind::MaxPool1d: return "maxpool1d";
    case OpKind::L2Norm: return "l2norm";
    case OpKind::CosineSim: return "cosine_sim";
    case OpKind::Dropout: return "dropout";
  }
  return "?";
}

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite()) throw NumericError("non-finite value in leaf tensor");
  Node node;
  node.kind = OpKind::Leaf;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::record(OpKind kind, Tensor value, std::vector<int> inputs, BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite output from ") + op_name(kind) + " " + shape_str(value.shape()));
  }
  Node node;
  node.kind = kind;
  node.value = std::move(value);
  node.requires_grad = std::any_of(inputs.begin(), inputs.end(), [&](int i) { return requires_grad(i); });
  if (node.requires_grad) node.backward = std::move(backward);
  node.inputs = std::move(inputs);
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

const Tensor& Tape::grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).grad; }

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw LayoutError("backward: loss belongs to a different tape");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  const auto root = static_cast<std::size_t>(loss.id());
  if (nodes_[root].requires_grad) {
    nodes_[root].grad = Tensor(nodes_[root].value.shape(), 1.0);
    std::vector<Tensor*> gin;
    for (std::size_t i = root + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!node.requires_grad || node.grad.empty() || !node.backward) continue;
      gin.assign(node.inputs.size(), nullptr);
      for (std::size_t j = 0; j < node.inputs.size(); ++j) {
        Node& in = nodes_[static_cast<std::size_t>(node.inputs[j])];
        if (!in.requires_grad) continue;
        if (in.grad.empty()) in.grad = Tensor(in.value.shape(), 0.0);
        gin[j] = &in.grad;
      }
      node.backward(node.grad, gin);
    }
  }
  for (auto& n : nodes_) {
    if (n.kind == OpKind::Leaf && n.requires_grad && n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  }
}

namespace {

Tape* common_tape(std::initializer_list<Var> vars) {
  Tape* tape = nullptr;
  for (const auto& v : vars) {
    if (!v.valid()) throw LayoutError("operation on an unbound Var");
    if (tape && v.tape() != tape) throw LayoutError("operands live on different tapes");
    tape = v.tape();
  }
  return tape;
}

// Row-major strides.
std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da == db || db == 1) {
      out[i] = da;
    } else if (da == 1) {
      out[i] = db;
    } else {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
  }
  return out;
}

// Maps each flat index of `out` to the flat index of `from` under
// broadcasting. Empty when `from == out` (identity).
std::vector<std::size_t> broadcast_map(const Shape& from, const Shape& out) {
  if (from == out) return {};
  const std::size_t r = out.size();
  const std::size_t offset = r - from.size();
  const auto fst = strides_of(from);
  std::vector<std::size_t> eff(r, 0);
  for (std::size_t i = offset; i < r; ++i) eff[i] = from[i - offset] == 1 ? 0 : fst[i - offset];
  std::vector<std::size_t> map(shape_size(out));
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < map.size(); ++flat) {
    map[flat] = src;
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      src += eff[ax];
      if (idx[ax] < out[ax]) break;
      src -= eff[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return map;
}

inline std::size_t mapped(const std::vector<std::size_t>& map, std::size_t i) { return map.empty() ? i : map[i]; }

// Shared implementation for broadcasting binaries. `df` returns the pair of
// partial derivatives (d/da, d/db) at a point.
template <class F, class DF>
Var binary(OpKind kind, Var a, Var b, F f, DF df) {
  Tape* tape = common_tape({a, b});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Shape out_shape = broadcast_shape(av.shape(), bv.shape());
  auto ma = std::make_shared<std::vector<std::size_t>>(broadcast_map(av.shape(), out_shape));
  auto mb = std::make_shared<std::vector<std::size_t>>(broadcast_map(bv.shape(), out_shape));
  Tensor out(out_shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[mapped(*ma, i)], bv[mapped(*mb, i)]);
  const int ia = a.id(), ib = b.id();
  return tape->record(kind, std::move(out), {ia, ib},
                      [tape, ia, ib, ma, mb, df](const Tensor& g, std::span<Tensor* const> gin) {
                        const Tensor& av = tape->value(ia);
                        const Tensor& bv = tape->value(ib);
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          const std::size_t ja = mapped(*ma, i), jb = mapped(*mb, i);
                          const auto [da, db] = df(av[ja], bv[jb]);
                          if (gin[0]) (*gin[0])[ja] += g[i] * da;
                          if (gin[1]) (*gin[1])[jb] += g[i] * db;
                        }
                      });
}

// Elementwise unary with derivative expressed in terms of input x and output y.
template <class F, class DF>
Var unary(OpKind kind, Var x, F f, DF df) {
  Tape* tape = common_tape({x});
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  const int ix = x.id();
  auto self = std::make_shared<int>(-1);
  Var result = tape->record(kind, std::move(out), {ix}, [tape, ix, self, df](const Tensor& g, std::span<Tensor* const> gin) {
    const Tensor& xv = tape->value(ix);
    const Tensor& yv = tape->value(*self);
    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * df(xv[i], yv[i]);
  });
  *self = result.id();
  return result;
}

// Splits a shape around `axis` into (outer, axis length, inner) extents.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisSplit sp;
  for (std::size_t i = 0; i < axis; ++i) sp.outer *= s[i];
  sp.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}

std::size_t last_dim(const Tensor& t, const char* op) {
  if (t.rank() == 0) throw ShapeError(std::string(op) + " requires rank >= 1");
  return t.shape().back();
}

}  // namespace

Var add(Var a, Var b) {
  return binary(OpKind::Add, a, b, [](double x, double y) { return x + y; },
                [](double, double) { return std::pair{1.0, 1.0}; });
}

Var sub(Var a, Var b) {
  return binary(OpKind::Sub, a, b, [](double x, double y) { return x - y; },
                [](double, double) { return std::pair{1.0, -1.0}; });
}

Var mul(Var a, Var b) {
  return binary(OpKind::Mul, a, b, [](double x, double y) { return x * y; },
                [](double x, double y) { return std::pair{y, x}; });
}

Var scalar_mul(Var x, double c) {
  return unary(OpKind::ScalarMul, x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Var add_scalar(Var x, double c) {
  return unary(OpKind::AddScalar, x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Var relu(Var x) {
  return unary(OpKind::Relu, x, [](double v) { return v > 0 ? v : 0.0; },
               [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Var tanh(Var x) {
  return unary(OpKind::Tanh, x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var x) {
  return unary(OpKind::Sigmoid, x,
               [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
               [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var x) {
  return unary(OpKind::Exp, x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
  return unary(OpKind::Log, x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var abs(Var x) {
  return unary(OpKind::Abs, x, [](double v) { return std::abs(v); },
               [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Var smooth_l1(Var x, double delta) {
  if (!(delta > 0)) throw ShapeError("smooth_l1 requires delta > 0");
  return unary(
      OpKind::SmoothL1, x,
      [delta](double v) { return std::abs(v) < delta ? 0.5 * v * v / delta : std::abs(v) - 0.5 * delta; },
      [delta](double v, double) { return std::abs(v) < delta ? v / delta : (v > 0 ? 1.0 : -1.0); });
}

Var matmul(Var a, Var b) {
  Tape* tape = common_tape({a, b});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  std::size_t batch = 1, m = 0, k = 0, n = 0;
  Shape out_shape;
  if (av.rank() == 2 && bv.rank() == 2) {
    m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    if (bv.dim(0) != k) throw ShapeError("matmul " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    out_shape = {m, n};
  } else if (av.rank() == 3 && bv.rank() == 3) {
    batch = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(2);
    if (bv.dim(0) != batch || bv.dim(1) != k) {
      throw ShapeError("matmul " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    }
    out_shape = {batch, m, n};
  } else {
    throw ShapeError("matmul needs two rank-2 or two rank-3 operands, got " + shape_str(av.shape()) + " x " +
                     shape_str(bv.shape()));
  }
  Tensor out(out_shape);
  for (std::size_t t = 0; t < batch; ++t) {
    const double* A = av.data().data() + t * m * k;
    const double* B = bv.data().data() + t * k * n;
    double* C = out.data().data() + t * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A[i * k + p];
        if (aip == 0.0) continue;
        const double* brow = B + p * n;
        double* crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  }
  const int ia = a.id(), ib = b.id();
  return tape->record(OpKind::MatMul, std::move(out), {ia, ib},
                      [tape, ia, ib, batch, m, k, n](const Tensor& g, std::span<Tensor* const> gin) {
                        const Tensor& av = tape->value(ia);
                        const Tensor& bv = tape->value(ib);
                        for (std::size_t t = 0; t < batch; ++t) {
                          const double* A = av.data().data() + t * m * k;
                          const double* B = bv.data().data() + t * k * n;
                          const double* G = g.data().data() + t * m * n;
                          if (gin[0]) {
                            double* GA = gin[0]->data().data() + t * m * k;
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t p = 0; p < k; ++p) {
                                double s = 0;
                                for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * B[p * n + j];
                                GA[i * k + p] += s;
                              }
                          }
                          if (gin[1]) {
                            double* GB = gin[1]->data().data() + t * k * n;
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t p = 0; p < k; ++p) {
                                const double aip = A[i * k + p];
                                if (aip == 0.0) continue;
                                for (std::size_t j = 0; j < n; ++j) GB[p * n + j] += aip * G[i * n + j];
                              }
                          }
                        }
                      });
}

Var softmax(Var x) {
  Tape* tape = common_tape({x});
  const Tensor& xv = x.value();
  const std::size_t n = last_dim(xv, "softmax");
  const std::size_t rows = xv.size() / std::max<std::size_t>(n, 1);
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data().data() + r * n;
    double* o = out.data().data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0;
    for (std::size_t j = 0; j < n; ++j) z += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < n; ++j) o[j] /= z;
  }
  auto self = std::make_shared<int>(-1);
  Var res = tape->record(OpKind::Softmax, std::move(out), {x.id()},
                         [tape, self, rows, n](const Tensor& g, std::span<Tensor* const> gin) {
                           const Tensor& y = tape->value(*self);
                           for (std::size_t r = 0; r < rows; ++r) {
                             double dot = 0;
                             for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
                             for (std::size_t j = 0; j < n; ++j) (*gin[0])[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
                           }
                         });
  *self = res.id();
  return res;
}

Var log_softmax(Var x) {
  Tape* tape = common_tape({x});
  const Tensor& xv = x.value();
  const std::size_t n = last_dim(xv, "log_softmax");
  const std::size_t rows = xv.size() / std::max<std::size_t>(n, 1);
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data().data() + r * n;
    double* o = out.data().data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(in[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) o[j] = in[j] - lse;
  }
  auto self = std::make_shared<int>(-1);
  Var res = tape->record(OpKind::LogSoftmax, std::move(out), {x.id()},
                         [tape, self, rows, n](const Tensor& g, std::span<Tensor* const> gin) {
                           const Tensor& y = tape->value(*self);
                           for (std::size_t r = 0; r < rows; ++r) {
                             double gs = 0;
                             for (std::size_t j = 0; j < n; ++j) gs += g[r * n + j];
                             for (std::size_t j = 0; j < n; ++j)
                               (*gin[0])[r * n + j] += g[r * n + j] - std::exp(y[r * n + j]) * gs;
                           }
                         });
  *self = res.id();
  return res;
}

Var sum(Var x) {
  Tape* tape = common_tape({x});
  const Tensor& xv = x.value();
  double s = 0;
  for (double v : xv.data()) s += v;
  return tape->record(OpKind::Sum, Tensor::scalar(s), {x.id()}, [](const Tensor& g, std::span<Tensor* const> gin) {
    const double gv = g[0];
    for (double& v : gin[0]->data()) v += gv;
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  Tape* tape = common_tape({x});
  double s = 0;
  for (double v : x.value().data()) s += v;
  return tape->record(OpKind::Mean, Tensor::scalar(s / static_cast<double>(n)), {x.id()},
                      [n](const Tensor& g, std::span<Tensor* const> gin) {
                        const double gv = g[0] / static_cast<double>(n);
                        for (double& v : gin[0]->data()) v += gv;
                      });
}

namespace {

Var reduce_axis(Var x, std::size_t axis, bool average) {
  Tape* tape = common_tape({x});
  const Tensor& xv = x.value();
  const AxisSplit sp = split_axis(xv.shape(), axis);
  if (average && sp.len == 0) throw ShapeError("mean over empty axis");
  Shape out_shape = xv.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  const double scale = average ? 1.0 / static_cast<double>(sp.len) : 1.0;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t a = 0; a < sp.len; ++a)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += scale * xv[(o * sp.len + a) * sp.inner + i];
  return tape->record(average ? OpKind::Mean : OpKind::Sum, std::move(out), {x.id()},
                      [sp, scale](const Tensor& g, std::span<Tensor* const> gin) {
                        for (std::size_t o = 0; o < sp.outer; ++o)
                          for (std::size_t a = 0; a < sp.len; ++a)
                            for (std::size_t i = 0; i < sp.inner; ++i)
                              (*gin[0])[(o * sp.len + a) * sp.inner + i] += scale * g[o * sp.inner + i];
                      });
}

}  // namespace

Var sum(Var x, std::size_t axis) { return reduce_axis(x, axis, false); }
Var mean(Var x, std::size_t axis) { return reduce_axis(x, axis, true); }

Var concat(std::span<const Var> xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat of zero tensors");
  Tape* tape = common_tape({xs[0]});
  const Shape& s0 = xs[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat axis out of range for " + shape_str(s0));
  std::vector<int> ids;
  std::vector<std::size_t> lens;
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const Var& v : xs) {
    if (v.tape() != tape) throw LayoutError("concat operands live on different tapes");
    const Shape& s = v.shape();
    if (s.size() != s0.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != s0[i]) throw ShapeError("concat " + shape_str(s) + " with " + shape_str(s0));
    }
    ids.push_back(v.id());
    lens.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const AxisSplit sp = split_axis(out_shape, axis);
  Tensor out(out_shape);
  std::size_t off = 0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    const Tensor& v = xs[t].value();
    const std::size_t chunk = lens[t] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(v.data().data() + o * chunk, chunk, out.data().data() + (o * sp.len + off) * sp.inner);
    }
    off += lens[t];
  }
  return tape->record(OpKind::Concat, std::move(out), ids, [sp, lens](const Tensor& g, std::span<Tensor* const> gin) {
    std::size_t off = 0;
    for (std::size_t t = 0; t < lens.size(); ++t) {
      const std::size_t chunk = lens[t] * sp.inner;
      if (gin[t]) {
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const double* src = g.data().data() + (o * sp.len + off) * sp.inner;
          double* dst = gin[t]->data().data() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
      }
      off += lens[t];
    }
  });
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  Tape* tape = common_tape({x});
  const Tensor& xv = x.value();
  const AxisSplit sp = split_axis(xv.shape(), axis);
  if (begin > end || end > sp.len) {
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range on axis of " +
                     std::to_string(sp.len));
  }
  Shape out_shape = xv.shape();
  out_shape[axis] = end - begin;
  const std::size_t chunk = (end - begin) * sp.inner;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(xv.data().data() + (o * sp.len + begin) * sp.inner, chunk, out.data().data() + o * chunk);
  }
  return tape->record(OpKind::Slice, std::move(out), {x.id()},
                      [sp, begin, chunk](const Tensor& g, std::span<Tensor* const> gin) {
                        for (std::size_t o = 0; o < sp.outer; ++o) {
                          double* dst = gin[0]->data().data() + (o * sp.len + begin) * sp.inner;
                          const double* src = g.data().data() + o * chunk;
                          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                        }
                      });
}

Var reshape(Var x, Shape shape) {
  Tape* tape = common_tape({x});
  const Tensor& xv = x.value();
  if (shape_size(shape) != xv.size()) {
    throw ShapeError("reshape " + shape_str(xv.shape()) + " to " + shape_str(shape));
  }
  return tape->record(OpKind::Reshape, Tensor(std::move(shape), xv.storage()), {x.id()},
                      [](const Tensor& g, std::span<Tensor* const> gin) {
                        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                      });
}

Var conv1d(Var x, Var weight, Var bias, std::size_t stride, std::size_t padding) {
  Tape* tape = common_tape({x, weight, bias});
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 3 || wv.rank() != 3 || bv.rank() != 1) {
    throw ShapeError("conv1d expects x [B,L,Cin], weight [Cout,Cin,K], bias [Cout]");
  }
  const std::size_t B = xv.dim(0), L = xv.dim(1), cin = xv.dim(2);
  const std::size_t cout = wv.dim(0), K = wv.dim(2);
  if (wv.dim(1) != cin || bv.dim(0) != cout) {
    throw ShapeError("conv1d channel mismatch: x " + shape_str(xv.shape()) + " weight " + shape_str(wv.shape()));
  }
  if (stride == 0 || L + 2 * padding < K) throw ShapeError("conv1d: kernel longer than padded input");
  const std::size_t lout = (L + 2 * padding - K) / stride + 1;
  Tensor out(Shape{B, lout, cout});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < lout; ++t) {
      double* o = out.data().data() + (b * lout + t) * cout;
      for (std::size_t oc = 0; oc < cout; ++oc) o[oc] = bv[oc];
      for (std::size_t k = 0; k < K; ++k) {
        const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * stride + k) - static_cast<std::ptrdiff_t>(padding);
        if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(L)) continue;
        const double* in = xv.data().data() + (b * L + static_cast<std::size_t>(pos)) * cin;
        for (std::size_t oc = 0; oc < cout; ++oc) {
          const double* w = wv.data().data() + oc * cin * K + k;
          double s = 0;
          for (std::size_t c = 0; c < cin; ++c) s += w[c * K] * in[c];
          o[oc] += s;
        }
      }
    }
  const int ix = x.id(), iw = weight.id();
  return tape->record(
      OpKind::Conv1d, std::move(out), {ix, iw, bias.id()},
      [tape, ix, iw, B, L, cin, cout, K, lout, stride, padding](const Tensor& g, std::span<Tensor* const> gin) {
        const Tensor& xv = tape->value(ix);
        const Tensor& wv = tape->value(iw);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t t = 0; t < lout; ++t) {
            const double* go = g.data().data() + (b * lout + t) * cout;
            if (gin[2])
              for (std::size_t oc = 0; oc < cout; ++oc) (*gin[2])[oc] += go[oc];
            for (std::size_t k = 0; k < K; ++k) {
              const std::ptrdiff_t pos =
                  static_cast<std::ptrdiff_t>(t * stride + k) - static_cast<std::ptrdiff_t>(padding);
              if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(L)) continue;
              const std::size_t row = (b * L + static_cast<std::size_t>(pos)) * cin;
              for (std::size_t oc = 0; oc < cout; ++oc) {
                const double gv = go[oc];
                if (gv == 0.0) continue;
                for (std::size_t c = 0; c < cin; ++c) {
                  const std::size_t widx = (oc * cin + c) * K + k;
                  if (gin[0]) (*gin[0])[row + c] += gv * wv[widx];
                  if (gin[1]) (*gin[1])[widx] += gv * xv[row + c];
                }
              }
            }
          }
      });
}

Var maxpool1d(Var x, std::size_t kernel, std::size_t stride) {
  Tape* tape = common_tape({x});
  const Tensor& xv = x.value();
  if (xv.rank() != 3) throw ShapeError("maxpool1d expects [B,L,C], got " + shape_str(xv.shape()));
  const std::size_t B = xv.dim(0), L = xv.dim(1), C = xv.dim(2);
  if (kernel == 0 || stride == 0 || L < kernel) throw ShapeError("maxpool1d: kernel larger than input");
  const std::size_t lout = (L - kernel) / stride + 1;
  Tensor out(Shape{B, lout, C});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < lout; ++t)
      for (std::size_t c = 0; c < C; ++c) {
        std::size_t best = (b * L + t * stride) * C + c;
        for (std::size_t k = 1; k < kernel; ++k) {
          const std::size_t idx = (b * L + t * stride + k) * C + c;
          if (xv[idx] > xv[best]) best = idx;
        }
        const std::size_t o = (b * lout + t) * C + c;
        out[o] = xv[best];
        (*argmax)[o] = best;
      }
  return tape->record(OpKind::MaxPool1d, std::move(out), {x.id()},
                      [argmax](const Tensor& g, std::span<Tensor* const> gin) {
                        for (std::size_t o = 0; o < g.size(); ++o) (*gin[0])[(*argmax)[o]] += g[o];
                      });
}

Var l2norm(Var x) {
  Tape* tape = common_tape({x});
  const Tensor& xv = x.value();
  const std::size_t n = last_dim(xv, "l2norm");
  const std::size_t rows = n ? xv.size() / n : 0;
  Shape out_shape(xv.shape().begin(), xv.shape().end() - 1);
  Tensor out(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < n; ++j) s += xv[r * n + j] * xv[r * n + j];
    out[r] = std::sqrt(s);
  }
  const int ix = x.id();
  auto self = std::make_shared<int>(-1);
  Var res = tape->record(OpKind::L2Norm, std::move(out), {ix},
                         [tape, ix, self, rows, n](const Tensor& g, std::span<Tensor* const> gin) {
                           const Tensor& xv = tape->value(ix);
                           const Tensor& y = tape->value(*self);
                           for (std::size_t r = 0; r < rows; ++r) {
                             if (y[r] == 0.0) continue;
                             for (std::size_t j = 0; j < n; ++j) (*gin[0])[r * n + j] += g[r] * xv[r * n + j] / y[r];
                           }
                         });
  *self = res.id();
  return res;
}

Var cosine_sim(Var a, Var b) {
  Tape* tape = common_tape({a, b});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  std::size_t ra = 0, rb = 0, d = 0;
  Shape out_shape;
  if (av.rank() == 1 && bv.rank() == 1) {
    ra = rb = 1;
    d = av.dim(0);
    if (bv.dim(0) != d) throw ShapeError("cosine_sim " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  } else if (av.rank() == 2 && bv.rank() == 2) {
    ra = av.dim(0), rb = bv.dim(0), d = av.dim(1);
    if (bv.dim(1) != d) throw ShapeError("cosine_sim " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    out_shape = {ra, rb};
  } else {
    throw ShapeError("cosine_sim expects [d]x[d] or [B,d]x[K,d]");
  }
  auto norms = [d](const Tensor& t, std::size_t rows) {
    std::vector<double> n(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < d; ++j) s += t[r * d + j] * t[r * d + j];
      n[r] = std::sqrt(s);
    }
    return n;
  };
  auto na = std::make_shared<std::vector<double>>(norms(av, ra));
  auto nb = std::make_shared<std::vector<double>>(norms(bv, rb));
  Tensor out(out_shape);
  for (std::size_t i = 0; i < ra; ++i)
    for (std::size_t k = 0; k < rb; ++k) {
      double dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += av[i * d + j] * bv[k * d + j];
      out[i * rb + k] = dot / (((*na)[i] + kCosineEps) * ((*nb)[k] + kCosineEps));
    }
  const int ia = a.id(), ib = b.id();
  return tape->record(
      OpKind::CosineSim, std::move(out), {ia, ib},
      [tape, ia, ib, na, nb, ra, rb, d](const Tensor& g, std::span<Tensor* const> gin) {
        const Tensor& av = tape->value(ia);
        const Tensor& bv = tape->value(ib);
        for (std::size_t i = 0; i < ra; ++i)
          for (std::size_t k = 0; k < rb; ++k) {
            const double gv = g[i * rb + k];
            if (gv == 0.0) continue;
            const double NA = (*na)[i] + kCosineEps, NB = (*nb)[k] + kCosineEps;
            double dot = 0;
            for (std::size_t j = 0; j < d; ++j) dot += av[i * d + j] * bv[k * d + j];
            const double inv = 1.0 / (NA * NB);
            // d(dot/(NA NB))/da = b/(NA NB) - dot/(NA^2 NB) * a/|a|
            const double ca = (*na)[i] > 0 ? dot / (NA * NA * NB * (*na)[i]) : 0.0;
            const double cb = (*nb)[k] > 0 ? dot / (NA * NB * NB * (*nb)[k]) : 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              if (gin[0]) (*gin[0])[i * d + j] += gv * (bv[k * d + j] * inv - ca * av[i * d + j]);
              if (gin[1]) (*gin[1])[k * d + j] += gv * (av[i * d + j] * inv - cb * bv[k * d + j]);
            }
          }
      });
}

Var dropout(Var x, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ShapeError("dropout rate must lie in [0,1)");
  if (rate == 0.0) return x;
  Tape* tape = common_tape({x});
  const Tensor& xv = x.value();
  auto mask = std::make_shared<std::vector<double>>(xv.size());
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    (*mask)[i] = keep(rng) ? scale : 0.0;
    out[i] = xv[i] * (*mask)[i];
  }
  return tape->record(OpKind::Dropout, std::move(out), {x.id()}, [mask](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * (*mask)[i];
  });
}

}  // namespace protofed::ad
