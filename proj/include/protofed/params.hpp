#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "protofed/autodiff.hpp"
#include "protofed/tensor.hpp"

namespace protofed {

struct LayoutEntry {
  std::string name;
  Shape shape;
  std::size_t offset = 0;

  friend bool operator==(const LayoutEntry&, const LayoutEntry&) = default;
};

/// Flat-buffer layout of a ParamStore: names and shapes in registration order.
struct Layout {
  std::vector<LayoutEntry> entries;
  std::size_t total = 0;

  friend bool operator==(const Layout&, const Layout&) = default;
};

/// Named parameter tensors in a fixed registration order. Every client that
/// shares an architecture produces the same order, so layouts compare equal.
class ParamStore {
 public:
  void add(std::string name, Tensor value);

  std::size_t count() const noexcept { return tensors_.size(); }
  std::size_t num_scalars() const noexcept;
  const std::string& name(std::size_t i) const { return names_.at(i); }
  Tensor& operator[](std::size_t i) { return tensors_.at(i); }
  const Tensor& operator[](std::size_t i) const { return tensors_.at(i); }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  std::size_t index_of(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  Layout layout() const;
  std::vector<double> flatten() const;
  static ParamStore unflatten(const Layout& layout, std::span<const double> flat);

  /// Registers every tensor on the tape as a tracked leaf, in store order.
  std::vector<ad::Var> bind(ad::Tape& tape) const;

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    return a.names_ == b.names_ && a.tensors_ == b.tensors_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Gradients of `bound` leaves after `tape.backward`, aligned with the store.
std::vector<Tensor> collect_grads(const ad::Tape& tape, std::span<const ad::Var> bound);

/// p <- p - lr * (g + weight_decay * p), elementwise.
void sgd_step(ParamStore& params, std::span<const Tensor> grads, double lr, double weight_decay);

/// Binary checkpoint: magic "PFCK", version, then per tensor name/shape/data
/// (little-endian u32/u64 lengths, f64 values).
void write_checkpoint(std::ostream& out, const ParamStore& params);
ParamStore read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const ParamStore& params);
ParamStore load_checkpoint(const std::string& path);

}  // namespace protofed
