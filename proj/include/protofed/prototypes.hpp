#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "protofed/tensor.hpp"

namespace protofed {

struct ClassPrototype {
  std::vector<double> vector;
  /// Samples behind a local prototype, or reporting clients behind an aggregate.
  std::size_t count = 0;

  friend bool operator==(const ClassPrototype&, const ClassPrototype&) = default;
};

/// Class-indexed d-dimensional vectors. Classes without data are absent,
/// never zero-filled.
class PrototypeSet {
 public:
  PrototypeSet() = default;
  PrototypeSet(std::size_t num_classes, std::size_t dim) : dim_(dim), entries_(num_classes) {}

  std::size_t num_classes() const noexcept { return entries_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  bool has(std::size_t k) const { return k < entries_.size() && entries_[k].has_value(); }
  const ClassPrototype& at(std::size_t k) const;
  void set(std::size_t k, std::vector<double> vector, std::size_t count);
  /// Present classes in ascending order.
  std::vector<std::size_t> classes() const;
  bool empty() const;

  friend bool operator==(const PrototypeSet&, const PrototypeSet&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<std::optional<ClassPrototype>> entries_;
};

struct LocalPrototypeSet {
  int client_id = -1;
  PrototypeSet prototypes;
};

struct CompletePrototypes {
  PrototypeSet prototypes;
  int round = -1;
};

struct UnimodalPrototypes {
  std::vector<PrototypeSet> per_modality;
  int round = -1;
};

/// Per-class mean of the rows of `r` ([N, d]). When `row_mask` is given only
/// rows with a nonzero mask contribute. Throws DataError on an empty set.
LocalPrototypeSet compute_local_prototypes(int client_id, const Tensor& r, std::span<const int> labels,
                                           std::size_t num_classes, std::span<const double> row_mask = {});

/// Per class, the unweighted mean over the clients that reported it. Summation
/// runs in ascending client-id order, so the result is independent of the
/// order of `locals`.
CompletePrototypes aggregate_complete(std::span<const LocalPrototypeSet> locals, int round = -1);

/// `locals[m]` holds the per-client sets for modality m.
UnimodalPrototypes aggregate_unimodal(std::span<const std::vector<LocalPrototypeSet>> locals, int round = -1);

/// Compact wire form: u32 class count, u32 dim, then per present class
/// u32 class id, u64 count, dim f64 values.
std::vector<std::uint8_t> serialize_payload(const PrototypeSet& set);

/// JSON object {"dim": d, "classes": {"k": [..], ...}, "counts": {"k": n}}.
std::string prototypes_to_json(const PrototypeSet& set);

}  // namespace protofed
