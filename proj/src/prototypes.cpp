#include "protofed/prototypes.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>

#include <json.hpp>

#include "protofed/errors.hpp"

namespace protofed {

const ClassPrototype& PrototypeSet::at(std::size_t k) const {
  if (!has(k)) throw DataError("no prototype for class " + std::to_string(k));
  return *entries_[k];
}

void PrototypeSet::set(std::size_t k, std::vector<double> vector, std::size_t count) {
  if (k >= entries_.size()) throw DataError("class " + std::to_string(k) + " out of range");
  if (vector.size() != dim_) {
    throw ShapeError("prototype of width " + std::to_string(vector.size()) + " in a set of width " +
                     std::to_string(dim_));
  }
  entries_[k] = ClassPrototype{std::move(vector), count};
}

std::vector<std::size_t> PrototypeSet::classes() const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < entries_.size(); ++k)
    if (entries_[k]) out.push_back(k);
  return out;
}

bool PrototypeSet::empty() const {
  return std::none_of(entries_.begin(), entries_.end(), [](const auto& e) { return e.has_value(); });
}

LocalPrototypeSet compute_local_prototypes(int client_id, const Tensor& r, std::span<const int> labels,
                                           std::size_t num_classes, std::span<const double> row_mask) {
  if (r.rank() != 2) throw ShapeError("local prototypes need [N,d] representations");
  const std::size_t n = r.dim(0), d = r.dim(1);
  if (labels.size() != n) throw DataError("label count does not match representation rows");
  if (!row_mask.empty() && row_mask.size() != n) throw DataError("row mask does not match representation rows");
  if (n == 0) throw DataError("cannot compute prototypes of an empty dataset");
  std::vector<std::vector<double>> sums(num_classes, std::vector<double>(d, 0.0));
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!row_mask.empty() && row_mask[i] == 0.0) continue;
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw DataError("label " + std::to_string(labels[i]) + " out of range");
    }
    const auto k = static_cast<std::size_t>(labels[i]);
    for (std::size_t j = 0; j < d; ++j) sums[k][j] += r.at(i, j);
    ++counts[k];
  }
  LocalPrototypeSet out{client_id, PrototypeSet(num_classes, d)};
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (counts[k] == 0) continue;
    for (double& v : sums[k]) v /= static_cast<double>(counts[k]);
    out.prototypes.set(k, std::move(sums[k]), counts[k]);
  }
  return out;
}

CompletePrototypes aggregate_complete(std::span<const LocalPrototypeSet> locals, int round) {
  CompletePrototypes out;
  out.round = round;
  if (locals.empty()) return out;
  const std::size_t K = locals.front().prototypes.num_classes();
  const std::size_t d = locals.front().prototypes.dim();
  std::vector<std::size_t> order(locals.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return locals[a].client_id < locals[b].client_id; });
  for (const auto& l : locals) {
    if (l.prototypes.dim() != d || l.prototypes.num_classes() != K) {
      throw ShapeError("client " + std::to_string(l.client_id) + " reported prototypes of width " +
                       std::to_string(l.prototypes.dim()) + ", expected " + std::to_string(d));
    }
  }
  out.prototypes = PrototypeSet(K, d);
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<double> acc(d, 0.0);
    std::size_t reporters = 0;
    for (std::size_t idx : order) {
      const PrototypeSet& p = locals[idx].prototypes;
      if (!p.has(k)) continue;
      const auto& v = p.at(k).vector;
      for (std::size_t j = 0; j < d; ++j) acc[j] += v[j];
      ++reporters;
    }
    if (reporters == 0) continue;
    for (double& v : acc) v /= static_cast<double>(reporters);
    out.prototypes.set(k, std::move(acc), reporters);
  }
  return out;
}

UnimodalPrototypes aggregate_unimodal(std::span<const std::vector<LocalPrototypeSet>> locals, int round) {
  UnimodalPrototypes out;
  out.round = round;
  for (const auto& per_modality : locals) out.per_modality.push_back(aggregate_complete(per_modality, round).prototypes);
  return out;
}

namespace {

template <class T>
void append(std::vector<std::uint8_t>& buf, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  buf.insert(buf.end(), p, p + sizeof(T));
}

}  // namespace

std::vector<std::uint8_t> serialize_payload(const PrototypeSet& set) {
  std::vector<std::uint8_t> buf;
  append<std::uint32_t>(buf, static_cast<std::uint32_t>(set.num_classes()));
  append<std::uint32_t>(buf, static_cast<std::uint32_t>(set.dim()));
  for (std::size_t k : set.classes()) {
    append<std::uint32_t>(buf, static_cast<std::uint32_t>(k));
    append<std::uint64_t>(buf, set.at(k).count);
    for (double v : set.at(k).vector) append<double>(buf, v);
  }
  return buf;
}

std::string prototypes_to_json(const PrototypeSet& set) {
  nlohmann::ordered_json j;
  j["dim"] = set.dim();
  j["num_classes"] = set.num_classes();
  j["classes"] = nlohmann::ordered_json::object();
  j["counts"] = nlohmann::ordered_json::object();
  for (std::size_t k : set.classes()) {
    j["classes"][std::to_string(k)] = set.at(k).vector;
    j["counts"][std::to_string(k)] = set.at(k).count;
  }
  return j.dump(2);
}

}  // namespace protofed
