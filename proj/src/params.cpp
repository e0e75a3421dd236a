#include "protofed/params.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "protofed/errors.hpp"

namespace protofed {

void ParamStore::add(std::string name, Tensor value) {
  if (index_.count(name)) throw LayoutError("duplicate parameter name '" + name + "'");
  index_.emplace(name, tensors_.size());
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
}

std::size_t ParamStore::num_scalars() const noexcept {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

std::size_t ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw LayoutError("no parameter named '" + name + "'");
  return it->second;
}

Tensor& ParamStore::at(const std::string& name) { return tensors_[index_of(name)]; }
const Tensor& ParamStore::at(const std::string& name) const { return tensors_[index_of(name)]; }

Layout ParamStore::layout() const {
  Layout l;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    l.entries.push_back({names_[i], tensors_[i].shape(), l.total});
    l.total += tensors_[i].size();
  }
  return l;
}

std::vector<double> ParamStore::flatten() const {
  std::vector<double> flat;
  flat.reserve(num_scalars());
  for (const auto& t : tensors_) flat.insert(flat.end(), t.data().begin(), t.data().end());
  return flat;
}

ParamStore ParamStore::unflatten(const Layout& layout, std::span<const double> flat) {
  if (flat.size() != layout.total) {
    throw LayoutError("flat buffer has " + std::to_string(flat.size()) + " values, layout expects " +
                      std::to_string(layout.total));
  }
  ParamStore store;
  for (const auto& e : layout.entries) {
    const std::size_t n = shape_size(e.shape);
    store.add(e.name, Tensor(e.shape, std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(e.offset),
                                                          flat.begin() + static_cast<std::ptrdiff_t>(e.offset + n))));
  }
  return store;
}

std::vector<ad::Var> ParamStore::bind(ad::Tape& tape) const {
  std::vector<ad::Var> vars;
  vars.reserve(tensors_.size());
  for (const auto& t : tensors_) vars.push_back(tape.param(t));
  return vars;
}

std::vector<Tensor> collect_grads(const ad::Tape& tape, std::span<const ad::Var> bound) {
  std::vector<Tensor> grads;
  grads.reserve(bound.size());
  for (const auto& v : bound) grads.push_back(tape.grad(v.id()));
  return grads;
}

void sgd_step(ParamStore& params, std::span<const Tensor> grads, double lr, double weight_decay) {
  if (grads.size() != params.count()) {
    throw LayoutError("sgd_step: " + std::to_string(grads.size()) + " gradients for " +
                      std::to_string(params.count()) + " parameters");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    Tensor& p = params[i];
    if (grads[i].shape() != p.shape()) {
      throw LayoutError("sgd_step: gradient shape " + shape_str(grads[i].shape()) + " for parameter '" +
                        params.name(i) + "' of shape " + shape_str(p.shape()));
    }
    for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * (grads[i][j] + weight_decay * p[j]);
  }
}

namespace {

constexpr char kMagic[4] = {'P', 'F', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ParseError("truncated checkpoint");
  return v;
}

}  // namespace

void write_checkpoint(std::ostream& out, const ParamStore& params) {
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.count()));
  for (std::size_t i = 0; i < params.count(); ++i) {
    const std::string& name = params.name(i);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Tensor& t = params[i];
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
}

ParamStore read_checkpoint(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw ParseError("not a protofed checkpoint");
  if (get<std::uint32_t>(in) != kVersion) throw ParseError("unsupported checkpoint version");
  const auto count = get<std::uint32_t>(in);
  ParamStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(get<std::uint32_t>(in), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    Shape shape(get<std::uint32_t>(in));
    for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(in));
    std::vector<double> data(shape_size(shape));
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) throw ParseError("truncated checkpoint tensor '" + name + "'");
    store.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return store;
}

void save_checkpoint(const std::string& path, const ParamStore& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  write_checkpoint(out, params);
}

ParamStore load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace protofed
