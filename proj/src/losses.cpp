#include "protofed/losses.hpp"

#include <string>

#include "protofed/errors.hpp"

namespace protofed {

using ad::Var;

void LossWeights::validate() const {
  if (!(tau > 0)) throw ConfigError("tau must be > 0");
  if (alpha_reg < 0 || alpha_con < 0 || alpha_align < 0) throw ConfigError("loss weights must be >= 0");
}

CmaKind parse_cma_kind(std::string_view s) {
  if (s == "l2") return CmaKind::L2;
  if (s == "l1") return CmaKind::L1;
  if (s == "smooth_l1") return CmaKind::SmoothL1;
  if (s == "kl") return CmaKind::KL;
  throw ConfigError("unknown cma_kind '" + std::string(s) + "' (expected l2, l1, smooth_l1, kl)");
}

const char* cma_kind_name(CmaKind kind) {
  switch (kind) {
    case CmaKind::L2: return "l2";
    case CmaKind::L1: return "l1";
    case CmaKind::SmoothL1: return "smooth_l1";
    case CmaKind::KL: return "kl";
  }
  return "?";
}

namespace {

std::size_t batch_rows(Var x, std::span<const int> labels, const char* what) {
  if (x.shape().size() != 2) throw ShapeError(std::string(what) + " expects a [B,d] input");
  const std::size_t B = x.shape()[0];
  if (labels.size() != B) throw DataError(std::string(what) + ": label count does not match batch");
  if (B == 0) throw DataError(std::string(what) + ": empty batch");
  return B;
}

void check_labels(std::span<const int> labels, std::size_t K) {
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= K) {
      throw DataError("label " + std::to_string(y) + " outside [0," + std::to_string(K) + ")");
    }
  }
}

Var zero(ad::Tape& tape) { return tape.constant(Tensor::scalar(0.0)); }

void check_presence(const Tensor& presence, std::size_t B, std::size_t M) {
  if (presence.shape() != Shape{B, M}) {
    throw ShapeError("presence mask " + shape_str(presence.shape()) + ", expected " + shape_str({B, M}));
  }
}

}  // namespace

Var cross_entropy(Var logits, std::span<const int> labels) {
  const std::size_t B = batch_rows(logits, labels, "cross_entropy");
  const std::size_t K = logits.shape()[1];
  check_labels(labels, K);
  Tensor onehot(Shape{B, K});
  for (std::size_t i = 0; i < B; ++i) onehot.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  Var picked = ad::sum(ad::log_softmax(logits) * logits.tape()->constant(std::move(onehot)));
  return ad::scalar_mul(picked, -1.0 / static_cast<double>(B));
}

Var cmpr_loss(Var r, std::span<const int> labels, const PrototypeSet& prototypes) {
  const std::size_t B = batch_rows(r, labels, "cmpr_loss");
  const std::size_t d = r.shape()[1];
  if (prototypes.dim() != d) {
    throw ShapeError("cmpr_loss: representation width " + std::to_string(d) + " vs prototype width " +
                     std::to_string(prototypes.dim()));
  }
  check_labels(labels, prototypes.num_classes());
  ad::Tape& tape = *r.tape();
  Tensor target(Shape{B, d});
  Tensor mask(Shape{B});
  bool any = false;
  for (std::size_t i = 0; i < B; ++i) {
    const auto k = static_cast<std::size_t>(labels[i]);
    if (!prototypes.has(k)) continue;
    const auto& v = prototypes.at(k).vector;
    std::copy(v.begin(), v.end(), target.data().begin() + static_cast<std::ptrdiff_t>(i * d));
    mask[i] = 1.0;
    any = true;
  }
  if (!any) return zero(tape);
  Var diff = r - tape.constant(std::move(target));
  Var per_sample = ad::sum(diff * diff, 1);
  return ad::scalar_mul(ad::sum(per_sample * tape.constant(std::move(mask))), 1.0 / static_cast<double>(B));
}

Var cmpc_loss(std::span<const Var> zprimes, const Tensor& presence, std::span<const int> labels,
              std::span<const PrototypeSet* const> per_modality, double tau) {
  if (!(tau > 0)) throw ConfigError("cmpc_loss: tau must be > 0");
  if (zprimes.empty()) throw ShapeError("cmpc_loss: no modality features");
  if (per_modality.size() != zprimes.size()) throw ShapeError("cmpc_loss: one prototype table per modality");
  const std::size_t B = batch_rows(zprimes[0], labels, "cmpc_loss");
  const std::size_t M = zprimes.size();
  check_presence(presence, B, M);
  ad::Tape& tape = *zprimes[0].tape();
  std::vector<Var> terms;
  for (std::size_t m = 0; m < M; ++m) {
    const PrototypeSet& protos = *per_modality[m];
    const std::size_t d = zprimes[m].shape().at(1);
    if (protos.dim() != d) throw ShapeError("cmpc_loss: feature width does not match prototypes");
    const auto avail = protos.classes();
    if (avail.empty()) throw ConfigError("cmpc_loss: empty prototype set");
    check_labels(labels, protos.num_classes());
    std::vector<long> column(protos.num_classes(), -1);
    Tensor table(Shape{avail.size(), d});
    for (std::size_t c = 0; c < avail.size(); ++c) {
      column[avail[c]] = static_cast<long>(c);
      const auto& v = protos.at(avail[c]).vector;
      std::copy(v.begin(), v.end(), table.data().begin() + static_cast<std::ptrdiff_t>(c * d));
    }
    Tensor select(Shape{B, avail.size()});
    bool any = false;
    for (std::size_t i = 0; i < B; ++i) {
      const long c = column[static_cast<std::size_t>(labels[i])];
      if (c < 0 || presence.at(i, m) == 0.0) continue;
      select.at(i, static_cast<std::size_t>(c)) = 1.0;
      any = true;
    }
    if (!any) continue;
    Var logits = ad::scalar_mul(ad::cosine_sim(zprimes[m], tape.constant(std::move(table))), 1.0 / tau);
    terms.push_back(ad::sum(ad::log_softmax(logits) * tape.constant(std::move(select))));
  }
  if (terms.empty()) return zero(tape);
  Var total = terms[0];
  for (std::size_t t = 1; t < terms.size(); ++t) total = total + terms[t];
  return ad::scalar_mul(total, -1.0 / static_cast<double>(B));
}

Var cmpc_loss(std::span<const Var> zprimes, const Tensor& presence, std::span<const int> labels,
              const PrototypeSet& prototypes, double tau) {
  std::vector<const PrototypeSet*> tables(zprimes.size(), &prototypes);
  return cmpc_loss(zprimes, presence, labels, tables, tau);
}

Var cma_loss(std::span<const Var> zprimes, const Tensor& presence, CmaKind kind) {
  if (zprimes.empty()) throw ShapeError("cma_loss: no modality features");
  const Shape& s0 = zprimes[0].shape();
  if (s0.size() != 2) throw ShapeError("cma_loss expects [B,d] features");
  const std::size_t B = s0[0], M = zprimes.size();
  check_presence(presence, B, M);
  for (const Var& z : zprimes) {
    if (z.shape() != s0) throw ShapeError("cma_loss: modality features differ in shape");
  }
  ad::Tape& tape = *zprimes[0].tape();
  std::vector<Var> terms;
  for (std::size_t a = 0; a < M; ++a)
    for (std::size_t b = a + 1; b < M; ++b) {
      Tensor pair_mask(Shape{B});
      bool any = false;
      for (std::size_t i = 0; i < B; ++i) {
        pair_mask[i] = presence.at(i, a) * presence.at(i, b);
        any = any || pair_mask[i] != 0.0;
      }
      if (!any) continue;
      Var dist;
      switch (kind) {
        case CmaKind::L2: {
          Var diff = zprimes[a] - zprimes[b];
          dist = ad::sum(diff * diff, 1);
          break;
        }
        case CmaKind::L1:
          dist = ad::sum(ad::abs(zprimes[a] - zprimes[b]), 1);
          break;
        case CmaKind::SmoothL1:
          dist = ad::sum(ad::smooth_l1(zprimes[a] - zprimes[b], 1.0), 1);
          break;
        case CmaKind::KL: {
          Var logp = ad::log_softmax(zprimes[a]);
          Var logq = ad::log_softmax(zprimes[b]);
          dist = ad::sum(ad::softmax(zprimes[a]) * (logp - logq), 1);
          break;
        }
      }
      terms.push_back(ad::sum(dist * tape.constant(std::move(pair_mask))));
    }
  if (terms.empty()) return zero(tape);
  Var total = terms[0];
  for (std::size_t t = 1; t < terms.size(); ++t) total = total + terms[t];
  return ad::scalar_mul(total, 1.0 / static_cast<double>(B));
}

Var total_loss(const LossParts& parts, const LossWeights& weights, const LossToggles& toggles) {
  Var total = parts.ce;
  if (toggles.cmpr && parts.cmpr) total = total + ad::scalar_mul(*parts.cmpr, weights.alpha_reg);
  if (toggles.cmpc && parts.cmpc) total = total + ad::scalar_mul(*parts.cmpc, weights.alpha_con);
  if (toggles.cma && parts.cma) total = total + ad::scalar_mul(*parts.cma, weights.alpha_align);
  return total;
}

}  // namespace protofed
