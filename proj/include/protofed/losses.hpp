#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "protofed/autodiff.hpp"
#include "protofed/prototypes.hpp"

namespace protofed {

struct LossWeights {
  double alpha_reg = 1.0;
  double alpha_con = 2.0;
  double alpha_align = 0.1;
  double tau = 0.1;

  void validate() const;
};

struct LossToggles {
  bool cmpr = true;
  bool cmpc = true;
  bool cma = true;

  static LossToggles none() { return {false, false, false}; }
  friend bool operator==(const LossToggles&, const LossToggles&) = default;
};

/// Distance used by the cross-modal alignment term.
enum class CmaKind { L2, L1, SmoothL1, KL };

CmaKind parse_cma_kind(std::string_view s);
const char* cma_kind_name(CmaKind kind);

// Every term below is a per-batch mean: the summed per-sample contributions
// divided by the batch size B. Excluded samples contribute zero.

/// Mean of -log softmax(logits)[y]. DataError on labels outside [0,K).
ad::Var cross_entropy(ad::Var logits, std::span<const int> labels);

/// Squared distance between each r_i and the prototype of its class.
/// Samples whose class has no prototype are excluded.
ad::Var cmpr_loss(ad::Var r, std::span<const int> labels, const PrototypeSet& prototypes);

/// Cosine/temperature contrastive loss of each modality's projected feature
/// against the prototypes, summed over modalities. `presence` is [B, M];
/// zero entries drop that (sample, modality) pair. Absent prototypes leave
/// the denominator; samples of a class without a prototype are excluded.
ad::Var cmpc_loss(std::span<const ad::Var> zprimes, const Tensor& presence, std::span<const int> labels,
                  const PrototypeSet& prototypes, double tau);
/// Variant with one prototype table per modality (unimodal-prototype ablation).
ad::Var cmpc_loss(std::span<const ad::Var> zprimes, const Tensor& presence, std::span<const int> labels,
                  std::span<const PrototypeSet* const> per_modality, double tau);

/// Sum over unordered modality pairs (m1 < m2) of the per-sample distance
/// between projected features, counted where both are present. Zero when
/// fewer than two modalities are given. KL uses KL(softmax(z'_m1) || softmax(z'_m2)).
ad::Var cma_loss(std::span<const ad::Var> zprimes, const Tensor& presence, CmaKind kind);

struct LossParts {
  ad::Var ce;
  std::optional<ad::Var> cmpr;
  std::optional<ad::Var> cmpc;
  std::optional<ad::Var> cma;
};

/// L_S + a_reg L_CMPR + a_con L_CMPC + a_align L_CMA over the enabled and
/// available terms; the rest contribute nothing.
ad::Var total_loss(const LossParts& parts, const LossWeights& weights, const LossToggles& toggles);

}  // namespace protofed
