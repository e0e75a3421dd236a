#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "protofed/autodiff.hpp"
#include "protofed/batch.hpp"
#include "protofed/params.hpp"
#include "protofed/rng.hpp"

namespace protofed {

enum class EncoderKind { MLP, Conv1dGRU, GRU };

/// One modality encoder f_m.
///  - MLP: Linear/ReLU/Dropout stack over a flat [B, input_dim] input; the last
///    width in `mlp_widths` is the token width.
///  - Conv1dGRU: conv stack (no activation between convs), ReLU, MaxPool, Dropout,
///    then a single-layer GRU over [B, L, input_dim]; last hidden state is the token.
///  - GRU: a single GRU over [B, L, input_dim].
struct EncoderSpec {
  EncoderKind kind = EncoderKind::MLP;
  std::size_t input_dim = 0;
  std::vector<std::size_t> mlp_widths;
  std::vector<std::size_t> conv_channels;
  std::size_t kernel = 5;
  std::size_t padding = 2;
  std::size_t pool = 2;
  double dropout = 0.0;

  bool is_sequence() const noexcept { return kind != EncoderKind::MLP; }
};

/// Multi-head additive attention over modality tokens:
/// Linear(token, hidden) -> Tanh -> Linear(hidden, heads).
struct FusionSpec {
  std::size_t token_dim = 128;
  std::size_t hidden = 512;
  std::size_t heads = 6;

  std::size_t fused_dim() const noexcept { return heads * token_dim; }
};

struct NetSpec {
  std::string preset = "custom";
  std::vector<std::string> modality_names;
  std::vector<EncoderSpec> encoders;
  FusionSpec fusion;
  std::size_t classifier_hidden = 64;
  std::size_t num_classes = 2;
  std::size_t proj_dim = 64;
  double classifier_dropout = 0.0;
  /// Sequence length expected by sequence encoders.
  std::size_t seq_len = 8;

  std::size_t num_modalities() const noexcept { return encoders.size(); }
  /// Per-sample input shape of modality m: {input_dim} or {seq_len, input_dim}.
  Shape sample_shape(std::size_t m) const;
  void validate() const;
};

struct PresetOptions {
  std::size_t proj_dim = 64;
  std::size_t heads = 6;
  // Only consulted by the "synthetic" preset.
  std::size_t num_modalities = 2;
  std::size_t num_classes = 4;
  std::vector<std::size_t> input_dims;
  std::size_t seq_len = 8;
};

/// Architecture presets "ucihar", "hatefulmemes", "meld" and "synthetic".
NetSpec make_preset(std::string_view name, const PresetOptions& opts = {});

/// Parameters bound to a tape, addressable by name.
struct BoundParams {
  const ParamStore* store = nullptr;
  std::vector<ad::Var> vars;

  ad::Var operator()(const std::string& name) const { return vars.at(store->index_of(name)); }
};

BoundParams bind(ad::Tape& tape, const ParamStore& params);

struct ForwardOptions {
  /// Honor dropout rates (stochastic mode). Off by default for determinism.
  bool stochastic = false;
  Rng* rng = nullptr;
};

struct FusionResult {
  ad::Var fused;    // [B, H*n]
  ad::Var weights;  // [B, H, M], softmax over the last axis
};

struct ForwardResult {
  std::vector<ad::Var> z;       // per modality [B, n]
  std::vector<ad::Var> zprime;  // per modality [B, d]
  ad::Var attention;            // [B, H, M]
  ad::Var e;                    // [B, H*n]
  ad::Var r;                    // [B, d]
  ad::Var logits;               // [B, K]
};

class MultimodalNet {
 public:
  explicit MultimodalNet(NetSpec spec);

  const NetSpec& spec() const noexcept { return spec_; }

  /// Glorot-uniform weights, zero biases.
  ParamStore init_params(Rng& rng) const;

  ad::Var encode(const BoundParams& p, ad::Var x, std::size_t m, const ForwardOptions& opts = {}) const;
  FusionResult fuse(const BoundParams& p, std::span<const ad::Var> tokens) const;
  ad::Var project_shared(const BoundParams& p, ad::Var e) const;
  ad::Var project_specific(const BoundParams& p, ad::Var z) const;
  ad::Var classify(const BoundParams& p, ad::Var e, const ForwardOptions& opts = {}) const;

  ForwardResult forward_full(ad::Tape& tape, const BoundParams& p, const MultimodalBatch& batch,
                             const ForwardOptions& opts = {}) const;

 private:
  ad::Var dropout(ad::Var x, double rate, const ForwardOptions& opts) const;
  ad::Var gru(const BoundParams& p, const std::string& prefix, ad::Var seq) const;

  NetSpec spec_;
};

}  // namespace protofed
