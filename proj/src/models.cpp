#include "protofed/models.hpp"

#include <cmath>

#include "protofed/errors.hpp"

namespace protofed {

using ad::Var;

Shape NetSpec::sample_shape(std::size_t m) const {
  const EncoderSpec& enc = encoders.at(m);
  if (enc.is_sequence()) return {seq_len, enc.input_dim};
  return {enc.input_dim};
}

void NetSpec::validate() const {
  if (encoders.empty()) throw ConfigError("network needs at least one modality encoder");
  if (modality_names.size() != encoders.size()) throw ConfigError("modality_names must match encoders");
  if (num_classes < 2) throw ConfigError("network needs at least two classes");
  if (proj_dim == 0 || fusion.heads == 0 || fusion.hidden == 0 || fusion.token_dim == 0) {
    throw ConfigError("projection dim, heads, attention width and token width must be positive");
  }
  for (std::size_t m = 0; m < encoders.size(); ++m) {
    const EncoderSpec& enc = encoders[m];
    if (enc.input_dim == 0) throw ConfigError("encoder " + modality_names[m] + " has zero input width");
    if (enc.dropout < 0 || enc.dropout >= 1) throw ConfigError("dropout must lie in [0,1)");
    switch (enc.kind) {
      case EncoderKind::MLP:
        if (enc.mlp_widths.empty() || enc.mlp_widths.back() != fusion.token_dim) {
          throw ConfigError("MLP encoder " + modality_names[m] + " must end at token width " +
                            std::to_string(fusion.token_dim));
        }
        break;
      case EncoderKind::Conv1dGRU: {
        if (enc.conv_channels.empty()) throw ConfigError("Conv1dGRU encoder needs conv layers");
        std::size_t len = seq_len;
        for (std::size_t i = 0; i < enc.conv_channels.size(); ++i) {
          if (len + 2 * enc.padding < enc.kernel) throw ConfigError("sequence too short for conv kernel");
          len = len + 2 * enc.padding - enc.kernel + 1;
        }
        if (enc.pool == 0 || len < enc.pool) throw ConfigError("sequence too short for pooling");
        break;
      }
      case EncoderKind::GRU:
        break;
    }
  }
}

namespace {

EncoderSpec conv_gru(std::size_t channels, double dropout) {
  EncoderSpec e;
  e.kind = EncoderKind::Conv1dGRU;
  e.input_dim = channels;
  e.conv_channels = {32, 64, 128};
  e.kernel = 5;
  e.padding = 2;
  e.pool = 2;
  e.dropout = dropout;
  return e;
}

EncoderSpec plain_gru(std::size_t input, double dropout) {
  EncoderSpec e;
  e.kind = EncoderKind::GRU;
  e.input_dim = input;
  e.dropout = dropout;
  return e;
}

}  // namespace

NetSpec make_preset(std::string_view name, const PresetOptions& opts) {
  NetSpec s;
  s.preset = std::string(name);
  s.proj_dim = opts.proj_dim;
  s.fusion.heads = opts.heads;
  s.classifier_hidden = 64;
  s.seq_len = opts.seq_len;
  if (name == "ucihar") {
    s.modality_names = {"acc", "gyro"};
    s.encoders = {conv_gru(3, 0.1), conv_gru(3, 0.1)};
    s.fusion.token_dim = 128;
    s.fusion.hidden = 512;
    s.num_classes = 6;
    s.classifier_dropout = 0.1;
  } else if (name == "hatefulmemes") {
    EncoderSpec image;
    image.kind = EncoderKind::MLP;
    image.input_dim = 1280;
    image.mlp_widths = {128, 128};
    image.dropout = 0.1;
    s.modality_names = {"image", "text"};
    s.encoders = {image, plain_gru(512, 0.1)};
    s.fusion.token_dim = 128;
    s.fusion.hidden = 512;
    s.num_classes = 2;
    s.classifier_dropout = 0.1;
  } else if (name == "meld") {
    s.modality_names = {"audio", "text", "video"};
    s.encoders = {conv_gru(80, 0.3), plain_gru(512, 0.3), plain_gru(1280, 0.3)};
    s.fusion.token_dim = 128;
    s.fusion.hidden = 512;
    s.num_classes = 4;
    s.classifier_dropout = 0.3;
  } else if (name == "synthetic") {
    // Desk-scale stand-in: small MLP encoders over flat features.
    s.fusion.token_dim = 32;
    s.fusion.hidden = 64;
    s.num_classes = opts.num_classes;
    for (std::size_t m = 0; m < opts.num_modalities; ++m) {
      EncoderSpec e;
      e.kind = EncoderKind::MLP;
      e.input_dim = m < opts.input_dims.size() ? opts.input_dims[m] : 16;
      e.mlp_widths = {64, s.fusion.token_dim};
      e.dropout = 0.1;
      s.encoders.push_back(e);
      s.modality_names.push_back("m" + std::to_string(m));
    }
    s.classifier_dropout = 0.1;
  } else {
    throw ConfigError("unknown architecture preset '" + std::string(name) + "'");
  }
  s.validate();
  return s;
}

BoundParams bind(ad::Tape& tape, const ParamStore& params) { return {&params, params.bind(tape)}; }

MultimodalNet::MultimodalNet(NetSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

namespace {

Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

void add_linear(ParamStore& ps, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
  ps.add(prefix + ".weight", glorot({in, out}, in, out, rng));
  ps.add(prefix + ".bias", Tensor(Shape{out}));
}

void add_gru(ParamStore& ps, const std::string& prefix, std::size_t in, std::size_t hidden, Rng& rng) {
  ps.add(prefix + ".w_ih", glorot({in, 3 * hidden}, in, 3 * hidden, rng));
  ps.add(prefix + ".w_hh", glorot({hidden, 3 * hidden}, hidden, 3 * hidden, rng));
  ps.add(prefix + ".b_ih", Tensor(Shape{3 * hidden}));
  ps.add(prefix + ".b_hh", Tensor(Shape{3 * hidden}));
}

Var linear(const BoundParams& p, const std::string& prefix, Var x) {
  return ad::matmul(x, p(prefix + ".weight")) + p(prefix + ".bias");
}

std::string enc_prefix(std::size_t m) { return "enc" + std::to_string(m); }

}  // namespace

ParamStore MultimodalNet::init_params(Rng& rng) const {
  ParamStore ps;
  const std::size_t n = spec_.fusion.token_dim;
  for (std::size_t m = 0; m < spec_.num_modalities(); ++m) {
    const EncoderSpec& enc = spec_.encoders[m];
    const std::string pre = enc_prefix(m);
    switch (enc.kind) {
      case EncoderKind::MLP: {
        std::size_t in = enc.input_dim;
        for (std::size_t l = 0; l < enc.mlp_widths.size(); ++l) {
          add_linear(ps, pre + ".fc" + std::to_string(l), in, enc.mlp_widths[l], rng);
          in = enc.mlp_widths[l];
        }
        break;
      }
      case EncoderKind::Conv1dGRU: {
        std::size_t in = enc.input_dim;
        for (std::size_t l = 0; l < enc.conv_channels.size(); ++l) {
          const std::size_t out = enc.conv_channels[l];
          const std::string c = pre + ".conv" + std::to_string(l);
          ps.add(c + ".weight", glorot({out, in, enc.kernel}, in * enc.kernel, out * enc.kernel, rng));
          ps.add(c + ".bias", Tensor(Shape{out}));
          in = out;
        }
        add_gru(ps, pre + ".gru", in, n, rng);
        break;
      }
      case EncoderKind::GRU:
        add_gru(ps, pre + ".gru", enc.input_dim, n, rng);
        break;
    }
  }
  add_linear(ps, "fusion.fc0", n, spec_.fusion.hidden, rng);
  add_linear(ps, "fusion.fc1", spec_.fusion.hidden, spec_.fusion.heads, rng);
  const std::size_t fused = spec_.fusion.fused_dim();
  add_linear(ps, "classifier.fc0", fused, spec_.classifier_hidden, rng);
  add_linear(ps, "classifier.fc1", spec_.classifier_hidden, spec_.num_classes, rng);
  add_linear(ps, "proj_shared", fused, spec_.proj_dim, rng);
  add_linear(ps, "proj_specific", n, spec_.proj_dim, rng);
  return ps;
}

Var MultimodalNet::dropout(Var x, double rate, const ForwardOptions& opts) const {
  if (!opts.stochastic || rate == 0.0) return x;
  if (!opts.rng) throw ConfigError("stochastic forward pass needs an RNG");
  return ad::dropout(x, rate, *opts.rng);
}

// PyTorch gate layout (r, z, n):
//   r = s(x Wir + bir + h Whr + bhr), z = s(x Wiz + biz + h Whz + bhz)
//   c = tanh(x Win + bin + r * (h Whn + bhn)),  h' = (1 - z) c + z h
Var MultimodalNet::gru(const BoundParams& p, const std::string& prefix, Var seq) const {
  const Shape& s = seq.shape();
  const std::size_t B = s[0], L = s[1], C = s[2];
  const std::size_t H = spec_.fusion.token_dim;
  ad::Tape& tape = *seq.tape();
  Var gates_in = ad::matmul(ad::reshape(seq, {B * L, C}), p(prefix + ".w_ih")) + p(prefix + ".b_ih");
  gates_in = ad::reshape(gates_in, {B, L, 3 * H});
  Var w_hh = p(prefix + ".w_hh");
  Var b_hh = p(prefix + ".b_hh");
  Var h = tape.constant(Tensor(Shape{B, H}));
  for (std::size_t t = 0; t < L; ++t) {
    Var gi = ad::reshape(ad::slice(gates_in, 1, t, t + 1), {B, 3 * H});
    Var gh = ad::matmul(h, w_hh) + b_hh;
    Var r = ad::sigmoid(ad::slice(gi, 1, 0, H) + ad::slice(gh, 1, 0, H));
    Var z = ad::sigmoid(ad::slice(gi, 1, H, 2 * H) + ad::slice(gh, 1, H, 2 * H));
    Var c = ad::tanh(ad::slice(gi, 1, 2 * H, 3 * H) + r * ad::slice(gh, 1, 2 * H, 3 * H));
    h = c + z * (h - c);
  }
  return h;
}

Var MultimodalNet::encode(const BoundParams& p, Var x, std::size_t m, const ForwardOptions& opts) const {
  if (m >= spec_.num_modalities()) throw ShapeError("modality index out of range");
  const EncoderSpec& enc = spec_.encoders[m];
  const Shape& s = x.shape();
  const std::string pre = enc_prefix(m);
  const bool ok = enc.is_sequence() ? (s.size() == 3 && s[2] == enc.input_dim && s[1] > 0)
                                    : (s.size() == 2 && s[1] == enc.input_dim);
  if (!ok) {
    throw ShapeError("encoder " + spec_.modality_names[m] + " got input " + shape_str(s) + ", expected [B," +
                     (enc.is_sequence() ? "L," : "") + std::to_string(enc.input_dim) + "]");
  }
  switch (enc.kind) {
    case EncoderKind::MLP: {
      Var h = x;
      for (std::size_t l = 0; l < enc.mlp_widths.size(); ++l) {
        h = linear(p, pre + ".fc" + std::to_string(l), h);
        if (l + 1 < enc.mlp_widths.size()) h = dropout(ad::relu(h), enc.dropout, opts);
      }
      return h;
    }
    case EncoderKind::Conv1dGRU: {
      Var h = x;
      for (std::size_t l = 0; l < enc.conv_channels.size(); ++l) {
        const std::string c = pre + ".conv" + std::to_string(l);
        h = ad::conv1d(h, p(c + ".weight"), p(c + ".bias"), 1, enc.padding);
      }
      h = ad::maxpool1d(ad::relu(h), enc.pool, enc.pool);
      h = dropout(h, enc.dropout, opts);
      return dropout(gru(p, pre + ".gru", h), enc.dropout, opts);
    }
    case EncoderKind::GRU:
      return dropout(gru(p, pre + ".gru", x), enc.dropout, opts);
  }
  throw ShapeError("unknown encoder kind");
}

FusionResult MultimodalNet::fuse(const BoundParams& p, std::span<const Var> tokens) const {
  if (tokens.empty()) throw ConfigError("fusion needs at least one modality token");
  const std::size_t n = spec_.fusion.token_dim, H = spec_.fusion.heads;
  const std::size_t B = tokens[0].shape().at(0);
  std::vector<Var> scores, stacked;
  for (const Var& z : tokens) {
    if (z.shape() != Shape{B, n}) throw ShapeError("fusion token " + shape_str(z.shape()) + ", expected [B,n]");
    Var s = linear(p, "fusion.fc1", ad::tanh(linear(p, "fusion.fc0", z)));
    scores.push_back(ad::reshape(s, {B, H, 1}));
    stacked.push_back(ad::reshape(z, {B, 1, n}));
  }
  Var weights = ad::softmax(ad::concat(scores, 2));  // [B,H,M]
  Var heads = ad::matmul(weights, ad::concat(stacked, 1));  // [B,H,M]x[B,M,n]
  return {ad::reshape(heads, {B, H * n}), weights};
}

Var MultimodalNet::project_shared(const BoundParams& p, Var e) const {
  if (e.shape().size() != 2 || e.shape()[1] != spec_.fusion.fused_dim()) {
    throw ShapeError("project_shared input " + shape_str(e.shape()));
  }
  return linear(p, "proj_shared", e);
}

Var MultimodalNet::project_specific(const BoundParams& p, Var z) const {
  if (z.shape().size() != 2 || z.shape()[1] != spec_.fusion.token_dim) {
    throw ShapeError("project_specific input " + shape_str(z.shape()));
  }
  return linear(p, "proj_specific", z);
}

Var MultimodalNet::classify(const BoundParams& p, Var e, const ForwardOptions& opts) const {
  Var h = dropout(ad::relu(linear(p, "classifier.fc0", e)), spec_.classifier_dropout, opts);
  return linear(p, "classifier.fc1", h);
}

ForwardResult MultimodalNet::forward_full(ad::Tape& tape, const BoundParams& p, const MultimodalBatch& batch,
                                          const ForwardOptions& opts) const {
  const std::size_t M = spec_.num_modalities();
  if (batch.num_modalities() != M) {
    throw ShapeError("batch has " + std::to_string(batch.num_modalities()) + " modalities, network expects " +
                     std::to_string(M));
  }
  if (batch.presence.shape() != Shape{batch.size(), M}) throw ShapeError("presence mask must be [B,M]");
  ForwardResult out;
  for (std::size_t m = 0; m < M; ++m) {
    if (batch.inputs[m].rank() == 0 || batch.inputs[m].dim(0) != batch.size()) {
      throw ShapeError("modality " + spec_.modality_names[m] + " input does not match batch size");
    }
    out.z.push_back(encode(p, tape.constant(batch.inputs[m]), m, opts));
  }
  FusionResult fused = fuse(p, out.z);
  out.e = fused.fused;
  out.attention = fused.weights;
  out.r = project_shared(p, out.e);
  for (const Var& z : out.z) out.zprime.push_back(project_specific(p, z));
  out.logits = classify(p, out.e, opts);
  return out;
}

}  // namespace protofed
