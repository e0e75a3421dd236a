#include <doctest.h>

#include <cmath>
#include <random>

#include "../support/gradcheck.hpp"
#include "protofed/errors.hpp"
#include "protofed/models.hpp"

using namespace protofed;
using protofed::testing::random_tensor;

namespace {

NetSpec tiny_mlp_spec(std::size_t M = 2, std::size_t n = 3, std::size_t heads = 2) {
  NetSpec s;
  s.fusion.token_dim = n;
  s.fusion.hidden = 4;
  s.fusion.heads = heads;
  s.classifier_hidden = 5;
  s.num_classes = 3;
  s.proj_dim = 4;
  for (std::size_t m = 0; m < M; ++m) {
    EncoderSpec e;
    e.kind = EncoderKind::MLP;
    e.input_dim = 2 + m;
    e.mlp_widths = {4, n};
    s.encoders.push_back(e);
    s.modality_names.push_back("m" + std::to_string(m));
  }
  return s;
}

MultimodalBatch random_batch(const NetSpec& spec, std::size_t B, std::mt19937_64& rng) {
  MultimodalBatch batch;
  for (std::size_t m = 0; m < spec.num_modalities(); ++m) {
    Shape s{B};
    for (auto d : spec.sample_shape(m)) s.push_back(d);
    batch.inputs.push_back(random_tensor(s, rng));
  }
  batch.presence = Tensor(Shape{B, spec.num_modalities()}, 1.0);
  for (std::size_t i = 0; i < B; ++i) batch.labels.push_back(static_cast<int>(i % spec.num_classes));
  return batch;
}

// Row-vector times [in,out] matrix plus bias.
std::vector<double> lin(const std::vector<double>& x, const Tensor& w, const Tensor& b) {
  std::vector<double> y(w.dim(1));
  for (std::size_t j = 0; j < y.size(); ++j) {
    double acc = b[j];
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * w.at(i, j);
    y[j] = acc;
  }
  return y;
}

std::vector<double> relu(std::vector<double> v) {
  for (double& x : v) x = std::max(0.0, x);
  return v;
}

std::vector<double> row(const Tensor& t, std::size_t i) {
  const std::size_t n = t.dim(1);
  return {t.data().begin() + static_cast<std::ptrdiff_t>(i * n), t.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * n)};
}

// Straight-line oracle for the tiny MLP net on one sample.
struct Oracle {
  std::vector<std::vector<double>> z, zp;
  std::vector<double> e, r, logits;
};

Oracle oracle(const NetSpec& spec, const ParamStore& p, const std::vector<std::vector<double>>& x) {
  Oracle o;
  const std::size_t M = x.size(), H = spec.fusion.heads, n = spec.fusion.token_dim;
  for (std::size_t m = 0; m < M; ++m) {
    const std::string pre = "enc" + std::to_string(m);
    auto h = relu(lin(x[m], p.at(pre + ".fc0.weight"), p.at(pre + ".fc0.bias")));
    o.z.push_back(lin(h, p.at(pre + ".fc1.weight"), p.at(pre + ".fc1.bias")));
  }
  std::vector<std::vector<double>> score(M);
  for (std::size_t m = 0; m < M; ++m) {
    auto a = lin(o.z[m], p.at("fusion.fc0.weight"), p.at("fusion.fc0.bias"));
    for (double& v : a) v = std::tanh(v);
    score[m] = lin(a, p.at("fusion.fc1.weight"), p.at("fusion.fc1.bias"));
  }
  o.e.assign(H * n, 0.0);
  for (std::size_t h = 0; h < H; ++h) {
    double mx = -1e300, den = 0;
    for (std::size_t m = 0; m < M; ++m) mx = std::max(mx, score[m][h]);
    for (std::size_t m = 0; m < M; ++m) den += std::exp(score[m][h] - mx);
    for (std::size_t m = 0; m < M; ++m) {
      const double w = std::exp(score[m][h] - mx) / den;
      for (std::size_t j = 0; j < n; ++j) o.e[h * n + j] += w * o.z[m][j];
    }
  }
  o.r = lin(o.e, p.at("proj_shared.weight"), p.at("proj_shared.bias"));
  for (std::size_t m = 0; m < M; ++m) o.zp.push_back(lin(o.z[m], p.at("proj_specific.weight"), p.at("proj_specific.bias")));
  o.logits = lin(relu(lin(o.e, p.at("classifier.fc0.weight"), p.at("classifier.fc0.bias"))),
                 p.at("classifier.fc1.weight"), p.at("classifier.fc1.bias"));
  return o;
}

void check_close(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(tol).scale(1.0));
}

}  // namespace

TEST_CASE("preset shapes follow the architecture tables") {
  const NetSpec har = make_preset("ucihar");
  CHECK(har.fusion.fused_dim() == 768);
  CHECK(har.fusion.hidden == 512);
  CHECK(har.fusion.heads == 6);
  CHECK(har.proj_dim == 64);
  MultimodalNet net(har);
  Rng rng = stream(1, Purpose::Init);
  const ParamStore p = net.init_params(rng);
  CHECK(p.at("classifier.fc0.weight").shape() == Shape{768, 64});
  CHECK(p.at("proj_shared.weight").shape() == Shape{768, 64});
  CHECK(p.at("proj_specific.weight").shape() == Shape{128, 64});
  CHECK(p.at("enc0.conv0.weight").shape() == Shape{32, 3, 5});
  CHECK(p.at("enc0.gru.w_hh").shape() == Shape{128, 384});
  CHECK(make_preset("meld").num_modalities() == 3);
  CHECK_THROWS_AS(make_preset("nope"), ConfigError);
}

TEST_CASE("identity one-layer MLP encoder returns its input") {
  NetSpec s = tiny_mlp_spec(2, 2);
  s.encoders[0].mlp_widths = {2};
  MultimodalNet net(s);
  Rng rng(1);
  ParamStore p = net.init_params(rng);
  p.at("enc0.fc0.weight") = Tensor::matrix({{1, 0}, {0, 1}});
  ad::Tape t;
  auto z = net.encode(bind(t, p), t.constant(Tensor::matrix({{1, 2}})), 0);
  CHECK(z.value() == Tensor::matrix({{1, 2}}));
}

TEST_CASE("zero input propagates only the biases") {
  const NetSpec s = tiny_mlp_spec();
  MultimodalNet net(s);
  Rng rng(2);
  ParamStore p = net.init_params(rng);
  std::mt19937_64 g(3);
  p.at("enc0.fc0.bias") = random_tensor({4}, g);
  p.at("enc0.fc1.bias") = random_tensor({3}, g);
  ad::Tape t;
  auto z = net.encode(bind(t, p), t.constant(Tensor(Shape{1, 2})), 0);
  const auto expect = lin(relu(row(Tensor(Shape{1, 4}, p.at("enc0.fc0.bias").storage()), 0)), p.at("enc0.fc1.weight"),
                          p.at("enc0.fc1.bias"));
  check_close(row(z.value(), 0), expect, 1e-14);
}

TEST_CASE("encoder rejects mis-shaped input") {
  MultimodalNet net(tiny_mlp_spec());
  Rng rng(1);
  const ParamStore p = net.init_params(rng);
  ad::Tape t;
  CHECK_THROWS_AS(net.encode(bind(t, p), t.constant(Tensor(Shape{2, 7})), 0), ShapeError);
}

TEST_CASE("single-token attention repeats the token across heads") {
  MultimodalNet net(tiny_mlp_spec(2, 3, 4));
  Rng rng(4);
  const ParamStore p = net.init_params(rng);
  std::mt19937_64 g(5);
  const Tensor z = random_tensor({2, 3}, g);
  ad::Tape t;
  std::vector<ad::Var> tokens{t.constant(z)};
  const auto fused = net.fuse(bind(t, p), tokens);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t h = 0; h < 4; ++h)
      for (std::size_t j = 0; j < 3; ++j) CHECK(fused.fused.value().at(i, h * 3 + j) == z.at(i, j));
}

TEST_CASE("identical tokens fuse to that token in every head") {
  MultimodalNet net(tiny_mlp_spec());
  Rng rng(6);
  const ParamStore p = net.init_params(rng);
  std::mt19937_64 g(7);
  const Tensor z = random_tensor({3, 3}, g);
  ad::Tape t;
  std::vector<ad::Var> tokens{t.constant(z), t.constant(z)};
  const auto fused = net.fuse(bind(t, p), tokens);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t j = 0; j < 3; ++j) CHECK(fused.fused.value().at(i, h * 3 + j) == doctest::Approx(z.at(i, j)).epsilon(1e-14));
}

TEST_CASE("fusion rejects an empty token list") {
  MultimodalNet net(tiny_mlp_spec());
  Rng rng(1);
  const ParamStore p = net.init_params(rng);
  ad::Tape t;
  std::vector<ad::Var> none;
  CHECK_THROWS_AS(net.fuse(bind(t, p), none), ConfigError);
}

TEST_CASE("projections: zero map, identity map and matmul oracle") {
  NetSpec s = tiny_mlp_spec();
  s.proj_dim = 3;
  MultimodalNet net(s);
  Rng rng(8);
  ParamStore p = net.init_params(rng);
  std::mt19937_64 g(9);
  const Tensor z = random_tensor({2, 3}, g);
  SUBCASE("zero weights and bias") {
    p.at("proj_specific.weight") = Tensor(Shape{3, 3});
    ad::Tape t;
    CHECK(net.project_specific(bind(t, p), t.constant(z)).value() == Tensor(Shape{2, 3}));
  }
  SUBCASE("identity weights") {
    p.at("proj_specific.weight") = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
    ad::Tape t;
    CHECK(net.project_specific(bind(t, p), t.constant(z)).value() == z);
  }
  SUBCASE("fixed seed matches the matrix-product oracle") {
    p.at("proj_shared.bias") = random_tensor({3}, g);
    const Tensor e = random_tensor({2, 6}, g);
    ad::Tape t;
    const Tensor r = net.project_shared(bind(t, p), t.constant(e)).value();
    for (std::size_t i = 0; i < 2; ++i) check_close(row(r, i), lin(row(e, i), p.at("proj_shared.weight"), p.at("proj_shared.bias")), 1e-14);
  }
  ad::Tape t;
  CHECK_THROWS_AS(net.project_shared(bind(t, p), t.constant(Tensor(Shape{2, 5}))), ShapeError);
}

TEST_CASE("forward_full matches a straight-line oracle on a two-sample batch") {
  const NetSpec s = tiny_mlp_spec();
  MultimodalNet net(s);
  Rng rng(10);
  ParamStore p = net.init_params(rng);
  std::mt19937_64 g(11);
  for (std::size_t i = 0; i < p.count(); ++i)
    if (p.name(i).find("bias") != std::string::npos) p[i] = random_tensor(p[i].shape(), g);
  const MultimodalBatch batch = random_batch(s, 2, g);
  ad::Tape t;
  const ForwardResult f = net.forward_full(t, bind(t, p), batch);
  for (std::size_t i = 0; i < 2; ++i) {
    const Oracle o = oracle(s, p, {row(batch.inputs[0], i), row(batch.inputs[1], i)});
    for (std::size_t m = 0; m < 2; ++m) {
      check_close(row(f.z[m].value(), i), o.z[m], 1e-12);
      check_close(row(f.zprime[m].value(), i), o.zp[m], 1e-12);
    }
    check_close(row(f.e.value(), i), o.e, 1e-12);
    check_close(row(f.r.value(), i), o.r, 1e-12);
    check_close(row(f.logits.value(), i), o.logits, 1e-12);
  }
}

TEST_CASE("forward_full shapes hold for every presence pattern and attention rows sum to one") {
  const NetSpec s = tiny_mlp_spec(3, 3, 2);
  MultimodalNet net(s);
  Rng rng(12);
  const ParamStore p = net.init_params(rng);
  std::mt19937_64 g(13);
  for (unsigned pattern = 1; pattern < 8; ++pattern) {
    MultimodalBatch batch = random_batch(s, 4, g);
    for (std::size_t m = 0; m < 3; ++m) {
      if (pattern & (1u << m)) continue;
      batch.inputs[m].fill(0.0);
      for (std::size_t i = 0; i < 4; ++i) batch.presence.at(i, m) = 0.0;
    }
    ad::Tape t;
    const ForwardResult f = net.forward_full(t, bind(t, p), batch);
    CHECK(f.z.size() == 3);
    CHECK(f.zprime.size() == 3);
    for (std::size_t m = 0; m < 3; ++m) {
      CHECK(f.z[m].shape() == Shape{4, 3});
      CHECK(f.zprime[m].shape() == Shape{4, 4});
    }
    CHECK(f.e.shape() == Shape{4, 6});
    CHECK(f.r.shape() == Shape{4, 4});
    CHECK(f.logits.shape() == Shape{4, 3});
    const Tensor& w = f.attention.value();
    for (std::size_t i = 0; i < 4 * 2; ++i) CHECK(w[i * 3] + w[i * 3 + 1] + w[i * 3 + 2] == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("permuting the batch permutes every output") {
  const NetSpec s = tiny_mlp_spec();
  MultimodalNet net(s);
  Rng rng(14);
  const ParamStore p = net.init_params(rng);
  std::mt19937_64 g(15);
  const MultimodalBatch batch = random_batch(s, 4, g);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  MultimodalBatch shuffled = batch;
  for (std::size_t m = 0; m < 2; ++m) {
    const std::size_t w = batch.inputs[m].dim(1);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < w; ++j) shuffled.inputs[m].at(i, j) = batch.inputs[m].at(perm[i], j);
  }
  ad::Tape t1, t2;
  const ForwardResult a = net.forward_full(t1, bind(t1, p), batch);
  const ForwardResult b = net.forward_full(t2, bind(t2, p), shuffled);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(row(b.logits.value(), i) == row(a.logits.value(), perm[i]));
    CHECK(row(b.r.value(), i) == row(a.r.value(), perm[i]));
    CHECK(row(b.e.value(), i) == row(a.e.value(), perm[i]));
  }
}

TEST_CASE("GRU encoder matches a scalar recurrence oracle") {
  NetSpec s;
  s.fusion.token_dim = 2;
  s.fusion.hidden = 3;
  s.fusion.heads = 1;
  s.num_classes = 2;
  s.proj_dim = 2;
  s.seq_len = 3;
  EncoderSpec e;
  e.kind = EncoderKind::GRU;
  e.input_dim = 2;
  s.encoders = {e, e};
  s.modality_names = {"a", "b"};
  MultimodalNet net(s);
  Rng rng(16);
  ParamStore p = net.init_params(rng);
  std::mt19937_64 g(17);
  p.at("enc0.gru.b_ih") = random_tensor({6}, g);
  p.at("enc0.gru.b_hh") = random_tensor({6}, g);
  const Tensor x = random_tensor({1, 3, 2}, g);
  ad::Tape t;
  const Tensor out = net.encode(bind(t, p), t.constant(x), 0).value();
  const Tensor &wi = p.at("enc0.gru.w_ih"), &wh = p.at("enc0.gru.w_hh"), &bi = p.at("enc0.gru.b_ih"),
               &bh = p.at("enc0.gru.b_hh");
  std::vector<double> h(2, 0.0);
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (std::size_t step = 0; step < 3; ++step) {
    std::vector<double> gi(6), gh(6);
    for (std::size_t k = 0; k < 6; ++k) {
      gi[k] = bi[k] + x[step * 2] * wi.at(0, k) + x[step * 2 + 1] * wi.at(1, k);
      gh[k] = bh[k] + h[0] * wh.at(0, k) + h[1] * wh.at(1, k);
    }
    std::vector<double> next(2);
    for (std::size_t j = 0; j < 2; ++j) {
      const double r = sig(gi[j] + gh[j]);
      const double z = sig(gi[2 + j] + gh[2 + j]);
      const double c = std::tanh(gi[4 + j] + r * gh[4 + j]);
      next[j] = (1 - z) * c + z * h[j];
    }
    h = next;
  }
  check_close(row(out, 0), h, 1e-13);
}

TEST_CASE("Conv1d+GRU network: every parameter passes the finite-difference check") {
  NetSpec s;
  s.fusion.token_dim = 3;
  s.fusion.hidden = 3;
  s.fusion.heads = 2;
  s.num_classes = 2;
  s.classifier_hidden = 3;
  s.proj_dim = 2;
  s.seq_len = 4;
  EncoderSpec e;
  e.kind = EncoderKind::Conv1dGRU;
  e.input_dim = 2;
  e.conv_channels = {2, 3};
  e.kernel = 3;
  e.padding = 1;
  e.pool = 2;
  s.encoders = {e, e};
  s.modality_names = {"a", "b"};
  MultimodalNet net(s);
  Rng rng(18);
  const ParamStore p = net.init_params(rng);
  std::mt19937_64 g(19);
  const MultimodalBatch batch = random_batch(s, 2, g);
  std::vector<Tensor> inputs;
  for (std::size_t i = 0; i < p.count(); ++i) inputs.push_back(p[i]);
  auto f = [&](ad::Tape& t, std::span<const ad::Var> vars) {
    BoundParams bound{&p, {vars.begin(), vars.end()}};
    const ForwardResult out = net.forward_full(t, bound, batch);
    return ad::sum(out.logits * out.logits) + ad::sum(out.r * out.r) + ad::sum(out.zprime[1] * out.zprime[0]);
  };
  CHECK(protofed::testing::max_grad_error(inputs, f) < 1e-4);
}

TEST_CASE("dropout only acts in stochastic mode") {
  NetSpec s = tiny_mlp_spec();
  s.encoders[0].dropout = 0.5;
  s.classifier_dropout = 0.5;
  MultimodalNet net(s);
  Rng rng(20);
  const ParamStore p = net.init_params(rng);
  std::mt19937_64 g(21);
  const MultimodalBatch batch = random_batch(s, 4, g);
  ad::Tape t1, t2, t3;
  const auto det = net.forward_full(t1, bind(t1, p), batch).logits.value();
  CHECK(net.forward_full(t2, bind(t2, p), batch).logits.value() == det);
  Rng drop(22);
  ForwardOptions opts{true, &drop};
  CHECK(net.forward_full(t3, bind(t3, p), batch, opts).logits.value() != det);
}
