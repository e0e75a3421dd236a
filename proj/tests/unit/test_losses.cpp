#include <doctest.h>

#include <cmath>
#include <random>

#include "../support/gradcheck.hpp"
#include "../support/oracles.hpp"
#include "protofed/errors.hpp"
#include "protofed/losses.hpp"

using namespace protofed;
using namespace protofed::testing;

namespace {

PrototypeSet set_of(std::vector<std::vector<double>> vs) {
  PrototypeSet P(vs.size(), vs[0].size());
  for (std::size_t k = 0; k < vs.size(); ++k) P.set(k, vs[k], 1);
  return P;
}

std::vector<ad::Var> consts(ad::Tape& t, const std::vector<Tensor>& xs) {
  std::vector<ad::Var> out;
  for (const auto& x : xs) out.push_back(t.constant(x));
  return out;
}

}  // namespace

TEST_CASE("cross entropy examples") {
  ad::Tape t;
  std::vector<int> y{0, 3};
  CHECK(cross_entropy(t.constant(Tensor(Shape{2, 4})), y).value().item() == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  CHECK(cross_entropy(t.constant(Tensor::matrix({{1e6, 0}, {0, 1e6}})), std::vector<int>{0, 1}).value().item() ==
        doctest::Approx(0.0));
  const Tensor logits = Tensor::matrix({{0.2, -1.0, 0.5}, {1.5, 0.3, -0.7}});
  std::vector<int> labels{2, 1};
  double expect = 0;
  for (std::size_t i = 0; i < 2; ++i) {
    double den = 0;
    for (std::size_t k = 0; k < 3; ++k) den += std::exp(logits.at(i, k));
    expect -= std::log(std::exp(logits.at(i, static_cast<std::size_t>(labels[i]))) / den);
  }
  CHECK(cross_entropy(t.constant(logits), labels).value().item() == doctest::Approx(expect / 2).epsilon(1e-12));
  CHECK_THROWS_AS(cross_entropy(t.constant(logits), std::vector<int>{0, 3}), DataError);
}

TEST_CASE("cmpr examples") {
  ad::Tape t;
  const PrototypeSet P = set_of({{0, 0}, {1, 1}});
  CHECK(cmpr_loss(t.constant(Tensor::matrix({{0, 0}, {1, 1}})), std::vector<int>{0, 1}, P).value().item() == 0.0);
  CHECK(cmpr_loss(t.constant(Tensor::matrix({{1, 0}})), std::vector<int>{0}, P).value().item() == 1.0);
  CHECK_THROWS_AS(cmpr_loss(t.constant(Tensor(Shape{1, 3})), std::vector<int>{0}, P), ShapeError);
}

TEST_CASE("cmpr matches a per-sample loop oracle") {
  std::mt19937_64 rng(1);
  for (int c = 0; c < 20; ++c) {
    const std::size_t B = dim(rng, 1, 6), K = dim(rng, 2, 4), d = dim(rng, 1, 5);
    const auto y = random_labels(B, K, rng);
    const PrototypeSet P = random_prototypes(K, d, rng, 0.6);
    const Tensor r = random_tensor({B, d}, rng);
    double expect = 0;
    for (std::size_t i = 0; i < B; ++i) {
      const auto k = static_cast<std::size_t>(y[i]);
      if (!P.has(k)) continue;
      for (std::size_t j = 0; j < d; ++j) expect += std::pow(r.at(i, j) - P.at(k).vector[j], 2);
    }
    ad::Tape t;
    CHECK(cmpr_loss(t.constant(r), y, P).value().item() == doctest::Approx(expect / static_cast<double>(B)).epsilon(1e-12));
  }
}

TEST_CASE("cmpc examples") {
  ad::Tape t;
  SUBCASE("equal similarities to both prototypes give ln 2") {
    const PrototypeSet P = set_of({{1, 0}, {0, 1}});
    std::vector<ad::Var> z{t.constant(Tensor::matrix({{1, 1}}))};
    CHECK(cmpc_loss(z, Tensor(Shape{1, 1}, 1.0), std::vector<int>{0}, P, 0.1).value().item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("a single class gives zero") {
    const PrototypeSet P = set_of({{0.3, -2}});
    std::vector<ad::Var> z{t.constant(Tensor::matrix({{1, 5}}))};
    CHECK(cmpc_loss(z, Tensor(Shape{1, 1}, 1.0), std::vector<int>{0}, P, 0.1).value().item() == doctest::Approx(0.0));
  }
  SUBCASE("errors") {
    const PrototypeSet P = set_of({{1, 0}, {0, 1}});
    std::vector<ad::Var> z{t.constant(Tensor::matrix({{1, 1}}))};
    CHECK_THROWS_AS(cmpc_loss(z, Tensor(Shape{1, 1}, 1.0), std::vector<int>{0}, P, 0.0), ConfigError);
    CHECK_THROWS_AS(cmpc_loss(z, Tensor(Shape{1, 1}, 1.0), std::vector<int>{0}, PrototypeSet(2, 2), 0.1), ConfigError);
  }
}

TEST_CASE("cmpc matches the enumeration oracle with K=3, tau=0.1") {
  std::mt19937_64 rng(2);
  const PrototypeSet P = random_prototypes(3, 4, rng);
  std::vector<Tensor> zs{random_tensor({5, 4}, rng), random_tensor({5, 4}, rng)};
  const auto y = random_labels(5, 3, rng);
  const Tensor pres = random_presence(5, 2, rng);
  ad::Tape t;
  const double got = cmpc_loss(consts(t, zs), pres, y, P, 0.1).value().item();
  CHECK(got == doctest::Approx(cmpc_oracle({rows_of(zs[0]), rows_of(zs[1])}, pres, y, P, 0.1)).epsilon(1e-9));
}

TEST_CASE("cmpc skips absent prototypes and missing modalities") {
  PrototypeSet P(3, 2);
  P.set(0, {1, 0}, 1);
  P.set(2, {0, 1}, 1);
  ad::Tape t;
  std::vector<ad::Var> z{t.constant(Tensor::matrix({{1, 1}, {1, 0}}))};
  // Sample 1 has class 1, which has no prototype: only sample 0 counts, over two prototypes.
  CHECK(cmpc_loss(z, Tensor(Shape{2, 1}, 1.0), std::vector<int>{0, 1}, P, 0.1).value().item() ==
        doctest::Approx(std::log(2.0) / 2).epsilon(1e-12));
  CHECK(cmpc_loss(z, Tensor(Shape{2, 1}, 0.0), std::vector<int>{0, 1}, P, 0.1).value().item() == 0.0);
}

TEST_CASE("cmpc is invariant to positive rescaling") {
  std::mt19937_64 rng(3);
  for (int c = 0; c < 20; ++c) {
    const PrototypeSet P = random_prototypes(4, 3, rng);
    PrototypeSet scaled(4, 3);
    for (std::size_t k : P.classes()) {
      auto v = P.at(k).vector;
      for (double& x : v) x *= 3.7;
      scaled.set(k, v, 1);
    }
    const Tensor z = random_tensor({4, 3}, rng);
    Tensor z2 = z;
    for (double& x : z2.data()) x *= 0.25;
    const auto y = random_labels(4, 4, rng);
    const Tensor pres(Shape{4, 1}, 1.0);
    ad::Tape t;
    const double a = cmpc_loss(consts(t, {z}), pres, y, P, 0.1).value().item();
    const double b = cmpc_loss(consts(t, {z2}), pres, y, scaled, 0.1).value().item();
    CHECK(std::abs(a - b) < 1e-9);
  }
}

TEST_CASE("cma examples") {
  ad::Tape t;
  const Tensor pres(Shape{1, 2}, 1.0);
  for (CmaKind kind : {CmaKind::L2, CmaKind::L1, CmaKind::SmoothL1, CmaKind::KL}) {
    CAPTURE(cma_kind_name(kind));
    const auto same = consts(t, {Tensor::matrix({{0.3, -1}}), Tensor::matrix({{0.3, -1}})});
    CHECK(cma_loss(same, pres, kind).value().item() == doctest::Approx(0.0));
  }
  CHECK(cma_loss(consts(t, {Tensor::matrix({{1, 0}}), Tensor::matrix({{0, 1}})}), pres, CmaKind::L2).value().item() == 2.0);
  CHECK(cma_loss(consts(t, {Tensor::matrix({{1, 0}})}), Tensor(Shape{1, 1}, 1.0), CmaKind::L2).value().item() == 0.0);
}

TEST_CASE("cma matches the pair-enumeration oracle for M=3") {
  std::mt19937_64 rng(4);
  for (CmaKind kind : {CmaKind::L2, CmaKind::L1, CmaKind::SmoothL1, CmaKind::KL}) {
    std::vector<Tensor> zs{random_tensor({4, 3}, rng), random_tensor({4, 3}, rng), random_tensor({4, 3}, rng)};
    const Tensor pres(Shape{4, 3}, 1.0);
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    const double expect = cma_oracle({rows_of(zs[0]), rows_of(zs[1]), rows_of(zs[2])}, pres, kind, &pairs);
    CHECK(pairs.size() == 3);
    ad::Tape t;
    CHECK(cma_loss(consts(t, zs), pres, kind).value().item() == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("symmetric cma distances are invariant to modality order") {
  std::mt19937_64 rng(5);
  for (CmaKind kind : {CmaKind::L2, CmaKind::L1, CmaKind::SmoothL1}) {
    std::vector<Tensor> zs{random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)};
    const Tensor pres = random_presence(3, 2, rng);
    ad::Tape t;
    const double a = cma_loss(consts(t, {zs[0], zs[1]}), pres, kind).value().item();
    const double b = cma_loss(consts(t, {zs[1], zs[0]}), pres, kind).value().item();
    CHECK(a == doctest::Approx(b).epsilon(1e-14));
  }
}

TEST_CASE("losses are non-negative") {
  std::mt19937_64 rng(6);
  for (int c = 0; c < 20; ++c) {
    std::vector<Tensor> zs{random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)};
    const Tensor pres = random_presence(3, 2, rng);
    const auto y = random_labels(3, 3, rng);
    const PrototypeSet P = random_prototypes(3, 4, rng);
    ad::Tape t;
    auto v = consts(t, zs);
    CHECK(cross_entropy(v[0], y).value().item() >= 0);
    CHECK(cmpr_loss(v[0], y, P).value().item() >= 0);
    CHECK(cmpc_loss(v, pres, y, P, 0.1).value().item() >= 0);
    for (CmaKind kind : {CmaKind::L2, CmaKind::L1, CmaKind::SmoothL1, CmaKind::KL})
      CHECK(cma_loss(v, pres, kind).value().item() >= -1e-15);
  }
}

TEST_CASE("total loss combination") {
  ad::Tape t;
  auto one = [&] { return t.constant(Tensor::scalar(1.0)); };
  LossParts parts{one(), one(), one(), one()};
  CHECK(total_loss(parts, LossWeights{}, LossToggles{}).value().item() == doctest::Approx(4.1).epsilon(1e-15));
  CHECK(total_loss(parts, LossWeights{}, LossToggles::none()).value().item() == 1.0);
  // Round one: no prototypes yet, so only CE and CMA are present.
  LossParts early{one(), std::nullopt, std::nullopt, one()};
  CHECK(total_loss(early, LossWeights{}, LossToggles{}).value().item() == doctest::Approx(1.1).epsilon(1e-15));
  LossWeights zero{0, 0, 0, 0.1};
  CHECK(total_loss(parts, zero, LossToggles{}).value().item() == 1.0);
}

TEST_CASE("parsing cma kinds") {
  CHECK(parse_cma_kind("smooth_l1") == CmaKind::SmoothL1);
  CHECK_THROWS_AS(parse_cma_kind("huber"), ConfigError);
}
