#include <doctest.h>

#include <algorithm>
#include <random>

#include "../support/gradcheck.hpp"
#include "../support/oracles.hpp"
#include "protofed/errors.hpp"
#include "protofed/prototypes.hpp"

using namespace protofed;
using namespace protofed::testing;

TEST_CASE("local prototypes: singleton and midpoint") {
  const auto single = compute_local_prototypes(0, Tensor::matrix({{0.5, -2}}), std::vector<int>{0}, 2);
  CHECK(single.prototypes.at(0).vector == std::vector<double>{0.5, -2});
  CHECK_FALSE(single.prototypes.has(1));
  const auto mid = compute_local_prototypes(0, Tensor::matrix({{1, 0}, {0, 1}}), std::vector<int>{1, 1}, 2);
  CHECK(mid.prototypes.at(1).vector == std::vector<double>{0.5, 0.5});
  CHECK(mid.prototypes.at(1).count == 2);
  CHECK_THROWS_AS(compute_local_prototypes(0, Tensor(Shape{0, 2}), std::vector<int>{}, 2), DataError);
}

TEST_CASE("local prototypes match the loop oracle exactly") {
  std::mt19937_64 rng(1);
  const Tensor r = random_tensor({20, 4}, rng);
  const auto y = random_labels(20, 3, rng);
  CHECK(compute_local_prototypes(7, r, y, 3).prototypes == local_oracle(r, y, 3));
}

TEST_CASE("aggregation examples") {
  LocalPrototypeSet a{0, PrototypeSet(1, 2)}, b{1, PrototypeSet(1, 2)}, c{2, PrototypeSet(1, 2)};
  a.prototypes.set(0, {1, 0}, 3);
  b.prototypes.set(0, {0, 1}, 5);
  std::vector<LocalPrototypeSet> both{a, b};
  CHECK(aggregate_complete(both).prototypes.at(0).vector == std::vector<double>{0.5, 0.5});
  std::vector<LocalPrototypeSet> one_reporter{a, c};
  CHECK(aggregate_complete(one_reporter).prototypes.at(0).vector == std::vector<double>{1, 0});
  std::vector<LocalPrototypeSet> bad{a, LocalPrototypeSet{3, PrototypeSet(1, 3)}};
  CHECK_THROWS_AS(aggregate_complete(bad), ShapeError);
}

TEST_CASE("aggregation matches the mean-over-reporters oracle; order and singleton invariants") {
  std::mt19937_64 rng(2);
  for (int c = 0; c < 20; ++c) {
    std::vector<LocalPrototypeSet> locals;
    for (int i = 0; i < 5; ++i) locals.push_back({i, random_prototypes(3, 4, rng, 0.5)});
    const PrototypeSet agg = aggregate_complete(locals).prototypes;
    CHECK(agg == aggregate_oracle(locals, 3, 4));
    std::shuffle(locals.begin(), locals.end(), rng);
    CHECK(aggregate_complete(locals).prototypes == agg);
    std::vector<LocalPrototypeSet> single{locals[0]};
    const PrototypeSet same = aggregate_complete(single).prototypes;
    for (std::size_t k : locals[0].prototypes.classes()) CHECK(same.at(k).vector == locals[0].prototypes.at(k).vector);
    CHECK(same.classes() == locals[0].prototypes.classes());
  }
}

TEST_CASE("constant representations aggregate to that constant") {
  const std::vector<double> c{0.1, 0.7, -0.3};
  std::vector<LocalPrototypeSet> locals;
  for (int i = 0; i < 7; ++i) {
    Tensor r(Shape{3, 3});
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t j = 0; j < 3; ++j) r.at(s, j) = c[j];
    locals.push_back(compute_local_prototypes(i, r, std::vector<int>{0, 0, 0}, 1));
  }
  CHECK(aggregate_complete(locals).prototypes.at(0).vector == c);
}

TEST_CASE("unimodal aggregation runs per modality") {
  std::mt19937_64 rng(3);
  std::vector<std::vector<LocalPrototypeSet>> per_modality(2);
  for (int i = 0; i < 4; ++i) {
    per_modality[0].push_back({i, random_prototypes(3, 2, rng, 0.6)});
    per_modality[1].push_back({i, random_prototypes(3, 2, rng, 0.6)});
  }
  const UnimodalPrototypes u = aggregate_unimodal(per_modality, 4);
  REQUIRE(u.per_modality.size() == 2);
  CHECK(u.per_modality[0] == aggregate_oracle(per_modality[0], 3, 2));
  CHECK(u.per_modality[1] == aggregate_oracle(per_modality[1], 3, 2));
}

TEST_CASE("payload layout and JSON export") {
  PrototypeSet P(3, 2);
  P.set(0, {1, 2}, 4);
  P.set(2, {3, 4}, 1);
  CHECK(serialize_payload(P).size() == 8 + 2 * (4 + 8 + 2 * 8));
  const std::string json = prototypes_to_json(P);
  CHECK(json.find("\"2\"") != std::string::npos);
  CHECK(json.find("\"1\"") == std::string::npos);
}
