#include <doctest.h>

#include <cmath>
#include <random>

#include "protofed/errors.hpp"
#include "protofed/metrics.hpp"

using namespace protofed;

namespace {

std::vector<int> random_ints(std::size_t n, int K, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, K - 1);
  std::vector<int> v(n);
  for (int& x : v) x = d(rng);
  return v;
}

double f1_oracle(const std::vector<int>& p, const std::vector<int>& y, int K) {
  double total = 0;
  for (int k = 0; k < K; ++k) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (p[i] == k && y[i] == k) tp += 1;
      if (p[i] == k && y[i] != k) fp += 1;
      if (p[i] != k && y[i] == k) fn += 1;
    }
    const double prec = tp + fp > 0 ? tp / (tp + fp) : 0;
    const double rec = tp + fn > 0 ? tp / (tp + fn) : 0;
    total += prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0;
  }
  return total / K;
}

double uar_oracle(const std::vector<int>& p, const std::vector<int>& y, int K) {
  double total = 0;
  for (int k = 0; k < K; ++k) {
    double hit = 0, n = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] == k) {
        n += 1;
        hit += p[i] == k;
      }
    total += hit / n;
  }
  return total / K;
}

double auc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  return wins / pairs;
}

}  // namespace

TEST_CASE("macro F1 examples") {
  const std::vector<int> y{0, 1, 0, 1};
  CHECK(macro_f1(y, y, 2) == 1.0);
  CHECK(macro_f1(std::vector<int>{0, 0, 0, 0}, y, 2) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK_THROWS_AS(macro_f1(std::vector<int>{0}, y, 2), DataError);
  // A class with neither support nor predictions contributes zero.
  CHECK(macro_f1(y, y, 3) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("macro F1 and UAR match loop oracles") {
  std::mt19937_64 rng(1);
  for (int c = 0; c < 30; ++c) {
    const auto y = random_ints(60, 4, rng), p = random_ints(60, 4, rng);
    CHECK(macro_f1(p, y, 4) == doctest::Approx(f1_oracle(p, y, 4)).epsilon(1e-12));
    CHECK(uar(p, y, 4) == doctest::Approx(uar_oracle(p, y, 4)).epsilon(1e-12));
  }
}

TEST_CASE("UAR examples") {
  const std::vector<int> y{0, 0, 1, 1};
  CHECK(uar(y, y, 2) == 1.0);
  CHECK(uar(std::vector<int>{0, 0, 0, 0}, y, 2) == 0.5);
  CHECK_THROWS_AS(uar(std::vector<int>{0, 0}, std::vector<int>{0, 0}, 2), DataError);
}

TEST_CASE("AUC examples and pair-counting oracle") {
  CHECK(auc_binary(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}) == 1.0);
  CHECK(auc_binary(std::vector<double>{0.5, 0.5, 0.5}, std::vector<int>{0, 1, 1}) == 0.5);
  CHECK_THROWS_AS(auc_binary(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), DataError);
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> coarse(0, 9);
  for (int c = 0; c < 30; ++c) {
    std::vector<double> s(50);
    for (double& v : s) v = coarse(rng) / 10.0;  // coarse grid forces ties
    auto y = random_ints(50, 2, rng);
    y[0] = 0;
    y[1] = 1;
    CHECK(auc_binary(s, y) == doctest::Approx(auc_oracle(s, y)).epsilon(1e-15));
  }
}

TEST_CASE("metric invariances") {
  std::mt19937_64 rng(3);
  const auto y = random_ints(80, 3, rng), p = random_ints(80, 3, rng);
  const std::vector<int> perm{2, 0, 1};
  std::vector<int> yp(y.size()), pp(p.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    yp[i] = perm[static_cast<std::size_t>(y[i])];
    pp[i] = perm[static_cast<std::size_t>(p[i])];
  }
  CHECK(macro_f1(pp, yp, 3) == doctest::Approx(macro_f1(p, y, 3)).epsilon(1e-15));
  CHECK(uar(pp, yp, 3) == doctest::Approx(uar(p, y, 3)).epsilon(1e-15));

  std::vector<double> s(40);
  std::uniform_real_distribution<double> u(-2, 2);
  for (double& v : s) v = u(rng);
  auto yb = random_ints(40, 2, rng);
  yb[0] = 0;
  yb[1] = 1;
  std::vector<double> t(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) t[i] = std::exp(3 * s[i]) + 1;
  CHECK(auc_binary(t, yb) == auc_binary(s, yb));
}

TEST_CASE("UAR equals accuracy on a uniform label distribution with class-balanced errors") {
  // 4 per class, one error each, errors spread across classes.
  const std::vector<int> y{0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2};
  const std::vector<int> p{0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 0};
  const EvalResult r = evaluate_logits(
      [&] {
        std::vector<double> logits(y.size() * 3, 0.0);
        for (std::size_t i = 0; i < y.size(); ++i) logits[i * 3 + static_cast<std::size_t>(p[i])] = 1.0;
        return logits;
      }(),
      3, y, MetricKind::UAR);
  CHECK(r.value == doctest::Approx(r.accuracy).epsilon(1e-15));
  CHECK(r.value == doctest::Approx(macro_f1(p, y, 3)).epsilon(1e-15));
  for (std::size_t k = 0; k < 3; ++k) {
    std::size_t row = 0;
    for (auto v : r.confusion[k]) row += v;
    CHECK(row == 4);
  }
}

TEST_CASE("binary AUC scores come from the class-1 softmax probability") {
  const std::vector<double> logits{0, 1, 0, -1, 2, 0, 0, 3};
  const EvalResult r = evaluate_logits(logits, 2, std::vector<int>{1, 0, 0, 1}, MetricKind::AUC);
  CHECK(r.value == 1.0);
}
