#include <doctest.h>

#include <memory>
#include <random>
#include <span>

#include "fedlake/metrics.hpp"
#include "support/oracles.hpp"

using namespace fedlake;

TEST_CASE("binary metrics from a hand-made confusion matrix") {
  // TP=2, FP=1, FN=1, TN=6
  const MetricsReport m = metrics_from_confusion({{6, 1}, {1, 2}}, {"no", "yes"});
  CHECK(m.precision == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(m.recall == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(m.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(m.accuracy == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(m.n_test == 10);
  REQUIRE(m.per_class.size() == 2);
  CHECK(m.per_class[0].support == 7);
  CHECK(m.per_class[1].support == 3);
}

TEST_CASE("auc extremes") {
  const std::vector<double> s = {0.1, 0.2, 0.8, 0.9};
  const bool sep[] = {false, false, true, true};
  const bool inv[] = {true, true, false, false};
  const bool none[] = {false, false, false, false};
  CHECK(binary_auc(s, sep) == 1.0);
  CHECK(binary_auc(s, inv) == 0.0);
  CHECK(binary_auc(s, none) == -1.0);
  const std::vector<double> same(4, 0.3);
  CHECK(binary_auc(same, sep) == 0.5);
}

TEST_CASE("auc matches pair counting") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng() % 199;
    std::vector<double> s(n);
    std::vector<bool> pos(n);
    std::unique_ptr<bool[]> flags(new bool[n]);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 7);
      pos[i] = rng() % 3 == 0;
      flags[i] = pos[i];
    }
    pos[0] = flags[0] = true;
    pos[1] = flags[1] = false;
    CHECK(std::abs(binary_auc(s, std::span<const bool>(flags.get(), n)) - oracle::pair_auc(s, pos)) <= 1e-12);
  }
}

TEST_CASE("compute_metrics agrees with a confusion recount") {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 50; ++t) {
    const std::size_t k = 2 + t % 4;
    const std::size_t n = 10 + rng() % 100;
    std::vector<int> truth(n), pred(n);
    std::vector<std::vector<double>> scores(n, std::vector<double>(k, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(rng() % k);
      pred[i] = rng() % 3 ? truth[i] : static_cast<int>(rng() % k);
      scores[i][pred[i]] = 1.0;
    }
    std::vector<std::string> names;
    for (std::size_t c = 0; c < k; ++c) names.push_back(std::string(1, static_cast<char>('a' + c)));
    const auto m = compute_metrics(pred, scores, truth, names);
    const auto r = oracle::recount(m.confusion);
    CHECK(m.accuracy == r.accuracy);
    CHECK(m.precision == r.precision);
    CHECK(m.recall == r.recall);
    CHECK(m.f1 == r.f1);
    const auto back = metrics_report_from_json(to_json(m));
    CHECK(back.confusion == m.confusion);
    CHECK(back.accuracy == m.accuracy);
    CHECK(back.auc_roc == m.auc_roc);
  }
}

TEST_CASE("majority-class predictor on a 70/30 split") {
  std::vector<int> truth(100, 0), pred(100, 0);
  for (int i = 0; i < 30; ++i) truth[i] = 1;
  std::vector<std::vector<double>> scores(100, {0.9, 0.1});
  const auto m = compute_metrics(pred, scores, truth, {"no", "yes"});
  CHECK(m.accuracy == doctest::Approx(0.70));
  CHECK(m.precision == 0.0);
  CHECK(m.recall == 0.0);
  CHECK(m.f1 == 0.0);
  CHECK(m.auc_roc == 0.5);
}
