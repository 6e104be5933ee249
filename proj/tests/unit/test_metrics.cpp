#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "mmpt/metrics.hpp"
#include "oracles.hpp"

using namespace mmpt;

TEST_SUITE("metrics") {

namespace {

MetricsCurve curve_of(std::initializer_list<std::array<double, 3>> pts) {
  MetricsCurve c;
  for (const auto& p : pts) c.points.push_back({p[0], p[1], p[2]});
  return c;
}

ScoreTable with_labels(ScoreTable t, std::vector<Composition> labels) {
  t.labels = std::move(labels);
  return t;
}

}  // namespace

TEST_CASE("hand-worked table") {
  const ScoreTable t = fixture::hand_table();
  const MetricsSummary s = summarize(bias_sweep(t));
  CHECK(s.S == doctest::Approx(200.0 / 3.0).epsilon(1e-12));
  CHECK(s.U == doctest::Approx(200.0 / 3.0).epsilon(1e-12));
  CHECK(s.HM == doctest::Approx(200.0 / 3.0).epsilon(1e-12));
  CHECK(s.AUC == doctest::Approx(400.0 / 9.0).epsilon(1e-12));
  const auto ref = oracle::dense_sweep(t);
  CHECK(ref.S == doctest::Approx(s.S));
  CHECK(ref.AUC == doctest::Approx(s.AUC));
}

TEST_CASE("sweep agrees with the dense oracle on random tables") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const ScoreTable t = fixture::random_table(rng);
    const MetricsCurve curve = bias_sweep(t);
    const MetricsSummary s = summarize(curve);
    const auto ref = oracle::dense_sweep(t, 2001);
    INFO("trial " << trial);
    CHECK(s.S == doctest::Approx(ref.S).epsilon(1e-12));
    CHECK(s.U == doctest::Approx(ref.U).epsilon(1e-12));
    CHECK(s.HM == doctest::Approx(ref.HM).epsilon(1e-12));
    CHECK(s.AUC == doctest::Approx(ref.AUC).epsilon(1e-12));
    CHECK(s.AUC <= s.S * s.U / 100.0 + 1e-9);
    CHECK(curve_is_monotone(curve));
    // Sentinels: everything seen at the low end, nothing seen at the high end.
    CHECK(curve.points.front().unseen == 0.0);
    CHECK(curve.points.back().seen == 0.0);
  }
}

TEST_CASE("curve points match brute-force predictions at their biases") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const ScoreTable t = fixture::random_table(rng);
    const MetricsCurve curve = bias_sweep(t);
    std::size_t n_seen = 0;
    for (const auto& l : t.labels) n_seen += t.space.is_seen(l);
    const std::size_t n_unseen = t.size() - n_seen;
    for (const auto& p : curve.points) {
      std::size_t hs = 0, hu = 0;
      for (std::size_t i = 0; i < t.size(); ++i) {
        if (oracle::predict_at_bias(t, i, p.bias) == t.labels[i]) (t.space.is_seen(t.labels[i]) ? hs : hu)++;
      }
      CHECK(p.seen == (n_seen ? double(hs) / double(n_seen) : 0.0));
      CHECK(p.unseen == double(hu) / double(n_unseen));
    }
  }
}

TEST_CASE("summary is invariant to sample order and score representation") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const ScoreTable t = fixture::random_table(rng);
    const MetricsSummary a = summarize(bias_sweep(t));
    ScoreTable r = t;
    std::vector<std::size_t> perm(t.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t i = 0; i < t.size(); ++i) {
      r.sample_ids[i] = t.sample_ids[perm[i]];
      r.labels[i] = t.labels[perm[i]];
      for (std::size_t k = 0; k < t.rho_a.cols(); ++k) r.rho_a(i, k) = t.rho_a(perm[i], k);
      for (std::size_t k = 0; k < t.rho_o.cols(); ++k) r.rho_o(i, k) = t.rho_o(perm[i], k);
    }
    const MetricsSummary b = summarize(bias_sweep(r));
    CHECK(a.S == b.S);
    CHECK(a.U == b.U);
    CHECK(a.AUC == b.AUC);
    ScoreTable d = t;
    d.dense = Matrix<double>(t.size(), t.space.size());
    for (std::size_t i = 0; i < t.size(); ++i)
      for (std::size_t c = 0; c < t.space.size(); ++c) (*d.dense)(i, c) = t.score(i, c);
    const MetricsSummary c = summarize(bias_sweep(d));
    CHECK(a.AUC == c.AUC);
    CHECK(a.HM == c.HM);
  }
}

TEST_CASE("scaling a sample's scores by a power of two keeps every decision") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 40; ++trial) {
    const ScoreTable t = fixture::random_table(rng);
    ScoreTable d = t;
    d.dense = Matrix<double>(t.size(), t.space.size());
    for (std::size_t i = 0; i < t.size(); ++i)
      for (std::size_t c = 0; c < t.space.size(); ++c) (*d.dense)(i, c) = t.score(i, c) * (i % 2 ? 0.5 : 0.25);
    ScoreTable all = t;
    all.dense = Matrix<double>(t.size(), t.space.size());
    for (std::size_t i = 0; i < t.size(); ++i)
      for (std::size_t c = 0; c < t.space.size(); ++c) (*all.dense)(i, c) = t.score(i, c) * 0.5;
    const MetricsCurve a = bias_sweep(t), b = bias_sweep(all);
    REQUIRE(a.points.size() == b.points.size());
    for (std::size_t k = 0; k < a.points.size(); ++k) {
      CHECK(a.points[k].seen == b.points[k].seen);
      CHECK(a.points[k].unseen == b.points[k].unseen);
    }
    // Per-sample factors change the candidate set but never the open-world argmax.
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(predict_open_world(t, i) == predict_open_world(d, i));
  }
}

TEST_CASE("decision threshold is the smallest flipping bias") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> e(-300, 300);
  for (int k = 0; k < 5000; ++k) {
    const double s = std::ldexp(u(rng), e(rng)), x = std::ldexp(u(rng), k % 2 ? e(rng) : 0);
    const double b = decision_threshold(s, x);
    CHECK(x + b >= s);
    CHECK(x + std::nextafter(b, -std::numeric_limits<double>::infinity()) < s);
  }
  const double quarter = decision_threshold(0.5, 0.25);
  CHECK(quarter <= 0.25);
  CHECK(quarter > 0.25 - 1e-16);
  // A tie already flips at a slightly negative bias, below half an ulp of the score.
  const double tie = decision_threshold(0.25, 0.25);
  CHECK(tie < 0.0);
  CHECK(tie > -std::ldexp(1.0, -54));
  CHECK(0.25 + tie == 0.25);
  CHECK(decision_threshold(1e300, -1e300) == doctest::Approx(2e300));
  CHECK(decision_threshold(0.0, 0.0) == -0.0);
  CHECK_THROWS_AS(decision_threshold(std::numeric_limits<double>::quiet_NaN(), 0.0), NumericError);
}

TEST_CASE("AUC examples") {
  CHECK(auc(curve_of({{-1, 1, 0}, {0, 0.5, 0.5}, {1, 0, 1}})) == doctest::Approx(50.0));
  CHECK(auc(curve_of({{0, 0.5, 0.2}, {1, 0.5, 0.8}, {2, 1.0, 0.0}})) == doctest::Approx(20.0));
  CHECK(auc(curve_of({{0, 1, 0}, {1, 0, 1}})) == doctest::Approx(50.0));
  bool degenerate = false;
  CHECK(auc(curve_of({{0, 0.4, 0.0}, {1, 0.4, 0.6}}), &degenerate) == 0.0);
  CHECK(degenerate);
  CHECK(auc(curve_of({{0, 1, 0}, {1, 1, 1}, {2, 0, 1}}), &degenerate) == doctest::Approx(100.0));
  CHECK_FALSE(degenerate);
  CHECK_THROWS_AS(auc(MetricsCurve{}), ValidationError);
  // Constant interior point between the sentinels: a rectangle.
  CHECK(auc(curve_of({{-9, 0.6, 0.0}, {0, 0.6, 0.3}, {9, 0.0, 0.3}})) == doctest::Approx(100.0 * 0.6 * 0.3));
  // Perfect model.
  CHECK(auc(curve_of({{-9, 1.0, 0.0}, {0, 1.0, 1.0}, {9, 0.0, 1.0}})) == doctest::Approx(100.0));
}

TEST_CASE("summarize examples") {
  const auto s = summarize(curve_of({{-1, 0.8, 0.0}, {0, 0.6, 0.3}, {1, 0.2, 0.5}, {2, 0.0, 0.5}}));
  CHECK(s.S == doctest::Approx(80.0));
  CHECK(s.U == doctest::Approx(50.0));
  CHECK(s.HM == doctest::Approx(100.0 * std::max(2 * 0.6 * 0.3 / 0.9, 2 * 0.2 * 0.5 / 0.7)));
  const double area = 0.2 * (0.5 + 0.5) / 2 + 0.4 * (0.5 + 0.3) / 2 + 0.2 * (0.3 + 0.0) / 2;
  CHECK(s.AUC == doctest::Approx(100.0 * area));
  const auto tri = summarize(curve_of({{-3, 1.0, 0.0}, {0, 0.5, 0.5}, {3, 0.0, 1.0}}));
  CHECK(tri.S == 100.0);
  CHECK(tri.U == 100.0);
  CHECK(tri.HM == doctest::Approx(50.0));
  CHECK(tri.AUC == doctest::Approx(50.0));
  const auto zero = summarize(curve_of({{0, 0, 0}}));
  CHECK(zero.HM == 0.0);
  CHECK(zero.AUC == 0.0);
  CHECK_THROWS_AS(summarize(curve_of({{0, 0.2, 0.5}, {1, 0.6, 0.5}})), NumericError);
  CHECK_THROWS_AS(summarize(curve_of({{0, 0.6, 0.5}, {1, 0.6, 0.2}})), NumericError);
  CHECK_THROWS_AS(summarize(curve_of({{1, 0.6, 0.2}, {0, 0.6, 0.2}})), NumericError);
}

TEST_CASE("protocol and validation errors") {
  const ScoreTable t = fixture::hand_table();
  // Only seen-labelled samples.
  ScoreTable seen_only = t;
  seen_only.sample_ids.resize(3);
  seen_only.labels.resize(3);
  seen_only.rho_a = Matrix<double>(3, 3);
  seen_only.rho_o = Matrix<double>(3, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 3; ++k) seen_only.rho_a(i, k) = t.rho_a(i, k), seen_only.rho_o(i, k) = t.rho_o(i, k);
  CHECK_THROWS_AS(bias_sweep(seen_only), ProtocolError);

  // Every composition seen.
  ScoreTable all_seen = t;
  all_seen.space = assign_splits(build_space(t.space.attributes(), t.space.objects()), t.space.enumerate(), {}, {});
  all_seen.labels.assign(t.size(), {0, 0});
  CHECK_THROWS_AS(bias_sweep(all_seen), ProtocolError);

  // A label outside every split.
  const auto partial = assign_splits(build_space(t.space.attributes(), t.space.objects()),
                                     t.space.seen(), {}, {{0, 2}});
  ScoreTable stray = t;
  stray.space = partial;
  CHECK_THROWS_AS(bias_sweep(stray), ValidationError);

  ScoreTable bad_rows = t;
  bad_rows.rho_a(0, 0) += 0.1;
  CHECK_THROWS_AS(bias_sweep(bad_rows), ValidationError);
  ScoreTable zero_prob = t;
  zero_prob.rho_o(1, 0) = 0.0;
  zero_prob.rho_o(1, 1) += 0.2;
  CHECK_THROWS_AS(bias_sweep(zero_prob), ValidationError);
}

TEST_CASE("open-world argmax over a 115 x 245 space") {
  std::mt19937_64 rng(5);
  const CompositionSpace space = fixture::random_space(rng, 115, 245);
  CHECK(space.size() == 28175);
  std::exponential_distribution<double> ex(1.0);
  ScoreTable t;
  t.space = space;
  t.rho_a = Matrix<double>(4, 115);
  t.rho_o = Matrix<double>(4, 245);
  for (std::size_t i = 0; i < 4; ++i) {
    double sa = 0, so = 0;
    for (std::size_t k = 0; k < 115; ++k) sa += t.rho_a(i, k) = ex(rng);
    for (std::size_t k = 0; k < 245; ++k) so += t.rho_o(i, k) = ex(rng);
    for (std::size_t k = 0; k < 115; ++k) t.rho_a(i, k) /= sa;
    for (std::size_t k = 0; k < 245; ++k) t.rho_o(i, k) /= so;
    t.sample_ids.push_back(i);
    t.labels.push_back(space.unseen_test().empty() ? space.seen()[0] : space.unseen_test()[0]);
  }
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<double> grid(space.size());
    for (std::size_t c = 0; c < grid.size(); ++c) grid[c] = t.score(i, c);
    const auto best = std::max_element(grid.begin(), grid.end()) - grid.begin();
    CHECK(space.flat_index(predict_open_world(t, i)) == std::size_t(best));
    CHECK(predict_open_world(std::span<const double>(grid), space) == space.from_flat(best));
  }
  std::vector<double> flat(space.size(), 1.0);
  CHECK(predict_open_world(std::span<const double>(flat), space) == Composition{0, 0});
  flat[777] = 2.0;
  flat[9000] = 2.0;
  CHECK(space.flat_index(predict_open_world(std::span<const double>(flat), space)) == 777);
  CHECK_THROWS_AS(predict_open_world(std::span<const double>(flat.data(), 10), space), ValidationError);
}

TEST_CASE("bias-free accuracy counts argmax hits per group") {
  const ScoreTable t = fixture::hand_table();
  const TopOneAccuracy a = open_world_accuracy(t);
  CHECK(a.seen_count == 3);
  CHECK(a.unseen_count == 3);
  std::size_t hs = 0, hu = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (predict_open_world(t, i) == t.labels[i]) (t.space.is_seen(t.labels[i]) ? hs : hu)++;
  }
  CHECK(a.seen == double(hs) / 3.0);
  CHECK(a.unseen == double(hu) / 3.0);
  const TopOneAccuracy none = open_world_accuracy(with_labels(t, std::vector<Composition>(t.size(), {0, 0})));
  CHECK(none.unseen_count == 0);
  CHECK(none.unseen == 0.0);
}

TEST_CASE("curve and summary serialisation") {
  const MetricsCurve c = bias_sweep(fixture::hand_table());
  const std::string csv = curve_to_csv(c);
  CHECK(csv.rfind("bias,seen,unseen\n", 0) == 0);
  CHECK(std::size_t(std::count(csv.begin(), csv.end(), '\n')) == c.points.size() + 1);
  const auto j = summary_to_json(summarize(c));
  for (const char* k : {"S", "U", "HM", "AUC"}) CHECK(j.contains(k));
}

}
