#include "mmpt/metrics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>

#include "mmpt/errors.hpp"

namespace mmpt {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct SampleState {
  std::size_t seen_best = 0;
  std::size_t unseen_best = 0;
  double gap = 0.0;
  double threshold = 0.0;
};

// Best seen and best non-seen composition of one sample, lowest index on ties.
SampleState inspect(const ScoreTable& t, std::size_t i) {
  const auto& mask = t.space.seen_mask();
  double s = -kInf, u = -kInf;
  std::size_t si = 0, ui = 0;
  bool have_s = false, have_u = false;
  for (std::size_t c = 0; c < t.space.size(); ++c) {
    const double v = t.score(i, c);
    if (mask[c]) {
      if (!have_s || v > s) s = v, si = c, have_s = true;
    } else if (!have_u || v > u) {
      u = v, ui = c, have_u = true;
    }
  }
  if (!have_s || !have_u) {
    throw ProtocolError("bias sweep needs both seen and non-seen compositions in the space");
  }
  return {si, ui, s - u, decision_threshold(s, u)};
}

}  // namespace

Composition predict_open_world(std::span<const double> grid, const CompositionSpace& space) {
  if (space.size() == 0) throw ValidationError("predict_open_world: empty composition space");
  if (grid.size() != space.size()) {
    throw ValidationError("predict_open_world: grid has " + std::to_string(grid.size()) +
                          " entries for a space of " + std::to_string(space.size()));
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < grid.size(); ++c) {
    if (grid[c] > grid[best]) best = c;
  }
  return space.from_flat(best);
}

Composition predict_open_world(const ScoreTable& table, std::size_t sample) {
  if (table.space.size() == 0) throw ValidationError("predict_open_world: empty composition space");
  std::size_t best = 0;
  double best_v = table.score(sample, 0);
  for (std::size_t c = 1; c < table.space.size(); ++c) {
    const double v = table.score(sample, c);
    if (v > best_v) best_v = v, best = c;
  }
  return table.space.from_flat(best);
}

TopOneAccuracy open_world_accuracy(const ScoreTable& table) {
  TopOneAccuracy r;
  std::size_t seen_hit = 0, unseen_hit = 0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    const bool hit = predict_open_world(table, i) == table.labels[i];
    if (table.space.is_seen(table.labels[i])) {
      ++r.seen_count;
      seen_hit += hit;
    } else {
      ++r.unseen_count;
      unseen_hit += hit;
    }
  }
  if (r.seen_count) r.seen = double(seen_hit) / double(r.seen_count);
  if (r.unseen_count) r.unseen = double(unseen_hit) / double(r.unseen_count);
  return r;
}

namespace {

// Monotone map from doubles to unsigned integers (-inf lowest, +inf highest).
std::uint64_t order_key(double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  return (bits >> 63) ? ~bits : bits | (std::uint64_t{1} << 63);
}

double from_order_key(std::uint64_t key) {
  const std::uint64_t bits = (key >> 63) ? key & ~(std::uint64_t{1} << 63) : ~key;
  return std::bit_cast<double>(bits);
}

}  // namespace

double decision_threshold(double seen_best, double unseen_best) {
  if (!std::isfinite(seen_best) || !std::isfinite(unseen_best)) {
    throw NumericError("decision_threshold: scores must be finite");
  }
  // u + b >= s is monotone in b: bisect between -inf (false) and +inf (true).
  std::uint64_t lo = order_key(-kInf), hi = order_key(kInf);
  while (hi - lo > 1) {
    const std::uint64_t mid = lo + (hi - lo) / 2;
    if (unseen_best + from_order_key(mid) >= seen_best) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return from_order_key(hi);
}

MetricsCurve bias_sweep(const ScoreTable& table) {
  table.validate();
  std::vector<double> seen_hits;    // thresholds of seen-labelled samples right at low bias
  std::vector<double> unseen_hits;  // thresholds of unseen-labelled samples right at high bias
  std::vector<double> thresholds;
  std::size_t n_seen = 0, n_unseen = 0;
  double max_gap = 0.0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    const Composition label = table.labels[i];
    const bool seen = table.space.is_seen(label);
    if (!seen && !table.space.is_unseen_val(label) && !table.space.is_unseen_test(label)) {
      throw ValidationError("bias sweep: sample " + std::to_string(table.sample_ids[i]) +
                            " is labelled " + table.space.describe(label) +
                            ", which belongs to no split");
    }
    const SampleState st = inspect(table, i);
    const std::size_t flat = table.space.flat_index(label);
    thresholds.push_back(st.threshold);
    max_gap = std::max(max_gap, std::abs(st.gap));
    if (seen) {
      ++n_seen;
      if (st.seen_best == flat) seen_hits.push_back(st.threshold);
    } else {
      ++n_unseen;
      if (st.unseen_best == flat) unseen_hits.push_back(st.threshold);
    }
  }
  if (n_unseen == 0) {
    throw ProtocolError("bias sweep is undefined: no sample carries an unseen label");
  }
  std::sort(seen_hits.begin(), seen_hits.end());
  std::sort(unseen_hits.begin(), unseen_hits.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  const double m = 2.0 * max_gap + 1.0;
  std::vector<double> biases;
  biases.reserve(thresholds.size() + 2);
  biases.push_back(-m);
  biases.insert(biases.end(), thresholds.begin(), thresholds.end());
  biases.push_back(m);

  MetricsCurve curve;
  for (double b : biases) {
    // Seen-labelled hits survive while b < threshold; unseen hits appear once b >= threshold.
    const auto seen_ok = static_cast<std::size_t>(
        seen_hits.end() - std::upper_bound(seen_hits.begin(), seen_hits.end(), b));
    const auto unseen_ok = static_cast<std::size_t>(
        std::upper_bound(unseen_hits.begin(), unseen_hits.end(), b) - unseen_hits.begin());
    curve.points.push_back({b, n_seen ? double(seen_ok) / double(n_seen) : 0.0,
                            double(unseen_ok) / double(n_unseen)});
  }
  return curve;
}

double auc(const MetricsCurve& curve, bool* degenerate) {
  if (curve.points.empty()) throw ValidationError("auc: empty curve");
  std::vector<std::pair<double, double>> xy;
  for (const auto& p : curve.points) xy.emplace_back(p.seen, p.unseen);
  std::sort(xy.begin(), xy.end());
  std::vector<std::pair<double, double>> collapsed;
  for (const auto& [x, y] : xy) {
    if (!collapsed.empty() && collapsed.back().first == x) {
      collapsed.back().second = std::max(collapsed.back().second, y);
    } else {
      collapsed.emplace_back(x, y);
    }
  }
  if (degenerate) *degenerate = collapsed.size() < 2;
  double area = 0.0;
  for (std::size_t k = 1; k < collapsed.size(); ++k) {
    const auto [x0, y0] = collapsed[k - 1];
    const auto [x1, y1] = collapsed[k];
    area += (x1 - x0) * (y0 + y1) * 0.5;
  }
  return area * 100.0;
}

bool curve_is_monotone(const MetricsCurve& curve) {
  for (std::size_t k = 1; k < curve.points.size(); ++k) {
    const auto& a = curve.points[k - 1];
    const auto& b = curve.points[k];
    if (b.bias < a.bias || b.seen > a.seen || b.unseen < a.unseen) return false;
  }
  return true;
}

MetricsSummary summarize(const MetricsCurve& curve) {
  MetricsSummary s;
  if (curve.points.empty()) return s;
  double best_s = 0.0, best_u = 0.0, best_hm = 0.0;
  for (const auto& p : curve.points) {
    best_s = std::max(best_s, p.seen);
    best_u = std::max(best_u, p.unseen);
    const double denom = p.seen + p.unseen;
    if (denom > 0.0) best_hm = std::max(best_hm, 2.0 * p.seen * p.unseen / denom);
  }
  s.S = 100.0 * best_s;
  s.U = 100.0 * best_u;
  s.HM = 100.0 * best_hm;
  s.AUC = auc(curve);
  if (s.AUC > s.S * s.U / 100.0 + 1e-9 || s.AUC > 100.0 + 1e-9) {
    throw NumericError("summary violates the AUC bound: AUC " + std::to_string(s.AUC) +
                       " > S*U/100 = " + std::to_string(s.S * s.U / 100.0));
  }
  if (!curve_is_monotone(curve)) {
    throw NumericError("bias curve is not monotone in the bias");
  }
  return s;
}

std::string curve_to_csv(const MetricsCurve& curve) {
  std::string out = "bias,seen,unseen\n";
  char buf[96];
  for (const auto& p : curve.points) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p.bias, p.seen, p.unseen);
    out += buf;
  }
  return out;
}

nlohmann::json summary_to_json(const MetricsSummary& s) {
  return {{"S", s.S}, {"U", s.U}, {"HM", s.HM}, {"AUC", s.AUC}};
}

}  // namespace mmpt
