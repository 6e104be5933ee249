#pragma once

// Open-world prediction and the calibration-bias evaluation protocol.
//
// A bias b is added to the score of every composition outside the seen set.
// For each sample only two candidates matter: the best seen composition and
// the best non-seen one. The sample predicts the non-seen candidate exactly
// when (best non-seen score + b) >= best seen score, so the prediction flips
// once, at a per-sample threshold. Sweeping the sorted thresholds visits every
// distinct prediction state.

#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmpt/composition_space.hpp"
#include "mmpt/score_table.hpp"

namespace mmpt {

struct CurvePoint {
  double bias = 0.0;
  double seen = 0.0;    // fraction of seen-labelled samples predicted correctly
  double unseen = 0.0;  // fraction of unseen-labelled samples predicted correctly
};

struct MetricsCurve {
  std::vector<CurvePoint> points;  // increasing bias
};

// Percentages.
struct MetricsSummary {
  double S = 0.0;
  double U = 0.0;
  double HM = 0.0;
  double AUC = 0.0;
};

// Argmax over a dense attribute-major grid; ties go to the lowest index.
[[nodiscard]] Composition predict_open_world(std::span<const double> grid,
                                             const CompositionSpace& space);
[[nodiscard]] Composition predict_open_world(const ScoreTable& table, std::size_t sample);

// Fraction of samples whose bias-free open-world prediction equals the label,
// split by whether the label is seen. Returns {seen_acc, unseen_acc}; a group
// with no samples reports 0.
struct TopOneAccuracy {
  double seen = 0.0;
  double unseen = 0.0;
  std::size_t seen_count = 0;
  std::size_t unseen_count = 0;
};
[[nodiscard]] TopOneAccuracy open_world_accuracy(const ScoreTable& table);

// Smallest double b with (u + b >= s) under IEEE addition.
[[nodiscard]] double decision_threshold(double seen_best, double unseen_best);

// Throws ProtocolError when no sample carries a non-seen label or the space
// has no non-seen composition.
[[nodiscard]] MetricsCurve bias_sweep(const ScoreTable& table);

// Trapezoidal area of unseen vs seen accuracy, x100. Points are sorted by seen
// accuracy and duplicate x values collapsed to their largest y. A curve with a
// single distinct x has area 0 and sets *degenerate.
[[nodiscard]] double auc(const MetricsCurve& curve, bool* degenerate = nullptr);

// Validates the result: AUC <= S*U/100 + 1e-9, AUC <= 100, and a monotone curve.
[[nodiscard]] MetricsSummary summarize(const MetricsCurve& curve);

[[nodiscard]] bool curve_is_monotone(const MetricsCurve& curve);

[[nodiscard]] std::string curve_to_csv(const MetricsCurve& curve);
[[nodiscard]] nlohmann::json summary_to_json(const MetricsSummary& summary);

}  // namespace mmpt
