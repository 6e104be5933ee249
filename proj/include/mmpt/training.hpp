#pragma once

#include <functional>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mmpt/metrics.hpp"
#include "mmpt/model.hpp"
#include "mmpt/synthetic_data.hpp"

namespace mmpt {

// Which tensors receive updates.
//   toy_full:    everything except the frozen template tokens.
//   prompt_tune: shared prompts, projectors, phi, context tokens and the
//                scoring heads; encoder layers and embeddings stay fixed.
//   frozen_all:  nothing.
enum class PartitionPreset { toy_full, prompt_tune, frozen_all };

[[nodiscard]] std::string partition_name(PartitionPreset p);
[[nodiscard]] PartitionPreset parse_partition(const std::string& name);

template <class T>
void apply_partition(MmptModel<T>& model, PartitionPreset preset);

template <class T>
[[nodiscard]] std::vector<std::string> trainable_names(const MmptModel<T>& model);

// Sum of -log rho_a(a) - log rho_o(o) for one row of probabilities, with each
// probability clamped at 1e-30.
[[nodiscard]] double composition_loss(std::span<const double> rho_a, std::span<const double> rho_o,
                                      Composition label);

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct TrainState {
  std::uint64_t step = 0;
  std::map<std::string, Matrix<T>> first_moment;
  std::map<std::string, Matrix<T>> second_moment;
  double loss_sum = 0.0;  // running statistics over completed steps
  std::uint64_t clamped_total = 0;
};

struct StepMetrics {
  double loss = 0.0;
  double grad_norm = 0.0;
  std::size_t clamped = 0;  // log-probabilities that hit the clamp floor
};

// Mean composition loss of a batch without recording a tape.
template <class T>
double batch_loss(MmptModel<T>& model, std::span<const ImageSample* const> batch,
                  std::span<const PromptPlacement> placements);

// Forward and backward on a batch; leaves gradients in the parameters.
template <class T>
StepMetrics compute_gradients(MmptModel<T>& model, std::span<const ImageSample* const> batch,
                              std::span<const PromptPlacement> placements);

// One forward, backward and Adam update. Throws NumericError, leaving the
// model and state untouched, when the loss or a gradient is not finite.
template <class T>
StepMetrics train_step(TrainState<T>& state, MmptModel<T>& model,
                       std::span<const ImageSample* const> batch,
                       std::span<const PromptPlacement> placements, const AdamOptions& adam);

struct TrainOptions {
  std::size_t steps = 0;
  std::size_t batch = 16;
  std::size_t eval_every = 0;  // 0 disables evaluation
  std::uint64_t seed = 0;
  AdamOptions adam;
};

struct StepRecord {
  std::uint64_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

struct EvalRecord {
  std::uint64_t step = 0;
  MetricsSummary summary;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
};

template <class T>
using EvalHook = std::function<MetricsSummary(const MmptModel<T>&, std::uint64_t step)>;

// Sample indices of the batch at `step`: consecutive positions in an endless
// sequence of per-epoch permutations seeded from (seed, epoch).
[[nodiscard]] std::vector<std::size_t> batch_indices(std::size_t dataset_size, std::size_t batch,
                                                     std::uint64_t step, std::uint64_t seed);

// Random visual-prompt corners for the batch at `step`, one per image.
[[nodiscard]] std::vector<PromptPlacement> batch_placements(const MMPTConfig& cfg,
                                                            std::size_t batch, std::uint64_t step,
                                                            std::uint64_t seed);

// Runs `options.steps` further steps starting at state.step. The hook runs
// after every eval_every-th step and after the last one. When `log` is given,
// one JSON line is written per step and per evaluation.
template <class T>
TrainHistory train_loop(MmptModel<T>& model, TrainState<T>& state, const Dataset& train,
                        const TrainOptions& options, const EvalHook<T>& eval_hook,
                        std::ostream* log = nullptr);

}  // namespace mmpt
