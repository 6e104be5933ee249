#include "mmpt/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

namespace mmpt {

namespace {

constexpr std::uint64_t kShuffleTag = 0x73687566666c65ULL;
constexpr std::uint64_t kPlacementTag = 0x706c616365ULL;

bool is_prompt_tensor(const std::string& name) {
  return name.rfind("prompt.", 0) == 0 || name.rfind("head.", 0) == 0;
}

}  // namespace

std::string partition_name(PartitionPreset p) {
  switch (p) {
    case PartitionPreset::toy_full: return "toy-full";
    case PartitionPreset::prompt_tune: return "prompt-tune";
    case PartitionPreset::frozen_all: return "frozen-all";
  }
  return "toy-full";
}

PartitionPreset parse_partition(const std::string& name) {
  if (name == "toy-full") return PartitionPreset::toy_full;
  if (name == "prompt-tune") return PartitionPreset::prompt_tune;
  if (name == "frozen-all") return PartitionPreset::frozen_all;
  throw ValidationError("training.partition: unknown preset '" + name +
                        "' (expected toy-full, prompt-tune or frozen-all)");
}

template <class T>
void apply_partition(MmptModel<T>& model, PartitionPreset preset) {
  auto& store = model.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    Parameter<T>& p = store[i];
    switch (preset) {
      case PartitionPreset::toy_full: p.trainable = p.name != "text.fixed"; break;
      case PartitionPreset::prompt_tune: p.trainable = is_prompt_tensor(p.name); break;
      case PartitionPreset::frozen_all: p.trainable = false; break;
    }
    p.zero_grad();
  }
}

template <class T>
std::vector<std::string> trainable_names(const MmptModel<T>& model) {
  std::vector<std::string> names;
  const auto& store = model.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store[i].trainable) names.push_back(store[i].name);
  }
  return names;
}

double composition_loss(std::span<const double> rho_a, std::span<const double> rho_o,
                        Composition label) {
  if (label.attribute >= rho_a.size() || label.object >= rho_o.size()) {
    throw ValidationError("composition_loss: label outside the probability rows");
  }
  return -std::log(std::max(rho_a[label.attribute], 1e-30)) -
         std::log(std::max(rho_o[label.object], 1e-30));
}

namespace {

template <class T>
ad::Var batch_loss_on(ad::Tape<T>& tape, MmptModel<T>& model,
                      std::span<const ImageSample* const> batch,
                      std::span<const PromptPlacement> placements, std::size_t& clamped) {
  if (batch.empty()) throw ValidationError("training batch is empty");
  std::vector<const Image*> images;
  std::vector<std::size_t> attrs, objs;
  for (const ImageSample* s : batch) {
    images.push_back(&s->image);
    attrs.push_back(s->label.attribute);
    objs.push_back(s->label.object);
  }
  ad::Var x = tape.constant(stack_images<T>(images));
  BranchLogits<T> out = model.forward(tape, x, batch.size(), placements);
  std::size_t clamped_a = 0, clamped_o = 0;
  ad::Var la = ad::mean_nll(tape, ad::log_softmax_rows(tape, out.attribute), std::move(attrs),
                            T(1e-30), &clamped_a);
  ad::Var lo = ad::mean_nll(tape, ad::log_softmax_rows(tape, out.object), std::move(objs),
                            T(1e-30), &clamped_o);
  clamped = clamped_a + clamped_o;
  return ad::add(tape, la, lo);
}

}  // namespace

template <class T>
double batch_loss(MmptModel<T>& model, std::span<const ImageSample* const> batch,
                  std::span<const PromptPlacement> placements) {
  ad::Tape<T> tape(false);
  std::size_t clamped = 0;
  const ad::Var loss = batch_loss_on(tape, model, batch, placements, clamped);
  return static_cast<double>(tape.value(loss)[0]);
}

template <class T>
StepMetrics compute_gradients(MmptModel<T>& model, std::span<const ImageSample* const> batch,
                              std::span<const PromptPlacement> placements) {
  model.params().zero_grad();
  ad::Tape<T> tape(true);
  StepMetrics m;
  const ad::Var loss = batch_loss_on(tape, model, batch, placements, m.clamped);
  m.loss = static_cast<double>(tape.value(loss)[0]);
  tape.backward(loss);
  double sq = 0.0;
  auto& store = model.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (!store[i].trainable) continue;
    for (std::size_t k = 0; k < store[i].grad.size(); ++k) {
      const double g = static_cast<double>(store[i].grad[k]);
      sq += g * g;
    }
  }
  m.grad_norm = std::sqrt(sq);
  return m;
}

template <class T>
StepMetrics train_step(TrainState<T>& state, MmptModel<T>& model,
                       std::span<const ImageSample* const> batch,
                       std::span<const PromptPlacement> placements, const AdamOptions& adam) {
  StepMetrics m = compute_gradients(model, batch, placements);
  if (!std::isfinite(m.loss)) {
    throw NumericError("training step " + std::to_string(state.step + 1) +
                       " aborted: loss is not finite");
  }
  if (!std::isfinite(m.grad_norm)) {
    throw NumericError("training step " + std::to_string(state.step + 1) +
                       " aborted: gradient is not finite");
  }
  const std::uint64_t t = state.step + 1;
  const double c1 = 1.0 - std::pow(adam.beta1, double(t));
  const double c2 = 1.0 - std::pow(adam.beta2, double(t));
  auto& store = model.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    Parameter<T>& p = store[i];
    if (!p.trainable) continue;
    auto& m1 = state.first_moment[p.name];
    auto& m2 = state.second_moment[p.name];
    if (!m1.same_shape(p.value)) m1 = Matrix<T>(p.value.rows(), p.value.cols());
    if (!m2.same_shape(p.value)) m2 = Matrix<T>(p.value.rows(), p.value.cols());
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const T g = p.grad[k];
      m1[k] = static_cast<T>(adam.beta1) * m1[k] + static_cast<T>(1.0 - adam.beta1) * g;
      m2[k] = static_cast<T>(adam.beta2) * m2[k] + static_cast<T>(1.0 - adam.beta2) * g * g;
      const double mh = double(m1[k]) / c1;
      const double vh = double(m2[k]) / c2;
      p.value[k] -= static_cast<T>(adam.lr * mh / (std::sqrt(vh) + adam.eps));
    }
  }
  state.step = t;
  state.loss_sum += m.loss;
  state.clamped_total += m.clamped;
  return m;
}

std::vector<std::size_t> batch_indices(std::size_t dataset_size, std::size_t batch,
                                       std::uint64_t step, std::uint64_t seed) {
  if (dataset_size == 0) throw ValidationError("training dataset is empty");
  if (batch == 0) throw ValidationError("training.batch must be positive");
  std::vector<std::size_t> out;
  std::vector<std::size_t> perm;
  std::uint64_t perm_epoch = ~std::uint64_t{0};
  for (std::size_t j = 0; j < batch; ++j) {
    const std::uint64_t pos = step * batch + j;
    const std::uint64_t epoch = pos / dataset_size;
    if (epoch != perm_epoch) {
      perm.resize(dataset_size);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      Rng rng(derive_seed(seed, kShuffleTag, epoch));
      std::shuffle(perm.begin(), perm.end(), rng);
      perm_epoch = epoch;
    }
    out.push_back(perm[pos % dataset_size]);
  }
  return out;
}

std::vector<PromptPlacement> batch_placements(const MMPTConfig& cfg, std::size_t batch,
                                              std::uint64_t step, std::uint64_t seed) {
  std::vector<PromptPlacement> out;
  for (std::size_t j = 0; j < batch; ++j) {
    Rng rng(derive_seed(seed, kPlacementTag, step, j));
    out.push_back(choose_placement(PlacementMode::random_per_image, cfg.image_size,
                                   cfg.image_size, cfg.prompt_patch_size, &rng));
  }
  return out;
}

template <class T>
TrainHistory train_loop(MmptModel<T>& model, TrainState<T>& state, const Dataset& train,
                        const TrainOptions& options, const EvalHook<T>& eval_hook,
                        std::ostream* log) {
  TrainHistory history;
  if (options.steps == 0) return history;
  for (const auto& s : train.samples) {
    if (!train.space.is_seen(s.label)) {
      throw ValidationError("training sample " + std::to_string(s.sample_id) + " is labelled " +
                            train.space.describe(s.label) + ", which is not a seen composition");
    }
  }
  for (std::size_t k = 0; k < options.steps; ++k) {
    const std::uint64_t step = state.step;
    const auto idx = batch_indices(train.samples.size(), options.batch, step, options.seed);
    std::vector<const ImageSample*> batch;
    for (std::size_t i : idx) batch.push_back(&train.samples[i]);
    const auto placements = batch_placements(model.config(), batch.size(), step, options.seed);
    const StepMetrics m = train_step(state, model, std::span<const ImageSample* const>(batch),
                                     std::span<const PromptPlacement>(placements), options.adam);
    history.steps.push_back({state.step, m.loss, m.grad_norm});
    if (log) {
      *log << nlohmann::json{{"step", state.step}, {"loss", m.loss}, {"grad_norm", m.grad_norm}}
                  .dump()
           << '\n';
    }
    const bool due = options.eval_every > 0 &&
                     ((k + 1) % options.eval_every == 0 || k + 1 == options.steps);
    if (due && eval_hook) {
      const MetricsSummary s = eval_hook(model, state.step);
      history.evals.push_back({state.step, s});
      if (log) {
        *log << nlohmann::json{{"step", state.step}, {"S", s.S}, {"U", s.U}, {"HM", s.HM},
                               {"AUC", s.AUC}}
                    .dump()
             << '\n';
      }
    }
  }
  return history;
}

#define MMPT_INSTANTIATE(T)                                                                      \
  template void apply_partition<T>(MmptModel<T>&, PartitionPreset);                             \
  template std::vector<std::string> trainable_names<T>(const MmptModel<T>&);                    \
  template double batch_loss<T>(MmptModel<T>&, std::span<const ImageSample* const>,            \
                                std::span<const PromptPlacement>);                               \
  template StepMetrics compute_gradients<T>(MmptModel<T>&, std::span<const ImageSample* const>, \
                                            std::span<const PromptPlacement>);                  \
  template StepMetrics train_step<T>(TrainState<T>&, MmptModel<T>&,                             \
                                     std::span<const ImageSample* const>,                       \
                                     std::span<const PromptPlacement>, const AdamOptions&);     \
  template TrainHistory train_loop<T>(MmptModel<T>&, TrainState<T>&, const Dataset&,            \
                                      const TrainOptions&, const EvalHook<T>&, std::ostream*);

MMPT_INSTANTIATE(float)
MMPT_INSTANTIATE(double)
#undef MMPT_INSTANTIATE

}  // namespace mmpt
