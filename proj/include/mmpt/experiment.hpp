#pragma once

// Config-driven runs: train, eval, ablation over the four prompt variants,
// hyperparameter sweeps, dataset generation. Every artifact carries the
// config hash and seed.

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmpt/metrics.hpp"
#include "mmpt/model_config.hpp"
#include "mmpt/synthetic_data.hpp"
#include "mmpt/training.hpp"

namespace mmpt {

enum class Variant { coop_text_only, coop_plus_visual, coop_plus_shared, mmpt_full };

[[nodiscard]] std::string variant_name(Variant v);
[[nodiscard]] Variant parse_variant(const std::string& name);
[[nodiscard]] const std::vector<Variant>& all_variants();

struct VariantFlags {
  bool visual_prompt = false;
  bool shared_prompts = false;
};
[[nodiscard]] VariantFlags variant_flags(Variant v);

struct DataConfig {
  std::string space_file;  // empty: built-in 8x10 synthetic space
  std::optional<nlohmann::json> render;  // empty: default render spec for the space
  std::size_t n_per_seen_train = 8;
  std::size_t n_per_pair_eval = 4;
  std::size_t train_limit = 0;  // keep the first N train samples; 0 keeps all
  std::uint64_t seed = 0;
};

struct TrainingConfig {
  double lr = 1e-3;
  std::size_t batch = 16;
  std::size_t steps = 300;
  std::string partition = "toy-full";
};

struct EvalConfig {
  std::size_t eval_every = 0;
};

struct ExperimentConfig {
  MMPTConfig model;
  DataConfig data;
  TrainingConfig training;
  EvalConfig eval;
  Variant variant = Variant::mmpt_full;
  std::uint64_t seed = 0;  // model initialisation, shuffling and prompt placement

  // Model config with the variant flags and seed applied.
  [[nodiscard]] MMPTConfig effective_model() const;
  void validate() const;
};

[[nodiscard]] nlohmann::json experiment_to_json(const ExperimentConfig& cfg);
// Unknown keys at any level are rejected.
[[nodiscard]] ExperimentConfig experiment_from_json(const nlohmann::json& j);
[[nodiscard]] ExperimentConfig load_experiment(const std::string& path);
[[nodiscard]] std::string experiment_hash(const ExperimentConfig& cfg);

struct ExperimentData {
  CompositionSpace space;
  RenderSpec spec;
  DatasetSplits splits;
  std::string hash;  // over all three splits
};

[[nodiscard]] ExperimentData make_experiment_data(const ExperimentConfig& cfg);

struct RunResult {
  std::string config_hash;
  std::string dataset_hash;
  std::uint64_t seed = 0;
  MetricsSummary summary;      // test split
  MetricsCurve curve;
  TopOneAccuracy top1;         // bias-free open-world accuracy on the test split
  double train_loss = 0.0;     // eval-mode mean loss over the train split
  double train_accuracy = 0.0; // eval-mode open-world accuracy over the train split
  TrainHistory history;
};

[[nodiscard]] nlohmann::json run_summary_json(const RunResult& r, const ExperimentConfig& cfg);

// Trains and evaluates one configuration. With a non-empty out_dir, writes
// config.json, train_log.jsonl, summary.json, curve.csv, test_scores.json and
// checkpoint/.
RunResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                         const ExperimentData* data = nullptr);

struct SweepPreset {
  std::string name;
  std::string axis;  // one of L_p, d_s, m, h_s
  std::vector<std::size_t> values;
  nlohmann::json base_overrides = nlohmann::json::object();  // applied to "model"
};

// Built-in presets: ctx, depth, dim, length.
[[nodiscard]] SweepPreset builtin_preset(const std::string& name);
[[nodiscard]] std::vector<std::string> builtin_preset_names();

struct SweepRow {
  std::size_t value = 0;
  std::optional<MetricsSummary> summary;
  std::string error;
};

// Runs one training per axis value; invalid values become error rows.
std::vector<SweepRow> run_sweep(const ExperimentConfig& base, const SweepPreset& preset,
                                const std::string& out_dir);

// CLI verbs. Each returns a process exit code and reports through `out`.
int cmd_train(const std::string& config_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed, std::ostream& out);
int cmd_eval(const std::string& checkpoint, const std::string& dataset_dir,
             const std::string& score_table, const std::string& space_file,
             const std::string& out_dir, bool force, std::ostream& out);
int cmd_ablation(const std::string& config_path, const std::string& out_dir,
                 std::optional<std::uint64_t> seed, std::ostream& out);
int cmd_sweep(const std::string& preset, const std::string& config_path,
              const std::string& out_dir, std::optional<std::uint64_t> seed, std::ostream& out);
int cmd_dataset_gen(const std::string& config_path, const std::string& out_dir,
                    std::optional<std::uint64_t> seed, std::ostream& out);

}  // namespace mmpt
