#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mmpt/errors.hpp"
#include "mmpt/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"MMPT: prompt-tuned three-branch transformer for open-world compositional "
               "zero-shot learning"};
  app.require_subcommand(1);

  std::string config, out, checkpoint, score_table, preset, dataset, space;
  std::optional<std::uint64_t> seed;
  bool force = false;

  auto* train = app.add_subcommand("train", "train one configuration and evaluate it");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or a score table");
  auto* ablation = app.add_subcommand("ablation", "train the four prompt variants");
  auto* sweep = app.add_subcommand("sweep", "sweep one hyperparameter");
  auto* gen = app.add_subcommand("dataset-gen", "render and export the synthetic dataset");

  for (auto* sub : {train, ablation, sweep, gen}) {
    sub->add_option("--config", config, "experiment config (JSON); toy defaults when omitted");
    sub->add_option("--out", out, "output directory")->required();
    sub->add_option("--seed", seed, "override the config seed");
  }
  sweep->add_option("--preset", preset, "ctx, depth, dim or length")->required();

  eval->add_option("--checkpoint", checkpoint, "checkpoint directory");
  eval->add_option("--dataset", dataset, "exported dataset directory (default: regenerate test split)");
  eval->add_option("--score-table", score_table, "score table (.json, or CSV with --space)");
  eval->add_option("--space", space, "space definition file for CSV score tables");
  eval->add_option("--out", out, "output directory for summary.json and curve.csv");
  eval->add_flag("--force", force, "load a checkpoint despite a config-hash mismatch");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return mmpt::cmd_train(config, out, seed, std::cout);
    if (eval->parsed()) {
      return mmpt::cmd_eval(checkpoint, dataset, score_table, space, out, force, std::cout);
    }
    if (ablation->parsed()) return mmpt::cmd_ablation(config, out, seed, std::cout);
    if (sweep->parsed()) return mmpt::cmd_sweep(preset, config, out, seed, std::cout);
    if (gen->parsed()) return mmpt::cmd_dataset_gen(config, out, seed, std::cout);
  } catch (const mmpt::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const mmpt::ProtocolError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const mmpt::CorruptionError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
