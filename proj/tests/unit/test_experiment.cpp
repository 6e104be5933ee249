#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "mmpt/experiment.hpp"
#include "oracles.hpp"

using namespace mmpt;
namespace fs = std::filesystem;
using json = nlohmann::json;

TEST_SUITE("experiment") {

namespace {

ExperimentConfig tiny() {
  ExperimentConfig c;
  c.data.n_per_seen_train = 1;
  c.data.n_per_pair_eval = 1;
  c.training.steps = 3;
  c.training.batch = 8;
  c.eval.eval_every = 2;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path write_config(const std::string& name, const json& j) {
  const fs::path dir = fixture::temp_dir(name);
  std::ofstream(dir / "config.json") << j.dump();
  return dir / "config.json";
}

}  // namespace

TEST_CASE("variant flags and names") {
  CHECK(variant_flags(Variant::coop_text_only).visual_prompt == false);
  CHECK(variant_flags(Variant::coop_text_only).shared_prompts == false);
  CHECK(variant_flags(Variant::coop_plus_visual).visual_prompt == true);
  CHECK(variant_flags(Variant::coop_plus_visual).shared_prompts == false);
  CHECK(variant_flags(Variant::coop_plus_shared).visual_prompt == false);
  CHECK(variant_flags(Variant::coop_plus_shared).shared_prompts == true);
  CHECK(variant_flags(Variant::mmpt_full).visual_prompt == true);
  CHECK(variant_flags(Variant::mmpt_full).shared_prompts == true);
  CHECK(all_variants().size() == 4);
  for (Variant v : all_variants()) CHECK(parse_variant(variant_name(v)) == v);
  CHECK_THROWS_AS(parse_variant("mmpt"), ValidationError);

  ExperimentConfig c;
  c.variant = Variant::coop_plus_visual;
  c.seed = 12;
  const MMPTConfig m = c.effective_model();
  CHECK(m.visual_prompt);
  CHECK_FALSE(m.shared_prompts);
  CHECK(m.seed == 12);
}

TEST_CASE("config JSON round trip and hashing") {
  ExperimentConfig c = tiny();
  c.training.partition = "prompt-tune";
  c.data.train_limit = 9;
  c.model.ctx_len = 2;
  c.seed = 4;
  const ExperimentConfig back = experiment_from_json(experiment_to_json(c));
  CHECK(experiment_to_json(back) == experiment_to_json(c));
  CHECK(experiment_hash(back) == experiment_hash(c));

  ExperimentConfig other = c;
  other.variant = Variant::coop_text_only;
  CHECK(experiment_hash(other) != experiment_hash(c));
  other = c;
  other.seed = 5;
  CHECK(experiment_hash(other) != experiment_hash(c));
  other = c;
  other.training.lr = 2e-3;
  CHECK(experiment_hash(other) != experiment_hash(c));
  CHECK(experiment_from_json(json::object()).training.steps == ExperimentConfig{}.training.steps);
}

TEST_CASE("config errors name the field") {
  auto rejects = [](json j, const std::string& field) {
    try {
      (void)experiment_from_json(j);
      FAIL("accepted " << j.dump());
    } catch (const ValidationError& e) {
      CHECK_MESSAGE(std::string(e.what()).find(field) != std::string::npos, e.what());
    }
  };
  rejects({{"colour", 1}}, "colour");
  rejects({{"data", {{"n_per_seen", 3}}}}, "n_per_seen");
  rejects({{"training", {{"momentum", 0.9}}}}, "momentum");
  rejects({{"eval", {{"every", 2}}}}, "every");
  rejects({{"model", {{"width", 2}}}}, "width");
  rejects({{"training", {{"lr", 0.0}}}}, "training.lr");
  rejects({{"training", {{"lr", "fast"}}}}, "training.lr");
  rejects({{"training", {{"batch", 0}}}}, "training.batch");
  rejects({{"training", {{"partition", "all"}}}}, "partition");
  rejects({{"training", {{"steps", -1}}}}, "training.steps");
  rejects({{"data", {{"n_per_pair_eval", 0}}}}, "n_per_pair_eval");
  rejects({{"variant", "everything"}}, "variant");
  rejects({{"model", {{"h_s", 7}}}}, "h_s");
  rejects({{"data", {{"render", {{"shapes", 1}}}}}}, "render");
  rejects({{"model", {{"h_v", -3}}}}, "model.h_v");
  rejects({{"seed", -1}}, "seed");

  // Integers built in code are signed in the JSON model; both forms are accepted.
  json signed_counts = experiment_to_json(ExperimentConfig{});
  signed_counts["model"].update(builtin_preset("depth").base_overrides);
  signed_counts["training"]["steps"] = 7;
  const ExperimentConfig parsed = experiment_from_json(signed_counts);
  CHECK(parsed.model.h_v == 12);
  CHECK(parsed.model.h_o == 12);
  CHECK(parsed.training.steps == 7);
  CHECK_THROWS_AS(load_experiment("/nonexistent/config.json"), ValidationError);
  const fs::path bad = fixture::temp_dir("exp_badjson") / "c.json";
  std::ofstream(bad) << "{ not json";
  CHECK_THROWS_AS(load_experiment(bad.string()), ValidationError);
}

TEST_CASE("experiment data is deterministic and honours train_limit") {
  ExperimentConfig c = tiny();
  const ExperimentData a = make_experiment_data(c);
  const ExperimentData b = make_experiment_data(c);
  CHECK(a.hash == b.hash);
  CHECK(a.splits.train.samples.size() == 56);
  c.data.train_limit = 10;
  const ExperimentData limited = make_experiment_data(c);
  CHECK(limited.splits.train.samples.size() == 10);
  CHECK(limited.hash != a.hash);
  c.data.seed = 1;
  c.data.train_limit = 0;
  CHECK(make_experiment_data(c).hash != a.hash);
  c.data.render = render_spec_to_json(default_render_spec(8, 10, 16, 8));
  CHECK_THROWS_AS(make_experiment_data(c), ValidationError);
}

TEST_CASE("a run writes provenance-stamped artifacts and repeats byte for byte") {
  const ExperimentConfig c = tiny();
  const fs::path a = fixture::temp_dir("exp_run_a"), b = fixture::temp_dir("exp_run_b");
  const RunResult r = run_experiment(c, a.string());
  (void)run_experiment(c, b.string());
  for (const char* f : {"config.json", "train_log.jsonl", "summary.json", "curve.csv", "test_scores.json",
                        "checkpoint/manifest.json", "checkpoint/tensors.bin"}) {
    REQUIRE_MESSAGE(fs::exists(a / f), f);
    CHECK_MESSAGE(slurp(a / f) == slurp(b / f), f);
  }
  const json summary = json::parse(slurp(a / "summary.json"));
  CHECK(summary.at("config_hash") == experiment_hash(c));
  CHECK(summary.at("seed") == c.seed);
  CHECK(summary.at("dataset_hash") == r.dataset_hash);
  CHECK(summary.at("AUC").get<double>() <= summary.at("S").get<double>() * summary.at("U").get<double>() / 100.0 + 1e-9);
  CHECK(slurp(a / "curve.csv").find("config_hash=" + experiment_hash(c)) != std::string::npos);

  std::istringstream log(slurp(a / "train_log.jsonl"));
  std::string line;
  std::getline(log, line);
  CHECK(json::parse(line).at("config_hash") == experiment_hash(c));
  std::size_t steps = 0, evals = 0;
  while (std::getline(log, line)) {
    const json j = json::parse(line);
    if (j.contains("loss")) ++steps;
    if (j.contains("AUC")) ++evals;
  }
  CHECK(steps == 3);
  CHECK(evals == 2);
  CHECK(r.history.evals.size() == 2);
}

TEST_CASE("ablation emits four rows on one dataset") {
  const ExperimentConfig c = tiny();
  const fs::path cfg = write_config("exp_ablation_cfg", experiment_to_json(c));
  const fs::path out = fixture::temp_dir("exp_ablation");
  std::ostringstream sink;
  CHECK(cmd_ablation(cfg.string(), out.string(), std::nullopt, sink) == 0);
  std::istringstream table(slurp(out / "ablation.csv"));
  std::string header, columns, line;
  std::getline(table, header);
  std::getline(table, columns);
  CHECK(header.find("dataset_hash=" + make_experiment_data(c).hash) != std::string::npos);
  CHECK(columns == "Variant,S,U,HM,AUC");
  std::vector<std::string> names;
  while (std::getline(table, line)) names.push_back(line.substr(0, line.find(',')));
  CHECK(names == std::vector<std::string>{"coop_text_only", "coop_plus_visual", "coop_plus_shared", "mmpt_full"});

  // The text-only row equals a direct run of that variant.
  ExperimentConfig text = c;
  text.variant = Variant::coop_text_only;
  const RunResult direct = run_experiment(text, "");
  const json row = json::parse(slurp(out / "coop_text_only" / "summary.json"));
  CHECK(row.at("AUC").get<double>() == direct.summary.AUC);
  CHECK(row.at("HM").get<double>() == direct.summary.HM);
}

TEST_CASE("sweep presets and per-row errors") {
  CHECK(builtin_preset("ctx").values == std::vector<std::size_t>{1, 2, 4, 6, 8});
  CHECK(builtin_preset("depth").values == std::vector<std::size_t>{2, 4, 6, 9, 12});
  CHECK(builtin_preset("dim").values == std::vector<std::size_t>{64, 128, 256, 512});
  CHECK(builtin_preset("length").axis == "L_p");
  CHECK(builtin_preset("depth").axis == "h_s");
  CHECK(builtin_preset_names().size() == 4);
  CHECK_THROWS_AS(builtin_preset("width"), ValidationError);

  ExperimentConfig c = tiny();
  c.training.steps = 1;
  c.eval.eval_every = 0;
  const SweepPreset custom{"custom", "h_s", {1, 5, 0, 3}, json::object()};
  const auto rows = run_sweep(c, custom, "");
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].summary.has_value());
  CHECK_FALSE(rows[1].summary.has_value());
  CHECK(rows[1].error.find("h_s") != std::string::npos);
  CHECK_FALSE(rows[2].summary.has_value());
  CHECK(rows[3].summary.has_value());
  CHECK_THROWS_AS(run_sweep(c, SweepPreset{"empty", "m", {}, json::object()}, ""), ValidationError);
  CHECK(run_sweep(c, SweepPreset{"bad", "width", {1}, json::object()}, "")[0].error.find("axis") != std::string::npos);
}

TEST_CASE("score-table evaluation matches the oracle and repeats exactly") {
  const fs::path dir = fixture::temp_dir("exp_eval_table");
  const ScoreTable hand = fixture::hand_table();
  save_score_table(hand, (dir / "hand.json").string());
  std::ostringstream first, second;
  CHECK(cmd_eval("", "", (dir / "hand.json").string(), "", (dir / "a").string(), false, first) == 0);
  CHECK(cmd_eval("", "", (dir / "hand.json").string(), "", (dir / "b").string(), false, second) == 0);
  CHECK(first.str() == second.str());
  CHECK(slurp(dir / "a" / "curve.csv") == slurp(dir / "b" / "curve.csv"));
  const json s = json::parse(first.str());
  const auto ref = oracle::dense_sweep(hand);
  CHECK(s.at("S").get<double>() == doctest::Approx(ref.S).epsilon(1e-12));
  CHECK(s.at("U").get<double>() == doctest::Approx(ref.U).epsilon(1e-12));
  CHECK(s.at("HM").get<double>() == doctest::Approx(ref.HM).epsilon(1e-12));
  CHECK(s.at("AUC").get<double>() == doctest::Approx(ref.AUC).epsilon(1e-12));
  CHECK(s.contains("table_hash"));

  // CSV form with a separate space file.
  save_score_table(hand, (dir / "hand.csv").string());
  save_space(hand.space, (dir / "space.json").string());
  std::ostringstream csv;
  CHECK(cmd_eval("", "", (dir / "hand.csv").string(), (dir / "space.json").string(), "", false, csv) == 0);
  CHECK(json::parse(csv.str()).at("AUC") == s.at("AUC"));

  // No unseen-labelled sample: the sweep's protocol error reaches the caller unchanged.
  ScoreTable seen_only = hand;
  seen_only.labels.assign(hand.size(), Composition{0, 0});
  save_score_table(seen_only, (dir / "seen.json").string());
  std::ostringstream sink;
  try {
    (void)cmd_eval("", "", (dir / "seen.json").string(), "", "", false, sink);
    FAIL("no protocol error");
  } catch (const ProtocolError& e) {
    CHECK(std::string(e.what()).find("unseen label") != std::string::npos);
  }
  CHECK_THROWS_AS(cmd_eval("", "", "", "", "", false, sink), ValidationError);
}

TEST_CASE("checkpoint evaluation regenerates the test split or reads an exported one") {
  const ExperimentConfig c = tiny();
  const fs::path run = fixture::temp_dir("exp_eval_ckpt");
  const RunResult r = run_experiment(c, (run / "run").string());
  std::ostringstream regen;
  CHECK(cmd_eval((run / "run" / "checkpoint").string(), "", "", "", "", false, regen) == 0);
  const json a = json::parse(regen.str());
  CHECK(a.at("AUC").get<double>() == r.summary.AUC);
  CHECK(a.at("config_hash").is_string());

  const fs::path cfg = write_config("exp_eval_ckpt_cfg", experiment_to_json(c));
  std::ostringstream gen;
  CHECK(cmd_dataset_gen(cfg.string(), (run / "data").string(), std::nullopt, gen) == 0);
  std::ostringstream from_disk;
  CHECK(cmd_eval((run / "run" / "checkpoint").string(), (run / "data" / "test").string(), "", "", "", false,
                 from_disk) == 0);
  CHECK(json::parse(from_disk.str()).at("AUC") == a.at("AUC"));

  // A dataset over different labels is refused.
  ExperimentConfig small = c;
  const CompositionSpace other = assign_splits(
      build_space(fixture::labels(8, "x", LabelRole::attribute), fixture::labels(10, "y", LabelRole::object)),
      default_synthetic_space().seen(), default_synthetic_space().unseen_val(), default_synthetic_space().unseen_test());
  save_space(other, (run / "other_space.json").string());
  small.data.space_file = (run / "other_space.json").string();
  const fs::path cfg2 = write_config("exp_eval_ckpt_cfg2", experiment_to_json(small));
  std::ostringstream gen2;
  CHECK(cmd_dataset_gen(cfg2.string(), (run / "other").string(), std::nullopt, gen2) == 0);
  std::ostringstream sink;
  CHECK_THROWS_AS(cmd_eval((run / "run" / "checkpoint").string(), (run / "other" / "test").string(), "", "", "",
                           false, sink),
                  ValidationError);
}

TEST_CASE("CLI verbs require an output directory") {
  std::ostringstream sink;
  CHECK_THROWS_AS(cmd_train("", "", std::nullopt, sink), ValidationError);
  CHECK_THROWS_AS(cmd_ablation("", "", std::nullopt, sink), ValidationError);
  CHECK_THROWS_AS(cmd_sweep("ctx", "", "", std::nullopt, sink), ValidationError);
  CHECK_THROWS_AS(cmd_dataset_gen("", "", std::nullopt, sink), ValidationError);
}

}
