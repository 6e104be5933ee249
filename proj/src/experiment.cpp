#include "mmpt/experiment.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "mmpt/checkpoint.hpp"
#include "mmpt/hashing.hpp"
#include "mmpt/model.hpp"

namespace mmpt {

namespace fs = std::filesystem;

namespace {

// Non-negative integer, whether stored signed or unsigned.
bool is_count(const nlohmann::json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

using json = nlohmann::json;

void reject_unknown(const json& j, std::initializer_list<const char*> keys,
                    const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + ": expected a JSON object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw ValidationError(where + ": unknown key '" + k + "'");
  }
}

void read_size(const json& j, const char* key, const std::string& where, std::size_t& out) {
  if (!j.contains(key)) return;
  if (!is_count(j.at(key))) {
    throw ValidationError(where + "." + key + ": expected a non-negative integer");
  }
  out = j.at(key).get<std::size_t>();
}

void read_u64(const json& j, const char* key, const std::string& where, std::uint64_t& out) {
  if (!j.contains(key)) return;
  if (!is_count(j.at(key))) {
    throw ValidationError(where + "." + key + ": expected a non-negative integer");
  }
  out = j.at(key).get<std::uint64_t>();
}

void read_string(const json& j, const char* key, const std::string& where, std::string& out) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_string()) throw ValidationError(where + "." + key + ": expected a string");
  out = j.at(key).get<std::string>();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ValidationError("cannot write " + p.string());
  f << text;
}

std::string provenance_line(const std::string& config_hash, std::uint64_t seed,
                            const std::string& dataset_hash) {
  return "# config_hash=" + config_hash + " seed=" + std::to_string(seed) +
         " dataset_hash=" + dataset_hash + "\n";
}

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

ExperimentConfig load_or_default(const std::string& path, std::optional<std::uint64_t> seed) {
  ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : load_experiment(path);
  if (seed) cfg.seed = *seed;
  cfg.validate();
  return cfg;
}

void set_axis(json& model, const std::string& axis, std::size_t value) {
  if (axis == "L_p") {
    model["prompt_len"] = value;
  } else if (axis == "d_s") {
    model["d_s"] = value;
  } else if (axis == "m") {
    model["ctx_len"] = value;
  } else if (axis == "h_s") {
    model["h_s"] = value;
  } else {
    throw ValidationError("sweep axis '" + axis + "' is not one of L_p, d_s, m, h_s");
  }
}

}  // namespace

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::coop_text_only: return "coop_text_only";
    case Variant::coop_plus_visual: return "coop_plus_visual";
    case Variant::coop_plus_shared: return "coop_plus_shared";
    case Variant::mmpt_full: return "mmpt_full";
  }
  return "mmpt_full";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : all_variants()) {
    if (variant_name(v) == name) return v;
  }
  throw ValidationError("variant: unknown value '" + name +
                        "' (expected coop_text_only, coop_plus_visual, coop_plus_shared or "
                        "mmpt_full)");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v = {Variant::coop_text_only, Variant::coop_plus_visual,
                                         Variant::coop_plus_shared, Variant::mmpt_full};
  return v;
}

VariantFlags variant_flags(Variant v) {
  switch (v) {
    case Variant::coop_text_only: return {false, false};
    case Variant::coop_plus_visual: return {true, false};
    case Variant::coop_plus_shared: return {false, true};
    case Variant::mmpt_full: return {true, true};
  }
  return {true, true};
}

MMPTConfig ExperimentConfig::effective_model() const {
  MMPTConfig m = model;
  const VariantFlags f = variant_flags(variant);
  m.visual_prompt = f.visual_prompt;
  m.shared_prompts = f.shared_prompts;
  m.seed = seed;
  return m;
}

void ExperimentConfig::validate() const {
  effective_model().validate();
  (void)parse_partition(training.partition);
  if (!(training.lr > 0)) throw ValidationError("training.lr: must be positive");
  if (training.batch == 0) throw ValidationError("training.batch: must be positive");
  if (data.n_per_seen_train == 0) throw ValidationError("data.n_per_seen_train: must be positive");
  if (data.n_per_pair_eval == 0) throw ValidationError("data.n_per_pair_eval: must be positive");
}

json experiment_to_json(const ExperimentConfig& c) {
  json data = {{"space_file", c.data.space_file},
               {"n_per_seen_train", c.data.n_per_seen_train},
               {"n_per_pair_eval", c.data.n_per_pair_eval},
               {"train_limit", c.data.train_limit},
               {"seed", c.data.seed}};
  if (c.data.render) data["render"] = *c.data.render;
  return {{"model", config_to_json(c.model)},
          {"data", std::move(data)},
          {"training",
           {{"lr", c.training.lr},
            {"batch", c.training.batch},
            {"steps", c.training.steps},
            {"partition", c.training.partition}}},
          {"eval", {{"eval_every", c.eval.eval_every}}},
          {"variant", variant_name(c.variant)},
          {"seed", c.seed}};
}

ExperimentConfig experiment_from_json(const json& j) {
  reject_unknown(j, {"model", "data", "training", "eval", "variant", "seed"}, "config");
  ExperimentConfig c;
  if (j.contains("model")) c.model = config_from_json(j.at("model"));
  if (j.contains("data")) {
    const json& d = j.at("data");
    reject_unknown(d, {"space_file", "render", "n_per_seen_train", "n_per_pair_eval", "train_limit",
                    "seed"},
                   "data");
    read_string(d, "space_file", "data", c.data.space_file);
    read_size(d, "n_per_seen_train", "data", c.data.n_per_seen_train);
    read_size(d, "n_per_pair_eval", "data", c.data.n_per_pair_eval);
    read_size(d, "train_limit", "data", c.data.train_limit);
    read_u64(d, "seed", "data", c.data.seed);
    if (d.contains("render") && !d.at("render").is_null()) {
      (void)render_spec_from_json(d.at("render"));
      c.data.render = d.at("render");
    }
  }
  if (j.contains("training")) {
    const json& t = j.at("training");
    reject_unknown(t, {"lr", "batch", "steps", "partition"}, "training");
    if (t.contains("lr")) {
      if (!t.at("lr").is_number()) throw ValidationError("training.lr: expected a number");
      c.training.lr = t.at("lr").get<double>();
    }
    read_size(t, "batch", "training", c.training.batch);
    read_size(t, "steps", "training", c.training.steps);
    read_string(t, "partition", "training", c.training.partition);
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    reject_unknown(e, {"eval_every"}, "eval");
    read_size(e, "eval_every", "eval", c.eval.eval_every);
  }
  if (j.contains("variant")) {
    if (!j.at("variant").is_string()) throw ValidationError("variant: expected a string");
    c.variant = parse_variant(j.at("variant").get<std::string>());
  }
  read_u64(j, "seed", "config", c.seed);
  c.validate();
  return c;
}

ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open config file: " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ValidationError("config " + path + ": " + e.what());
  }
  return experiment_from_json(j);
}

std::string experiment_hash(const ExperimentConfig& cfg) {
  return hex64(fnv1a64(experiment_to_json(cfg).dump()));
}

ExperimentData make_experiment_data(const ExperimentConfig& cfg) {
  ExperimentData d;
  d.space = cfg.data.space_file.empty() ? default_synthetic_space() : load_space(cfg.data.space_file);
  const MMPTConfig m = cfg.effective_model();
  d.spec = cfg.data.render ? render_spec_from_json(*cfg.data.render)
                           : default_render_spec(d.space.attributes().size(),
                                                 d.space.objects().size(), m.image_size,
                                                 m.patch_size);
  if (d.spec.height != m.image_size || d.spec.width != m.image_size ||
      d.spec.channels != m.channels) {
    throw ValidationError("data.render: image " + std::to_string(d.spec.height) + "x" +
                          std::to_string(d.spec.width) + "x" + std::to_string(d.spec.channels) +
                          " does not match model.image_size " + std::to_string(m.image_size));
  }
  d.splits = make_dataset(d.space, d.spec, cfg.data.n_per_seen_train, cfg.data.n_per_pair_eval,
                          cfg.data.seed);
  auto& train = d.splits.train.samples;
  if (cfg.data.train_limit > 0 && cfg.data.train_limit < train.size()) {
    train.resize(cfg.data.train_limit);
  }
  d.hash = hex64(fnv1a64(dataset_hash(d.splits.train) + dataset_hash(d.splits.val) +
                         dataset_hash(d.splits.test)));
  return d;
}

json run_summary_json(const RunResult& r, const ExperimentConfig& cfg) {
  return {{"config_hash", r.config_hash},
          {"seed", r.seed},
          {"dataset_hash", r.dataset_hash},
          {"variant", variant_name(cfg.variant)},
          {"steps", cfg.training.steps},
          {"S", r.summary.S},
          {"U", r.summary.U},
          {"HM", r.summary.HM},
          {"AUC", r.summary.AUC},
          {"seen_top1", 100.0 * r.top1.seen},
          {"unseen_top1", 100.0 * r.top1.unseen},
          {"train_loss", r.train_loss},
          {"train_accuracy", 100.0 * r.train_accuracy}};
}

RunResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                         const ExperimentData* data) {
  cfg.validate();
  std::optional<ExperimentData> own;
  if (!data) {
    own = make_experiment_data(cfg);
    data = &*own;
  }
  RunResult r;
  r.config_hash = experiment_hash(cfg);
  r.dataset_hash = data->hash;
  r.seed = cfg.seed;

  MmptModel<float> model(cfg.effective_model(), data->space.attributes().size(),
                         data->space.objects().size());
  apply_partition(model, parse_partition(cfg.training.partition));
  TrainState<float> state;

  std::ofstream log;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "config.json", experiment_to_json(cfg).dump(2) + "\n");
    log.open(fs::path(out_dir) / "train_log.jsonl", std::ios::binary);
    log << json{{"config_hash", r.config_hash}, {"seed", r.seed}, {"dataset_hash", r.dataset_hash}}
               .dump()
        << '\n';
  }
  const Dataset& val = data->splits.val;
  EvalHook<float> hook = [&](const MmptModel<float>& m, std::uint64_t) {
    return summarize(bias_sweep(forward_batch(m, val.samples, data->space)));
  };
  TrainOptions opts;
  opts.steps = cfg.training.steps;
  opts.batch = cfg.training.batch;
  opts.eval_every = cfg.eval.eval_every;
  opts.seed = cfg.seed;
  opts.adam.lr = cfg.training.lr;
  r.history = train_loop(model, state, data->splits.train, opts, hook, log.is_open() ? &log : nullptr);

  const ScoreTable test = forward_batch(model, data->splits.test.samples, data->space);
  r.curve = bias_sweep(test);
  r.summary = summarize(r.curve);
  r.top1 = open_world_accuracy(test);

  const ScoreTable train = forward_batch(model, data->splits.train.samples, data->space);
  double loss = 0.0;
  for (std::size_t i = 0; i < train.size(); ++i) {
    loss += composition_loss(train.rho_a.row(i), train.rho_o.row(i), train.labels[i]);
  }
  r.train_loss = loss / double(train.size());
  r.train_accuracy = open_world_accuracy(train).seen;

  if (!out_dir.empty()) {
    const fs::path out(out_dir);
    write_text(out / "summary.json", run_summary_json(r, cfg).dump(2) + "\n");
    write_text(out / "curve.csv",
               provenance_line(r.config_hash, r.seed, r.dataset_hash) + curve_to_csv(r.curve));
    save_score_table(test, (out / "test_scores.json").string());
    save_checkpoint(model, &state, (out / "checkpoint").string(),
                    json{{"experiment", experiment_to_json(cfg)},
                         {"space", space_to_json(data->space)},
                         {"dataset_hash", data->hash}});
  }
  return r;
}

SweepPreset builtin_preset(const std::string& name) {
  if (name == "ctx") return {"ctx", "m", {1, 2, 4, 6, 8}, json::object()};
  if (name == "depth") {
    return {"depth", "h_s", {2, 4, 6, 9, 12}, json{{"h_v", 12}, {"h_a", 12}, {"h_o", 12}}};
  }
  if (name == "dim") return {"dim", "d_s", {64, 128, 256, 512}, json::object()};
  if (name == "length") return {"length", "L_p", {2, 4, 6, 8, 10}, json::object()};
  throw ValidationError("unknown sweep preset '" + name + "' (expected ctx, depth, dim or length)");
}

std::vector<std::string> builtin_preset_names() { return {"ctx", "depth", "dim", "length"}; }

std::vector<SweepRow> run_sweep(const ExperimentConfig& base, const SweepPreset& preset,
                                const std::string& out_dir) {
  if (preset.values.empty()) throw ValidationError("sweep preset '" + preset.name + "' has no values");
  std::vector<SweepRow> rows;
  for (std::size_t value : preset.values) {
    SweepRow row;
    row.value = value;
    try {
      if (value == 0) throw ValidationError(preset.axis + " = 0: sweep values must be positive");
      json j = experiment_to_json(base);
      j["model"].update(preset.base_overrides);
      set_axis(j["model"], preset.axis, value);
      const ExperimentConfig cfg = experiment_from_json(j);
      const std::string dir =
          out_dir.empty() ? "" : (fs::path(out_dir) / (preset.axis + "_" + std::to_string(value))).string();
      row.summary = run_experiment(cfg, dir).summary;
    } catch (const Error& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed, std::ostream& out) {
  const ExperimentConfig cfg = load_or_default(config_path, seed);
  if (out_dir.empty()) throw ValidationError("train: --out is required");
  const RunResult r = run_experiment(cfg, out_dir);
  out << run_summary_json(r, cfg).dump(2) << '\n';
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset_dir,
             const std::string& score_table, const std::string& space_file,
             const std::string& out_dir, bool force, std::ostream& out) {
  ScoreTable table;
  json provenance;
  if (!score_table.empty()) {
    std::optional<CompositionSpace> space;
    if (!space_file.empty()) space = load_space(space_file);
    table = load_score_table(score_table, space);
    std::ifstream f(score_table, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    provenance = {{"source", "score_table"}, {"table_hash", hex64(fnv1a64(ss.str()))}};
  } else {
    if (checkpoint.empty()) throw ValidationError("eval: give --checkpoint or --score-table");
    const CheckpointInfo info = read_checkpoint_info(checkpoint);
    MmptModel<float> model(info.config, info.num_attributes, info.num_objects);
    load_checkpoint(checkpoint, model, static_cast<TrainState<float>*>(nullptr), force);
    const json& extra = info.manifest.contains("extra") ? info.manifest.at("extra") : json::object();
    Dataset ds;
    if (!dataset_dir.empty()) {
      ds = import_dataset(dataset_dir);
    } else if (extra.contains("experiment")) {
      ds = make_experiment_data(experiment_from_json(extra.at("experiment"))).splits.test;
    } else {
      throw ValidationError("eval: checkpoint has no stored experiment; give --dataset");
    }
    if (extra.contains("space") && !space_from_json(extra.at("space")).same_labels(ds.space)) {
      throw ValidationError("eval: space mismatch, the dataset's label sets differ from the checkpoint's");
    }
    table = forward_batch(model, ds.samples, ds.space);
    provenance = {{"source", "checkpoint"},
                  {"config_hash", info.config_hash},
                  {"seed", info.config.seed},
                  {"dataset_hash", dataset_hash(ds)}};
  }
  const MetricsCurve curve = bias_sweep(table);
  const MetricsSummary s = summarize(curve);
  json summary = summary_to_json(s);
  summary.update(provenance);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "summary.json", summary.dump(2) + "\n");
    std::string header = "# " + provenance.value("source", std::string{});
    for (const char* key : {"config_hash", "table_hash", "dataset_hash"}) {
      if (provenance.contains(key)) header += std::string(" ") + key + "=" + provenance.at(key).get<std::string>();
    }
    if (provenance.contains("seed")) header += " seed=" + std::to_string(provenance.at("seed").get<std::uint64_t>());
    write_text(fs::path(out_dir) / "curve.csv", header + "\n" + curve_to_csv(curve));
  }
  out << summary.dump(2) << '\n';
  return 0;
}

int cmd_ablation(const std::string& config_path, const std::string& out_dir,
                 std::optional<std::uint64_t> seed, std::ostream& out) {
  const ExperimentConfig base = load_or_default(config_path, seed);
  if (out_dir.empty()) throw ValidationError("ablation: --out is required");
  const ExperimentData data = make_experiment_data(base);
  std::string table = provenance_line(experiment_hash(base), base.seed, data.hash);
  table += "Variant,S,U,HM,AUC\n";
  for (Variant v : all_variants()) {
    ExperimentConfig cfg = base;
    cfg.variant = v;
    const RunResult r =
        run_experiment(cfg, (fs::path(out_dir) / variant_name(v)).string(), &data);
    if (r.dataset_hash != data.hash) throw Error("ablation: variants disagree on the dataset");
    table += variant_name(v) + "," + fmt4(r.summary.S) + "," + fmt4(r.summary.U) + "," +
             fmt4(r.summary.HM) + "," + fmt4(r.summary.AUC) + "\n";
  }
  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / "ablation.csv", table);
  out << table;
  return 0;
}

int cmd_sweep(const std::string& preset_name, const std::string& config_path,
              const std::string& out_dir, std::optional<std::uint64_t> seed, std::ostream& out) {
  const ExperimentConfig base = load_or_default(config_path, seed);
  if (out_dir.empty()) throw ValidationError("sweep: --out is required");
  const SweepPreset preset = builtin_preset(preset_name);
  const auto rows = run_sweep(base, preset, out_dir);
  std::string table = "# config_hash=" + experiment_hash(base) + " seed=" +
                      std::to_string(base.seed) + " preset=" + preset.name + " axis=" +
                      preset.axis + "\n";
  table += preset.axis + ",S,U,HM,AUC,error\n";
  for (const auto& row : rows) {
    table += std::to_string(row.value) + ",";
    if (row.summary) {
      table += fmt4(row.summary->S) + "," + fmt4(row.summary->U) + "," + fmt4(row.summary->HM) +
               "," + fmt4(row.summary->AUC) + ",\n";
    } else {
      std::string msg = row.error;
      for (char& ch : msg) {
        if (ch == ',' || ch == '\n') ch = ';';
      }
      table += ",,,," + msg + "\n";
    }
  }
  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / ("sweep_" + preset.name + ".csv"), table);
  out << table;
  return 0;
}

int cmd_dataset_gen(const std::string& config_path, const std::string& out_dir,
                    std::optional<std::uint64_t> seed, std::ostream& out) {
  ExperimentConfig cfg = load_or_default(config_path, seed);
  if (seed) cfg.data.seed = *seed;
  if (out_dir.empty()) throw ValidationError("dataset-gen: --out is required");
  const ExperimentData data = make_experiment_data(cfg);
  const fs::path root(out_dir);
  fs::create_directories(root);
  save_space(data.space, (root / "space.json").string());
  export_dataset(data.splits.train, (root / "train").string());
  export_dataset(data.splits.val, (root / "val").string());
  export_dataset(data.splits.test, (root / "test").string());
  out << "train " << data.splits.train.samples.size() << " val " << data.splits.val.samples.size()
      << " test " << data.splits.test.samples.size() << " dataset_hash " << data.hash << '\n';
  return 0;
}

}  // namespace mmpt
