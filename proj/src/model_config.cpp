#include "mmpt/model_config.hpp"

#include <algorithm>

#include "mmpt/errors.hpp"

namespace mmpt {

namespace {

// Non-negative integer, whether stored signed or unsigned.
bool is_count(const nlohmann::json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

void check(bool ok, const std::string& field, const std::string& why) {
  if (!ok) throw ValidationError("model." + field + ": " + why);
}

}  // namespace

void MMPTConfig::validate() const {
  check(image_size > 0 && patch_size > 0 && image_size % patch_size == 0, "patch_size",
        "image_size " + std::to_string(image_size) + " must be a positive multiple of patch_size " +
            std::to_string(patch_size));
  check(channels == 3, "channels", "must be 3");
  check(prompt_patch_size > 0 && prompt_patch_size <= image_size, "prompt_patch_size",
        "must be in [1, image_size]");
  check(phi_mode != PhiMode::all_patches || prompt_patch_size == patch_size, "phi_mode",
        "all_patches requires prompt_patch_size == patch_size");
  check(d_v > 0, "d_v", "must be positive");
  check(d_l > 0, "d_l", "must be positive");
  check(d_s > 0, "d_s", "must be positive");
  check(d_joint > 0, "d_joint", "must be positive");
  check(h_v > 0 && h_a > 0 && h_o > 0, "h_v", "every branch needs at least one layer");
  check(h_s <= std::min({h_v, h_a, h_o}), "h_s",
        std::to_string(h_s) + " exceeds the layer count of some branch (" +
            std::to_string(std::min({h_v, h_a, h_o})) + ")");
  check(!shared_prompts || h_s >= 1, "h_s", "must be >= 1 when shared prompts are enabled");
  check(!shared_prompts || prompt_len >= 1, "prompt_len",
        "must be >= 1 when shared prompts are enabled");
  check(heads_v > 0 && d_v % heads_v == 0, "heads_v", "must divide d_v");
  check(heads_l > 0 && d_l % heads_l == 0, "heads_l", "must divide d_l");
  check(mlp_ratio > 0, "mlp_ratio", "must be positive");
  check(tau > 0, "tau", "must be positive");
}

MMPTConfig toy_config() { return MMPTConfig{}; }

MMPTConfig full_scale_config() {
  MMPTConfig c;
  c.image_size = 224;
  c.patch_size = 16;
  c.prompt_patch_size = 16;
  c.d_v = 768;
  c.d_l = 512;
  c.d_s = 128;
  c.d_joint = 512;
  c.h_v = c.h_a = c.h_o = 12;
  c.h_s = 9;
  c.prompt_len = 6;
  c.ctx_len = 4;
  c.fixed_len = 4;
  c.heads_v = 12;
  c.heads_l = 8;
  return c;
}

std::string phi_mode_name(PhiMode m) {
  return m == PhiMode::all_patches ? "all_patches" : "single_region";
}

PhiMode parse_phi_mode(const std::string& s) {
  if (s == "single_region") return PhiMode::single_region;
  if (s == "all_patches") return PhiMode::all_patches;
  throw ValidationError("model.phi_mode: unknown value '" + s + "'");
}

nlohmann::json config_to_json(const MMPTConfig& c) {
  return {{"image_size", c.image_size},
          {"channels", c.channels},
          {"patch_size", c.patch_size},
          {"prompt_patch_size", c.prompt_patch_size},
          {"d_v", c.d_v},
          {"d_l", c.d_l},
          {"d_s", c.d_s},
          {"d_joint", c.d_joint},
          {"h_v", c.h_v},
          {"h_a", c.h_a},
          {"h_o", c.h_o},
          {"h_s", c.h_s},
          {"prompt_len", c.prompt_len},
          {"ctx_len", c.ctx_len},
          {"fixed_len", c.fixed_len},
          {"heads_v", c.heads_v},
          {"heads_l", c.heads_l},
          {"mlp_ratio", c.mlp_ratio},
          {"tau", c.tau},
          {"visual_prompt", c.visual_prompt},
          {"shared_prompts", c.shared_prompts},
          {"phi_mode", phi_mode_name(c.phi_mode)},
          {"per_layer_projectors", c.per_layer_projectors},
          {"seed", c.seed}};
}

MMPTConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("model: expected a JSON object");
  MMPTConfig c;
  const nlohmann::json known = config_to_json(c);
  for (const auto& [k, v] : j.items()) {
    if (!known.contains(k)) throw ValidationError("model: unknown key '" + k + "'");
  }
  auto size = [&](const char* key, std::size_t& out) {
    if (!j.contains(key)) return;
    if (!is_count(j.at(key))) {
      throw ValidationError(std::string("model.") + key + ": expected a non-negative integer");
    }
    out = j.at(key).get<std::size_t>();
  };
  auto flag = [&](const char* key, bool& out) {
    if (!j.contains(key)) return;
    if (!j.at(key).is_boolean()) {
      throw ValidationError(std::string("model.") + key + ": expected a boolean");
    }
    out = j.at(key).get<bool>();
  };
  size("image_size", c.image_size);
  size("channels", c.channels);
  size("patch_size", c.patch_size);
  size("prompt_patch_size", c.prompt_patch_size);
  size("d_v", c.d_v);
  size("d_l", c.d_l);
  size("d_s", c.d_s);
  size("d_joint", c.d_joint);
  size("h_v", c.h_v);
  size("h_a", c.h_a);
  size("h_o", c.h_o);
  size("h_s", c.h_s);
  size("prompt_len", c.prompt_len);
  size("ctx_len", c.ctx_len);
  size("fixed_len", c.fixed_len);
  size("heads_v", c.heads_v);
  size("heads_l", c.heads_l);
  size("mlp_ratio", c.mlp_ratio);
  if (j.contains("tau")) {
    if (!j.at("tau").is_number()) throw ValidationError("model.tau: expected a number");
    c.tau = j.at("tau").get<double>();
  }
  flag("visual_prompt", c.visual_prompt);
  flag("shared_prompts", c.shared_prompts);
  flag("per_layer_projectors", c.per_layer_projectors);
  if (j.contains("phi_mode")) {
    if (!j.at("phi_mode").is_string()) throw ValidationError("model.phi_mode: expected a string");
    c.phi_mode = parse_phi_mode(j.at("phi_mode").get<std::string>());
  }
  if (j.contains("seed")) {
    if (!is_count(j.at("seed"))) {
      throw ValidationError("model.seed: expected a non-negative integer");
    }
    c.seed = j.at("seed").get<std::uint64_t>();
  }
  c.validate();
  return c;
}

}  // namespace mmpt
