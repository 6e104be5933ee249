#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

namespace mmpt {

// How the visual patch prompt phi is applied to an image.
//   single_region: phi is added to one p x p region (random at train time,
//                  image centre at eval time).
//   all_patches:   phi is added to every patch; requires p == patch_size.
enum class PhiMode { single_region, all_patches };

struct MMPTConfig {
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t patch_size = 8;
  std::size_t prompt_patch_size = 4;  // small next to the centred shape

  std::size_t d_v = 32;      // vision width
  std::size_t d_l = 24;      // text width
  std::size_t d_s = 16;      // shared prompt width
  std::size_t d_joint = 16;  // scoring space width

  std::size_t h_v = 3;
  std::size_t h_a = 3;
  std::size_t h_o = 3;
  std::size_t h_s = 2;  // layers receiving a fresh shared prompt

  std::size_t prompt_len = 2;  // tokens per shared prompt slab
  std::size_t ctx_len = 4;     // learnable context tokens per text branch
  std::size_t fixed_len = 4;   // frozen template tokens per text branch

  std::size_t heads_v = 4;
  std::size_t heads_l = 4;
  std::size_t mlp_ratio = 4;

  double tau = 0.01;

  bool visual_prompt = true;
  bool shared_prompts = true;
  PhiMode phi_mode = PhiMode::single_region;
  bool per_layer_projectors = false;

  std::uint64_t seed = 0;

  [[nodiscard]] std::size_t num_patches() const {
    return (image_size / patch_size) * (image_size / patch_size);
  }
  [[nodiscard]] std::size_t active_prompt_len() const { return shared_prompts ? prompt_len : 0; }

  void validate() const;

  friend bool operator==(const MMPTConfig&, const MMPTConfig&) = default;
};

// Desk-scale default used by the training and acceptance runs.
[[nodiscard]] MMPTConfig toy_config();
// 224px / patch 16, d_v=768, d_l=512, 12 layers per branch, h_s=9, L_p=6.
[[nodiscard]] MMPTConfig full_scale_config();

[[nodiscard]] nlohmann::json config_to_json(const MMPTConfig& cfg);
// Rejects unknown keys; missing keys keep the toy defaults.
[[nodiscard]] MMPTConfig config_from_json(const nlohmann::json& j);

[[nodiscard]] std::string phi_mode_name(PhiMode m);
[[nodiscard]] PhiMode parse_phi_mode(const std::string& s);

}  // namespace mmpt
