#pragma once

// Deterministic desk-scale compositional images. The object index selects a
// binary shape mask; the attribute index selects fill colour and texture
// inside the mask; the background is a constant neutral black, so shape
// contrast has the same sign for every fill colour.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmpt/composition_space.hpp"

namespace mmpt {

enum class ShapeKind {
  disc,
  square,
  triangle,
  hbars,
  vbars,
  ring,
  cross,
  diamond,
  halfdisc,
  frame,
};

[[nodiscard]] std::string shape_kind_name(ShapeKind k);
[[nodiscard]] ShapeKind parse_shape_kind(const std::string& name);

// Geometry in fractions of the image side: `radius` is the half-extent,
// (center_x, center_y) the nominal centre before jitter.
struct ObjectShape {
  ShapeKind kind = ShapeKind::disc;
  double radius = 0.32;
  double center_x = 0.5;
  double center_y = 0.5;
};

struct AttributeStyle {
  std::array<double, 3> color{0.5, 0.5, 0.5};
  double stripe_frequency = 0.0;  // diagonal stripe cycles per image side
  double noise_amplitude = 0.0;   // uniform per-pixel noise, in-mask only
};

struct Jitter {
  double position = 0.0;  // max centre offset, fraction of image side
  double scale = 0.0;     // max relative radius change
};

struct RenderSpec {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
  std::size_t patch_size = 8;
  double background = 0.0;
  std::vector<ObjectShape> object_shapes;
  std::vector<AttributeStyle> attribute_styles;
  Jitter jitter;

  void validate() const;
};

[[nodiscard]] RenderSpec default_render_spec(std::size_t n_attributes, std::size_t n_objects,
                                             std::size_t image_size = 32,
                                             std::size_t patch_size = 8);
[[nodiscard]] nlohmann::json render_spec_to_json(const RenderSpec& spec);
[[nodiscard]] RenderSpec render_spec_from_json(const nlohmann::json& j);
[[nodiscard]] std::string render_spec_hash(const RenderSpec& spec);

// H x W x C, row-major (y, x, channel).
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> pixels;

  [[nodiscard]] float at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
  friend bool operator==(const Image&, const Image&) = default;
};

struct ImageSample {
  Image image;
  Composition label;
  std::uint64_t sample_id = 0;
};

enum class Split { train, val, test };
[[nodiscard]] std::string split_name(Split s);
[[nodiscard]] Split parse_split(const std::string& name);

struct Dataset {
  std::vector<ImageSample> samples;
  CompositionSpace space;
  Split split = Split::train;
  std::string spec_hash;
};

// Shape mask for an object under the jitter drawn from `seed` (H x W, 0/1).
[[nodiscard]] std::vector<char> render_mask(const RenderSpec& spec, std::size_t object_idx,
                                            std::uint64_t seed);

[[nodiscard]] ImageSample render(const RenderSpec& spec, std::size_t attribute_idx,
                                 std::size_t object_idx, std::uint64_t seed);

struct DatasetSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

[[nodiscard]] DatasetSplits make_dataset(const CompositionSpace& space, const RenderSpec& spec,
                                         std::size_t n_per_seen_train,
                                         std::size_t n_per_pair_eval, std::uint64_t seed);

// Directory layout: manifest.json, space.json, samples.f32 (little-endian
// float32, row-major), labels.csv (sample_id,attribute,object).
void export_dataset(const Dataset& dataset, const std::string& dir);
[[nodiscard]] Dataset import_dataset(const std::string& dir);

// Hash over labels, ids and pixel bits.
[[nodiscard]] std::string dataset_hash(const Dataset& dataset);

}  // namespace mmpt
