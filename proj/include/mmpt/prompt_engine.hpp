#pragma once

// Learnable prompt structures and the per-layer token flow of each branch.
//
// Sequence layout inside every block is [prompt tokens, body tokens, readout].
//  * Front layers (1..h_s) receive a freshly projected shared prompt; the
//    layer's outputs at the prompt positions are dropped.
//  * Tail layers (h_s+1..depth) carry the prompt outputs forward. The first
//    tail layer starts from the projection of the h_s-th shared prompt.

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "mmpt/autodiff.hpp"
#include "mmpt/encoder_core.hpp"

namespace mmpt {

enum class Modality { vision = 0, attribute = 1, object = 2 };

template <class T>
struct SharedPromptBank {
  std::size_t depth = 0;       // h_s
  std::size_t prompt_len = 0;  // L_p
  std::size_t dim = 0;         // d_s
  std::vector<Parameter<T>*> slabs;  // slabs[i-1] is t_i, L_p x d_s
};

// Each slab is drawn independently from N(0, 1).
template <class T>
SharedPromptBank<T> make_shared_prompt_bank(ParamStore<T>& store, std::size_t depth,
                                            std::size_t prompt_len, std::size_t dim, Rng& rng);

// One linear map per modality (d_s -> branch width), shared across layers
// unless per_layer is set.
template <class T>
struct ModalityProjectors {
  bool per_layer = false;
  std::array<std::size_t, 3> out_dims{};
  std::array<std::vector<Parameter<T>*>, 3> weights;
  std::array<std::vector<Parameter<T>*>, 3> biases;
};

template <class T>
ModalityProjectors<T> make_projectors(ParamStore<T>& store, std::size_t d_s, std::size_t d_v,
                                      std::size_t d_l, std::size_t depth, bool per_layer,
                                      Rng& rng);

// layer_idx is 1-based and must be within [1, h_s].
template <class T>
ad::Var project_shared(ad::Tape<T>& tape, const SharedPromptBank<T>& bank,
                       const ModalityProjectors<T>& projectors, std::size_t layer_idx,
                       Modality modality);

template <class T>
Matrix<T> project_shared(const SharedPromptBank<T>& bank, const ModalityProjectors<T>& projectors,
                         std::size_t layer_idx, Modality modality);

// ---- visual patch prompt ----------------------------------------------------

enum class PlacementMode { random_per_image, fixed };

struct PromptPlacement {
  std::size_t y = 0;
  std::size_t x = 0;
  friend bool operator==(const PromptPlacement&, const PromptPlacement&) = default;
};

// Top-left corner of a p x p region: uniform over valid corners in random
// mode, the centred region otherwise (or `fixed_at` when given).
[[nodiscard]] PromptPlacement choose_placement(PlacementMode mode, std::size_t height,
                                               std::size_t width, std::size_t patch, Rng* rng,
                                               std::optional<PromptPlacement> fixed_at = {});

template <class T>
struct VisualPatchPrompt {
  std::size_t size = 0;
  std::size_t channels = 3;
  Parameter<T>* phi = nullptr;  // (p*p) x C, rows in (dy, dx) raster order
};

template <class T>
VisualPatchPrompt<T> make_visual_prompt(ParamStore<T>& store, std::size_t size,
                                        std::size_t channels, Rng& rng);

// Adds phi to the p x p region at `at`. Values are not clamped afterwards.
template <class T>
ad::Var apply_visual_prompt(ad::Tape<T>& tape, ad::Var image, std::size_t height,
                            std::size_t width, ad::Var phi, std::size_t patch,
                            PromptPlacement at);

[[nodiscard]] Image apply_visual_prompt(const Image& image, const Matrix<float>& phi,
                                        std::size_t patch, PromptPlacement at);

// Batched form over (B*H*W) x C stacked images: regions are listed image by
// image, `per_image` of them for each image.
template <class T>
ad::Var apply_visual_prompt(ad::Tape<T>& tape, ad::Var images, std::size_t height,
                            std::size_t width, ad::Var phi, std::size_t patch,
                            std::span<const PromptPlacement> regions, std::size_t per_image);

// ---- per-layer steps --------------------------------------------------------

struct BlockLayout {
  std::size_t batch = 1;     // independent sequences stacked row-wise
  std::size_t body_len = 0;  // body tokens per sequence (patches or ctx+fixed)
};

template <class T>
struct LayerStepResult {
  ad::Var carried;  // B*L_p rows (tail steps only)
  ad::Var body;     // B*body_len rows, invalid when body_len == 0
  ad::Var readout;  // B rows
};

// prompt: L_p x d, shared by every block; invalid (or zero rows) for L_p = 0.
template <class T>
LayerStepResult<T> front_layer_step(ad::Tape<T>& tape, const TransformerLayerParams<T>& layer,
                                    ad::Var prompt, ad::Var body, ad::Var readout,
                                    BlockLayout layout, std::size_t layer_idx, std::size_t h_s);

// carried: B*L_p x d, one prompt block per sequence.
template <class T>
LayerStepResult<T> tail_layer_step(ad::Tape<T>& tape, const TransformerLayerParams<T>& layer,
                                   ad::Var carried, ad::Var body, ad::Var readout,
                                   BlockLayout layout, std::size_t prompt_len,
                                   std::size_t layer_idx, std::size_t h_s);

// Runs every layer of `encoder` with the front/tail prompt flow and returns the
// final readout (B x dim) after the closing layer norm. With prompt_len == 0
// the layers run on [body, readout] only.
template <class T>
ad::Var run_prompted_encoder(ad::Tape<T>& tape, const Encoder<T>& encoder,
                             const SharedPromptBank<T>* bank,
                             const ModalityProjectors<T>* projectors, Modality modality,
                             ad::Var body, ad::Var readout, BlockLayout layout);

// ---- text inputs ------------------------------------------------------------

template <class T>
struct ContextTokens {
  std::size_t count = 0;
  Parameter<T>* attribute = nullptr;  // m x d_l, null when m == 0
  Parameter<T>* object = nullptr;
};

template <class T>
ContextTokens<T> make_context_tokens(ParamStore<T>& store, std::size_t count, std::size_t d_l,
                                     Rng& rng);

template <class T>
struct TextInput {
  ad::Var body;     // B*(m+f) rows; invalid when m + f == 0
  ad::Var readout;  // B rows, one class embedding per sequence
  BlockLayout layout;
};

// One sequence per entry of class_indices: body = [ctx..., fixed...],
// readout = class_table row.
template <class T>
TextInput<T> build_text_input(ad::Tape<T>& tape, ad::Var ctx, ad::Var fixed_tokens,
                              ad::Var class_table, std::span<const std::size_t> class_indices);

}  // namespace mmpt
