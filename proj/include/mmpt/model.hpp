#pragma once

// The three-branch model: a prompted vision encoder and two prompted text
// encoders (attributes, objects) scored against each other by temperature-
// scaled cosine similarity in a joint space.

#include <optional>
#include <span>
#include <vector>

#include "mmpt/autodiff.hpp"
#include "mmpt/encoder_core.hpp"
#include "mmpt/model_config.hpp"
#include "mmpt/prompt_engine.hpp"
#include "mmpt/score_table.hpp"
#include "mmpt/synthetic_data.hpp"

namespace mmpt {

template <class T>
struct TextBranch {
  Encoder<T> encoder;
  Parameter<T>* classes = nullptr;  // n x d_l readout initialisations
  Parameter<T>* context = nullptr;  // m x d_l, null when m == 0
};

template <class T>
struct BranchLogits {
  ad::Var attribute;  // B x |A|
  ad::Var object;     // B x |O|
};

// Tensor names are stable across variants, and each component draws its
// initial values from its own seed stream, so two variants built from the same
// seed hold identical values for every tensor they share.
template <class T>
class MmptModel {
 public:
  MmptModel(MMPTConfig cfg, std::size_t n_attributes, std::size_t n_objects);
  MmptModel(const MmptModel&) = delete;
  MmptModel& operator=(const MmptModel&) = delete;

  [[nodiscard]] const MMPTConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] std::size_t num_attributes() const noexcept { return n_attributes_; }
  [[nodiscard]] std::size_t num_objects() const noexcept { return n_objects_; }
  [[nodiscard]] ParamStore<T>& params() noexcept { return store_; }
  [[nodiscard]] const ParamStore<T>& params() const noexcept { return store_; }

  // Runtime switches. They can only disable components the config built.
  [[nodiscard]] bool visual_prompt_active() const noexcept { return phi_active_; }
  [[nodiscard]] bool shared_prompts_active() const noexcept { return shared_active_; }
  void set_visual_prompt_active(bool on);
  void set_shared_prompts_active(bool on);

  [[nodiscard]] const Encoder<T>& vision_encoder() const noexcept { return vision_; }
  [[nodiscard]] const PatchEmbedding<T>& patch_embedding() const noexcept { return patch_; }
  [[nodiscard]] const TextBranch<T>& text_branch(Modality m) const;
  [[nodiscard]] const std::optional<SharedPromptBank<T>>& shared_bank() const noexcept {
    return bank_;
  }
  [[nodiscard]] const std::optional<ModalityProjectors<T>>& projectors() const noexcept {
    return projectors_;
  }
  [[nodiscard]] const std::optional<VisualPatchPrompt<T>>& visual_prompt() const noexcept {
    return phi_;
  }

  // images: (B*H*W) x C. `placements` holds one entry per image in
  // single_region mode; empty means the centred eval placement.
  ad::Var vision_readout(ad::Tape<T>& tape, ad::Var images, std::size_t batch,
                         std::span<const PromptPlacement> placements) const;
  // |classes| x d_l final readouts for Modality::attribute or ::object.
  ad::Var text_readouts(ad::Tape<T>& tape, Modality branch) const;
  // Cosine logits divided by tau.
  ad::Var logits(ad::Tape<T>& tape, ad::Var z, ad::Var y) const;
  BranchLogits<T> forward(ad::Tape<T>& tape, ad::Var images, std::size_t batch,
                          std::span<const PromptPlacement> placements) const;

  // Value-level conveniences in eval mode (centred placement).
  [[nodiscard]] Matrix<T> forward_vision(const Image& image) const;
  [[nodiscard]] Matrix<T> forward_text_branch(Modality branch) const;

 private:
  MMPTConfig cfg_;
  std::size_t n_attributes_;
  std::size_t n_objects_;
  ParamStore<T> store_;
  PatchEmbedding<T> patch_;
  Parameter<T>* cls_ = nullptr;
  Encoder<T> vision_;
  TextBranch<T> attr_;
  TextBranch<T> obj_;
  Parameter<T>* fixed_ = nullptr;  // f x d_l template tokens, never trained
  Parameter<T>* omega_ = nullptr;  // d_l x d_joint
  Parameter<T>* nu_ = nullptr;     // d_v x d_joint
  std::optional<SharedPromptBank<T>> bank_;
  std::optional<ModalityProjectors<T>> projectors_;
  std::optional<VisualPatchPrompt<T>> phi_;
  bool phi_active_ = false;
  bool shared_active_ = false;
};

// Stacks images into a (B*H*W) x C matrix.
template <class T>
[[nodiscard]] Matrix<T> stack_images(std::span<const Image* const> images);

// Row-wise softmax of cos(omega(Y_k), nu(z)) / tau, computed in double so that
// no probability underflows to zero. z is B x d_v, Y is n x d_l.
template <class T>
[[nodiscard]] Matrix<double> score(const Matrix<T>& z, const Matrix<T>& y,
                                   const Matrix<T>& omega, const Matrix<T>& nu, double tau);

[[nodiscard]] Matrix<double> softmax_rows(const Matrix<double>& logits);

// Scores every sample of a dataset in eval mode. Text readouts are computed
// once; images are processed in chunks, in parallel up to MMPT_THREADS.
template <class T>
[[nodiscard]] ScoreTable forward_batch(const MmptModel<T>& model,
                                       std::span<const ImageSample> samples,
                                       const CompositionSpace& space);

// Worker count: MMPT_THREADS if set and positive, else hardware concurrency.
[[nodiscard]] std::size_t thread_budget();

}  // namespace mmpt
