#pragma once

// Pre-norm transformer machinery shared by the vision and text branches.
//
// Sequences from several independent inputs are stacked row-wise into one
// matrix of (blocks * block_len) x dim; attention never crosses a block
// boundary, every other op is row-wise. Stacking therefore leaves each
// block's result bit-identical to running it alone.

#include <string>
#include <vector>

#include "mmpt/autodiff.hpp"
#include "mmpt/params.hpp"
#include "mmpt/synthetic_data.hpp"

namespace mmpt {

template <class T>
struct TransformerLayerParams {
  std::size_t dim = 0;
  std::size_t heads = 1;
  Parameter<T>* ln1_gamma = nullptr;
  Parameter<T>* ln1_beta = nullptr;
  Parameter<T>* w_q = nullptr;
  Parameter<T>* b_q = nullptr;
  Parameter<T>* w_k = nullptr;  // no key bias: it shifts every logit of a query equally
  Parameter<T>* w_v = nullptr;
  Parameter<T>* b_v = nullptr;
  Parameter<T>* w_o = nullptr;
  Parameter<T>* b_o = nullptr;
  Parameter<T>* ln2_gamma = nullptr;
  Parameter<T>* ln2_beta = nullptr;
  Parameter<T>* w_fc1 = nullptr;
  Parameter<T>* b_fc1 = nullptr;
  Parameter<T>* w_fc2 = nullptr;
  Parameter<T>* b_fc2 = nullptr;
};

// Registers "<prefix>.*" tensors in the store.
template <class T>
TransformerLayerParams<T> make_transformer_layer(ParamStore<T>& store, const std::string& prefix,
                                                 std::size_t dim, std::size_t heads,
                                                 std::size_t mlp_ratio, Rng& rng);

template <class T>
ad::Var transformer_layer(ad::Tape<T>& tape, const TransformerLayerParams<T>& layer, ad::Var seq,
                          std::size_t block_len);

// Standalone evaluation of one layer on one sequence; rejects non-finite input.
template <class T>
Matrix<T> transformer_layer(const TransformerLayerParams<T>& layer, const Matrix<T>& seq);

// A stack of layers with a closing layer norm on the readout.
template <class T>
struct Encoder {
  std::size_t dim = 0;
  std::vector<TransformerLayerParams<T>> layers;
  Parameter<T>* final_gamma = nullptr;
  Parameter<T>* final_beta = nullptr;
};

template <class T>
Encoder<T> make_encoder(ParamStore<T>& store, const std::string& prefix, std::size_t depth,
                        std::size_t dim, std::size_t heads, std::size_t mlp_ratio, Rng& rng);

template <class T>
struct PatchEmbedding {
  std::size_t patch_size = 0;
  std::size_t channels = 3;
  std::size_t dim = 0;
  Parameter<T>* projection = nullptr;  // (p*p*C) x dim
  Parameter<T>* bias = nullptr;        // 1 x dim
  Parameter<T>* positions = nullptr;   // K x dim
};

template <class T>
PatchEmbedding<T> make_patch_embedding(ParamStore<T>& store, const std::string& prefix,
                                       std::size_t image_size, std::size_t patch_size,
                                       std::size_t channels, std::size_t dim, Rng& rng);

// Flat (y, x, c) gather index that turns an H x W x C image into K rows of
// flattened p x p x C patches, patches in raster order.
[[nodiscard]] std::vector<std::size_t> patchify_index(std::size_t height, std::size_t width,
                                                      std::size_t channels, std::size_t patch);

// images: (batch*H*W) x C tape variable, images stacked row-wise. Returns
// (batch*K) x dim tokens, K per image.
template <class T>
ad::Var patch_embed(ad::Tape<T>& tape, const PatchEmbedding<T>& embed, ad::Var images,
                    std::size_t height, std::size_t width, std::size_t batch = 1);

template <class T>
Matrix<T> patch_embed(const PatchEmbedding<T>& embed, const Image& image);

template <class T>
Matrix<T> image_to_matrix(const Image& image);

}  // namespace mmpt
