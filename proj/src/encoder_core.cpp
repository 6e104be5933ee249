#include "mmpt/encoder_core.hpp"

#include <cmath>

namespace mmpt {

template <class T>
TransformerLayerParams<T> make_transformer_layer(ParamStore<T>& store, const std::string& prefix,
                                                 std::size_t dim, std::size_t heads,
                                                 std::size_t mlp_ratio, Rng& rng) {
  if (heads == 0 || dim % heads != 0) {
    throw ValidationError(prefix + ": head count " + std::to_string(heads) +
                          " does not divide width " + std::to_string(dim));
  }
  const std::size_t hidden = dim * mlp_ratio;
  const double w_std = 1.0 / std::sqrt(static_cast<double>(dim));
  const double h_std = 1.0 / std::sqrt(static_cast<double>(hidden));
  TransformerLayerParams<T> l;
  l.dim = dim;
  l.heads = heads;
  l.ln1_gamma = &store.add(prefix + ".ln1.gamma", Matrix<T>(1, dim, T(1)));
  l.ln1_beta = &store.add(prefix + ".ln1.beta", Matrix<T>(1, dim));
  l.w_q = &store.add(prefix + ".attn.w_q", random_normal<T>(dim, dim, rng, w_std));
  l.b_q = &store.add(prefix + ".attn.b_q", Matrix<T>(1, dim));
  l.w_k = &store.add(prefix + ".attn.w_k", random_normal<T>(dim, dim, rng, w_std));
  l.w_v = &store.add(prefix + ".attn.w_v", random_normal<T>(dim, dim, rng, w_std));
  l.b_v = &store.add(prefix + ".attn.b_v", Matrix<T>(1, dim));
  l.w_o = &store.add(prefix + ".attn.w_o", random_normal<T>(dim, dim, rng, w_std));
  l.b_o = &store.add(prefix + ".attn.b_o", Matrix<T>(1, dim));
  l.ln2_gamma = &store.add(prefix + ".ln2.gamma", Matrix<T>(1, dim, T(1)));
  l.ln2_beta = &store.add(prefix + ".ln2.beta", Matrix<T>(1, dim));
  l.w_fc1 = &store.add(prefix + ".mlp.w_fc1", random_normal<T>(dim, hidden, rng, w_std));
  l.b_fc1 = &store.add(prefix + ".mlp.b_fc1", Matrix<T>(1, hidden));
  l.w_fc2 = &store.add(prefix + ".mlp.w_fc2", random_normal<T>(hidden, dim, rng, h_std));
  l.b_fc2 = &store.add(prefix + ".mlp.b_fc2", Matrix<T>(1, dim));
  return l;
}

template <class T>
ad::Var transformer_layer(ad::Tape<T>& tape, const TransformerLayerParams<T>& l, ad::Var seq,
                          std::size_t block_len) {
  const auto& x = tape.value(seq);
  if (x.cols() != l.dim) {
    throw ValidationError("transformer layer expects width " + std::to_string(l.dim) + ", got " +
                          std::to_string(x.cols()));
  }
  auto P = [&](Parameter<T>* p) { return tape.parameter(*p); };
  auto linear = [&](ad::Var in, Parameter<T>* w, Parameter<T>* b) {
    return ad::add_row(tape, ad::matmul(tape, in, P(w)), P(b));
  };

  ad::Var h = ad::layer_norm(tape, seq, P(l.ln1_gamma), P(l.ln1_beta));
  ad::Var q = linear(h, l.w_q, l.b_q);
  ad::Var k = ad::matmul(tape, h, P(l.w_k));
  ad::Var v = linear(h, l.w_v, l.b_v);
  ad::Var attn = ad::attention(tape, q, k, v, block_len, l.heads);
  ad::Var x1 = ad::add(tape, seq, linear(attn, l.w_o, l.b_o));

  ad::Var h2 = ad::layer_norm(tape, x1, P(l.ln2_gamma), P(l.ln2_beta));
  ad::Var m = linear(ad::gelu(tape, linear(h2, l.w_fc1, l.b_fc1)), l.w_fc2, l.b_fc2);
  return ad::add(tape, x1, m);
}

template <class T>
Matrix<T> transformer_layer(const TransformerLayerParams<T>& layer, const Matrix<T>& seq) {
  if (seq.rows() == 0) throw ValidationError("transformer layer: empty sequence");
  if (!seq.all_finite()) {
    throw NumericError("transformer layer: input sequence contains NaN or infinite values");
  }
  ad::Tape<T> tape(false);
  ad::Var out = transformer_layer(tape, layer, tape.constant(seq), seq.rows());
  return tape.value(out);
}

template <class T>
Encoder<T> make_encoder(ParamStore<T>& store, const std::string& prefix, std::size_t depth,
                        std::size_t dim, std::size_t heads, std::size_t mlp_ratio, Rng& rng) {
  Encoder<T> e;
  e.dim = dim;
  for (std::size_t i = 0; i < depth; ++i) {
    e.layers.push_back(make_transformer_layer(store, prefix + ".layer" + std::to_string(i + 1),
                                              dim, heads, mlp_ratio, rng));
  }
  e.final_gamma = &store.add(prefix + ".ln_post.gamma", Matrix<T>(1, dim, T(1)));
  e.final_beta = &store.add(prefix + ".ln_post.beta", Matrix<T>(1, dim));
  return e;
}

template <class T>
PatchEmbedding<T> make_patch_embedding(ParamStore<T>& store, const std::string& prefix,
                                       std::size_t image_size, std::size_t patch_size,
                                       std::size_t channels, std::size_t dim, Rng& rng) {
  if (patch_size == 0 || image_size % patch_size != 0) {
    throw ValidationError("patch embedding: image size " + std::to_string(image_size) +
                          " not divisible by patch size " + std::to_string(patch_size));
  }
  const std::size_t in = patch_size * patch_size * channels;
  const std::size_t k = (image_size / patch_size) * (image_size / patch_size);
  PatchEmbedding<T> e;
  e.patch_size = patch_size;
  e.channels = channels;
  e.dim = dim;
  e.projection = &store.add(prefix + ".projection",
                            random_normal<T>(in, dim, rng, 1.0 / std::sqrt(double(in))));
  e.bias = &store.add(prefix + ".bias", Matrix<T>(1, dim));
  e.positions = &store.add(prefix + ".positions", random_normal<T>(k, dim, rng, 0.1));
  return e;
}

std::vector<std::size_t> patchify_index(std::size_t height, std::size_t width,
                                        std::size_t channels, std::size_t patch) {
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    throw ValidationError("image " + std::to_string(height) + "x" + std::to_string(width) +
                          " is not divisible by patch size " + std::to_string(patch));
  }
  std::vector<std::size_t> idx;
  idx.reserve(height * width * channels);
  for (std::size_t py = 0; py < height / patch; ++py)
    for (std::size_t px = 0; px < width / patch; ++px)
      for (std::size_t dy = 0; dy < patch; ++dy)
        for (std::size_t dx = 0; dx < patch; ++dx)
          for (std::size_t c = 0; c < channels; ++c)
            idx.push_back(((py * patch + dy) * width + (px * patch + dx)) * channels + c);
  return idx;
}

template <class T>
ad::Var patch_embed(ad::Tape<T>& tape, const PatchEmbedding<T>& e, ad::Var images,
                    std::size_t height, std::size_t width, std::size_t batch) {
  const auto& img = tape.value(images);
  if (batch == 0 || img.rows() != batch * height * width || img.cols() != e.channels) {
    throw ValidationError("patch_embed: image matrix " + img.shape_string() + " does not match " +
                          std::to_string(batch) + " x " + std::to_string(height) + "x" +
                          std::to_string(width) + "x" + std::to_string(e.channels));
  }
  const std::size_t p = e.patch_size;
  const std::size_t k = (height / p) * (width / p);
  if (e.positions->value.rows() != k) {
    throw ValidationError("patch_embed: positional table has " +
                          std::to_string(e.positions->value.rows()) + " rows for " +
                          std::to_string(k) + " patches");
  }
  const std::size_t per_image = height * width * e.channels;
  const auto base = patchify_index(height, width, e.channels, p);
  std::vector<std::size_t> index;
  index.reserve(batch * per_image);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i : base) index.push_back(b * per_image + i);
  std::vector<std::size_t> pos;
  pos.reserve(batch * k);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < k; ++j) pos.push_back(j);

  ad::Var flat = ad::reshape(tape, images, batch * per_image, 1);
  ad::Var gathered = ad::gather_rows(tape, flat, std::move(index));
  ad::Var patches = ad::reshape(tape, gathered, batch * k, p * p * e.channels);
  ad::Var tokens = ad::add_row(tape, ad::matmul(tape, patches, tape.parameter(*e.projection)),
                               tape.parameter(*e.bias));
  ad::Var positions = tape.parameter(*e.positions);
  if (batch > 1) positions = ad::gather_rows(tape, positions, std::move(pos));
  return ad::add(tape, tokens, positions);
}

template <class T>
Matrix<T> image_to_matrix(const Image& image) {
  Matrix<T> m(image.height * image.width, image.channels);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) m[i] = static_cast<T>(image.pixels[i]);
  return m;
}

template <class T>
Matrix<T> patch_embed(const PatchEmbedding<T>& embed, const Image& image) {
  ad::Tape<T> tape(false);
  ad::Var out = patch_embed(tape, embed, tape.constant(image_to_matrix<T>(image)), image.height,
                            image.width);
  return tape.value(out);
}

#define MMPT_INSTANTIATE(T)                                                                    \
  template TransformerLayerParams<T> make_transformer_layer<T>(                               \
      ParamStore<T>&, const std::string&, std::size_t, std::size_t, std::size_t, Rng&);        \
  template ad::Var transformer_layer<T>(ad::Tape<T>&, const TransformerLayerParams<T>&,        \
                                        ad::Var, std::size_t);                                 \
  template Matrix<T> transformer_layer<T>(const TransformerLayerParams<T>&, const Matrix<T>&); \
  template Encoder<T> make_encoder<T>(ParamStore<T>&, const std::string&, std::size_t,         \
                                      std::size_t, std::size_t, std::size_t, Rng&);            \
  template PatchEmbedding<T> make_patch_embedding<T>(ParamStore<T>&, const std::string&,       \
                                                     std::size_t, std::size_t, std::size_t,    \
                                                     std::size_t, Rng&);                       \
  template ad::Var patch_embed<T>(ad::Tape<T>&, const PatchEmbedding<T>&, ad::Var,             \
                                  std::size_t, std::size_t, std::size_t);                      \
  template Matrix<T> patch_embed<T>(const PatchEmbedding<T>&, const Image&);                   \
  template Matrix<T> image_to_matrix<T>(const Image&);

MMPT_INSTANTIATE(float)
MMPT_INSTANTIATE(double)
#undef MMPT_INSTANTIATE

}  // namespace mmpt
