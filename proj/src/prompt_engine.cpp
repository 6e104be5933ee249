#include "mmpt/prompt_engine.hpp"

#include <cmath>

namespace mmpt {

namespace {

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::vision: return "vision";
    case Modality::attribute: return "attribute";
    case Modality::object: return "object";
  }
  return "vision";
}

std::size_t rows_of(const auto& tape, ad::Var v) { return v.valid() ? tape.value(v).rows() : 0; }

// Builds [prompt, body, readout] per block from separately stacked parts.
template <class T>
ad::Var assemble(ad::Tape<T>& tape, ad::Var prompt, bool prompt_shared, std::size_t prompt_len,
                 ad::Var body, ad::Var readout, BlockLayout layout) {
  std::vector<ad::Var> parts;
  std::size_t prompt_off = 0, body_off = 0, readout_off = 0, off = 0;
  if (prompt_len > 0) {
    prompt_off = off;
    off += rows_of(tape, prompt);
    parts.push_back(prompt);
  }
  if (layout.body_len > 0) {
    body_off = off;
    off += rows_of(tape, body);
    parts.push_back(body);
  }
  readout_off = off;
  parts.push_back(readout);
  ad::Var src = parts.size() == 1 ? readout : ad::concat_rows<T>(tape, parts);

  const std::size_t n = prompt_len + layout.body_len + 1;
  std::vector<std::size_t> index;
  index.reserve(layout.batch * n);
  for (std::size_t b = 0; b < layout.batch; ++b) {
    for (std::size_t j = 0; j < prompt_len; ++j)
      index.push_back(prompt_off + (prompt_shared ? j : b * prompt_len + j));
    for (std::size_t j = 0; j < layout.body_len; ++j)
      index.push_back(body_off + b * layout.body_len + j);
    index.push_back(readout_off + b);
  }
  return ad::gather_rows(tape, src, std::move(index));
}

template <class T>
LayerStepResult<T> split(ad::Tape<T>& tape, ad::Var seq, std::size_t prompt_len, bool keep_prompt,
                         BlockLayout layout) {
  const std::size_t n = prompt_len + layout.body_len + 1;
  std::vector<std::size_t> pi, bi, ri;
  for (std::size_t b = 0; b < layout.batch; ++b) {
    for (std::size_t j = 0; j < prompt_len; ++j) pi.push_back(b * n + j);
    for (std::size_t j = 0; j < layout.body_len; ++j) bi.push_back(b * n + prompt_len + j);
    ri.push_back(b * n + n - 1);
  }
  LayerStepResult<T> r;
  if (keep_prompt && prompt_len > 0) r.carried = ad::gather_rows(tape, seq, std::move(pi));
  if (layout.body_len > 0) r.body = ad::gather_rows(tape, seq, std::move(bi));
  r.readout = ad::gather_rows(tape, seq, std::move(ri));
  return r;
}

template <class T>
void check_width(const ad::Tape<T>& tape, ad::Var v, std::size_t dim, const char* what) {
  if (v.valid() && tape.value(v).rows() > 0 && tape.value(v).cols() != dim) {
    throw ValidationError(std::string(what) + " width " + std::to_string(tape.value(v).cols()) +
                          " does not match branch width " + std::to_string(dim));
  }
}

template <class T>
void check_layout(const ad::Tape<T>& tape, ad::Var body, ad::Var readout, BlockLayout layout) {
  if (rows_of(tape, readout) != layout.batch) {
    throw ValidationError("readout has " + std::to_string(rows_of(tape, readout)) +
                          " rows for a batch of " + std::to_string(layout.batch));
  }
  if (rows_of(tape, body) != layout.batch * layout.body_len) {
    throw ValidationError("body has " + std::to_string(rows_of(tape, body)) + " rows, expected " +
                          std::to_string(layout.batch * layout.body_len));
  }
}

// Plain layer over [prompt?, body, readout] without the front/tail contract.
template <class T>
LayerStepResult<T> layer_step(ad::Tape<T>& tape, const TransformerLayerParams<T>& layer,
                              ad::Var prompt, bool prompt_shared, std::size_t prompt_len,
                              bool keep_prompt, ad::Var body, ad::Var readout,
                              BlockLayout layout) {
  check_width(tape, prompt, layer.dim, "prompt");
  check_width(tape, body, layer.dim, "body");
  check_width(tape, readout, layer.dim, "readout");
  check_layout(tape, body, readout, layout);
  ad::Var seq = assemble(tape, prompt, prompt_shared, prompt_len, body, readout, layout);
  ad::Var out = transformer_layer(tape, layer, seq, prompt_len + layout.body_len + 1);
  return split(tape, out, prompt_len, keep_prompt, layout);
}

}  // namespace

template <class T>
SharedPromptBank<T> make_shared_prompt_bank(ParamStore<T>& store, std::size_t depth,
                                            std::size_t prompt_len, std::size_t dim, Rng& rng) {
  SharedPromptBank<T> bank;
  bank.depth = depth;
  bank.prompt_len = prompt_len;
  bank.dim = dim;
  for (std::size_t i = 1; i <= depth; ++i) {
    bank.slabs.push_back(&store.add("prompt.shared.t" + std::to_string(i),
                                    random_normal<T>(prompt_len, dim, rng, 1.0)));
  }
  return bank;
}

template <class T>
ModalityProjectors<T> make_projectors(ParamStore<T>& store, std::size_t d_s, std::size_t d_v,
                                      std::size_t d_l, std::size_t depth, bool per_layer,
                                      Rng& rng) {
  ModalityProjectors<T> p;
  p.per_layer = per_layer;
  p.out_dims = {d_v, d_l, d_l};
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_s));
  const std::size_t copies = per_layer ? depth : 1;
  for (Modality m : {Modality::vision, Modality::attribute, Modality::object}) {
    const auto mi = static_cast<std::size_t>(m);
    for (std::size_t i = 0; i < copies; ++i) {
      std::string prefix = std::string("prompt.proj.") + modality_name(m);
      if (per_layer) prefix += ".layer" + std::to_string(i + 1);
      p.weights[mi].push_back(
          &store.add(prefix + ".weight", random_uniform<T>(d_s, p.out_dims[mi], rng, bound)));
      p.biases[mi].push_back(&store.add(prefix + ".bias", Matrix<T>(1, p.out_dims[mi])));
    }
  }
  return p;
}

template <class T>
ad::Var project_shared(ad::Tape<T>& tape, const SharedPromptBank<T>& bank,
                       const ModalityProjectors<T>& projectors, std::size_t layer_idx,
                       Modality modality) {
  if (layer_idx < 1 || layer_idx > bank.depth) {
    throw ValidationError("project_shared: no shared prompt at layer " +
                          std::to_string(layer_idx) + " (h_s = " + std::to_string(bank.depth) +
                          ")");
  }
  const auto mi = static_cast<std::size_t>(modality);
  const std::size_t which = projectors.per_layer ? layer_idx - 1 : 0;
  const auto& W = *projectors.weights[mi].at(which);
  if (W.value.rows() != bank.dim) {
    throw ValidationError("project_shared: projector expects input width " +
                          std::to_string(W.value.rows()) + ", bank width is " +
                          std::to_string(bank.dim));
  }
  ad::Var t = tape.parameter(*bank.slabs[layer_idx - 1]);
  return ad::add_row(tape, ad::matmul(tape, t, tape.parameter(*projectors.weights[mi][which])),
                     tape.parameter(*projectors.biases[mi][which]));
}

template <class T>
Matrix<T> project_shared(const SharedPromptBank<T>& bank, const ModalityProjectors<T>& projectors,
                         std::size_t layer_idx, Modality modality) {
  ad::Tape<T> tape(false);
  return tape.value(project_shared(tape, bank, projectors, layer_idx, modality));
}

PromptPlacement choose_placement(PlacementMode mode, std::size_t height, std::size_t width,
                                 std::size_t patch, Rng* rng,
                                 std::optional<PromptPlacement> fixed_at) {
  if (patch > height || patch > width) {
    throw ValidationError("visual prompt of size " + std::to_string(patch) +
                          " does not fit in a " + std::to_string(height) + "x" +
                          std::to_string(width) + " image");
  }
  if (mode == PlacementMode::fixed) {
    PromptPlacement at = fixed_at.value_or(PromptPlacement{(height - patch) / 2, (width - patch) / 2});
    if (at.y + patch > height || at.x + patch > width) {
      throw ValidationError("fixed visual prompt placement lies outside the image");
    }
    return at;
  }
  if (rng == nullptr) throw ValidationError("random visual prompt placement needs an rng");
  std::uniform_int_distribution<std::size_t> ys(0, height - patch), xs(0, width - patch);
  const std::size_t y = ys(*rng);
  const std::size_t x = xs(*rng);
  return {y, x};
}

template <class T>
VisualPatchPrompt<T> make_visual_prompt(ParamStore<T>& store, std::size_t size,
                                        std::size_t channels, Rng& rng) {
  VisualPatchPrompt<T> v;
  v.size = size;
  v.channels = channels;
  v.phi = &store.add("prompt.phi", random_normal<T>(size * size, channels, rng, 1.0));
  return v;
}

template <class T>
ad::Var apply_visual_prompt(ad::Tape<T>& tape, ad::Var images, std::size_t height,
                            std::size_t width, ad::Var phi, std::size_t patch,
                            std::span<const PromptPlacement> regions, std::size_t per_image) {
  const auto& img = tape.value(images);
  const auto& ph = tape.value(phi);
  const std::size_t channels = img.cols();
  if (patch > height || patch > width) {
    throw ValidationError("visual prompt of size " + std::to_string(patch) +
                          " is larger than the image");
  }
  if (per_image == 0 || regions.size() % per_image != 0) {
    throw ValidationError("apply_visual_prompt: region count is not a multiple of per_image");
  }
  const std::size_t batch = regions.size() / per_image;
  if (img.rows() != batch * height * width || ph.rows() != patch * patch ||
      ph.cols() != channels) {
    throw ValidationError("apply_visual_prompt: image " + img.shape_string() + " / phi " +
                          ph.shape_string() + " do not match the declared sizes");
  }
  std::vector<std::size_t> index;
  index.reserve(regions.size() * ph.size());
  for (std::size_t r = 0; r < regions.size(); ++r) {
    const PromptPlacement at = regions[r];
    if (at.y + patch > height || at.x + patch > width) {
      throw ValidationError("apply_visual_prompt: placement outside the image");
    }
    const std::size_t base = (r / per_image) * height * width * channels;
    for (std::size_t dy = 0; dy < patch; ++dy)
      for (std::size_t dx = 0; dx < patch; ++dx)
        for (std::size_t c = 0; c < channels; ++c)
          index.push_back(base + ((at.y + dy) * width + (at.x + dx)) * channels + c);
  }
  ad::Var src = phi;
  if (regions.size() > 1) {
    std::vector<std::size_t> rows;
    rows.reserve(regions.size() * ph.rows());
    for (std::size_t r = 0; r < regions.size(); ++r)
      for (std::size_t j = 0; j < ph.rows(); ++j) rows.push_back(j);
    src = ad::gather_rows(tape, phi, std::move(rows));
  }
  return ad::scatter_add(tape, images, src, std::move(index));
}

template <class T>
ad::Var apply_visual_prompt(ad::Tape<T>& tape, ad::Var image, std::size_t height,
                            std::size_t width, ad::Var phi, std::size_t patch,
                            PromptPlacement at) {
  const PromptPlacement one[] = {at};
  return apply_visual_prompt(tape, image, height, width, phi, patch,
                             std::span<const PromptPlacement>(one), 1);
}

Image apply_visual_prompt(const Image& image, const Matrix<float>& phi, std::size_t patch,
                          PromptPlacement at) {
  ad::Tape<float> tape(false);
  ad::Var out = apply_visual_prompt(tape, tape.constant(image_to_matrix<float>(image)),
                                    image.height, image.width, tape.constant(phi), patch, at);
  Image result = image;
  result.pixels = tape.value(out).storage();
  return result;
}

template <class T>
LayerStepResult<T> front_layer_step(ad::Tape<T>& tape, const TransformerLayerParams<T>& layer,
                                    ad::Var prompt, ad::Var body, ad::Var readout,
                                    BlockLayout layout, std::size_t layer_idx, std::size_t h_s) {
  if (layer_idx < 1 || layer_idx > h_s) {
    throw ValidationError("front_layer_step: layer " + std::to_string(layer_idx) +
                          " is not a front layer (h_s = " + std::to_string(h_s) + ")");
  }
  const std::size_t prompt_len = rows_of(tape, prompt);
  return layer_step(tape, layer, prompt, true, prompt_len, false, body, readout, layout);
}

template <class T>
LayerStepResult<T> tail_layer_step(ad::Tape<T>& tape, const TransformerLayerParams<T>& layer,
                                   ad::Var carried, ad::Var body, ad::Var readout,
                                   BlockLayout layout, std::size_t prompt_len,
                                   std::size_t layer_idx, std::size_t h_s) {
  if (layer_idx <= h_s) {
    throw ValidationError("tail_layer_step: layer " + std::to_string(layer_idx) +
                          " is a front layer (h_s = " + std::to_string(h_s) + ")");
  }
  if (rows_of(tape, carried) != layout.batch * prompt_len) {
    throw ValidationError("tail_layer_step: carried prompts have " +
                          std::to_string(rows_of(tape, carried)) + " rows, expected " +
                          std::to_string(layout.batch * prompt_len));
  }
  return layer_step(tape, layer, carried, false, prompt_len, true, body, readout, layout);
}

template <class T>
ad::Var run_prompted_encoder(ad::Tape<T>& tape, const Encoder<T>& encoder,
                             const SharedPromptBank<T>* bank,
                             const ModalityProjectors<T>* projectors, Modality modality,
                             ad::Var body, ad::Var readout, BlockLayout layout) {
  const bool prompted = bank != nullptr && projectors != nullptr && bank->prompt_len > 0;
  const std::size_t h_s = prompted ? bank->depth : 0;
  const std::size_t prompt_len = prompted ? bank->prompt_len : 0;
  if (prompted && h_s > encoder.layers.size()) {
    throw ValidationError("h_s = " + std::to_string(h_s) + " exceeds encoder depth " +
                          std::to_string(encoder.layers.size()));
  }
  ad::Var carried;
  for (std::size_t i = 1; i <= encoder.layers.size(); ++i) {
    const auto& layer = encoder.layers[i - 1];
    LayerStepResult<T> r;
    if (!prompted) {
      r = layer_step(tape, layer, ad::Var{}, true, 0, false, body, readout, layout);
    } else if (i <= h_s) {
      r = front_layer_step(tape, layer, project_shared(tape, *bank, *projectors, i, modality),
                           body, readout, layout, i, h_s);
    } else {
      if (!carried.valid()) {
        ad::Var init = project_shared(tape, *bank, *projectors, h_s, modality);
        std::vector<std::size_t> index;
        for (std::size_t b = 0; b < layout.batch; ++b)
          for (std::size_t j = 0; j < prompt_len; ++j) index.push_back(j);
        carried = ad::gather_rows(tape, init, std::move(index));
      }
      r = tail_layer_step(tape, layer, carried, body, readout, layout, prompt_len, i, h_s);
      carried = r.carried;
    }
    body = r.body;
    readout = r.readout;
  }
  return ad::layer_norm(tape, readout, tape.parameter(*encoder.final_gamma),
                        tape.parameter(*encoder.final_beta));
}

template <class T>
ContextTokens<T> make_context_tokens(ParamStore<T>& store, std::size_t count, std::size_t d_l,
                                     Rng& rng) {
  ContextTokens<T> c;
  c.count = count;
  if (count > 0) {
    c.attribute = &store.add("prompt.ctx.attribute", random_normal<T>(count, d_l, rng, 1.0));
    c.object = &store.add("prompt.ctx.object", random_normal<T>(count, d_l, rng, 1.0));
  }
  return c;
}

template <class T>
TextInput<T> build_text_input(ad::Tape<T>& tape, ad::Var ctx, ad::Var fixed_tokens,
                              ad::Var class_table, std::span<const std::size_t> class_indices) {
  if (class_indices.empty()) throw ValidationError("build_text_input: no classes requested");
  const std::size_t n_classes = tape.value(class_table).rows();
  for (std::size_t c : class_indices) {
    if (c >= n_classes) {
      throw ValidationError("build_text_input: class index " + std::to_string(c) +
                            " out of range (" + std::to_string(n_classes) + ")");
    }
  }
  const std::size_t m = rows_of(tape, ctx), f = rows_of(tape, fixed_tokens);
  TextInput<T> in;
  in.layout = {class_indices.size(), m + f};
  in.readout = ad::gather_rows(tape, class_table,
                               std::vector<std::size_t>(class_indices.begin(), class_indices.end()));
  if (m + f == 0) return in;

  std::vector<ad::Var> parts;
  if (m > 0) parts.push_back(ctx);
  if (f > 0) parts.push_back(fixed_tokens);
  ad::Var shared = parts.size() == 1 ? parts.front() : ad::concat_rows<T>(tape, parts);
  std::vector<std::size_t> index;
  index.reserve(class_indices.size() * (m + f));
  for (std::size_t b = 0; b < class_indices.size(); ++b)
    for (std::size_t j = 0; j < m + f; ++j) index.push_back(j);
  in.body = ad::gather_rows(tape, shared, std::move(index));
  return in;
}

#define MMPT_INSTANTIATE(T)                                                                      \
  template SharedPromptBank<T> make_shared_prompt_bank<T>(ParamStore<T>&, std::size_t,          \
                                                          std::size_t, std::size_t, Rng&);       \
  template ModalityProjectors<T> make_projectors<T>(ParamStore<T>&, std::size_t, std::size_t,   \
                                                    std::size_t, std::size_t, bool, Rng&);       \
  template ad::Var project_shared<T>(ad::Tape<T>&, const SharedPromptBank<T>&,                   \
                                     const ModalityProjectors<T>&, std::size_t, Modality);       \
  template Matrix<T> project_shared<T>(const SharedPromptBank<T>&,                               \
                                       const ModalityProjectors<T>&, std::size_t, Modality);     \
  template VisualPatchPrompt<T> make_visual_prompt<T>(ParamStore<T>&, std::size_t,               \
                                                      std::size_t, Rng&);                        \
  template ad::Var apply_visual_prompt<T>(ad::Tape<T>&, ad::Var, std::size_t, std::size_t,       \
                                          ad::Var, std::size_t, PromptPlacement);                \
  template ad::Var apply_visual_prompt<T>(ad::Tape<T>&, ad::Var, std::size_t, std::size_t,       \
                                          ad::Var, std::size_t, std::span<const PromptPlacement>,\
                                          std::size_t);                                          \
  template LayerStepResult<T> front_layer_step<T>(ad::Tape<T>&, const TransformerLayerParams<T>&, \
                                                  ad::Var, ad::Var, ad::Var, BlockLayout,        \
                                                  std::size_t, std::size_t);                     \
  template LayerStepResult<T> tail_layer_step<T>(ad::Tape<T>&, const TransformerLayerParams<T>&, \
                                                 ad::Var, ad::Var, ad::Var, BlockLayout,         \
                                                 std::size_t, std::size_t, std::size_t);         \
  template ad::Var run_prompted_encoder<T>(ad::Tape<T>&, const Encoder<T>&,                      \
                                           const SharedPromptBank<T>*,                           \
                                           const ModalityProjectors<T>*, Modality, ad::Var,      \
                                           ad::Var, BlockLayout);                                \
  template ContextTokens<T> make_context_tokens<T>(ParamStore<T>&, std::size_t, std::size_t,     \
                                                   Rng&);                                        \
  template TextInput<T> build_text_input<T>(ad::Tape<T>&, ad::Var, ad::Var, ad::Var,            \
                                            std::span<const std::size_t>);

MMPT_INSTANTIATE(float)
MMPT_INSTANTIATE(double)
#undef MMPT_INSTANTIATE

}  // namespace mmpt
