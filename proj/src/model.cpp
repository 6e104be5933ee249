#include "mmpt/model.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "mmpt/hashing.hpp"

namespace mmpt {

namespace {

Rng component_rng(std::uint64_t seed, const char* tag) {
  return Rng(derive_seed(seed, fnv1a64(tag)));
}

}  // namespace

template <class T>
MmptModel<T>::MmptModel(MMPTConfig cfg, std::size_t n_attributes, std::size_t n_objects)
    : cfg_(std::move(cfg)), n_attributes_(n_attributes), n_objects_(n_objects) {
  cfg_.validate();
  if (n_attributes_ == 0 || n_objects_ == 0) {
    throw ValidationError("model needs at least one attribute and one object class");
  }
  const auto& c = cfg_;
  const std::uint64_t s = c.seed;
  {
    Rng rng = component_rng(s, "vision.patch");
    patch_ = make_patch_embedding(store_, "vision.patch", c.image_size, c.patch_size, c.channels,
                                  c.d_v, rng);
    cls_ = &store_.add("vision.cls", random_normal<T>(1, c.d_v, rng, 1.0));
  }
  {
    Rng rng = component_rng(s, "vision");
    vision_ = make_encoder(store_, "vision", c.h_v, c.d_v, c.heads_v, c.mlp_ratio, rng);
  }
  {
    Rng rng = component_rng(s, "text.attribute");
    attr_.encoder = make_encoder(store_, "text.attribute", c.h_a, c.d_l, c.heads_l, c.mlp_ratio, rng);
    attr_.classes = &store_.add("text.attribute.classes",
                                random_normal<T>(n_attributes_, c.d_l, rng, 1.0));
  }
  {
    Rng rng = component_rng(s, "text.object");
    obj_.encoder = make_encoder(store_, "text.object", c.h_o, c.d_l, c.heads_l, c.mlp_ratio, rng);
    obj_.classes = &store_.add("text.object.classes", random_normal<T>(n_objects_, c.d_l, rng, 1.0));
  }
  {
    Rng rng = component_rng(s, "prompt.ctx");
    auto ctx = make_context_tokens(store_, c.ctx_len, c.d_l, rng);
    attr_.context = ctx.attribute;
    obj_.context = ctx.object;
  }
  if (c.fixed_len > 0) {
    Rng rng = component_rng(s, "text.fixed");
    fixed_ = &store_.add("text.fixed", random_normal<T>(c.fixed_len, c.d_l, rng, 1.0), false);
  }
  {
    Rng rng = component_rng(s, "head");
    omega_ = &store_.add("head.omega", random_normal<T>(c.d_l, c.d_joint, rng,
                                                        1.0 / std::sqrt(double(c.d_l))));
    nu_ = &store_.add("head.nu", random_normal<T>(c.d_v, c.d_joint, rng,
                                                  1.0 / std::sqrt(double(c.d_v))));
  }
  if (c.shared_prompts) {
    Rng rng = component_rng(s, "prompt.shared");
    bank_ = make_shared_prompt_bank(store_, c.h_s, c.prompt_len, c.d_s, rng);
    Rng prng = component_rng(s, "prompt.proj");
    projectors_ = make_projectors(store_, c.d_s, c.d_v, c.d_l, c.h_s, c.per_layer_projectors, prng);
    shared_active_ = true;
  }
  if (c.visual_prompt) {
    Rng rng = component_rng(s, "prompt.phi");
    phi_ = make_visual_prompt(store_, c.prompt_patch_size, c.channels, rng);
    phi_active_ = true;
  }
}

template <class T>
void MmptModel<T>::set_visual_prompt_active(bool on) {
  if (on && !phi_) throw ValidationError("this model was built without a visual prompt");
  phi_active_ = on;
}

template <class T>
void MmptModel<T>::set_shared_prompts_active(bool on) {
  if (on && !bank_) throw ValidationError("this model was built without shared prompts");
  shared_active_ = on;
}

template <class T>
const TextBranch<T>& MmptModel<T>::text_branch(Modality m) const {
  if (m == Modality::attribute) return attr_;
  if (m == Modality::object) return obj_;
  throw ValidationError("text_branch: vision is not a text branch");
}

template <class T>
ad::Var MmptModel<T>::vision_readout(ad::Tape<T>& tape, ad::Var images, std::size_t batch,
                                     std::span<const PromptPlacement> placements) const {
  const std::size_t H = cfg_.image_size, W = cfg_.image_size;
  if (batch == 0) throw ValidationError("vision_readout: empty batch");
  const auto& img = tape.value(images);
  if (img.rows() != batch * H * W || img.cols() != cfg_.channels) {
    throw ValidationError("vision_readout: images " + img.shape_string() + " do not match " +
                          std::to_string(batch) + " x " + std::to_string(H) + "x" +
                          std::to_string(W) + "x" + std::to_string(cfg_.channels));
  }
  ad::Var x = images;
  if (phi_active_) {
    const std::size_t p = cfg_.prompt_patch_size;
    std::vector<PromptPlacement> regions;
    std::size_t per_image = 1;
    if (cfg_.phi_mode == PhiMode::all_patches) {
      per_image = (H / p) * (W / p);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t py = 0; py < H / p; ++py)
          for (std::size_t px = 0; px < W / p; ++px) regions.push_back({py * p, px * p});
    } else if (placements.empty()) {
      regions.assign(batch, choose_placement(PlacementMode::fixed, H, W, p, nullptr));
    } else {
      if (placements.size() != batch) {
        throw ValidationError("vision_readout: " + std::to_string(placements.size()) +
                              " prompt placements for a batch of " + std::to_string(batch));
      }
      regions.assign(placements.begin(), placements.end());
    }
    x = apply_visual_prompt(tape, x, H, W, tape.parameter(*phi_->phi), p,
                            std::span<const PromptPlacement>(regions), per_image);
  }
  ad::Var tokens = patch_embed(tape, patch_, x, H, W, batch);
  ad::Var readout = ad::gather_rows(tape, tape.parameter(*cls_), std::vector<std::size_t>(batch, 0));
  const bool prompted = shared_active_ && bank_;
  return run_prompted_encoder(tape, vision_, prompted ? &*bank_ : nullptr,
                              prompted ? &*projectors_ : nullptr, Modality::vision, tokens,
                              readout, BlockLayout{batch, cfg_.num_patches()});
}

template <class T>
ad::Var MmptModel<T>::text_readouts(ad::Tape<T>& tape, Modality branch) const {
  const TextBranch<T>& br = text_branch(branch);
  ad::Var ctx = br.context ? tape.parameter(*br.context) : ad::Var{};
  ad::Var fixed = fixed_ ? tape.parameter(*fixed_) : ad::Var{};
  std::vector<std::size_t> classes(br.classes->value.rows());
  std::iota(classes.begin(), classes.end(), std::size_t{0});
  TextInput<T> in = build_text_input(tape, ctx, fixed, tape.parameter(*br.classes),
                                     std::span<const std::size_t>(classes));
  const bool prompted = shared_active_ && bank_;
  return run_prompted_encoder(tape, br.encoder, prompted ? &*bank_ : nullptr,
                              prompted ? &*projectors_ : nullptr, branch, in.body, in.readout,
                              in.layout);
}

template <class T>
ad::Var MmptModel<T>::logits(ad::Tape<T>& tape, ad::Var z, ad::Var y) const {
  ad::Var u = ad::l2_normalize_rows(tape, ad::matmul(tape, z, tape.parameter(*nu_)));
  ad::Var w = ad::l2_normalize_rows(tape, ad::matmul(tape, y, tape.parameter(*omega_)));
  return ad::scale(tape, ad::matmul_nt(tape, u, w), static_cast<T>(1.0 / cfg_.tau));
}

template <class T>
BranchLogits<T> MmptModel<T>::forward(ad::Tape<T>& tape, ad::Var images, std::size_t batch,
                                      std::span<const PromptPlacement> placements) const {
  ad::Var z = vision_readout(tape, images, batch, placements);
  ad::Var ya = text_readouts(tape, Modality::attribute);
  ad::Var yo = text_readouts(tape, Modality::object);
  return {logits(tape, z, ya), logits(tape, z, yo)};
}

template <class T>
Matrix<T> MmptModel<T>::forward_vision(const Image& image) const {
  ad::Tape<T> tape(false);
  const Image* one[] = {&image};
  ad::Var z = vision_readout(tape, tape.constant(stack_images<T>(one)), 1, {});
  return tape.value(z);
}

template <class T>
Matrix<T> MmptModel<T>::forward_text_branch(Modality branch) const {
  ad::Tape<T> tape(false);
  return tape.value(text_readouts(tape, branch));
}

template <class T>
Matrix<T> stack_images(std::span<const Image* const> images) {
  if (images.empty()) throw ValidationError("stack_images: no images");
  const Image& first = *images.front();
  const std::size_t per = first.height * first.width;
  Matrix<T> m(images.size() * per, first.channels);
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Image& im = *images[b];
    if (im.height != first.height || im.width != first.width || im.channels != first.channels) {
      throw ValidationError("stack_images: image " + std::to_string(b) + " has a different shape");
    }
    if (im.pixels.size() != per * im.channels) {
      throw ValidationError("stack_images: image " + std::to_string(b) + " has a bad pixel count");
    }
    T* dst = m.data() + b * per * first.channels;
    for (std::size_t i = 0; i < im.pixels.size(); ++i) dst[i] = static_cast<T>(im.pixels[i]);
  }
  return m;
}

Matrix<double> softmax_rows(const Matrix<double>& logits) {
  Matrix<double> p = logits;
  for (std::size_t i = 0; i < p.rows(); ++i) ad::softmax_row_inplace(p.row(i));
  return p;
}

template <class T>
Matrix<double> score(const Matrix<T>& z, const Matrix<T>& y, const Matrix<T>& omega,
                     const Matrix<T>& nu, double tau) {
  if (!(tau > 0)) throw ValidationError("score: tau must be positive");
  ad::Tape<T> tape(false);
  ad::Var u = ad::l2_normalize_rows(tape, ad::matmul(tape, tape.constant(z), tape.constant(nu)));
  ad::Var w =
      ad::l2_normalize_rows(tape, ad::matmul(tape, tape.constant(y), tape.constant(omega)));
  ad::Var l = ad::scale(tape, ad::matmul_nt(tape, u, w), static_cast<T>(1.0 / tau));
  return softmax_rows(tape.value(l).template cast<double>());
}

std::size_t thread_budget() {
  if (const char* env = std::getenv("MMPT_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

template <class T>
ScoreTable forward_batch(const MmptModel<T>& model, std::span<const ImageSample> samples,
                         const CompositionSpace& space) {
  if (samples.empty()) throw ValidationError("forward_batch: empty batch");
  if (space.attributes().size() != model.num_attributes() ||
      space.objects().size() != model.num_objects()) {
    throw ValidationError("forward_batch: label space " + std::to_string(space.attributes().size()) +
                          "x" + std::to_string(space.objects().size()) +
                          " does not match the model's " + std::to_string(model.num_attributes()) +
                          "x" + std::to_string(model.num_objects()));
  }
  const Matrix<T> ya = model.forward_text_branch(Modality::attribute);
  const Matrix<T> yo = model.forward_text_branch(Modality::object);

  const std::size_t n = samples.size();
  const std::size_t chunk = 32;
  const std::size_t n_chunks = (n + chunk - 1) / chunk;
  Matrix<double> la(n, model.num_attributes()), lo(n, model.num_objects());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;

  auto worker = [&] {
    try {
      for (std::size_t c = next++; c < n_chunks; c = next++) {
        const std::size_t begin = c * chunk, end = std::min(n, begin + chunk);
        std::vector<const Image*> imgs;
        for (std::size_t i = begin; i < end; ++i) imgs.push_back(&samples[i].image);
        ad::Tape<T> tape(false);
        ad::Var z = model.vision_readout(tape, tape.constant(stack_images<T>(imgs)), imgs.size(), {});
        const auto& a = tape.value(model.logits(tape, z, tape.constant(ya)));
        const auto& o = tape.value(model.logits(tape, z, tape.constant(yo)));
        for (std::size_t i = begin; i < end; ++i) {
          for (std::size_t k = 0; k < a.cols(); ++k) la(i, k) = a(i - begin, k);
          for (std::size_t k = 0; k < o.cols(); ++k) lo(i, k) = o(i - begin, k);
        }
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mu);
      if (!failure) failure = std::current_exception();
      next = n_chunks;
    }
  };
  const std::size_t workers = std::min(thread_budget(), n_chunks);
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  ScoreTable table;
  table.space = space;
  for (const auto& s : samples) {
    table.sample_ids.push_back(s.sample_id);
    table.labels.push_back(s.label);
  }
  table.rho_a = softmax_rows(la);
  table.rho_o = softmax_rows(lo);
  return table;
}

template class MmptModel<float>;
template class MmptModel<double>;
template Matrix<float> stack_images<float>(std::span<const Image* const>);
template Matrix<double> stack_images<double>(std::span<const Image* const>);
template Matrix<double> score<float>(const Matrix<float>&, const Matrix<float>&,
                                     const Matrix<float>&, const Matrix<float>&, double);
template Matrix<double> score<double>(const Matrix<double>&, const Matrix<double>&,
                                      const Matrix<double>&, const Matrix<double>&, double);
template ScoreTable forward_batch<float>(const MmptModel<float>&, std::span<const ImageSample>,
                                         const CompositionSpace&);
template ScoreTable forward_batch<double>(const MmptModel<double>&, std::span<const ImageSample>,
                                          const CompositionSpace&);

}  // namespace mmpt
