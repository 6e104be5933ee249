#include <algorithm>
#include <cmath>
#include <limits>

#include "doctest.h"
#include "mmpt/encoder_core.hpp"
#include "oracles.hpp"

using namespace mmpt;

TEST_SUITE("encoder_core") {

namespace {

Image random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<float> d(0.0f, 1.0f);
  Image img{h, w, 3, {}};
  img.pixels.resize(h * w * 3);
  for (float& v : img.pixels) v = d(rng);
  return img;
}

Matrix<double> linear(const Matrix<double>& x, const Matrix<double>& w, const Matrix<double>& b) {
  Matrix<double> y(x.rows(), w.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double s = b[j];
      for (std::size_t c = 0; c < x.cols(); ++c) s += x(i, c) * w(c, j);
      y(i, j) = s;
    }
  return y;
}

std::vector<double> vec(const Parameter<double>* p) { return p->value.storage(); }

// Pre-norm block written out from the oracle pieces.
Matrix<double> layer_oracle(const TransformerLayerParams<double>& l, const Matrix<double>& x) {
  const Matrix<double> zero_b(1, l.dim);
  const auto h = oracle::layer_norm(x, vec(l.ln1_gamma), vec(l.ln1_beta));
  const auto q = linear(h, l.w_q->value, l.b_q->value);
  const auto k = linear(h, l.w_k->value, zero_b);
  const auto v = linear(h, l.w_v->value, l.b_v->value);
  const auto a = linear(oracle::attention(q, k, v, x.rows(), l.heads), l.w_o->value, l.b_o->value);
  Matrix<double> x1(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) x1[i] = x[i] + a[i];
  const auto h2 = oracle::layer_norm(x1, vec(l.ln2_gamma), vec(l.ln2_beta));
  auto f = linear(h2, l.w_fc1->value, l.b_fc1->value);
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double u = f[i];
    f[i] = 0.5 * u * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (u + 0.044715 * u * u * u)));
  }
  const auto m = linear(f, l.w_fc2->value, l.b_fc2->value);
  for (std::size_t i = 0; i < x1.size(); ++i) x1[i] += m[i];
  return x1;
}

}  // namespace

TEST_CASE("patch counts") {
  ParamStore<float> s;
  Rng rng(1);
  const auto small = make_patch_embedding(s, "v32", 32, 8, 3, 8, rng);
  CHECK(patch_embed(small, random_image(32, 32, 2)).rows() == 16);
  const auto big = make_patch_embedding(s, "v224", 224, 16, 3, 4, rng);
  const Matrix<float> t = patch_embed(big, random_image(224, 224, 3));
  CHECK(t.rows() == 196);
  CHECK(t.cols() == 4);
}

TEST_CASE("tokens are projected patches plus positions") {
  ParamStore<double> s;
  Rng rng(4);
  auto e = make_patch_embedding(s, "v", 8, 4, 3, 5, rng);
  e.bias->value = random_normal<double>(1, 5, rng);
  const Image img = random_image(8, 8, 5);
  const Matrix<double> t = patch_embed(e, img);
  for (std::size_t j = 0; j < 4; ++j) {
    const std::size_t py = j / 2, px = j % 2;
    Matrix<double> flat(1, 48);
    std::size_t col = 0;
    for (std::size_t dy = 0; dy < 4; ++dy)
      for (std::size_t dx = 0; dx < 4; ++dx)
        for (std::size_t c = 0; c < 3; ++c) flat[col++] = img.at(py * 4 + dy, px * 4 + dx, c);
    const auto ref = linear(flat, e.projection->value, e.bias->value);
    for (std::size_t d = 0; d < 5; ++d) {
      CHECK(t(j, d) == doctest::Approx(ref[d] + e.positions->value(j, d)).epsilon(1e-12));
    }
  }

  // Zero image, zero positions and bias: zero tokens.
  e.positions->value.fill(0.0);
  e.bias->value.fill(0.0);
  Image zero{8, 8, 3, std::vector<float>(8 * 8 * 3, 0.0f)};
  const Matrix<double> z = patch_embed(e, zero);
  CHECK(std::all_of(z.data(), z.data() + z.size(), [](double v) { return v == 0.0; }));
}

TEST_CASE("batched patch embedding equals per-image embedding bitwise") {
  ParamStore<float> s;
  Rng rng(6);
  const auto e = make_patch_embedding(s, "v", 16, 4, 3, 8, rng);
  std::vector<Image> imgs = {random_image(16, 16, 7), random_image(16, 16, 8), random_image(16, 16, 9)};
  Matrix<float> stacked(3 * 256, 3);
  for (std::size_t b = 0; b < 3; ++b)
    std::copy(imgs[b].pixels.begin(), imgs[b].pixels.end(), stacked.data() + b * 768);
  ad::Tape<float> tape(false);
  const Matrix<float>& all = tape.value(patch_embed(tape, e, tape.constant(stacked), 16, 16, 3));
  for (std::size_t b = 0; b < 3; ++b) {
    const Matrix<float> one = patch_embed(e, imgs[b]);
    for (std::size_t i = 0; i < one.size(); ++i) CHECK(all[b * one.size() + i] == one[i]);
  }
}

TEST_CASE("patch embedding rejects mismatched images") {
  ParamStore<float> s;
  Rng rng(10);
  const auto e = make_patch_embedding(s, "v", 32, 8, 3, 8, rng);
  CHECK_THROWS_AS(patch_embed(e, random_image(16, 16, 1)), ValidationError);
  CHECK_THROWS_AS(patch_embed(e, random_image(30, 30, 1)), ValidationError);
  Image gray{32, 32, 1, std::vector<float>(32 * 32, 0.5f)};
  CHECK_THROWS_AS(patch_embed(e, gray), ValidationError);
  CHECK_THROWS_AS(make_patch_embedding(s, "w", 30, 8, 3, 8, rng), ValidationError);
}

TEST_CASE("transformer layer keeps the shape and matches a direct oracle") {
  ParamStore<double> s;
  Rng rng(11);
  const auto l = make_transformer_layer(s, "l", 8, 2, 4, rng);
  for (auto* p : {l.ln1_gamma, l.ln1_beta, l.b_q, l.b_v, l.b_o, l.ln2_gamma, l.ln2_beta, l.b_fc1, l.b_fc2}) {
    p->value = random_normal<double>(p->value.rows(), p->value.cols(), rng, 0.5);
  }
  for (std::size_t n : {1, 5, 20}) {
    const Matrix<double> x = random_normal<double>(n, 8, rng);
    const Matrix<double> y = transformer_layer(l, x);
    CHECK(y.rows() == n);
    CHECK(y.cols() == 8);
    const Matrix<double> ref = layer_oracle(l, x);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-10));
  }
}

TEST_CASE("self-attention is permutation-equivariant") {
  ParamStore<double> s;
  Rng rng(12);
  const auto l = make_transformer_layer(s, "l", 8, 4, 2, rng);
  const Matrix<double> x = random_normal<double>(3, 8, rng);
  Matrix<double> swapped = x;
  for (std::size_t c = 0; c < 8; ++c) std::swap(swapped(0, c), swapped(2, c));
  const auto y = transformer_layer(l, x);
  const auto ys = transformer_layer(l, swapped);
  for (std::size_t c = 0; c < 8; ++c) {
    CHECK(ys(0, c) == doctest::Approx(y(2, c)).epsilon(1e-12));
    CHECK(ys(1, c) == doctest::Approx(y(1, c)).epsilon(1e-12));
    CHECK(ys(2, c) == doctest::Approx(y(0, c)).epsilon(1e-12));
  }
}

TEST_CASE("stacked blocks do not interact") {
  ParamStore<float> s;
  Rng rng(13);
  const auto l = make_transformer_layer(s, "l", 16, 4, 4, rng);
  const Matrix<float> a = random_normal<float>(5, 16, rng), b = random_normal<float>(5, 16, rng);
  Matrix<float> ab(10, 16);
  std::copy(a.data(), a.data() + a.size(), ab.data());
  std::copy(b.data(), b.data() + b.size(), ab.data() + a.size());
  ad::Tape<float> tape(false);
  const Matrix<float>& y = tape.value(transformer_layer(tape, l, tape.constant(ab), 5));
  const Matrix<float> ya = transformer_layer(l, a), yb = transformer_layer(l, b);
  for (std::size_t i = 0; i < ya.size(); ++i) {
    CHECK(y[i] == ya[i]);
    CHECK(y[ya.size() + i] == yb[i]);
  }
}

TEST_CASE("non-finite input and bad widths are rejected") {
  ParamStore<float> s;
  Rng rng(14);
  const auto l = make_transformer_layer(s, "l", 8, 2, 2, rng);
  Matrix<float> x = random_normal<float>(3, 8, rng);
  x(1, 2) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(transformer_layer(l, x), NumericError);
  CHECK_THROWS_AS(transformer_layer(l, Matrix<float>(3, 6)), ValidationError);
  CHECK_THROWS_AS(make_transformer_layer(s, "bad", 10, 4, 2, rng), ValidationError);
}

TEST_CASE("softmax survives logits of 1e4") {
  std::vector<double> row = {1e4, -1e4, 0.0, 9999.0};
  ad::softmax_row_inplace<double>(row);
  double sum = 0.0;
  for (double v : row) {
    CHECK(std::isfinite(v));
    sum += v;
  }
  CHECK(sum == doctest::Approx(1.0));
  CHECK(row[0] > row[3]);
}

TEST_CASE("encoders register named layers and a closing norm") {
  ParamStore<float> s;
  Rng rng(15);
  const auto e = make_encoder(s, "enc", 3, 8, 2, 4, rng);
  CHECK(e.layers.size() == 3);
  CHECK(s.find("enc.layer1.attn.w_q") != nullptr);
  CHECK(s.find("enc.layer3.mlp.w_fc2") != nullptr);
  CHECK(s.find("enc.layer1.attn.b_k") == nullptr);
  CHECK(e.final_gamma != nullptr);
}

}
