#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmpt/matrix.hpp"

namespace mmpt {

// A named model tensor. The gradient buffer is only meaningful while the
// tensor is trainable; frozen tensors never receive gradient.
template <class T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;
  bool trainable = true;

  void zero_grad() {
    if (!grad.same_shape(value)) grad = Matrix<T>(value.rows(), value.cols());
    grad.fill(T(0));
  }
};

// Owns every tensor of a model in registration order. Pointers handed out by
// add() stay valid for the store's lifetime.
template <class T>
class ParamStore {
 public:
  Parameter<T>& add(std::string name, Matrix<T> value, bool trainable = true) {
    if (index_.count(name) != 0) throw ValidationError("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    p->value = std::move(value);
    p->trainable = trainable;
    p->zero_grad();
    index_.emplace(std::move(name), params_.size());
    params_.push_back(std::move(p));
    return *params_.back();
  }

  [[nodiscard]] Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }
  [[nodiscard]] const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }
  Parameter<T>& at(const std::string& name) {
    if (auto* p = find(name)) return *p;
    throw ValidationError("unknown parameter: " + name);
  }
  const Parameter<T>& at(const std::string& name) const {
    if (const auto* p = find(name)) return *p;
    throw ValidationError("unknown parameter: " + name);
  }

  [[nodiscard]] std::size_t size() const noexcept { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  // Copies values of every same-named, same-shaped tensor from `other`.
  // Returns the number of tensors copied.
  std::size_t copy_values_from(const ParamStore& other) {
    std::size_t copied = 0;
    for (auto& p : params_) {
      if (const auto* q = other.find(p->name); q && q->value.same_shape(p->value)) {
        p->value = q->value;
        ++copied;
      }
    }
    return copied;
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// splitmix64 finalizer; used to derive independent stream seeds from tuples.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a,
                                    std::uint64_t b = 0, std::uint64_t c = 0) noexcept {
  return mix_seed(mix_seed(mix_seed(mix_seed(base) ^ a) ^ b) ^ c);
}

using Rng = std::mt19937_64;

template <class T>
Matrix<T> random_normal(std::size_t rows, std::size_t cols, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix<T> m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<T>(dist(rng));
  return m;
}

template <class T>
Matrix<T> random_uniform(std::size_t rows, std::size_t cols, Rng& rng, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix<T> m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<T>(dist(rng));
  return m;
}

}  // namespace mmpt
