#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape records one forward evaluation. Each op pushes a node holding its
// value and a closure that propagates the node's gradient to its inputs.
// Parameters enter the tape as cached leaves; after backward() their gradients
// are accumulated into Parameter::grad, and only for trainable tensors.
//
// With recording disabled the same op calls compute values only, which is how
// evaluation runs.

#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <unordered_map>
#include <vector>

#include "mmpt/matrix.hpp"
#include "mmpt/params.hpp"

namespace mmpt::ad {

struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  [[nodiscard]] bool valid() const noexcept { return id != npos; }
};

template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  [[nodiscard]] bool recording() const noexcept { return record_; }
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

  Var constant(Matrix<T> value) { return push(std::move(value), false, nullptr); }

  // Leaf bound to a model tensor. Repeated calls return the same node so that
  // gradient from every use is summed before it reaches the parameter.
  Var parameter(Parameter<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{it->second};
    Var v = push(p.value, record_ && p.trainable, nullptr);
    nodes_[v.id].param = &p;
    param_nodes_.emplace(&p, v.id);
    return v;
  }

  [[nodiscard]] const Matrix<T>& value(Var v) const { return node(v).value; }
  [[nodiscard]] bool requires_grad(Var v) const { return node(v).requires_grad; }

  // Gradient of the last backward() with respect to v (zeros if none reached it).
  [[nodiscard]] Matrix<T> grad(Var v) const {
    const Node& n = node(v);
    return n.has_grad ? n.grad : Matrix<T>(n.value.rows(), n.value.cols());
  }

  Var push(Matrix<T> value, bool requires_grad, Backward back) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = record_ && requires_grad;
    if (n.requires_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  // Gradient accumulator for an input node; allocated on first use.
  Matrix<T>* grad_sink(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (!n.has_grad) {
      n.grad = Matrix<T>(n.value.rows(), n.value.cols());
      n.has_grad = true;
    }
    return &n.grad;
  }

  [[nodiscard]] const Matrix<T>& upstream(std::size_t id) const { return nodes_[id].grad; }

  void backward(Var loss) {
    if (nodes_.empty() || !loss.valid() || loss.id >= nodes_.size()) {
      throw ValidationError("backward called before any forward pass was recorded");
    }
    if (!record_) throw ValidationError("backward called on a tape that does not record");
    Node& root = nodes_[loss.id];
    if (root.value.rows() != 1 || root.value.cols() != 1) {
      throw ValidationError("backward expects a scalar loss, got " + root.value.shape_string());
    }
    for (auto& n : nodes_) {
      n.has_grad = false;
      n.grad = Matrix<T>();
    }
    if (!root.requires_grad) return;  // loss independent of every trainable tensor
    grad_sink(loss.id)->fill(T(1));
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.has_grad && n.back) n.back(*this, id);
    }
    for (auto& n : nodes_) {
      if (n.param != nullptr && n.param->trainable && n.has_grad) {
        Parameter<T>& p = *n.param;
        if (!p.grad.same_shape(p.value)) p.zero_grad();
        for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += n.grad[i];
      }
    }
  }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    Backward back;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
    bool has_grad = false;
  };

  const Node& node(Var v) const {
    if (!v.valid() || v.id >= nodes_.size()) throw ValidationError("invalid tape variable");
    return nodes_[v.id];
  }

  std::deque<Node> nodes_;  // references to values stay valid as the tape grows
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
  bool record_;
};

// ---- ops -------------------------------------------------------------------

template <class T> Var matmul(Tape<T>& t, Var a, Var b);
// a * b^T
template <class T> Var matmul_nt(Tape<T>& t, Var a, Var b);
template <class T> Var add(Tape<T>& t, Var a, Var b);
// Adds a 1 x m row to every row of a.
template <class T> Var add_row(Tape<T>& t, Var a, Var row);
template <class T> Var scale(Tape<T>& t, Var a, T s);
template <class T> Var reshape(Tape<T>& t, Var a, std::size_t rows, std::size_t cols);
template <class T> Var concat_rows(Tape<T>& t, std::span<const Var> parts);
// out.row(i) = a.row(index[i]); repeats allowed.
template <class T> Var gather_rows(Tape<T>& t, Var a, std::vector<std::size_t> index);
// out = base; out.flat[index[i]] += src.flat[i]
template <class T> Var scatter_add(Tape<T>& t, Var base, Var src, std::vector<std::size_t> index);
template <class T> Var layer_norm(Tape<T>& t, Var x, Var gamma, Var beta, T eps = T(1e-5));
template <class T> Var gelu(Tape<T>& t, Var x);
// Multi-head self-attention over independent row blocks of length `block`.
// q, k, v are (blocks*block) x d; heads must divide d.
template <class T>
Var attention(Tape<T>& t, Var q, Var k, Var v, std::size_t block, std::size_t heads);
// Row-wise x / max(||x||, eps).
template <class T> Var l2_normalize_rows(Tape<T>& t, Var x, T eps = T(1e-12));
template <class T> Var log_softmax_rows(Tape<T>& t, Var x);
// Mean over rows of -max(logp[i, label[i]], log(floor)). Clamped entries pass
// no gradient and are counted in *clamped when given.
template <class T>
Var mean_nll(Tape<T>& t, Var logp, std::vector<std::size_t> labels, T floor = T(1e-30),
             std::size_t* clamped = nullptr);
// 1x1 sum of all entries.
template <class T> Var sum_all(Tape<T>& t, Var a);

// Value-level helpers shared with tests and scoring.
template <class T> void softmax_row_inplace(std::span<T> row);

}  // namespace mmpt::ad
