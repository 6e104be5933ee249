#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "mmpt/autodiff.hpp"
#include "mmpt/kernels.hpp"

namespace mmpt::ad {

namespace {

template <class T>
void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw ValidationError(std::string(op) + ": " + detail);
}

template <class T>
void add_into(Matrix<T>& dst, const Matrix<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

template <class T>
void softmax_row_inplace(std::span<T> row) {
  if (row.empty()) return;
  const T mx = *std::max_element(row.begin(), row.end());
  T total = T(0);
  for (T& v : row) {
    v = std::exp(v - mx);
    total += v;
  }
  for (T& v : row) v /= total;
}

template <class T>
Var matmul(Tape<T>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  require<T>(A.cols() == B.rows(), "matmul", A.shape_string() + " * " + B.shape_string());
  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  Matrix<T> C(n, m);
  kernels::gemm_nn(n, k, m, A.data(), B.data(), C.data(), false);
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(C), rg, [a, b, n, k, m](Tape<T>& tp, std::size_t self) {
    const auto& G = tp.upstream(self);
    if (auto* ga = tp.grad_sink(a.id)) {
      kernels::gemm_nt(n, m, k, G.data(), tp.value(b).data(), ga->data(), true);
    }
    if (auto* gb = tp.grad_sink(b.id)) {
      kernels::gemm_tn(k, n, m, tp.value(a).data(), G.data(), gb->data(), true);
    }
  });
}

template <class T>
Var matmul_nt(Tape<T>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  require<T>(A.cols() == B.cols(), "matmul_nt", A.shape_string() + " * " + B.shape_string() + "^T");
  const std::size_t n = A.rows(), k = A.cols(), m = B.rows();
  Matrix<T> C(n, m);
  kernels::gemm_nt(n, k, m, A.data(), B.data(), C.data(), false);
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(C), rg, [a, b, n, k, m](Tape<T>& tp, std::size_t self) {
    const auto& G = tp.upstream(self);
    if (auto* ga = tp.grad_sink(a.id)) {
      kernels::gemm_nn(n, m, k, G.data(), tp.value(b).data(), ga->data(), true);
    }
    if (auto* gb = tp.grad_sink(b.id)) {
      kernels::gemm_tn(m, n, k, G.data(), tp.value(a).data(), gb->data(), true);
    }
  });
}

template <class T>
Var add(Tape<T>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  require<T>(A.same_shape(B), "add", A.shape_string() + " + " + B.shape_string());
  Matrix<T> C = A;
  add_into(C, B);
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(C), rg, [a, b](Tape<T>& tp, std::size_t self) {
    const auto& G = tp.upstream(self);
    if (auto* ga = tp.grad_sink(a.id)) add_into(*ga, G);
    if (auto* gb = tp.grad_sink(b.id)) add_into(*gb, G);
  });
}

template <class T>
Var add_row(Tape<T>& t, Var a, Var row) {
  const auto& A = t.value(a);
  const auto& R = t.value(row);
  require<T>(R.rows() == 1 && R.cols() == A.cols(), "add_row",
             A.shape_string() + " + row " + R.shape_string());
  Matrix<T> C = A;
  for (std::size_t i = 0; i < C.rows(); ++i) {
    for (std::size_t j = 0; j < C.cols(); ++j) C(i, j) += R[j];
  }
  const bool rg = t.requires_grad(a) || t.requires_grad(row);
  return t.push(std::move(C), rg, [a, row](Tape<T>& tp, std::size_t self) {
    const auto& G = tp.upstream(self);
    if (auto* ga = tp.grad_sink(a.id)) add_into(*ga, G);
    if (auto* gr = tp.grad_sink(row.id)) {
      for (std::size_t i = 0; i < G.rows(); ++i) {
        for (std::size_t j = 0; j < G.cols(); ++j) (*gr)[j] += G(i, j);
      }
    }
  });
}

template <class T>
Var scale(Tape<T>& t, Var a, T s) {
  Matrix<T> C = t.value(a);
  for (std::size_t i = 0; i < C.size(); ++i) C[i] *= s;
  return t.push(std::move(C), t.requires_grad(a), [a, s](Tape<T>& tp, std::size_t self) {
    const auto& G = tp.upstream(self);
    if (auto* ga = tp.grad_sink(a.id)) {
      for (std::size_t i = 0; i < G.size(); ++i) (*ga)[i] += s * G[i];
    }
  });
}

template <class T>
Var reshape(Tape<T>& t, Var a, std::size_t rows, std::size_t cols) {
  const auto& A = t.value(a);
  require<T>(rows * cols == A.size(), "reshape",
             A.shape_string() + " -> " + std::to_string(rows) + "x" + std::to_string(cols));
  Matrix<T> C(rows, cols, A.storage());
  return t.push(std::move(C), t.requires_grad(a), [a](Tape<T>& tp, std::size_t self) {
    const auto& G = tp.upstream(self);
    if (auto* ga = tp.grad_sink(a.id)) {
      for (std::size_t i = 0; i < G.size(); ++i) (*ga)[i] += G[i];
    }
  });
}

template <class T>
Var concat_rows(Tape<T>& t, std::span<const Var> parts) {
  require<T>(!parts.empty(), "concat_rows", "no inputs");
  const std::size_t cols = t.value(parts.front()).cols();
  std::size_t rows = 0;
  bool rg = false;
  for (Var p : parts) {
    require<T>(t.value(p).cols() == cols, "concat_rows",
               "width " + std::to_string(t.value(p).cols()) + " != " + std::to_string(cols));
    rows += t.value(p).rows();
    rg = rg || t.requires_grad(p);
  }
  Matrix<T> C(rows, cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    const auto& P = t.value(p);
    std::copy(P.storage().begin(), P.storage().end(), C.data() + offset);
    offset += P.size();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.push(std::move(C), rg, [inputs = std::move(inputs)](Tape<T>& tp, std::size_t self) {
    const auto& G = tp.upstream(self);
    std::size_t off = 0;
    for (Var p : inputs) {
      const std::size_t len = tp.value(p).size();
      if (auto* gp = tp.grad_sink(p.id)) {
        for (std::size_t i = 0; i < len; ++i) (*gp)[i] += G[off + i];
      }
      off += len;
    }
  });
}

template <class T>
Var gather_rows(Tape<T>& t, Var a, std::vector<std::size_t> index) {
  const auto& A = t.value(a);
  const std::size_t cols = A.cols();
  Matrix<T> C(index.size(), cols);
  for (std::size_t i = 0; i < index.size(); ++i) {
    require<T>(index[i] < A.rows(), "gather_rows",
               "row " + std::to_string(index[i]) + " out of " + std::to_string(A.rows()));
    std::copy_n(A.data() + index[i] * cols, cols, C.data() + i * cols);
  }
  return t.push(std::move(C), t.requires_grad(a),
                [a, cols, index = std::move(index)](Tape<T>& tp, std::size_t self) {
                  const auto& G = tp.upstream(self);
                  if (auto* ga = tp.grad_sink(a.id)) {
                    for (std::size_t i = 0; i < index.size(); ++i) {
                      T* dst = ga->data() + index[i] * cols;
                      const T* src = G.data() + i * cols;
                      for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
                    }
                  }
                });
}

template <class T>
Var scatter_add(Tape<T>& t, Var base, Var src, std::vector<std::size_t> index) {
  const auto& B = t.value(base);
  const auto& S = t.value(src);
  require<T>(index.size() == S.size(), "scatter_add", "index length does not match source");
  Matrix<T> C = B;
  for (std::size_t i = 0; i < index.size(); ++i) {
    require<T>(index[i] < C.size(), "scatter_add", "target index out of range");
    C[index[i]] += S[i];
  }
  const bool rg = t.requires_grad(base) || t.requires_grad(src);
  return t.push(std::move(C), rg,
                [base, src, index = std::move(index)](Tape<T>& tp, std::size_t self) {
                  const auto& G = tp.upstream(self);
                  if (auto* gb = tp.grad_sink(base.id)) add_into(*gb, G);
                  if (auto* gs = tp.grad_sink(src.id)) {
                    for (std::size_t i = 0; i < index.size(); ++i) (*gs)[i] += G[index[i]];
                  }
                });
}

template <class T>
Var layer_norm(Tape<T>& t, Var x, Var gamma, Var beta, T eps) {
  const auto& X = t.value(x);
  const auto& Gm = t.value(gamma);
  const auto& Bt = t.value(beta);
  const std::size_t n = X.rows(), d = X.cols();
  require<T>(Gm.rows() == 1 && Gm.cols() == d && Bt.same_shape(Gm), "layer_norm",
             "affine parameters must be 1x" + std::to_string(d));
  Matrix<T> Y(n, d);
  auto xhat = std::make_shared<Matrix<T>>(n, d);
  auto inv_std = std::make_shared<std::vector<T>>(n);
  for (std::size_t i = 0; i < n; ++i) {
    T mean = T(0);
    for (std::size_t j = 0; j < d; ++j) mean += X(i, j);
    mean /= T(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      const T c = X(i, j) - mean;
      var += c * c;
    }
    var /= T(d);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (X(i, j) - mean) * is;
      (*xhat)(i, j) = h;
      Y(i, j) = h * Gm[j] + Bt[j];
    }
  }
  const bool rg = t.requires_grad(x) || t.requires_grad(gamma) || t.requires_grad(beta);
  return t.push(std::move(Y), rg,
                [x, gamma, beta, n, d, xhat, inv_std](Tape<T>& tp, std::size_t self) {
                  const auto& G = tp.upstream(self);
                  const auto& Gm = tp.value(gamma);
                  if (auto* gg = tp.grad_sink(gamma.id)) {
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t j = 0; j < d; ++j) (*gg)[j] += G(i, j) * (*xhat)(i, j);
                  }
                  if (auto* gb = tp.grad_sink(beta.id)) {
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t j = 0; j < d; ++j) (*gb)[j] += G(i, j);
                  }
                  if (auto* gx = tp.grad_sink(x.id)) {
                    std::vector<T> dh(d);
                    for (std::size_t i = 0; i < n; ++i) {
                      T mean_dh = T(0), mean_dh_h = T(0);
                      for (std::size_t j = 0; j < d; ++j) {
                        dh[j] = G(i, j) * Gm[j];
                        mean_dh += dh[j];
                        mean_dh_h += dh[j] * (*xhat)(i, j);
                      }
                      mean_dh /= T(d);
                      mean_dh_h /= T(d);
                      const T is = (*inv_std)[i];
                      for (std::size_t j = 0; j < d; ++j) {
                        (*gx)(i, j) += is * (dh[j] - mean_dh - (*xhat)(i, j) * mean_dh_h);
                      }
                    }
                  }
                });
}

template <class T>
Var gelu(Tape<T>& t, Var x) {
  // tanh approximation
  constexpr T k0 = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k1 = T(0.044715);
  const auto& X = t.value(x);
  Matrix<T> Y(X.rows(), X.cols());
  for (std::size_t i = 0; i < X.size(); ++i) {
    const T v = X[i];
    Y[i] = T(0.5) * v * (T(1) + std::tanh(k0 * (v + k1 * v * v * v)));
  }
  return t.push(std::move(Y), t.requires_grad(x), [x](Tape<T>& tp, std::size_t self) {
    const auto& G = tp.upstream(self);
    const auto& X = tp.value(x);
    if (auto* gx = tp.grad_sink(x.id)) {
      for (std::size_t i = 0; i < X.size(); ++i) {
        const T v = X[i];
        const T u = k0 * (v + k1 * v * v * v);
        const T th = std::tanh(u);
        const T du = k0 * (T(1) + T(3) * k1 * v * v);
        const T d = T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * du;
        (*gx)[i] += G[i] * d;
      }
    }
  });
}

template <class T>
Var attention(Tape<T>& t, Var q, Var k, Var v, std::size_t block, std::size_t heads) {
  const auto& Q = t.value(q);
  const auto& K = t.value(k);
  const auto& V = t.value(v);
  require<T>(Q.same_shape(K) && Q.same_shape(V), "attention", "q/k/v shapes differ");
  require<T>(block > 0 && Q.rows() % block == 0, "attention",
             std::to_string(Q.rows()) + " rows not divisible into blocks of " +
                 std::to_string(block));
  require<T>(heads > 0 && Q.cols() % heads == 0, "attention",
             "head count " + std::to_string(heads) + " does not divide " +
                 std::to_string(Q.cols()));
  const std::size_t d = Q.cols(), dh = d / heads, blocks = Q.rows() / block, n = block;
  const T sc = T(1) / std::sqrt(T(dh));

  // probs layout: [block][head][n x n]
  auto probs = std::make_shared<std::vector<T>>(blocks * heads * n * n);
  Matrix<T> O(Q.rows(), d);
  std::vector<T> qh(n * dh), kh(n * dh), vh(n * dh), oh(n * dh);
  auto extract = [&](const Matrix<T>& M, std::size_t b, std::size_t h, std::vector<T>& dst) {
    for (std::size_t r = 0; r < n; ++r)
      std::copy_n(M.data() + (b * n + r) * d + h * dh, dh, dst.data() + r * dh);
  };
  for (std::size_t b = 0; b < blocks; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      extract(Q, b, h, qh);
      extract(K, b, h, kh);
      extract(V, b, h, vh);
      T* P = probs->data() + (b * heads + h) * n * n;
      kernels::gemm_nt(n, dh, n, qh.data(), kh.data(), P, false);
      for (std::size_t r = 0; r < n; ++r) {
        std::span<T> row(P + r * n, n);
        for (T& s : row) s *= sc;
        softmax_row_inplace(row);
      }
      kernels::gemm_nn(n, n, dh, P, vh.data(), oh.data(), false);
      for (std::size_t r = 0; r < n; ++r)
        std::copy_n(oh.data() + r * dh, dh, O.data() + (b * n + r) * d + h * dh);
    }
  }

  const bool rg = t.requires_grad(q) || t.requires_grad(k) || t.requires_grad(v);
  return t.push(std::move(O), rg,
                [q, k, v, n, d, dh, heads, blocks, sc, probs](Tape<T>& tp, std::size_t self) {
                  const auto& G = tp.upstream(self);
                  const auto& Q = tp.value(q);
                  const auto& K = tp.value(k);
                  const auto& V = tp.value(v);
                  Matrix<T>* gq = tp.grad_sink(q.id);
                  Matrix<T>* gk = tp.grad_sink(k.id);
                  Matrix<T>* gv = tp.grad_sink(v.id);
                  std::vector<T> qh(n * dh), kh(n * dh), vh(n * dh), goh(n * dh), tmp(n * dh);
                  std::vector<T> dP(n * n);
                  auto extract = [&](const Matrix<T>& M, std::size_t b, std::size_t h,
                                     std::vector<T>& dst) {
                    for (std::size_t r = 0; r < n; ++r)
                      std::copy_n(M.data() + (b * n + r) * d + h * dh, dh, dst.data() + r * dh);
                  };
                  auto scatter = [&](Matrix<T>* M, std::size_t b, std::size_t h,
                                     const std::vector<T>& src) {
                    for (std::size_t r = 0; r < n; ++r) {
                      T* dst = M->data() + (b * n + r) * d + h * dh;
                      for (std::size_t j = 0; j < dh; ++j) dst[j] += src[r * dh + j];
                    }
                  };
                  for (std::size_t b = 0; b < blocks; ++b) {
                    for (std::size_t h = 0; h < heads; ++h) {
                      const T* P = probs->data() + (b * heads + h) * n * n;
                      extract(G, b, h, goh);
                      extract(Q, b, h, qh);
                      extract(K, b, h, kh);
                      extract(V, b, h, vh);
                      if (gv) {
                        kernels::gemm_tn(n, n, dh, P, goh.data(), tmp.data(), false);
                        scatter(gv, b, h, tmp);
                      }
                      if (!gq && !gk) continue;
                      kernels::gemm_nt(n, dh, n, goh.data(), vh.data(), dP.data(), false);
                      for (std::size_t r = 0; r < n; ++r) {
                        T dot = T(0);
                        for (std::size_t c = 0; c < n; ++c) dot += dP[r * n + c] * P[r * n + c];
                        for (std::size_t c = 0; c < n; ++c)
                          dP[r * n + c] = P[r * n + c] * (dP[r * n + c] - dot) * sc;
                      }
                      if (gq) {
                        kernels::gemm_nn(n, n, dh, dP.data(), kh.data(), tmp.data(), false);
                        scatter(gq, b, h, tmp);
                      }
                      if (gk) {
                        kernels::gemm_tn(n, n, dh, dP.data(), qh.data(), tmp.data(), false);
                        scatter(gk, b, h, tmp);
                      }
                    }
                  }
                });
}

template <class T>
Var l2_normalize_rows(Tape<T>& t, Var x, T eps) {
  const auto& X = t.value(x);
  const std::size_t n = X.rows(), d = X.cols();
  Matrix<T> Y(n, d);
  auto norms = std::make_shared<std::vector<T>>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T nrm = std::sqrt(kernels::dot(d, X.data() + i * d, X.data() + i * d));
    const T den = std::max(nrm, eps);
    (*norms)[i] = nrm;
    for (std::size_t j = 0; j < d; ++j) Y(i, j) = X(i, j) / den;
  }
  return t.push(std::move(Y), t.requires_grad(x), [x, n, d, eps, norms](Tape<T>& tp, std::size_t self) {
    const auto& G = tp.upstream(self);
    const auto& X = tp.value(x);
    if (auto* gx = tp.grad_sink(x.id)) {
      for (std::size_t i = 0; i < n; ++i) {
        const T nrm = (*norms)[i];
        if (nrm <= eps) {
          for (std::size_t j = 0; j < d; ++j) (*gx)(i, j) += G(i, j) / eps;
          continue;
        }
        T yg = T(0);
        for (std::size_t j = 0; j < d; ++j) yg += X(i, j) * G(i, j);
        yg /= nrm;
        for (std::size_t j = 0; j < d; ++j) {
          (*gx)(i, j) += (G(i, j) - (X(i, j) / nrm) * yg) / nrm;
        }
      }
    }
  });
}

template <class T>
Var log_softmax_rows(Tape<T>& t, Var x) {
  const auto& X = t.value(x);
  const std::size_t n = X.rows(), c = X.cols();
  Matrix<T> Y(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    T mx = X(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, X(i, j));
    T total = T(0);
    for (std::size_t j = 0; j < c; ++j) total += std::exp(X(i, j) - mx);
    const T lse = mx + std::log(total);
    for (std::size_t j = 0; j < c; ++j) Y(i, j) = X(i, j) - lse;
  }
  const std::size_t self_id = t.size();
  return t.push(std::move(Y), t.requires_grad(x), [x, n, c, self_id](Tape<T>& tp, std::size_t self) {
    const auto& G = tp.upstream(self);
    const auto& Y = tp.value(Var{self_id});
    if (auto* gx = tp.grad_sink(x.id)) {
      for (std::size_t i = 0; i < n; ++i) {
        T gs = T(0);
        for (std::size_t j = 0; j < c; ++j) gs += G(i, j);
        for (std::size_t j = 0; j < c; ++j) (*gx)(i, j) += G(i, j) - std::exp(Y(i, j)) * gs;
      }
    }
  });
}

template <class T>
Var mean_nll(Tape<T>& t, Var logp, std::vector<std::size_t> labels, T floor,
             std::size_t* clamped) {
  const auto& L = t.value(logp);
  require<T>(labels.size() == L.rows() && !labels.empty(), "mean_nll",
             "need one label per row");
  const T log_floor = std::log(floor);
  const T inv_n = T(1) / T(labels.size());
  auto active = std::make_shared<std::vector<char>>(labels.size(), 1);
  T total = T(0);
  std::size_t n_clamped = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require<T>(labels[i] < L.cols(), "mean_nll", "label out of range");
    T lp = L(i, labels[i]);
    if (!(lp > log_floor)) {
      lp = log_floor;
      (*active)[i] = 0;
      ++n_clamped;
    }
    total -= lp;
  }
  if (clamped) *clamped = n_clamped;
  Matrix<T> out(1, 1, total * inv_n);
  return t.push(std::move(out), t.requires_grad(logp),
                [logp, inv_n, active, labels = std::move(labels)](Tape<T>& tp, std::size_t self) {
                  const T g = tp.upstream(self)[0];
                  if (auto* gl = tp.grad_sink(logp.id)) {
                    for (std::size_t i = 0; i < labels.size(); ++i) {
                      if ((*active)[i]) (*gl)(i, labels[i]) -= g * inv_n;
                    }
                  }
                });
}

template <class T>
Var sum_all(Tape<T>& t, Var a) {
  const auto& A = t.value(a);
  T total = T(0);
  for (std::size_t i = 0; i < A.size(); ++i) total += A[i];
  return t.push(Matrix<T>(1, 1, total), t.requires_grad(a), [a](Tape<T>& tp, std::size_t self) {
    const T g = tp.upstream(self)[0];
    if (auto* ga = tp.grad_sink(a.id)) {
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += g;
    }
  });
}

#define MMPT_INSTANTIATE(T)                                                                     \
  template Var matmul<T>(Tape<T>&, Var, Var);                                                  \
  template Var matmul_nt<T>(Tape<T>&, Var, Var);                                               \
  template Var add<T>(Tape<T>&, Var, Var);                                                     \
  template Var add_row<T>(Tape<T>&, Var, Var);                                                 \
  template Var scale<T>(Tape<T>&, Var, T);                                                     \
  template Var reshape<T>(Tape<T>&, Var, std::size_t, std::size_t);                            \
  template Var concat_rows<T>(Tape<T>&, std::span<const Var>);                                 \
  template Var gather_rows<T>(Tape<T>&, Var, std::vector<std::size_t>);                        \
  template Var scatter_add<T>(Tape<T>&, Var, Var, std::vector<std::size_t>);                   \
  template Var layer_norm<T>(Tape<T>&, Var, Var, Var, T);                                      \
  template Var gelu<T>(Tape<T>&, Var);                                                         \
  template Var attention<T>(Tape<T>&, Var, Var, Var, std::size_t, std::size_t);                \
  template Var l2_normalize_rows<T>(Tape<T>&, Var, T);                                         \
  template Var log_softmax_rows<T>(Tape<T>&, Var);                                             \
  template Var mean_nll<T>(Tape<T>&, Var, std::vector<std::size_t>, T, std::size_t*);          \
  template Var sum_all<T>(Tape<T>&, Var);                                                      \
  template void softmax_row_inplace<T>(std::span<T>);

MMPT_INSTANTIATE(float)
MMPT_INSTANTIATE(double)
#undef MMPT_INSTANTIATE

}  // namespace mmpt::ad
