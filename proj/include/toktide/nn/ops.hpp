// Copyright 2026 The toktide Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "toktide/nn/tape.hpp"

// Differentiable primitives. Every op checks shapes eagerly and records a
// backward closure only when some input requires a gradient.
namespace toktide::ops {

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

template <class T>
bool any_grad(Tape<T>& t, std::initializer_list<Var> vs) {
  for (Var v : vs)
    if (v.valid() && t.requires_grad(v)) return true;
  return false;
}

}  // namespace detail

template <class T>
Var matmul(Tape<T>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  detail::require(A.cols() == B.rows(), "matmul: shape mismatch " + shape_str(A.rows(), A.cols()) + " x " +
                                            shape_str(B.rows(), B.cols()));
  Mat<T> out = A * B;
  return t.push(std::move(out), detail::any_grad(t, {a, b}), [a, b](Tape<T>& t, const Mat<T>& g) {
    if (t.requires_grad(a)) t.grad(a).noalias() += g * t.value(b).transpose();
    if (t.requires_grad(b)) t.grad(b).noalias() += t.value(a).transpose() * g;
  });
}

// x W + b, with b broadcast over rows. W is Din x Dout, b is 1 x Dout.
template <class T>
Var linear(Tape<T>& t, Var x, Var w, Var b) {
  const auto& X = t.value(x);
  const auto& W = t.value(w);
  detail::require(X.cols() == W.rows(), "linear: input " + shape_str(X.rows(), X.cols()) + " does not match weight " +
                                            shape_str(W.rows(), W.cols()));
  Mat<T> out = X * W;
  if (b.valid()) {
    const auto& B = t.value(b);
    detail::require(B.rows() == 1 && B.cols() == W.cols(),
                    "linear: bias " + shape_str(B.rows(), B.cols()) + " does not match weight " +
                        shape_str(W.rows(), W.cols()));
    out.rowwise() += B.row(0);
  }
  return t.push(std::move(out), detail::any_grad(t, {x, w, b}), [x, w, b](Tape<T>& t, const Mat<T>& g) {
    if (t.requires_grad(x)) t.grad(x).noalias() += g * t.value(w).transpose();
    if (t.requires_grad(w)) t.grad(w).noalias() += t.value(x).transpose() * g;
    if (b.valid() && t.requires_grad(b)) t.grad(b) += g.colwise().sum();
  });
}

template <class T>
Var add(Tape<T>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  detail::require(A.rows() == B.rows() && A.cols() == B.cols(),
                  "add: shape mismatch " + shape_str(A.rows(), A.cols()) + " vs " + shape_str(B.rows(), B.cols()));
  return t.push(A + B, detail::any_grad(t, {a, b}), [a, b](Tape<T>& t, const Mat<T>& g) {
    if (t.requires_grad(a)) t.grad(a) += g;
    if (t.requires_grad(b)) t.grad(b) += g;
  });
}

template <class T>
Var sub(Tape<T>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  detail::require(A.rows() == B.rows() && A.cols() == B.cols(),
                  "sub: shape mismatch " + shape_str(A.rows(), A.cols()) + " vs " + shape_str(B.rows(), B.cols()));
  return t.push(A - B, detail::any_grad(t, {a, b}), [a, b](Tape<T>& t, const Mat<T>& g) {
    if (t.requires_grad(a)) t.grad(a) += g;
    if (t.requires_grad(b)) t.grad(b) -= g;
  });
}

template <class T>
Var scale(Tape<T>& t, Var a, T s) {
  return t.push(t.value(a) * s, t.requires_grad(a), [a, s](Tape<T>& t, const Mat<T>& g) { t.grad(a) += g * s; });
}

// Adds a 1 x D row (e.g. a positional or bias row) to every row of x.
template <class T>
Var add_row(Tape<T>& t, Var x, Var row) {
  const auto& X = t.value(x);
  const auto& R = t.value(row);
  detail::require(R.rows() == 1 && R.cols() == X.cols(), "add_row: shape mismatch");
  Mat<T> out = X;
  out.rowwise() += R.row(0);
  return t.push(std::move(out), detail::any_grad(t, {x, row}), [x, row](Tape<T>& t, const Mat<T>& g) {
    if (t.requires_grad(x)) t.grad(x) += g;
    if (t.requires_grad(row)) t.grad(row) += g.colwise().sum();
  });
}

// tanh approximation of GELU.
template <class T>
Var gelu(Tape<T>& t, Var x) {
  const auto& X = t.value(x);
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = T(0.044715);
  Mat<T> out(X.rows(), X.cols());
  for (long i = 0; i < X.size(); ++i) {
    const T v = X.data()[i];
    out.data()[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v)));
  }
  return t.push(std::move(out), t.requires_grad(x), [x](Tape<T>& t, const Mat<T>& g) {
    const auto& X = t.value(x);
    auto& gx = t.grad(x);
    for (long i = 0; i < X.size(); ++i) {
      const T v = X.data()[i];
      const T u = c * (v + a * v * v * v);
      const T th = std::tanh(u);
      const T du = c * (T(1) + T(3) * a * v * v);
      gx.data()[i] += g.data()[i] * (T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * du);
    }
  });
}

template <class T>
Var sigmoid(Tape<T>& t, Var x) {
  auto y = std::make_shared<Mat<T>>(t.value(x).unaryExpr([](T v) {
    return v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  }));
  Mat<T> out = *y;
  return t.push(std::move(out), t.requires_grad(x), [x, y](Tape<T>& t, const Mat<T>& g) {
    t.grad(x).array() += g.array() * y->array() * (T(1) - y->array());
  });
}

// Row-wise layer normalization; gamma/beta are optional 1 x D rows.
template <class T>
Var layer_norm(Tape<T>& t, Var x, Var gamma, Var beta, T eps = T(1e-5)) {
  const auto& X = t.value(x);
  const long n = X.rows(), d = X.cols();
  auto xhat = std::make_shared<Mat<T>>(n, d);
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n));
  for (long r = 0; r < n; ++r) {
    const T mean = X.row(r).mean();
    const T var = (X.row(r).array() - mean).square().mean();
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(r)] = is;
    xhat->row(r) = (X.row(r).array() - mean) * is;
  }
  Mat<T> out = *xhat;
  if (gamma.valid()) {
    detail::require(t.value(gamma).cols() == d, "layer_norm: gamma width mismatch");
    out.array().rowwise() *= t.value(gamma).row(0).array();
  }
  if (beta.valid()) out.rowwise() += t.value(beta).row(0);
  return t.push(std::move(out), detail::any_grad(t, {x, gamma, beta}),
                [x, gamma, beta, xhat, inv_std](Tape<T>& t, const Mat<T>& g) {
                  const long n = g.rows(), d = g.cols();
                  if (gamma.valid() && t.requires_grad(gamma))
                    t.grad(gamma) += (g.array() * xhat->array()).colwise().sum().matrix();
                  if (beta.valid() && t.requires_grad(beta)) t.grad(beta) += g.colwise().sum();
                  if (!t.requires_grad(x)) return;
                  Mat<T> dxhat = g;
                  if (gamma.valid()) dxhat.array().rowwise() *= t.value(gamma).row(0).array();
                  auto& gx = t.grad(x);
                  for (long r = 0; r < n; ++r) {
                    const T m1 = dxhat.row(r).mean();
                    const T m2 = (dxhat.row(r).array() * xhat->row(r).array()).mean();
                    gx.row(r).array() += (*inv_std)[static_cast<std::size_t>(r)] *
                                         (dxhat.row(r).array() - m1 - xhat->row(r).array() * m2);
                  }
                  (void)d;
                });
}

// Scaled dot-product attention over `heads` column groups. q is Tq x D,
// k and v are Tk x D. With causal=true, query i may only see keys j <= i.
template <class T>
Var attention(Tape<T>& t, Var q, Var k, Var v, int heads, bool causal) {
  const auto& Q = t.value(q);
  const auto& K = t.value(k);
  const auto& V = t.value(v);
  const long d = Q.cols();
  if (heads <= 0 || d % heads != 0)
    throw ShapeError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  detail::require(K.cols() == d && V.cols() == d && K.rows() == V.rows(), "attention: q/k/v shape mismatch");
  if (causal) detail::require(Q.rows() == K.rows(), "attention: causal mask requires square scores");
  const long tq = Q.rows(), tk = K.rows(), dh = d / heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));
  auto probs = std::make_shared<std::vector<Mat<T>>>(static_cast<std::size_t>(heads));
  Mat<T> out(tq, d);
  for (int h = 0; h < heads; ++h) {
    Mat<T> s = (Q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose()) * sc;
    if (causal) {
      for (long i = 0; i < tq; ++i)
        for (long j = i + 1; j < tk; ++j) s(i, j) = -std::numeric_limits<T>::infinity();
    }
    Mat<T> p = softmax_rows(s);
    out.middleCols(h * dh, dh).noalias() = p * V.middleCols(h * dh, dh);
    (*probs)[static_cast<std::size_t>(h)] = std::move(p);
  }
  return t.push(std::move(out), detail::any_grad(t, {q, k, v}),
                [q, k, v, heads, dh, sc, probs](Tape<T>& t, const Mat<T>& g) {
                  const auto& Q = t.value(q);
                  const auto& K = t.value(k);
                  const auto& V = t.value(v);
                  for (int h = 0; h < heads; ++h) {
                    const Mat<T>& p = (*probs)[static_cast<std::size_t>(h)];
                    const auto go = g.middleCols(h * dh, dh);
                    if (t.requires_grad(v)) t.grad(v).middleCols(h * dh, dh).noalias() += p.transpose() * go;
                    if (!t.requires_grad(q) && !t.requires_grad(k)) continue;
                    Mat<T> dp = go * V.middleCols(h * dh, dh).transpose();
                    Mat<T> ds = p.cwiseProduct(dp);
                    for (long r = 0; r < ds.rows(); ++r) {
                      const T rs = ds.row(r).sum();
                      ds.row(r) -= p.row(r) * rs;
                    }
                    ds *= sc;
                    if (t.requires_grad(q)) t.grad(q).middleCols(h * dh, dh).noalias() += ds * K.middleCols(h * dh, dh);
                    if (t.requires_grad(k))
                      t.grad(k).middleCols(h * dh, dh).noalias() += ds.transpose() * Q.middleCols(h * dh, dh);
                  }
                });
}

inline long conv_out_len(long len, long kernel, long stride, long pad) {
  return (len + 2 * pad - kernel) / stride + 1;
}

// 1-D convolution over rows of x (T x Din). The kernel parameter is stored as
// (kernel*Din) x Dout, row index = tap*Din + input channel.
template <class T>
Var conv1d(Tape<T>& t, Var x, Var w, Var b, long kernel, long stride, long pad = 0) {
  const auto& X = t.value(x);
  const auto& W = t.value(w);
  const long len = X.rows(), din = X.cols();
  if (stride < 1 || kernel < 1) throw ShapeError("conv1d: kernel and stride must be positive");
  if (len + 2 * pad < kernel)
    throw ShapeError("conv1d: sequence length " + std::to_string(len) + " shorter than kernel " + std::to_string(kernel));
  detail::require(W.rows() == kernel * din, "conv1d: kernel " + shape_str(W.rows(), W.cols()) +
                                                " does not match input " + shape_str(len, din) + " with k=" +
                                                std::to_string(kernel));
  const long tout = conv_out_len(len, kernel, stride, pad);
  auto cols = std::make_shared<Mat<T>>(Mat<T>::Zero(tout, kernel * din));
  for (long o = 0; o < tout; ++o) {
    for (long j = 0; j < kernel; ++j) {
      const long src = o * stride + j - pad;
      if (src >= 0 && src < len) cols->block(o, j * din, 1, din) = X.row(src);
    }
  }
  Mat<T> out = (*cols) * W;
  if (b.valid()) out.rowwise() += t.value(b).row(0);
  return t.push(std::move(out), detail::any_grad(t, {x, w, b}),
                [x, w, b, cols, kernel, stride, pad, len, din](Tape<T>& t, const Mat<T>& g) {
                  if (t.requires_grad(w)) t.grad(w).noalias() += cols->transpose() * g;
                  if (b.valid() && t.requires_grad(b)) t.grad(b) += g.colwise().sum();
                  if (!t.requires_grad(x)) return;
                  Mat<T> dcols = g * t.value(w).transpose();
                  auto& gx = t.grad(x);
                  for (long o = 0; o < dcols.rows(); ++o) {
                    for (long j = 0; j < kernel; ++j) {
                      const long src = o * stride + j - pad;
                      if (src >= 0 && src < len) gx.row(src) += dcols.block(o, j * din, 1, din);
                    }
                  }
                });
}

template <class T>
Var concat_rows(Tape<T>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  detail::require(A.cols() == B.cols(), "concat_rows: width mismatch " + shape_str(A.rows(), A.cols()) + " vs " +
                                            shape_str(B.rows(), B.cols()));
  Mat<T> out(A.rows() + B.rows(), A.cols());
  out.topRows(A.rows()) = A;
  out.bottomRows(B.rows()) = B;
  const long na = A.rows(), nb = B.rows();
  return t.push(std::move(out), detail::any_grad(t, {a, b}), [a, b, na, nb](Tape<T>& t, const Mat<T>& g) {
    if (t.requires_grad(a)) t.grad(a) += g.topRows(na);
    if (t.requires_grad(b)) t.grad(b) += g.bottomRows(nb);
  });
}

template <class T>
Var slice_rows(Tape<T>& t, Var x, long start, long count) {
  const auto& X = t.value(x);
  detail::require(start >= 0 && count >= 0 && start + count <= X.rows(), "slice_rows: range out of bounds");
  return t.push(X.middleRows(start, count), t.requires_grad(x), [x, start, count](Tape<T>& t, const Mat<T>& g) {
    t.grad(x).middleRows(start, count) += g;
  });
}

template <class T>
Var mean_rows(Tape<T>& t, Var x) {
  const auto& X = t.value(x);
  const long n = X.rows();
  detail::require(n > 0, "mean_rows: empty input");
  return t.push(X.colwise().mean(), t.requires_grad(x), [x, n](Tape<T>& t, const Mat<T>& g) {
    t.grad(x).rowwise() += g.row(0) / static_cast<T>(n);
  });
}

// Row lookup into an embedding table.
template <class T>
Var embedding(Tape<T>& t, Var table, const std::vector<int>& ids) {
  const auto& E = t.value(table);
  Mat<T> out(static_cast<long>(ids.size()), E.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= E.rows())
      throw ShapeError("embedding: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(E.rows()));
    out.row(static_cast<long>(i)) = E.row(ids[i]);
  }
  return t.push(std::move(out), t.requires_grad(table), [table, ids](Tape<T>& t, const Mat<T>& g) {
    auto& ge = t.grad(table);
    for (std::size_t i = 0; i < ids.size(); ++i) ge.row(ids[i]) += g.row(static_cast<long>(i));
  });
}

// Forward value is `quantized`; backward copies the upstream gradient to x
// unchanged (straight-through estimator).
template <class T>
Var straight_through(Tape<T>& t, Var x, Mat<T> quantized) {
  const auto& X = t.value(x);
  detail::require(X.rows() == quantized.rows() && X.cols() == quantized.cols(), "straight_through: shape mismatch");
  return t.push(std::move(quantized), t.requires_grad(x), [x](Tape<T>& t, const Mat<T>& g) { t.grad(x) += g; });
}

// Mean over rows of -log softmax(logits)[target]. Returns a 1x1 node.
template <class T>
Var cross_entropy(Tape<T>& t, Var logits, const std::vector<int>& targets) {
  const auto& L = t.value(logits);
  detail::require(static_cast<long>(targets.size()) == L.rows(), "cross_entropy: target count mismatch");
  if (targets.empty()) throw ShapeError("cross_entropy: no targets");
  auto probs = std::make_shared<Mat<T>>(softmax_rows<T>(L));
  T loss = 0;
  for (long r = 0; r < L.rows(); ++r) {
    const int y = targets[static_cast<std::size_t>(r)];
    detail::require(y >= 0 && y < L.cols(), "cross_entropy: target out of range");
    const auto lp = log_softmax(L.row(r).data(), L.cols());
    loss -= lp[static_cast<std::size_t>(y)];
  }
  const T n = static_cast<T>(L.rows());
  Mat<T> out(1, 1);
  out(0, 0) = loss / n;
  return t.push(std::move(out), t.requires_grad(logits), [logits, targets, probs, n](Tape<T>& t, const Mat<T>& g) {
    Mat<T> d = *probs;
    for (long r = 0; r < d.rows(); ++r) d(r, targets[static_cast<std::size_t>(r)]) -= T(1);
    t.grad(logits) += d * (g(0, 0) / n);
  });
}

inline constexpr double kProbClamp = 1e-7;

// Summed binary cross-entropy over all entries of probs (N x S) against 0/1
// labels. Probabilities are clamped to [1e-7, 1-1e-7] before the logs.
template <class T>
Var binary_cross_entropy(Tape<T>& t, Var probs, const Mat<T>& labels) {
  const auto& P = t.value(probs);
  detail::require(P.rows() == labels.rows() && P.cols() == labels.cols(), "binary_cross_entropy: shape mismatch");
  const T lo = T(kProbClamp), hi = T(1) - T(kProbClamp);
  T loss = 0;
  for (long i = 0; i < P.size(); ++i) {
    const T p = std::clamp(P.data()[i], lo, hi);
    const T l = labels.data()[i];
    loss -= l * std::log(p) + (T(1) - l) * std::log(T(1) - p);
  }
  Mat<T> out(1, 1);
  out(0, 0) = loss;
  return t.push(std::move(out), t.requires_grad(probs), [probs, labels, lo, hi](Tape<T>& t, const Mat<T>& g) {
    const auto& P = t.value(probs);
    auto& gp = t.grad(probs);
    for (long i = 0; i < P.size(); ++i) {
      const T raw = P.data()[i];
      if (raw < lo || raw > hi) continue;
      const T l = labels.data()[i];
      gp.data()[i] += g(0, 0) * (-l / raw + (T(1) - l) / (T(1) - raw));
    }
  });
}

// The same summed loss taken from logits: max(z,0) - l*z + log1p(exp(-|z|)).
// No clamping, so saturated wrong outputs keep gradient sigmoid(z) - l.
template <class T>
Var bce_with_logits(Tape<T>& t, Var logits, const Mat<T>& labels) {
  const auto& Z = t.value(logits);
  detail::require(Z.rows() == labels.rows() && Z.cols() == labels.cols(), "bce_with_logits: shape mismatch");
  T loss = 0;
  for (long i = 0; i < Z.size(); ++i) {
    const T z = Z.data()[i];
    loss += std::max(z, T(0)) - labels.data()[i] * z + std::log1p(std::exp(-std::abs(z)));
  }
  Mat<T> out(1, 1);
  out(0, 0) = loss;
  return t.push(std::move(out), t.requires_grad(logits), [logits, labels](Tape<T>& t, const Mat<T>& g) {
    const auto& Z = t.value(logits);
    auto& gz = t.grad(logits);
    for (long i = 0; i < Z.size(); ++i) {
      const T z = Z.data()[i];
      const T sig = z >= 0 ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
      gz.data()[i] += g(0, 0) * (sig - labels.data()[i]);
    }
  });
}

// Mean squared error against a constant target.
template <class T>
Var mse(Tape<T>& t, Var x, const Mat<T>& target) {
  const auto& X = t.value(x);
  detail::require(X.rows() == target.rows() && X.cols() == target.cols(),
                  "mse: shape mismatch " + shape_str(X.rows(), X.cols()) + " vs " +
                      shape_str(target.rows(), target.cols()));
  const T n = static_cast<T>(X.size());
  Mat<T> out(1, 1);
  out(0, 0) = (X - target).squaredNorm() / n;
  return t.push(std::move(out), t.requires_grad(x), [x, target, n](Tape<T>& t, const Mat<T>& g) {
    t.grad(x) += (t.value(x) - target) * (T(2) * g(0, 0) / n);
  });
}

}  // namespace toktide::ops
