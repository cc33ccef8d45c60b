#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "spslu/errors.hpp"
#include "spslu/prng.hpp"
#include "spslu/tensor.hpp"

// Differentiable primitives over 2-D tape values. Every op reads its inputs
// from the tape, computes the output eagerly and records a closure that
// accumulates gradients into the inputs that need them.

namespace spslu {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using CMap = Eigen::Map<const RowMat<T>>;
template <class T>
using MMap = Eigen::Map<RowMat<T>>;

template <class T>
CMap<T> cmap(std::span<const T> v, std::size_t r, std::size_t c) {
  return CMap<T>(v.data(), static_cast<Eigen::Index>(r),
                 static_cast<Eigen::Index>(c));
}

template <class T>
MMap<T> mmap(std::span<T> v, std::size_t r, std::size_t c) {
  return MMap<T>(v.data(), static_cast<Eigen::Index>(r),
                 static_cast<Eigen::Index>(c));
}

template <class T>
void require_same_tape(Var<T> a, Var<T> b, const char* op) {
  if (a.tape != b.tape) {
    throw std::logic_error(std::string(op) + ": operands on different tapes");
  }
}

template <class T>
void require_same_shape(Var<T> a, Var<T> b, const char* op) {
  require_same_tape(a, b, op);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

}  // namespace detail

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::require_same_tape(a, b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions differ (" + std::to_string(k) +
                     " vs " + std::to_string(b.rows()) + ")");
  }
  std::vector<T> out(m * n);
  detail::mmap<T>(out, m, n).noalias() =
      detail::cmap(a.value(), m, k) * detail::cmap(b.value(), k, n);
  const int ia = a.id, ib = b.id;
  return a.tape->push(
      "matmul", m, n, std::move(out), {ia, ib},
      [ia, ib, m, k, n](Tape<T>& t, int self) {
        auto dc = detail::cmap<T>(t.grad(self), m, n);
        if (t.requires_grad(ia)) {
          detail::mmap(t.grad(ia), m, k).noalias() +=
              dc * detail::cmap(t.value(ib), k, n).transpose();
        }
        if (t.requires_grad(ib)) {
          detail::mmap(t.grad(ib), k, n).noalias() +=
              detail::cmap(t.value(ia), m, k).transpose() * dc;
        }
      });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "add");
  auto av = a.value(), bv = b.value();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const int ia = a.id, ib = b.id;
  return a.tape->push("add", a.rows(), a.cols(), std::move(out), {ia, ib},
                      [ia, ib](Tape<T>& t, int self) {
                        auto g = t.grad(self);
                        for (int in : {ia, ib}) {
                          if (!t.requires_grad(in)) continue;
                          auto gi = t.grad(in);
                          for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                        }
                      });
}

/// x[R x C] + bias[1 x C] broadcast over rows.
template <class T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  detail::require_same_tape(x, bias, "add_bias");
  const std::size_t r = x.rows(), c = x.cols();
  if (bias.rows() != 1 || bias.cols() != c) {
    throw ShapeError("add_bias: bias must be 1 x " + std::to_string(c));
  }
  auto xv = x.value(), bv = bias.value();
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] + bv[j];
  const int ix = x.id, ibias = bias.id;
  return x.tape->push("add_bias", r, c, std::move(out), {ix, ibias},
                      [ix, ibias, r, c](Tape<T>& t, int self) {
                        auto g = t.grad(self);
                        if (t.requires_grad(ix)) {
                          auto gx = t.grad(ix);
                          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                        }
                        if (t.requires_grad(ibias)) {
                          auto gb = t.grad(ibias);
                          for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
                        }
                      });
}

/// Elementwise product.
template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "mul");
  auto av = a.value(), bv = b.value();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const int ia = a.id, ib = b.id;
  return a.tape->push("mul", a.rows(), a.cols(), std::move(out), {ia, ib},
                      [ia, ib](Tape<T>& t, int self) {
                        auto g = t.grad(self);
                        if (t.requires_grad(ia)) {
                          auto gi = t.grad(ia);
                          auto bv = t.value(ib);
                          for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * bv[i];
                        }
                        if (t.requires_grad(ib)) {
                          auto gi = t.grad(ib);
                          auto av = t.value(ia);
                          for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * av[i];
                        }
                      });
}

template <class T>
Var<T> scale(Var<T> x, T s) {
  auto xv = x.value();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * s;
  const int ix = x.id;
  return x.tape->push("scale", x.rows(), x.cols(), std::move(out), {ix},
                      [ix, s](Tape<T>& t, int self) {
                        auto g = t.grad(self);
                        auto gx = t.grad(ix);
                        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s;
                      });
}

/// Sum of all elements, as a 1 x 1 node.
template <class T>
Var<T> sum(Var<T> x) {
  T total = 0;
  for (T v : x.value()) total += v;
  const int ix = x.id;
  return x.tape->push("sum", 1, 1, {total}, {ix}, [ix](Tape<T>& t, int self) {
    const T g = t.grad(self)[0];
    for (T& gx : t.grad(ix)) gx += g;
  });
}

template <class T>
Var<T> sigmoid(Var<T> x) {
  auto xv = x.value();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = xv[i];
    // Split on sign so exp never overflows.
    out[i] = v >= 0 ? T(1) / (T(1) + std::exp(-v))
                    : std::exp(v) / (T(1) + std::exp(v));
  }
  const int ix = x.id;
  return x.tape->push("sigmoid", x.rows(), x.cols(), std::move(out), {ix},
                      [ix](Tape<T>& t, int self) {
                        auto g = t.grad(self);
                        auto y = t.value(self);
                        auto gx = t.grad(ix);
                        for (std::size_t i = 0; i < g.size(); ++i)
                          gx[i] += g[i] * y[i] * (T(1) - y[i]);
                      });
}

template <class T>
Var<T> tanh(Var<T> x) {
  auto xv = x.value();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xv[i]);
  const int ix = x.id;
  return x.tape->push("tanh", x.rows(), x.cols(), std::move(out), {ix},
                      [ix](Tape<T>& t, int self) {
                        auto g = t.grad(self);
                        auto y = t.value(self);
                        auto gx = t.grad(ix);
                        for (std::size_t i = 0; i < g.size(); ++i)
                          gx[i] += g[i] * (T(1) - y[i] * y[i]);
                      });
}

namespace detail {

// Row softmax with max subtraction. `allowed`, when non-empty, marks the
// entries that take part; the rest get a logit of -1e9.
template <class T>
std::vector<T> softmax_rows_value(std::span<const T> x, std::size_t r,
                                  std::size_t c,
                                  const std::vector<std::uint8_t>& allowed) {
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = x.data() + i * c;
    T* o = out.data() + i * c;
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = (allowed.empty() || allowed[i * c + j]) ? row[j] : T(-1e9);
    }
    const T mx = *std::max_element(o, o + c);
    T total = 0;
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = std::exp(o[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < c; ++j) o[j] /= total;
  }
  return out;
}

template <class T>
void softmax_rows_backward(Tape<T>& t, int self, int ix, std::size_t r,
                           std::size_t c) {
  auto g = t.grad(self);
  auto y = t.value(self);
  auto gx = t.grad(ix);
  for (std::size_t i = 0; i < r; ++i) {
    T dot = 0;
    for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
    for (std::size_t j = 0; j < c; ++j)
      gx[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
  }
}

}  // namespace detail

/// Softmax applied to every row independently.
template <class T>
Var<T> softmax_rows(Var<T> x) {
  const std::size_t r = x.rows(), c = x.cols();
  if (c == 0) throw ShapeError("softmax: empty row");
  if (!all_finite(x.value())) throw NumericError("softmax: non-finite input");
  auto out = detail::softmax_rows_value<T>(x.value(), r, c, {});
  const int ix = x.id;
  return x.tape->push("softmax", r, c, std::move(out), {ix},
                      [ix, r, c](Tape<T>& t, int self) {
                        detail::softmax_rows_backward(t, self, ix, r, c);
                      });
}

/// Row softmax where entries with allowed == 0 receive logit -1e9.
template <class T>
Var<T> masked_softmax_rows(Var<T> x, std::vector<std::uint8_t> allowed) {
  const std::size_t r = x.rows(), c = x.cols();
  if (allowed.size() != r * c) throw ShapeError("masked_softmax: mask shape");
  if (c == 0) throw ShapeError("masked_softmax: empty row");
  auto out = detail::softmax_rows_value<T>(x.value(), r, c, allowed);
  const int ix = x.id;
  return x.tape->push("masked_softmax", r, c, std::move(out), {ix},
                      [ix, r, c](Tape<T>& t, int self) {
                        detail::softmax_rows_backward(t, self, ix, r, c);
                      });
}

/// Probability floor used by cross_entropy.
template <class T>
constexpr T kProbFloor = T(1e-12);

/// Sum over rows of -log(max(probs[r][gold[r]], 1e-12)). Rows with a negative
/// gold index are skipped (padding or an unpredictable label).
template <class T>
Var<T> cross_entropy(Var<T> probs, const std::vector<int>& gold) {
  const std::size_t r = probs.rows(), c = probs.cols();
  if (gold.size() != r) throw ShapeError("cross_entropy: one gold label per row");
  auto p = probs.value();
  T loss = 0;
  for (std::size_t i = 0; i < r; ++i) {
    if (gold[i] < 0) continue;
    if (static_cast<std::size_t>(gold[i]) >= c) {
      throw ShapeError("cross_entropy: gold index " + std::to_string(gold[i]) +
                       " out of range for " + std::to_string(c) + " classes");
    }
    loss -= std::log(std::max(p[i * c + gold[i]], kProbFloor<T>));
  }
  const int ip = probs.id;
  return probs.tape->push(
      "cross_entropy", 1, 1, {loss}, {ip}, [ip, gold, c](Tape<T>& t, int self) {
        const T g = t.grad(self)[0];
        auto pv = t.value(ip);
        auto gp = t.grad(ip);
        for (std::size_t i = 0; i < gold.size(); ++i) {
          if (gold[i] < 0) continue;
          const std::size_t k = i * c + gold[i];
          if (pv[k] >= kProbFloor<T>) gp[k] -= g / pv[k];
        }
      });
}

/// Column-wise concatenation of equal-height blocks.
template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::vector<std::size_t> widths;
  std::vector<int> ids;
  std::size_t c = 0;
  for (const auto& p : parts) {
    detail::require_same_tape(parts[0], p, "concat_cols");
    if (p.rows() != r) throw ShapeError("concat_cols: row counts differ");
    widths.push_back(p.cols());
    ids.push_back(p.id);
    c += p.cols();
  }
  std::vector<T> out(r * c);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto v = parts[k].value();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(v.data() + i * widths[k], widths[k], out.data() + i * c + off);
    off += widths[k];
  }
  return parts[0].tape->push(
      "concat_cols", r, c, std::move(out), ids,
      [ids, widths, r, c](Tape<T>& t, int self) {
        auto g = t.grad(self);
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (t.requires_grad(ids[k])) {
            auto gi = t.grad(ids[k]);
            for (std::size_t i = 0; i < r; ++i)
              for (std::size_t j = 0; j < widths[k]; ++j)
                gi[i * widths[k] + j] += g[i * c + off + j];
          }
          off += widths[k];
        }
      });
}

/// Row-wise concatenation of equal-width blocks.
template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::vector<std::size_t> heights;
  std::vector<int> ids;
  std::vector<T> out;
  for (const auto& p : parts) {
    detail::require_same_tape(parts[0], p, "concat_rows");
    if (p.cols() != c) throw ShapeError("concat_rows: column counts differ");
    heights.push_back(p.rows());
    ids.push_back(p.id);
    auto v = p.value();
    out.insert(out.end(), v.begin(), v.end());
  }
  const std::size_t r = out.size() / std::max<std::size_t>(c, 1);
  return parts[0].tape->push(
      "concat_rows", r, c, std::move(out), ids,
      [ids, heights, c](Tape<T>& t, int self) {
        auto g = t.grad(self);
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          const std::size_t n = heights[k] * c;
          if (t.requires_grad(ids[k])) {
            auto gi = t.grad(ids[k]);
            for (std::size_t i = 0; i < n; ++i) gi[i] += g[off + i];
          }
          off += n;
        }
      });
}

/// Columns [begin, end) of x.
template <class T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t end) {
  const std::size_t r = x.rows(), c = x.cols();
  if (begin >= end || end > c) throw ShapeError("slice_cols: bad range");
  const std::size_t w = end - begin;
  auto v = x.value();
  std::vector<T> out(r * w);
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(v.data() + i * c + begin, w, out.data() + i * w);
  const int ix = x.id;
  return x.tape->push("slice_cols", r, w, std::move(out), {ix},
                      [ix, r, c, w, begin](Tape<T>& t, int self) {
                        auto g = t.grad(self);
                        auto gx = t.grad(ix);
                        for (std::size_t i = 0; i < r; ++i)
                          for (std::size_t j = 0; j < w; ++j)
                            gx[i * c + begin + j] += g[i * w + j];
                      });
}

/// out[i] = x[index[i]]. Repeated indices accumulate in the backward pass.
template <class T>
Var<T> gather_rows(Var<T> x, std::vector<std::size_t> index) {
  const std::size_t r = x.rows(), c = x.cols();
  auto v = x.value();
  std::vector<T> out(index.size() * c);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= r) {
      throw ShapeError("gather_rows: index " + std::to_string(index[i]) +
                       " out of range for " + std::to_string(r) + " rows");
    }
    std::copy_n(v.data() + index[i] * c, c, out.data() + i * c);
  }
  const int ix = x.id;
  const std::size_t n = index.size();
  return x.tape->push("gather_rows", n, c, std::move(out), {ix},
                      [ix, c, index = std::move(index)](Tape<T>& t, int self) {
                        auto g = t.grad(self);
                        auto gx = t.grad(ix);
                        for (std::size_t i = 0; i < index.size(); ++i)
                          for (std::size_t j = 0; j < c; ++j)
                            gx[index[i] * c + j] += g[i * c + j];
                      });
}

/// Rows of an embedding table for the given token ids.
template <class T>
Var<T> embedding_lookup(Var<T> table, const std::vector<int>& ids) {
  std::vector<std::size_t> index;
  index.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= table.rows()) {
      throw ShapeError("embedding_lookup: id " + std::to_string(id) +
                       " outside vocabulary of " +
                       std::to_string(table.rows()));
    }
    index.push_back(static_cast<std::size_t>(id));
  }
  return gather_rows(table, std::move(index));
}

/// Inverted dropout. Identity (same node) when not training or p == 0.
template <class T>
Var<T> dropout(Var<T> x, double p, Prng& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ShapeError("dropout: probability must be in [0, 1)");
  }
  if (!training || p == 0.0) return x;
  const T keep_scale = T(1) / T(1.0 - p);
  auto v = x.value();
  std::vector<T> mask(v.size());
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    mask[i] = rng.uniform() >= p ? keep_scale : T(0);
    out[i] = v[i] * mask[i];
  }
  const int ix = x.id;
  return x.tape->push("dropout", x.rows(), x.cols(), std::move(out), {ix},
                      [ix, mask = std::move(mask)](Tape<T>& t, int self) {
                        auto g = t.grad(self);
                        auto gx = t.grad(ix);
                        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
                      });
}

/// Row r of the result is a[r] where keep[r] is set, else b[r].
template <class T>
Var<T> where_rows(const std::vector<std::uint8_t>& keep, Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "where_rows");
  const std::size_t r = a.rows(), c = a.cols();
  if (keep.size() != r) throw ShapeError("where_rows: one flag per row");
  auto av = a.value(), bv = b.value();
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n((keep[i] ? av : bv).data() + i * c, c, out.data() + i * c);
  const int ia = a.id, ib = b.id;
  return a.tape->push("where_rows", r, c, std::move(out), {ia, ib},
                      [ia, ib, keep, c](Tape<T>& t, int self) {
                        auto g = t.grad(self);
                        for (std::size_t i = 0; i < keep.size(); ++i) {
                          const int dst = keep[i] ? ia : ib;
                          if (!t.requires_grad(dst)) continue;
                          auto gd = t.grad(dst);
                          for (std::size_t j = 0; j < c; ++j) gd[i * c + j] += g[i * c + j];
                        }
                      });
}

/// Per-block a_n * b_n^T for blocks of `block` consecutive rows:
/// [(N*block) x d] , [(N*block) x d] -> [(N*block) x block].
template <class T>
Var<T> block_matmul_nt(Var<T> a, Var<T> b, std::size_t block) {
  detail::require_same_shape(a, b, "block_matmul_nt");
  const std::size_t r = a.rows(), d = a.cols();
  if (block == 0 || r % block != 0) throw ShapeError("block_matmul_nt: block size");
  const std::size_t nblocks = r / block;
  std::vector<T> out(r * block);
  auto av = a.value(), bv = b.value();
  for (std::size_t n = 0; n < nblocks; ++n) {
    detail::mmap<T>(std::span<T>(out).subspan(n * block * block), block, block)
        .noalias() = detail::cmap(av.subspan(n * block * d), block, d) *
                     detail::cmap(bv.subspan(n * block * d), block, d).transpose();
  }
  const int ia = a.id, ib = b.id;
  return a.tape->push(
      "block_matmul_nt", r, block, std::move(out), {ia, ib},
      [ia, ib, nblocks, block, d](Tape<T>& t, int self) {
        auto g = t.grad(self);
        auto av = t.value(ia), bv = t.value(ib);
        for (std::size_t n = 0; n < nblocks; ++n) {
          auto gn = detail::cmap<T>(g.subspan(n * block * block), block, block);
          if (t.requires_grad(ia)) {
            detail::mmap(t.grad(ia).subspan(n * block * d), block, d).noalias() +=
                gn * detail::cmap(bv.subspan(n * block * d), block, d);
          }
          if (t.requires_grad(ib)) {
            detail::mmap(t.grad(ib).subspan(n * block * d), block, d).noalias() +=
                gn.transpose() * detail::cmap(av.subspan(n * block * d), block, d);
          }
        }
      });
}

/// Per-block p_n * v_n: [(N*block) x block] , [(N*block) x d] -> [(N*block) x d].
template <class T>
Var<T> block_matmul(Var<T> p, Var<T> v, std::size_t block) {
  detail::require_same_tape(p, v, "block_matmul");
  const std::size_t r = p.rows(), d = v.cols();
  if (block == 0 || p.cols() != block || v.rows() != r || r % block != 0) {
    throw ShapeError("block_matmul: shape mismatch");
  }
  const std::size_t nblocks = r / block;
  std::vector<T> out(r * d);
  auto pv = p.value(), vv = v.value();
  for (std::size_t n = 0; n < nblocks; ++n) {
    detail::mmap<T>(std::span<T>(out).subspan(n * block * d), block, d)
        .noalias() = detail::cmap(pv.subspan(n * block * block), block, block) *
                     detail::cmap(vv.subspan(n * block * d), block, d);
  }
  const int ip = p.id, iv = v.id;
  return p.tape->push(
      "block_matmul", r, d, std::move(out), {ip, iv},
      [ip, iv, nblocks, block, d](Tape<T>& t, int self) {
        auto g = t.grad(self);
        auto pv = t.value(ip), vv = t.value(iv);
        for (std::size_t n = 0; n < nblocks; ++n) {
          auto gn = detail::cmap<T>(g.subspan(n * block * d), block, d);
          if (t.requires_grad(ip)) {
            detail::mmap(t.grad(ip).subspan(n * block * block), block, block)
                .noalias() += gn * detail::cmap(vv.subspan(n * block * d), block, d).transpose();
          }
          if (t.requires_grad(iv)) {
            detail::mmap(t.grad(iv).subspan(n * block * d), block, d).noalias() +=
                detail::cmap(pv.subspan(n * block * block), block, block).transpose() * gn;
          }
        }
      });
}

}  // namespace spslu
