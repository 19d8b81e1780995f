#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "looptwin/rng.hpp"

namespace looptwin {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 0) throw std::invalid_argument("tensor: negative dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

// One node of the computation graph. Leaves (parameters and inputs) keep
// their gradients across backward() calls; op outputs are re-zeroed by each
// backward pass.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> v;
  std::vector<T> g;
  bool requires_grad = false;
  bool from_op = false;
  std::string name;

  std::size_t numel() const { return v.size(); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  void zero_grad() { std::fill(g.begin(), g.end(), T(0)); }
};

template <typename T>
using Ref = std::shared_ptr<Tensor<T>>;

template <typename T>
Ref<T> make_tensor(Shape shape, bool requires_grad, std::string name = "") {
  auto t = std::make_shared<Tensor<T>>();
  t->shape = std::move(shape);
  t->v.assign(shape_numel(t->shape), T(0));
  t->requires_grad = requires_grad;
  if (requires_grad) t->g.assign(t->v.size(), T(0));
  t->name = std::move(name);
  return t;
}

template <typename T>
class Tape {
 public:
  Ref<T> leaf(Shape shape, bool requires_grad, std::string name = "") {
    return make_tensor<T>(std::move(shape), requires_grad, std::move(name));
  }

  // ---- elementwise ----

  Ref<T> add(const Ref<T>& a, const Ref<T>& b) {
    same_shape(a, b, "add");
    Ref<T> out = fresh(a->shape, a, b);
    for (std::size_t i = 0; i < out->numel(); ++i) out->v[i] = a->v[i] + b->v[i];
    record(out, [a, b, out]() {
      if (a->requires_grad)
        for (std::size_t i = 0; i < out->numel(); ++i) a->g[i] += out->g[i];
      if (b->requires_grad)
        for (std::size_t i = 0; i < out->numel(); ++i) b->g[i] += out->g[i];
    });
    return out;
  }

  Ref<T> sub(const Ref<T>& a, const Ref<T>& b) {
    same_shape(a, b, "sub");
    Ref<T> out = fresh(a->shape, a, b);
    for (std::size_t i = 0; i < out->numel(); ++i) out->v[i] = a->v[i] - b->v[i];
    record(out, [a, b, out]() {
      if (a->requires_grad)
        for (std::size_t i = 0; i < out->numel(); ++i) a->g[i] += out->g[i];
      if (b->requires_grad)
        for (std::size_t i = 0; i < out->numel(); ++i) b->g[i] -= out->g[i];
    });
    return out;
  }

  Ref<T> mul(const Ref<T>& a, const Ref<T>& b) {
    same_shape(a, b, "mul");
    Ref<T> out = fresh(a->shape, a, b);
    for (std::size_t i = 0; i < out->numel(); ++i) out->v[i] = a->v[i] * b->v[i];
    record(out, [a, b, out]() {
      if (a->requires_grad)
        for (std::size_t i = 0; i < out->numel(); ++i) a->g[i] += out->g[i] * b->v[i];
      if (b->requires_grad)
        for (std::size_t i = 0; i < out->numel(); ++i) b->g[i] += out->g[i] * a->v[i];
    });
    return out;
  }

  Ref<T> scale(const Ref<T>& a, double s) {
    Ref<T> out = fresh(a->shape, a);
    const T ts = static_cast<T>(s);
    for (std::size_t i = 0; i < out->numel(); ++i) out->v[i] = a->v[i] * ts;
    record(out, [a, out, ts]() {
      if (a->requires_grad)
        for (std::size_t i = 0; i < out->numel(); ++i) a->g[i] += out->g[i] * ts;
    });
    return out;
  }

  Ref<T> relu(const Ref<T>& a) { return leaky_relu(a, 0.0); }

  Ref<T> leaky_relu(const Ref<T>& a, double slope) {
    Ref<T> out = fresh(a->shape, a);
    const T ts = static_cast<T>(slope);
    for (std::size_t i = 0; i < out->numel(); ++i)
      out->v[i] = a->v[i] > T(0) ? a->v[i] : ts * a->v[i];
    record(out, [a, out, ts]() {
      if (!a->requires_grad) return;
      for (std::size_t i = 0; i < out->numel(); ++i)
        a->g[i] += out->g[i] * (a->v[i] > T(0) ? T(1) : ts);
    });
    return out;
  }

  // ---- shape ops ----

  Ref<T> reshape(const Ref<T>& a, Shape shape) {
    if (shape_numel(shape) != a->numel())
      throw std::invalid_argument("reshape: numel mismatch " + shape_str(a->shape) + " -> " +
                                  shape_str(shape));
    Ref<T> out = fresh(std::move(shape), a);
    out->v = a->v;
    record(out, [a, out]() {
      if (!a->requires_grad) return;
      for (std::size_t i = 0; i < out->numel(); ++i) a->g[i] += out->g[i];
    });
    return out;
  }

  Ref<T> transpose(const Ref<T>& a) {
    check(a->shape.size() == 2, "transpose", a);
    const int r = a->dim(0), c = a->dim(1);
    Ref<T> out = fresh({c, r}, a);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) out->v[static_cast<std::size_t>(j) * r + i] = a->v[static_cast<std::size_t>(i) * c + j];
    record(out, [a, out, r, c]() {
      if (!a->requires_grad) return;
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
          a->g[static_cast<std::size_t>(i) * c + j] += out->g[static_cast<std::size_t>(j) * r + i];
    });
    return out;
  }

  Ref<T> slice_cols(const Ref<T>& a, int c0, int c1) {
    check(a->shape.size() == 2, "slice_cols", a);
    const int r = a->dim(0), c = a->dim(1);
    if (c0 < 0 || c1 > c || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
    const int cw = c1 - c0;
    Ref<T> out = fresh({r, cw}, a);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < cw; ++j)
        out->v[static_cast<std::size_t>(i) * cw + j] = a->v[static_cast<std::size_t>(i) * c + c0 + j];
    record(out, [a, out, r, c, c0, cw]() {
      if (!a->requires_grad) return;
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < cw; ++j)
          a->g[static_cast<std::size_t>(i) * c + c0 + j] += out->g[static_cast<std::size_t>(i) * cw + j];
    });
    return out;
  }

  // Concatenates along the last axis; all leading axes must match.
  Ref<T> concat_last(const std::vector<Ref<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_last: no inputs");
    Shape lead = parts[0]->shape;
    lead.pop_back();
    std::size_t rows = shape_numel(lead);
    int total = 0;
    for (const auto& p : parts) {
      Shape pl = p->shape;
      int last = pl.back();
      pl.pop_back();
      if (pl != lead) throw std::invalid_argument("concat_last: leading shape mismatch");
      total += last;
    }
    Shape os = lead;
    os.push_back(total);
    bool rg = false;
    for (const auto& p : parts) rg = rg || p->requires_grad;
    Ref<T> out = make_out(std::move(os), rg);
    int off = 0;
    for (const auto& p : parts) {
      const int lastd = p->shape.back();
      for (std::size_t r = 0; r < rows; ++r)
        for (int j = 0; j < lastd; ++j)
          out->v[r * total + off + j] = p->v[r * lastd + j];
      off += lastd;
    }
    auto parts_copy = parts;
    record(out, [parts_copy, out, rows, total]() {
      int off2 = 0;
      for (const auto& p : parts_copy) {
        const int lastd = p->shape.back();
        if (p->requires_grad)
          for (std::size_t r = 0; r < rows; ++r)
            for (int j = 0; j < lastd; ++j)
              p->g[r * lastd + j] += out->g[r * total + off2 + j];
        off2 += lastd;
      }
    });
    return out;
  }

  // ---- linear algebra ----

  Ref<T> matmul(const Ref<T>& a, const Ref<T>& b) {
    check(a->shape.size() == 2 && b->shape.size() == 2, "matmul", a);
    const int m = a->dim(0), k = a->dim(1), n = b->dim(1);
    if (b->dim(0) != k)
      throw std::invalid_argument("matmul: shape mismatch " + shape_str(a->shape) + " x " +
                                  shape_str(b->shape));
    Ref<T> out = fresh({m, n}, a, b);
    gemm_nn(a->v.data(), b->v.data(), out->v.data(), m, k, n);
    record(out, [a, b, out, m, k, n]() {
      // dA = dOut Bᵀ ; dB = Aᵀ dOut
      if (a->requires_grad)
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            const T go = out->g[static_cast<std::size_t>(i) * n + j];
            if (go == T(0)) continue;
            for (int p = 0; p < k; ++p)
              a->g[static_cast<std::size_t>(i) * k + p] += go * b->v[static_cast<std::size_t>(p) * n + j];
          }
      if (b->requires_grad)
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            const T av = a->v[static_cast<std::size_t>(i) * k + p];
            if (av == T(0)) continue;
            for (int j = 0; j < n; ++j)
              b->g[static_cast<std::size_t>(p) * n + j] += av * out->g[static_cast<std::size_t>(i) * n + j];
          }
    });
    return out;
  }

  // Batched matmul over matching batch dims; trans_b multiplies by bᵀ.
  Ref<T> bmm(const Ref<T>& a, const Ref<T>& b, bool trans_b = false) {
    check(a->shape.size() == 3 && b->shape.size() == 3, "bmm", a);
    const int B = a->dim(0), m = a->dim(1), k = a->dim(2);
    const int bk = trans_b ? b->dim(2) : b->dim(1);
    const int n = trans_b ? b->dim(1) : b->dim(2);
    if (b->dim(0) != B || bk != k)
      throw std::invalid_argument("bmm: shape mismatch " + shape_str(a->shape) + " x " +
                                  shape_str(b->shape));
    Ref<T> out = fresh({B, m, n}, a, b);
    const std::size_t as = static_cast<std::size_t>(m) * k;
    const std::size_t bs = static_cast<std::size_t>(b->dim(1)) * b->dim(2);
    const std::size_t os = static_cast<std::size_t>(m) * n;
    for (int bb = 0; bb < B; ++bb) {
      if (!trans_b)
        gemm_nn(a->v.data() + bb * as, b->v.data() + bb * bs, out->v.data() + bb * os, m, k, n);
      else
        gemm_nt(a->v.data() + bb * as, b->v.data() + bb * bs, out->v.data() + bb * os, m, k, n);
    }
    record(out, [a, b, out, B, m, k, n, as, bs, os, trans_b]() {
      for (int bb = 0; bb < B; ++bb) {
        const T* av = a->v.data() + bb * as;
        const T* bv = b->v.data() + bb * bs;
        const T* og = out->g.data() + bb * os;
        if (a->requires_grad) {
          T* ag = a->g.data() + bb * as;
          // dA = dOut Bᵀ (no trans) or dOut B (trans)
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
              const T go = og[static_cast<std::size_t>(i) * n + j];
              if (go == T(0)) continue;
              for (int p = 0; p < k; ++p) {
                const T bval = trans_b ? bv[static_cast<std::size_t>(j) * k + p]
                                       : bv[static_cast<std::size_t>(p) * n + j];
                ag[static_cast<std::size_t>(i) * k + p] += go * bval;
              }
            }
        }
        if (b->requires_grad) {
          T* bg = b->g.data() + bb * bs;
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
              const T go = og[static_cast<std::size_t>(i) * n + j];
              if (go == T(0)) continue;
              for (int p = 0; p < k; ++p) {
                const T av2 = av[static_cast<std::size_t>(i) * k + p];
                if (trans_b)
                  bg[static_cast<std::size_t>(j) * k + p] += go * av2;
                else
                  bg[static_cast<std::size_t>(p) * n + j] += go * av2;
              }
            }
        }
      }
    });
    return out;
  }

  // Adds a length-C bias vector to every row of an R×C matrix (leading axes
  // collapse into rows).
  Ref<T> add_bias(const Ref<T>& a, const Ref<T>& bias) {
    const int c = a->shape.back();
    if (bias->shape.size() != 1 || bias->dim(0) != c)
      throw std::invalid_argument("add_bias: bias " + shape_str(bias->shape) + " vs " +
                                  shape_str(a->shape));
    const std::size_t rows = a->numel() / static_cast<std::size_t>(c);
    Ref<T> out = fresh(a->shape, a, bias);
    for (std::size_t r = 0; r < rows; ++r)
      for (int j = 0; j < c; ++j) out->v[r * c + j] = a->v[r * c + j] + bias->v[j];
    record(out, [a, bias, out, rows, c]() {
      if (a->requires_grad)
        for (std::size_t i = 0; i < out->numel(); ++i) a->g[i] += out->g[i];
      if (bias->requires_grad)
        for (std::size_t r = 0; r < rows; ++r)
          for (int j = 0; j < c; ++j) bias->g[j] += out->g[r * c + j];
    });
    return out;
  }

  // ---- softmax / attention ----

  // Softmax over the last axis. `mask` (optional) holds additive pre-softmax
  // values for the last two axes (size rows_last × cols): use large negatives
  // to forbid positions.
  Ref<T> softmax_last(const Ref<T>& a, const std::vector<T>* mask = nullptr) {
    const int c = a->shape.back();
    if (c < 1) throw std::invalid_argument("softmax_last: empty axis");
    const std::size_t rows = a->numel() / static_cast<std::size_t>(c);
    std::size_t mask_rows = 0;
    if (mask) {
      if (a->shape.size() < 2 || mask->size() % static_cast<std::size_t>(c) != 0)
        throw std::invalid_argument("softmax_last: mask shape");
      mask_rows = mask->size() / static_cast<std::size_t>(c);
      if (static_cast<std::size_t>(a->dim(static_cast<int>(a->shape.size()) - 2)) != mask_rows)
        throw std::invalid_argument("softmax_last: mask rows mismatch");
    }
    Ref<T> out = fresh(a->shape, a);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* mrow = mask ? mask->data() + (r % mask_rows) * c : nullptr;
      T mx = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < c; ++j) {
        T x = a->v[r * c + j] + (mrow ? mrow[j] : T(0));
        if (x > mx) mx = x;
      }
      T sum = T(0);
      for (int j = 0; j < c; ++j) {
        T x = a->v[r * c + j] + (mrow ? mrow[j] : T(0));
        T e = std::exp(x - mx);
        out->v[r * c + j] = e;
        sum += e;
      }
      for (int j = 0; j < c; ++j) out->v[r * c + j] /= sum;
    }
    record(out, [a, out, rows, c]() {
      if (!a->requires_grad) return;
      for (std::size_t r = 0; r < rows; ++r) {
        T dot = T(0);
        for (int j = 0; j < c; ++j) dot += out->g[r * c + j] * out->v[r * c + j];
        for (int j = 0; j < c; ++j)
          a->g[r * c + j] += out->v[r * c + j] * (out->g[r * c + j] - dot);
      }
    });
    return out;
  }

  // Softmax of edge scores grouped by destination node.
  Ref<T> edge_softmax(const Ref<T>& scores, const std::vector<int>& dst, int n_nodes) {
    if (scores->shape.size() != 1 || scores->numel() != dst.size())
      throw std::invalid_argument("edge_softmax: scores must be 1-D over edges");
    const int M = static_cast<int>(dst.size());
    Ref<T> out = fresh(scores->shape, scores);
    std::vector<T> mx(static_cast<std::size_t>(n_nodes), -std::numeric_limits<T>::infinity());
    std::vector<T> denom(static_cast<std::size_t>(n_nodes), T(0));
    for (int e = 0; e < M; ++e) mx[dst[e]] = std::max(mx[dst[e]], scores->v[e]);
    for (int e = 0; e < M; ++e) out->v[e] = std::exp(scores->v[e] - mx[dst[e]]);
    for (int e = 0; e < M; ++e) denom[dst[e]] += out->v[e];
    for (int e = 0; e < M; ++e) out->v[e] /= denom[dst[e]];
    auto dst_copy = dst;
    record(out, [scores, out, dst_copy, n_nodes, M]() {
      if (!scores->requires_grad) return;
      std::vector<T> dot(static_cast<std::size_t>(n_nodes), T(0));
      for (int e = 0; e < M; ++e) dot[dst_copy[e]] += out->g[e] * out->v[e];
      for (int e = 0; e < M; ++e)
        scores->g[e] += out->v[e] * (out->g[e] - dot[dst_copy[e]]);
    });
    return out;
  }

  // ---- gather / scatter ----

  Ref<T> gather_rows(const Ref<T>& a, const std::vector<int>& idx) {
    check(a->shape.size() == 2, "gather_rows", a);
    const int c = a->dim(1);
    const int n = a->dim(0);
    for (int i : idx)
      if (i < 0 || i >= n) throw std::invalid_argument("gather_rows: index out of range");
    Ref<T> out = fresh({static_cast<int>(idx.size()), c}, a);
    for (std::size_t e = 0; e < idx.size(); ++e)
      for (int j = 0; j < c; ++j)
        out->v[e * c + j] = a->v[static_cast<std::size_t>(idx[e]) * c + j];
    auto idx_copy = idx;
    record(out, [a, out, idx_copy, c]() {
      if (!a->requires_grad) return;
      for (std::size_t e = 0; e < idx_copy.size(); ++e)
        for (int j = 0; j < c; ++j)
          a->g[static_cast<std::size_t>(idx_copy[e]) * c + j] += out->g[e * c + j];
    });
    return out;
  }

  Ref<T> scatter_add_rows(const Ref<T>& a, const std::vector<int>& idx, int n_rows) {
    check(a->shape.size() == 2, "scatter_add_rows", a);
    if (a->numel() / a->dim(1) != idx.size())
      throw std::invalid_argument("scatter_add_rows: index count mismatch");
    const int c = a->dim(1);
    for (int i : idx)
      if (i < 0 || i >= n_rows) throw std::invalid_argument("scatter_add_rows: index out of range");
    Ref<T> out = fresh({n_rows, c}, a);
    for (std::size_t e = 0; e < idx.size(); ++e)
      for (int j = 0; j < c; ++j)
        out->v[static_cast<std::size_t>(idx[e]) * c + j] += a->v[e * c + j];
    auto idx_copy = idx;
    record(out, [a, out, idx_copy, c]() {
      if (!a->requires_grad) return;
      for (std::size_t e = 0; e < idx_copy.size(); ++e)
        for (int j = 0; j < c; ++j)
          a->g[e * c + j] += out->g[static_cast<std::size_t>(idx_copy[e]) * c + j];
    });
    return out;
  }

  // Scales row e of `a` by learned scalar s[e].
  Ref<T> scale_rows(const Ref<T>& a, const Ref<T>& s) {
    check(a->shape.size() == 2, "scale_rows", a);
    if (s->shape.size() != 1 || s->dim(0) != a->dim(0))
      throw std::invalid_argument("scale_rows: scale length mismatch");
    const int c = a->dim(1);
    const int r = a->dim(0);
    Ref<T> out = fresh(a->shape, a, s);
    for (int e = 0; e < r; ++e)
      for (int j = 0; j < c; ++j)
        out->v[static_cast<std::size_t>(e) * c + j] = a->v[static_cast<std::size_t>(e) * c + j] * s->v[e];
    record(out, [a, s, out, r, c]() {
      for (int e = 0; e < r; ++e) {
        for (int j = 0; j < c; ++j) {
          const std::size_t i = static_cast<std::size_t>(e) * c + j;
          if (a->requires_grad) a->g[i] += out->g[i] * s->v[e];
          if (s->requires_grad) s->g[e] += out->g[i] * a->v[i];
        }
      }
    });
    return out;
  }

  // Scales row e by the fixed coefficient w[e] (no gradient into w).
  Ref<T> scale_rows_const(const Ref<T>& a, const std::vector<T>& wts) {
    check(a->shape.size() == 2, "scale_rows_const", a);
    if (wts.size() != static_cast<std::size_t>(a->dim(0)))
      throw std::invalid_argument("scale_rows_const: weight length mismatch");
    const int c = a->dim(1);
    const int r = a->dim(0);
    Ref<T> out = fresh(a->shape, a);
    for (int e = 0; e < r; ++e)
      for (int j = 0; j < c; ++j)
        out->v[static_cast<std::size_t>(e) * c + j] = a->v[static_cast<std::size_t>(e) * c + j] * wts[e];
    auto w_copy = wts;
    record(out, [a, out, w_copy, r, c]() {
      if (!a->requires_grad) return;
      for (int e = 0; e < r; ++e)
        for (int j = 0; j < c; ++j) {
          const std::size_t i = static_cast<std::size_t>(e) * c + j;
          a->g[i] += out->g[i] * w_copy[e];
        }
    });
    return out;
  }

  // ---- regularization / loss ----

  // Inverted dropout. Draws one uniform per element in training mode; the
  // identity (and no draws) otherwise.
  Ref<T> dropout(const Ref<T>& a, double p, bool train, Rng* rng) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p outside [0,1)");
    if (!train || p == 0.0) {
      Ref<T> out = fresh(a->shape, a);
      out->v = a->v;
      record(out, [a, out]() {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < out->numel(); ++i) a->g[i] += out->g[i];
      });
      return out;
    }
    if (!rng) throw std::invalid_argument("dropout: training mode needs an rng");
    Ref<T> out = fresh(a->shape, a);
    auto keep = std::make_shared<std::vector<T>>(a->numel());
    const T inv = static_cast<T>(1.0 / (1.0 - p));
    for (std::size_t i = 0; i < a->numel(); ++i) {
      (*keep)[i] = rng->uniform() < p ? T(0) : inv;
      out->v[i] = a->v[i] * (*keep)[i];
    }
    record(out, [a, out, keep]() {
      if (!a->requires_grad) return;
      for (std::size_t i = 0; i < out->numel(); ++i) a->g[i] += out->g[i] * (*keep)[i];
    });
    return out;
  }

  // Mean squared error over mask-true entries.
  Ref<T> mse_masked(const Ref<T>& pred, const std::vector<T>& target, const std::vector<T>& mask) {
    if (target.size() != pred->numel() || mask.size() != pred->numel())
      throw std::invalid_argument("mse_masked: size mismatch");
    double wsum = 0;
    for (T m : mask) wsum += static_cast<double>(m);
    if (wsum <= 0) throw std::invalid_argument("mse_masked: empty mask");
    Ref<T> out = fresh({1}, pred);
    double acc = 0;
    for (std::size_t i = 0; i < pred->numel(); ++i) {
      const double d = static_cast<double>(pred->v[i]) - static_cast<double>(target[i]);
      acc += static_cast<double>(mask[i]) * d * d;
    }
    out->v[0] = static_cast<T>(acc / wsum);
    auto tgt = std::make_shared<std::vector<T>>(target);
    auto msk = std::make_shared<std::vector<T>>(mask);
    const T scale_b = static_cast<T>(2.0 / wsum);
    record(out, [pred, out, tgt, msk, scale_b]() {
      if (!pred->requires_grad) return;
      for (std::size_t i = 0; i < pred->numel(); ++i)
        pred->g[i] += out->g[0] * scale_b * (*msk)[i] * (pred->v[i] - (*tgt)[i]);
    });
    return out;
  }

  // ---- backward ----

  void backward(const Ref<T>& loss) {
    if (loss->numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    if (!loss->requires_grad) throw std::invalid_argument("backward: loss has no grad path");
    for (auto& st : steps_)
      if (st.out->from_op) st.out->zero_grad();
    loss->g[0] = T(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) it->back();
  }

  std::size_t size() const { return steps_.size(); }
  void clear() { steps_.clear(); }

 private:
  struct Step {
    Ref<T> out;
    std::function<void()> back;
  };
  std::vector<Step> steps_;

  static void check(bool ok, const char* op, const Ref<T>& a) {
    if (!ok) throw std::invalid_argument(std::string(op) + ": bad shape " + shape_str(a->shape));
  }

  static void same_shape(const Ref<T>& a, const Ref<T>& b, const char* op) {
    if (a->shape != b->shape)
      throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a->shape) +
                                  " vs " + shape_str(b->shape));
  }

  Ref<T> make_out(Shape shape, bool rg) {
    Ref<T> t = make_tensor<T>(std::move(shape), rg);
    t->from_op = rg;
    return t;
  }

  Ref<T> fresh(Shape shape, const Ref<T>& a) { return make_out(std::move(shape), a->requires_grad); }
  Ref<T> fresh(Shape shape, const Ref<T>& a, const Ref<T>& b) {
    return make_out(std::move(shape), a->requires_grad || b->requires_grad);
  }

  void record(const Ref<T>& out, std::function<void()> back) {
    if (out->requires_grad) steps_.push_back({out, std::move(back)});
  }

  static void gemm_nn(const T* a, const T* b, T* out, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
      T* orow = out + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) orow[j] = T(0);
      for (int p = 0; p < k; ++p) {
        const T av = a[static_cast<std::size_t>(i) * k + p];
        if (av == T(0)) continue;
        const T* brow = b + static_cast<std::size_t>(p) * n;
        for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  }

  static void gemm_nt(const T* a, const T* b, T* out, int m, int k, int n) {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        T acc = T(0);
        const T* arow = a + static_cast<std::size_t>(i) * k;
        const T* brow = b + static_cast<std::size_t>(j) * k;
        for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
        out[static_cast<std::size_t>(i) * n + j] = acc;
      }
  }
};

// Bias-corrected Adam over named parameters. Moments are kept in double so
// float and double models share one trajectory definition.
template <typename T>
class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Ref<T>>& params) {
    if (m_.empty()) {
      m_.resize(params.size());
      v_.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i].assign(params[i]->numel(), 0.0);
        v_[i].assign(params[i]->numel(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw std::invalid_argument("adam: parameter set changed");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      if (p.numel() != m_[i].size()) throw std::invalid_argument("adam: parameter shape changed");
      for (std::size_t j = 0; j < p.numel(); ++j) {
        const double g = static_cast<double>(p.g[j]);
        if (std::isnan(g))
          throw std::runtime_error("adam: NaN gradient in parameter " +
                                   (p.name.empty() ? "<unnamed>" : p.name));
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
        const double mh = m_[i][j] / bc1;
        const double vh = v_[i][j] / bc2;
        p.v[j] = static_cast<T>(static_cast<double>(p.v[j]) - lr_ * mh / (std::sqrt(vh) + eps_));
      }
    }
  }

  long step_count() const { return t_; }
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace looptwin
