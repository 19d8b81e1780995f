#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "looptwin/ndiff.hpp"

namespace looptwin {

// Named parameter registry; ownership stays with the layers.
template <typename T>
struct ParamSet {
  std::vector<Ref<T>> list;

  Ref<T> add(Tape<T>& tape, Shape shape, const std::string& name) {
    Ref<T> p = tape.leaf(std::move(shape), true, name);
    list.push_back(p);
    return p;
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : list) n += p->numel();
    return n;
  }
  void zero_grads() {
    for (auto& p : list) p->zero_grad();
  }
};

template <typename T>
void glorot_fill(const Ref<T>& p, Rng& rng, int fan_in, int fan_out) {
  double s = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : p->v) v = static_cast<T>(rng.uniform(-s, s));
}

// Fixed per-template index lists shared by every graph of a kind.
struct GraphStructure {
  int n_nodes = 0;
  std::vector<int> src, dst;
  std::vector<double> iso_self;    // 1.0 where in-degree is zero
  std::vector<int> gcn_src, gcn_dst;
  std::vector<double> gcn_coeff;   // 1/sqrt(deg_src*deg_dst), deg = indeg+1
  std::vector<double> sage_coeff;  // per edge 1/indeg(dst)

  static GraphStructure build(const std::vector<std::pair<int, int>>& edges, int n_nodes);
};

inline GraphStructure GraphStructure::build(const std::vector<std::pair<int, int>>& edges,
                                            int n_nodes) {
  GraphStructure s;
  s.n_nodes = n_nodes;
  std::vector<int> indeg(n_nodes, 0);
  for (const auto& [a, b] : edges) {
    s.src.push_back(a);
    s.dst.push_back(b);
    ++indeg[b];
  }
  s.iso_self.assign(n_nodes, 0.0);
  for (int i = 0; i < n_nodes; ++i)
    if (indeg[i] == 0) s.iso_self[i] = 1.0;

  std::vector<double> deg(n_nodes);
  for (int i = 0; i < n_nodes; ++i) deg[i] = indeg[i] + 1.0;
  for (const auto& [a, b] : edges) {
    s.gcn_src.push_back(a);
    s.gcn_dst.push_back(b);
    s.gcn_coeff.push_back(1.0 / std::sqrt(deg[a] * deg[b]));
  }
  for (int i = 0; i < n_nodes; ++i) {
    s.gcn_src.push_back(i);
    s.gcn_dst.push_back(i);
    s.gcn_coeff.push_back(1.0 / deg[i]);
  }
  for (const auto& [a, b] : edges) {
    (void)a;
    s.sage_coeff.push_back(1.0 / indeg[b]);
  }
  return s;
}

template <typename T>
std::vector<T> to_scalar(const std::vector<double>& v) {
  return std::vector<T>(v.begin(), v.end());
}

template <typename T>
struct Linear {
  Ref<T> W, b;
  int in = 0, out = 0;

  void init(Tape<T>& tape, ParamSet<T>& ps, Rng& rng, int in_dim, int out_dim,
            const std::string& prefix) {
    in = in_dim;
    out = out_dim;
    W = ps.add(tape, {in_dim, out_dim}, prefix + ".W");
    b = ps.add(tape, {out_dim}, prefix + ".b");
    glorot_fill(W, rng, in_dim, out_dim);
  }
  Ref<T> forward(Tape<T>& tape, const Ref<T>& x) const {
    return tape.add_bias(tape.matmul(x, W), b);
  }
};

enum class Combine { Concat, Average };

// Graph attention with edge-conditioned scores:
// e_ij = relu(aᵀ[Wh_i ‖ Wh_j ‖ W_e z_ij]), softmax over in-neighbors j of i.
// Nodes without in-edges pass their own projection through unchanged.
template <typename T>
struct GatLayer {
  int in = 0, out = 0, heads = 1, edge_dim = 0, edge_proj = 8;
  Combine combine = Combine::Average;
  double score_slope = 0.0;  // 0 gives the plain ReLU score
  std::vector<Ref<T>> W, a, b;
  Ref<T> We;

  int out_dim() const { return combine == Combine::Concat ? heads * out : out; }

  void init(Tape<T>& tape, ParamSet<T>& ps, Rng& rng, int in_dim, int out_dim_, int heads_,
            Combine combine_, int edge_dim_, const std::string& prefix) {
    in = in_dim;
    out = out_dim_;
    heads = heads_;
    combine = combine_;
    edge_dim = edge_dim_;
    W.clear();
    a.clear();
    b.clear();
    for (int h = 0; h < heads; ++h) {
      W.push_back(ps.add(tape, {in, out}, prefix + ".W" + std::to_string(h)));
      glorot_fill(W.back(), rng, in, out);
      a.push_back(ps.add(tape, {2 * out + edge_proj, 1}, prefix + ".a" + std::to_string(h)));
      glorot_fill(a.back(), rng, 2 * out + edge_proj, 1);
    }
    We = ps.add(tape, {edge_dim, edge_proj}, prefix + ".We");
    glorot_fill(We, rng, edge_dim, edge_proj);
    int n_bias = combine == Combine::Concat ? heads : 1;
    for (int h = 0; h < n_bias; ++h)
      b.push_back(ps.add(tape, {out}, prefix + ".b" + std::to_string(h)));
  }

  // zmean: M×edge_dim leaf. attn_out (optional) collects per-head alpha refs.
  Ref<T> forward(Tape<T>& tape, const Ref<T>& X, const GraphStructure& gs, const Ref<T>& zmean,
                 std::vector<Ref<T>>* attn_out = nullptr) const {
    const int N = gs.n_nodes;
    const auto iso = to_scalar<T>(gs.iso_self);
    Ref<T> E = tape.matmul(zmean, We);
    std::vector<Ref<T>> outs;
    Ref<T> sum;
    for (int h = 0; h < heads; ++h) {
      Ref<T> H = tape.matmul(X, W[h]);
      Ref<T> Hs = tape.gather_rows(H, gs.src);
      Ref<T> Hd = tape.gather_rows(H, gs.dst);
      Ref<T> S = tape.concat_last({Hd, Hs, E});
      Ref<T> sc = tape.leaky_relu(
          tape.reshape(tape.matmul(S, a[h]), {static_cast<int>(gs.src.size())}), score_slope);
      Ref<T> alpha = tape.edge_softmax(sc, gs.dst, N);
      if (attn_out) attn_out->push_back(alpha);
      Ref<T> agg = tape.scatter_add_rows(tape.scale_rows(Hs, alpha), gs.dst, N);
      agg = tape.add(agg, tape.scale_rows_const(H, iso));
      if (combine == Combine::Concat) {
        outs.push_back(tape.relu(tape.add_bias(agg, b[h])));
      } else {
        sum = h == 0 ? agg : tape.add(sum, agg);
      }
    }
    if (combine == Combine::Concat) return tape.concat_last(outs);
    return tape.relu(tape.add_bias(tape.scale(sum, 1.0 / heads), b[0]));
  }
};

// h'_i = relu(Σ_j W h_j / sqrt(deg_i deg_j)) with self-loops, deg = indeg+1.
template <typename T>
struct GcnLayer {
  int in = 0, out = 0;
  Ref<T> W, b;

  void init(Tape<T>& tape, ParamSet<T>& ps, Rng& rng, int in_dim, int out_dim,
            const std::string& prefix) {
    in = in_dim;
    out = out_dim;
    W = ps.add(tape, {in, out}, prefix + ".W");
    glorot_fill(W, rng, in_dim, out_dim);
    b = ps.add(tape, {out}, prefix + ".b");
  }

  Ref<T> forward(Tape<T>& tape, const Ref<T>& X, const GraphStructure& gs) const {
    Ref<T> H = tape.matmul(X, W);
    Ref<T> Hs = tape.gather_rows(H, gs.gcn_src);
    Ref<T> weighted = tape.scale_rows_const(Hs, to_scalar<T>(gs.gcn_coeff));
    Ref<T> agg = tape.scatter_add_rows(weighted, gs.gcn_dst, gs.n_nodes);
    return tape.relu(tape.add_bias(agg, b));
  }
};

// h'_i = relu(W1 h_i + W2 mean_{j in N(i)} h_j); empty neighborhoods drop the
// mean term.
template <typename T>
struct SageLayer {
  int in = 0, out = 0;
  Ref<T> W1, W2, b;

  void init(Tape<T>& tape, ParamSet<T>& ps, Rng& rng, int in_dim, int out_dim,
            const std::string& prefix) {
    in = in_dim;
    out = out_dim;
    W1 = ps.add(tape, {in, out}, prefix + ".W1");
    glorot_fill(W1, rng, in_dim, out_dim);
    W2 = ps.add(tape, {in, out}, prefix + ".W2");
    glorot_fill(W2, rng, in_dim, out_dim);
    b = ps.add(tape, {out}, prefix + ".b");
  }

  Ref<T> forward(Tape<T>& tape, const Ref<T>& X, const GraphStructure& gs) const {
    Ref<T> self_term = tape.matmul(X, W1);
    Ref<T> Xs = tape.gather_rows(X, gs.src);
    Ref<T> mean = tape.scatter_add_rows(tape.scale_rows_const(Xs, to_scalar<T>(gs.sage_coeff)),
                                        gs.dst, gs.n_nodes);
    Ref<T> neigh = tape.matmul(mean, W2);
    return tape.relu(tape.add_bias(tape.add(self_term, neigh), b));
  }
};

// Strictly causal mask: position i sees positions < i; position 0 sees itself.
template <typename T>
std::vector<T> causal_mask(int w) {
  std::vector<T> m(static_cast<std::size_t>(w) * w, static_cast<T>(-1e30));
  m[0] = T(0);
  for (int i = 1; i < w; ++i)
    for (int j = 0; j < i; ++j) m[static_cast<std::size_t>(i) * w + j] = T(0);
  return m;
}

// Scalar-token causal self-attention over the bucket axis, per node, with
// residual output. Zeroed value/output parameters make this the identity.
template <typename T>
struct TemporalSelfAttention {
  int heads = 2, dk = 4;
  double p_dropout = 0.1;
  std::vector<Ref<T>> wq, bq, wk, bk, wv, bv;  // per head, wq: 1×dk
  Ref<T> Wo, bo;

  void init(Tape<T>& tape, ParamSet<T>& ps, Rng& rng, int heads_, int dk_, double p,
            const std::string& prefix) {
    heads = heads_;
    dk = dk_;
    p_dropout = p;
    for (int h = 0; h < heads; ++h) {
      const std::string hs = std::to_string(h);
      wq.push_back(ps.add(tape, {1, dk}, prefix + ".wq" + hs));
      glorot_fill(wq.back(), rng, 1, dk);
      bq.push_back(ps.add(tape, {dk}, prefix + ".bq" + hs));
      wk.push_back(ps.add(tape, {1, dk}, prefix + ".wk" + hs));
      glorot_fill(wk.back(), rng, 1, dk);
      bk.push_back(ps.add(tape, {dk}, prefix + ".bk" + hs));
      wv.push_back(ps.add(tape, {1, dk}, prefix + ".wv" + hs));
      glorot_fill(wv.back(), rng, 1, dk);
      bv.push_back(ps.add(tape, {dk}, prefix + ".bv" + hs));
    }
    Wo = ps.add(tape, {heads * dk, 1}, prefix + ".Wo");
    glorot_fill(Wo, rng, heads * dk, 1);
    bo = ps.add(tape, {1}, prefix + ".bo");
  }

  // X: N×w. mask: causal_mask<T>(w). attn_out collects per-head prob tensors
  // (N×w×w).
  Ref<T> forward(Tape<T>& tape, const Ref<T>& X, const std::vector<T>& mask, bool train,
                 Rng* rng, std::vector<Ref<T>>* attn_out = nullptr) const {
    const int N = X->dim(0);
    const int w = X->dim(1);
    Ref<T> tokens = tape.reshape(X, {N * w, 1});
    std::vector<Ref<T>> head_outs;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
    for (int h = 0; h < heads; ++h) {
      Ref<T> Q = tape.reshape(tape.add_bias(tape.matmul(tokens, wq[h]), bq[h]), {N, w, dk});
      Ref<T> K = tape.reshape(tape.add_bias(tape.matmul(tokens, wk[h]), bk[h]), {N, w, dk});
      Ref<T> V = tape.reshape(tape.add_bias(tape.matmul(tokens, wv[h]), bv[h]), {N, w, dk});
      Ref<T> S = tape.scale(tape.bmm(Q, K, true), inv_sqrt);
      Ref<T> P = tape.softmax_last(S, &mask);
      if (attn_out) attn_out->push_back(P);
      head_outs.push_back(tape.bmm(P, V));
    }
    Ref<T> allh = heads == 1 ? head_outs[0] : tape.concat_last(head_outs);
    Ref<T> y = tape.add_bias(tape.matmul(tape.reshape(allh, {N * w, heads * dk}), Wo), bo);
    y = tape.reshape(y, {N, w});
    y = tape.dropout(y, p_dropout, train, rng);
    return tape.add(X, y);
  }
};

}  // namespace looptwin
