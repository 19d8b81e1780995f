#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "looptwin/graphs.hpp"
#include "looptwin/mpnn.hpp"

namespace looptwin {

enum class EncoderKind { Gat, Gcn, Sage };

std::string encoder_name(EncoderKind k);
EncoderKind encoder_from_name(const std::string& name);

// Architecture of one imputation model. Shipped variants: gatconv-ext,
// gatconv-inf, sageconv-ext, gcnconv-ext, gatconv-ablated (no temporal
// attention).
struct TwinConfig {
  TemplateKind kind = TemplateKind::Exit;
  EncoderKind encoder = EncoderKind::Gat;
  bool self_attention = true;
  int latent = 160;
  int gat_heads = 2;
  int encoder_layers = 1;
  int sa_heads = 2;
  int sa_dk = 8;
  int edge_proj = 16;
  double dropout = 0.1;
  double score_slope = 0.0;
  int w = kWindow;
  std::string variant = "custom";

  void validate() const;
  nlohmann::json to_json() const;
  static TwinConfig from_json(const nlohmann::json& j);
  static TwinConfig variant_named(const std::string& name);
  static std::vector<std::string> variant_names();
};

// Reads the config stored in a checkpoint header without loading parameters.
TwinConfig checkpoint_config(const std::string& path);

// Optional taps into a forward pass, for inspection and tests.
template <typename T>
struct ForwardProbe {
  std::vector<Ref<T>> sa_probs;    // per head, nodes×w×w
  std::vector<Ref<T>> gat_alphas;  // per layer then head, length n_edges
};

template <typename T>
class TwinModel {
 public:
  TwinConfig cfg;
  Tape<T> tape;
  ParamSet<T> params;

  void init(const TwinConfig& config, std::uint64_t seed) {
    config.validate();
    cfg = config;
    tape.clear();
    params = ParamSet<T>{};
    sa_ = TemporalSelfAttention<T>{};
    gat_.clear();
    gcn_.clear();
    sage_.clear();
    gs_ = GraphStructure::build(template_edges(cfg.kind),
                                cfg.kind == TemplateKind::Exit ? kExitNodes : kInflowNodes);
    causal_ = causal_mask<T>(cfg.w);
    Rng rng(seed);
    Rng init_rng = rng.substream("init", 0);
    if (cfg.self_attention)
      sa_.init(tape, params, init_rng, cfg.sa_heads, cfg.sa_dk, cfg.dropout, "sa");
    enc_in_.init(tape, params, init_rng, cfg.w, cfg.latent, "enc_in");
    int dim = cfg.latent;
    for (int l = 0; l < cfg.encoder_layers; ++l) {
      const std::string prefix = "enc" + std::to_string(l);
      switch (cfg.encoder) {
        case EncoderKind::Gat: {
          Combine comb = l + 1 == cfg.encoder_layers ? Combine::Average : Combine::Concat;
          GatLayer<T> layer;
          layer.score_slope = cfg.score_slope;
          layer.edge_proj = cfg.edge_proj;
          layer.init(tape, params, init_rng, dim, cfg.latent, cfg.gat_heads, comb,
                     kEdgeFeatureDim, prefix);
          dim = layer.out_dim();
          gat_.push_back(std::move(layer));
          break;
        }
        case EncoderKind::Gcn: {
          GcnLayer<T> layer;
          layer.init(tape, params, init_rng, dim, cfg.latent, prefix);
          dim = cfg.latent;
          gcn_.push_back(std::move(layer));
          break;
        }
        case EncoderKind::Sage: {
          SageLayer<T> layer;
          layer.init(tape, params, init_rng, dim, cfg.latent, prefix);
          dim = cfg.latent;
          sage_.push_back(std::move(layer));
          break;
        }
      }
    }
    dec_.init(tape, params, init_rng, dim, cfg.w, "dec");
  }

  // Input rows for target or dummy nodes are forced to zero before any
  // computation touches them.
  Ref<T> input_leaf(const SimGraph& g, bool requires_grad = false) const {
    const int n = g.nodes();
    Ref<T> x = make_tensor<T>({n, cfg.w}, requires_grad, "input");
    for (int i = 0; i < n; ++i) {
      if (g.dummy[i] || g.is_target[i]) continue;
      for (int b = 0; b < cfg.w; ++b)
        x->v[static_cast<std::size_t>(i) * cfg.w + b] = static_cast<T>(g.x_at(i, b));
    }
    return x;
  }

  Ref<T> edge_mean_leaf(const SimGraph& g) const {
    auto zm = g.edge_feature_means();
    Ref<T> z = make_tensor<T>({g.n_edges(), kEdgeFeatureDim}, false, "edge_means");
    for (std::size_t i = 0; i < zm.size(); ++i) z->v[i] = static_cast<T>(zm[i]);
    return z;
  }

  Ref<T> forward(const SimGraph& g, bool train, Rng* rng, ForwardProbe<T>* probe = nullptr) {
    check_graph(g);
    return forward_from(input_leaf(g), g, train, rng, probe);
  }

  // Same as forward but starting from a caller-built input leaf (used by
  // gradient checks).
  Ref<T> forward_from(const Ref<T>& x0, const SimGraph& g, bool train, Rng* rng,
                      ForwardProbe<T>* probe = nullptr) {
    return tape.relu(dec_.forward(tape, encode_from(x0, g, train, rng, probe)));
  }

  // Encoder output (node latents) for a graph, nodes×latent_out.
  Ref<T> encode(const SimGraph& g) {
    check_graph(g);
    return encode_from(input_leaf(g), g, false, nullptr, nullptr);
  }

  Ref<T> encode_from(const Ref<T>& x0, const SimGraph& g, bool train, Rng* rng,
                     ForwardProbe<T>* probe) {
    Ref<T> x = x0;
    if (cfg.self_attention)
      x = sa_.forward(tape, x, causal_, train, rng, probe ? &probe->sa_probs : nullptr);
    Ref<T> h = tape.relu(enc_in_.forward(tape, x));
    Ref<T> zmean;
    if (!gat_.empty()) zmean = edge_mean_leaf(g);
    for (const auto& layer : gat_)
      h = layer.forward(tape, h, gs_, zmean, probe ? &probe->gat_alphas : nullptr);
    for (const auto& layer : gcn_) h = layer.forward(tape, h, gs_);
    for (const auto& layer : sage_) h = layer.forward(tape, h, gs_);
    return h;
  }

  // MSE over every entry of every non-dummy row.
  Ref<T> loss(const Ref<T>& xhat, const SimGraph& g) {
    std::vector<T> target(xhat->numel()), mask(xhat->numel());
    for (int i = 0; i < g.nodes(); ++i) {
      const T m = g.dummy[i] ? T(0) : T(1);
      for (int b = 0; b < cfg.w; ++b) {
        const std::size_t idx = static_cast<std::size_t>(i) * cfg.w + b;
        target[idx] = static_cast<T>(g.target_at(i, b));
        mask[idx] = m;
      }
    }
    return tape.mse_masked(xhat, target, mask);
  }

  Ref<T> loss_on(const SimGraph& g, bool train, Rng* rng) {
    return loss(forward(g, train, rng), g);
  }

  // Integer waveforms for the target rows: clamp at zero, round half to even,
  // cap at the detector saturation count. Dummy target rows come back as
  // zeros.
  std::map<std::string, Waveform> impute(const SimGraph& g, long* clip_events = nullptr) {
    Ref<T> xhat = forward(g, false, nullptr);
    std::map<std::string, Waveform> out;
    for (int i = 0; i < g.nodes(); ++i) {
      if (!g.is_target[i]) continue;
      Waveform wf;
      wf.lane_id = graph_node_label(cfg.kind, i);
      wf.kind = cfg.kind == TemplateKind::Exit ? DetectorKind::Exit : DetectorKind::Inflow;
      wf.buckets.assign(cfg.w, 0);
      if (!g.dummy[i]) {
        for (int b = 0; b < cfg.w; ++b) {
          double v = static_cast<double>(xhat->v[static_cast<std::size_t>(i) * cfg.w + b]);
          if (v < 0) v = 0;
          long c = std::lround(std::nearbyint(v));
          if (c > kCountCap) {
            c = kCountCap;
            if (clip_events) ++*clip_events;
          }
          wf.buckets[b] = static_cast<int>(c);
        }
      }
      out.emplace(wf.lane_id, std::move(wf));
    }
    tape.clear();
    return out;
  }

  const GraphStructure& structure() const { return gs_; }
  const std::vector<T>& causal() const { return causal_; }

  nlohmann::json summary() const {
    nlohmann::json j;
    j["config"] = cfg.to_json();
    j["param_count"] = params.count();
    nlohmann::json plist = nlohmann::json::array();
    for (const auto& p : params.list) {
      nlohmann::json e;
      e["name"] = p->name;
      e["shape"] = p->shape;
      plist.push_back(e);
    }
    j["params"] = plist;
    return j;
  }

  void save(const std::string& path) const {
    nlohmann::json header;
    header["version"] = 1;
    header["config"] = cfg.to_json();
    nlohmann::json plist = nlohmann::json::array();
    for (const auto& p : params.list) {
      nlohmann::json e;
      e["name"] = p->name;
      e["shape"] = p->shape;
      plist.push_back(e);
    }
    header["params"] = plist;
    std::string htext = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    const char magic[8] = {'L', 'T', 'C', 'K', '1', '\n', 0, 0};
    out.write(magic, 8);
    std::uint64_t hlen = htext.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& p : params.list) {
      std::vector<double> buf(p->v.begin(), p->v.end());
      out.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
  }

  // Loads parameter values into an already-initialized model; names and
  // shapes must match exactly.
  void load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    const char want[8] = {'L', 'T', 'C', 'K', '1', '\n', 0, 0};
    if (!in || !std::equal(magic, magic + 8, want))
      throw std::runtime_error("checkpoint: bad magic in " + path);
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 8);
    std::string htext(hlen, '\0');
    in.read(htext.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);
    nlohmann::json header = nlohmann::json::parse(htext);
    const auto& plist = header.at("params");
    if (plist.size() != params.list.size())
      throw std::runtime_error("checkpoint: parameter count mismatch in " + path);
    for (std::size_t i = 0; i < params.list.size(); ++i) {
      auto& p = *params.list[i];
      if (plist[i].at("name").get<std::string>() != p.name ||
          plist[i].at("shape").get<Shape>() != p.shape)
        throw std::runtime_error("checkpoint: parameter mismatch at " + p.name);
      std::vector<double> buf(p.numel());
      in.read(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(double)));
      if (!in) throw std::runtime_error("checkpoint: truncated data in " + path);
      for (std::size_t j = 0; j < buf.size(); ++j) p.v[j] = static_cast<T>(buf[j]);
    }
  }

  // Direct access for tests and surgical edits.
  TemporalSelfAttention<T>& self_attention() { return sa_; }
  Linear<T>& encoder_input() { return enc_in_; }
  Linear<T>& decoder() { return dec_; }
  std::vector<GatLayer<T>>& gat_layers() { return gat_; }

 private:
  GraphStructure gs_;
  std::vector<T> causal_;
  TemporalSelfAttention<T> sa_;
  Linear<T> enc_in_, dec_;
  std::vector<GatLayer<T>> gat_;
  std::vector<GcnLayer<T>> gcn_;
  std::vector<SageLayer<T>> sage_;

  void check_graph(const SimGraph& g) const {
    if (g.kind != cfg.kind) throw std::invalid_argument("model: graph template kind mismatch");
    if (g.w != cfg.w) throw std::invalid_argument("model: window mismatch");
  }
};

}  // namespace looptwin
