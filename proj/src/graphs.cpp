#include "looptwin/graphs.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "nlohmann/json.hpp"

namespace looptwin {

namespace {

// Row order with approach `rot` moved to the front.
std::array<int, 4> rotation_order(int rot) {
  if (rot < 0) return {0, 1, 2, 3};
  std::array<int, 4> order{};
  order[0] = rot;
  int k = 1;
  for (int a = 0; a < 4; ++a)
    if (a != rot) order[k++] = a;
  return order;
}

void fill_row(std::vector<double>& mat, int w, int node, const Waveform& wf) {
  if (wf.window() != w) throw std::invalid_argument("graph: waveform window mismatch");
  for (int b = 0; b < w; ++b) mat[static_cast<std::size_t>(node) * w + b] = wf.buckets[b];
}

const Waveform& lookup(const std::map<std::string, Waveform>& wfs, const std::string& id) {
  auto it = wfs.find(id);
  if (it == wfs.end()) throw std::invalid_argument("graph: record has no waveform for lane " + id);
  return it->second;
}

void check_mapped(const std::map<std::string, Waveform>& wfs,
                  const std::vector<std::string>& known, const char* kind) {
  for (const auto& [id, wf] : wfs) {
    bool found = false;
    for (const auto& k : known)
      if (k == id) found = true;
    if (!found)
      throw std::invalid_argument(std::string("graph: unmapped ") + kind + " lane " + id);
  }
}

void fill_shared(SimGraph& g, const SimulationRecord& record) {
  if (record.sig.w != g.w || record.sig.bucket_seconds != kBucketSeconds)
    throw std::invalid_argument("graph: sig shape mismatch");
  g.record_id = record.intersection_id;
  g.tmc = record.tmc.flattened();
  g.drv = record.drv.as_array();
  g.sig = record.sig.data;
}

}  // namespace

double SimGraph::edge_feature(int e, int c, int b) const {
  if (e < 0 || e >= n_edges() || c < 0 || c >= kEdgeFeatureDim || b < 0 || b >= w)
    throw std::invalid_argument("edge_feature: index out of range");
  if (c < 12) {
    auto order = rotation_order(edge_rot[e]);
    return tmc[order[c / 3] * 3 + c % 3];
  }
  if (c < 21) return drv[c - 12];
  return sig[static_cast<std::size_t>(c - 21) * w + b];
}

std::vector<double> SimGraph::edge_feature_means() const {
  std::array<double, 8> sig_mean{};
  for (int p = 0; p < 8; ++p) {
    double s = 0;
    for (int b = 0; b < w; ++b) s += sig[static_cast<std::size_t>(p) * w + b];
    sig_mean[p] = s / w;
  }
  std::vector<double> out(static_cast<std::size_t>(n_edges()) * kEdgeFeatureDim);
  for (int e = 0; e < n_edges(); ++e) {
    auto order = rotation_order(edge_rot[e]);
    double* row = out.data() + static_cast<std::size_t>(e) * kEdgeFeatureDim;
    for (int c = 0; c < 12; ++c) row[c] = tmc[order[c / 3] * 3 + c % 3];
    for (int c = 0; c < 9; ++c) row[12 + c] = drv[c];
    for (int p = 0; p < 8; ++p) row[21 + p] = sig_mean[p];
  }
  return out;
}

void SimGraph::validate() const {
  int n = nodes();
  if (static_cast<int>(X.size()) != n * w || static_cast<int>(targets.size()) != n * w)
    throw std::invalid_argument("graph: feature matrix shape mismatch");
  if (static_cast<int>(dummy.size()) != n || static_cast<int>(is_target.size()) != n)
    throw std::invalid_argument("graph: mask length mismatch");
  if (static_cast<int>(sig.size()) != 8 * w) throw std::invalid_argument("graph: sig shape");
  if (static_cast<int>(edge_rot.size()) != n_edges())
    throw std::invalid_argument("graph: edge_rot length mismatch");
  if (kind == TemplateKind::Exit) {
    if (n_edges() != kExitEdges || pillar_start != -1)
      throw std::invalid_argument("graph: exit edge structure");
  } else {
    if (n_edges() != kInflowEdges || pillar_start != kInflowIntraEdges)
      throw std::invalid_argument("graph: inflow edge structure");
  }
  for (const auto& [s, d] : edges)
    if (s < 0 || s >= n || d < 0 || d >= n)
      throw std::invalid_argument("graph: edge endpoint out of range");
  for (int node = 0; node < n; ++node) {
    if (!dummy[node]) continue;
    for (int b = 0; b < w; ++b)
      if (x_at(node, b) != 0.0 || target_at(node, b) != 0.0)
        throw std::invalid_argument("graph: dummy node carries nonzero features");
  }
}

SimGraph build_exit_graph(const SimulationRecord& record, const IntersectionTopology& topology) {
  const auto& tmpl = ExitTemplate::instance();
  std::vector<bool> mask = dummy_mask(topology, TemplateKind::Exit);

  SimGraph g;
  g.kind = TemplateKind::Exit;
  g.w = record.sig.w;
  fill_shared(g, record);
  g.X.assign(static_cast<std::size_t>(kExitNodes) * g.w, 0.0);
  g.targets.assign(static_cast<std::size_t>(kExitNodes) * g.w, 0.0);
  g.dummy.resize(kExitNodes);
  g.is_target.resize(kExitNodes);

  std::vector<std::string> known;
  for (int i = 0; i < kExitNodes; ++i) {
    g.dummy[i] = mask[i] ? 1 : 0;
    g.is_target[i] = i >= kExitIncoming ? 1 : 0;
    if (mask[i]) continue;
    std::string id = tmpl.node_name(i);
    known.push_back(id);
    if (i < kExitIncoming) {
      const Waveform& wf = lookup(record.stp, id);
      fill_row(g.X, g.w, i, wf);
      fill_row(g.targets, g.w, i, wf);
    } else {
      // Exit rows stay zero in X; the true waveform goes to targets only.
      fill_row(g.targets, g.w, i, lookup(record.ext, id));
    }
  }
  check_mapped(record.stp, known, "stop-bar");
  check_mapped(record.ext, known, "exit");

  g.edges.assign(tmpl.edges().begin(), tmpl.edges().end());
  g.edge_rot.assign(kExitEdges, -1);
  g.validate();
  return g;
}

SimGraph build_inflow_graph(const SimulationRecord& record, const IntersectionTopology& topology) {
  std::vector<bool> mask = dummy_mask(topology, TemplateKind::Inflow);

  SimGraph g;
  g.kind = TemplateKind::Inflow;
  g.w = record.sig.w;
  fill_shared(g, record);
  g.X.assign(static_cast<std::size_t>(kInflowNodes) * g.w, 0.0);
  g.targets.assign(static_cast<std::size_t>(kInflowNodes) * g.w, 0.0);
  g.dummy.resize(kInflowNodes);
  g.is_target.resize(kInflowNodes);

  std::vector<std::string> known_stp, known_inf;
  for (int node = 0; node < kInflowNodes; ++node) {
    int slot = node % kLayerSlots;
    g.dummy[node] = mask[node] ? 1 : 0;
    g.is_target[node] = slot >= kLayerStopSlots ? 1 : 0;
    if (mask[node]) continue;
    std::string id = inflow_node_name(node);
    if (slot < kLayerStopSlots) {
      known_stp.push_back(id);
      const Waveform& wf = lookup(record.stp, id);
      fill_row(g.X, g.w, node, wf);
      fill_row(g.targets, g.w, node, wf);
    } else {
      known_inf.push_back(id);
      fill_row(g.targets, g.w, node, lookup(record.inf, id));
    }
  }
  check_mapped(record.stp, known_stp, "stop-bar");
  check_mapped(record.inf, known_inf, "inflow");

  g.edges = template_edges(TemplateKind::Inflow);
  g.pillar_start = kInflowIntraEdges;
  g.edge_rot.reserve(kInflowEdges);
  for (int layer = 0; layer < 4; ++layer)
    for (int s = 0; s < kLayerStopSlots; ++s)
      for (int f = 0; f < kLayerFeedSlots; ++f) {
        (void)f;
        g.edge_rot.push_back(layer);
      }
  for (int layer = 0; layer < 4; ++layer)
    for (int s = 0; s < kLayerSlots; ++s)
      for (int other = 0; other < 4; ++other) {
        if (other == layer) continue;
        // Features take the frame of the layer receiving the message.
        g.edge_rot.push_back(other);
      }
  g.validate();
  return g;
}

std::string graph_node_label(TemplateKind kind, int node) {
  return kind == TemplateKind::Exit ? ExitTemplate::instance().node_name(node)
                                    : inflow_node_name(node);
}

std::vector<std::pair<int, int>> template_edges(TemplateKind kind) {
  std::vector<std::pair<int, int>> edges;
  if (kind == TemplateKind::Exit) {
    const auto& t = ExitTemplate::instance().edges();
    edges.assign(t.begin(), t.end());
    return edges;
  }
  // 18 intra-layer edges per layer (stop-bar -> inflow), then 108 pillar
  // edges linking identical slots across layers.
  edges.reserve(kInflowEdges);
  for (int layer = 0; layer < 4; ++layer)
    for (int s = 0; s < kLayerStopSlots; ++s)
      for (int f = 0; f < kLayerFeedSlots; ++f)
        edges.emplace_back(layer * kLayerSlots + s, layer * kLayerSlots + kLayerStopSlots + f);
  for (int layer = 0; layer < 4; ++layer)
    for (int s = 0; s < kLayerSlots; ++s)
      for (int other = 0; other < 4; ++other) {
        if (other == layer) continue;
        edges.emplace_back(layer * kLayerSlots + s, other * kLayerSlots + s);
      }
  return edges;
}

namespace {

constexpr char kMagic[8] = {'L', 'T', 'G', 'D', '1', '\n', 0, 0};

template <typename T>
void write_pod(std::ostream& out, const T* data, std::size_t count) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(sizeof(T) * count));
}

template <typename T>
void read_pod(std::istream& in, T* data, std::size_t count) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(sizeof(T) * count));
  if (!in) throw std::runtime_error("graph dataset: truncated file");
}

}  // namespace

void write_graph_dataset(const std::string& path, const std::vector<SimGraph>& graphs) {
  if (graphs.empty()) throw std::invalid_argument("graph dataset: nothing to write");
  const SimGraph& first = graphs.front();
  for (const auto& g : graphs) {
    g.validate();
    if (g.kind != first.kind || g.w != first.w || g.edges != first.edges)
      throw std::invalid_argument("graph dataset: mixed graph shapes");
  }

  nlohmann::json header;
  header["version"] = 1;
  header["kind"] = first.kind == TemplateKind::Exit ? "exit" : "inflow";
  header["w"] = first.w;
  header["bucket_seconds"] = kBucketSeconds;
  header["n_graphs"] = graphs.size();
  header["nodes"] = first.nodes();
  header["n_edges"] = first.n_edges();
  header["pillar_edges"] = first.n_pillar();
  header["edge_feature_dim"] = kEdgeFeatureDim;
  nlohmann::json edge_list = nlohmann::json::array();
  for (const auto& [s, d] : first.edges) edge_list.push_back({s, d});
  header["edges"] = edge_list;
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& g : graphs) ids.push_back(g.record_id);
  header["record_ids"] = ids;
  std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("graph dataset: cannot open " + path);
  out.write(kMagic, 8);
  std::uint64_t hlen = header_text.size();
  write_pod(out, &hlen, 1);
  out.write(header_text.data(), static_cast<std::streamsize>(hlen));

  const int n = first.nodes();
  const int w = first.w;
  std::vector<float> fbuf(static_cast<std::size_t>(n) * w);
  for (const auto& g : graphs) {
    for (std::size_t i = 0; i < fbuf.size(); ++i) fbuf[i] = static_cast<float>(g.X[i]);
    write_pod(out, fbuf.data(), fbuf.size());
    for (std::size_t i = 0; i < fbuf.size(); ++i) fbuf[i] = static_cast<float>(g.targets[i]);
    write_pod(out, fbuf.data(), fbuf.size());
    write_pod(out, g.dummy.data(), g.dummy.size());
    write_pod(out, g.is_target.data(), g.is_target.size());
    write_pod(out, g.tmc.data(), g.tmc.size());
    write_pod(out, g.drv.data(), g.drv.size());
    write_pod(out, g.sig.data(), g.sig.size());
    std::vector<std::int32_t> rot(g.edge_rot.begin(), g.edge_rot.end());
    write_pod(out, rot.data(), rot.size());
  }
  if (!out) throw std::runtime_error("graph dataset: write failed for " + path);
}

std::vector<SimGraph> read_graph_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("graph dataset: cannot open " + path);
  char magic[8];
  read_pod(in, magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("graph dataset: bad magic in " + path);
  std::uint64_t hlen = 0;
  read_pod(in, &hlen, 1);
  std::string header_text(hlen, '\0');
  read_pod(in, header_text.data(), hlen);
  nlohmann::json header = nlohmann::json::parse(header_text);

  TemplateKind kind =
      header.at("kind").get<std::string>() == "exit" ? TemplateKind::Exit : TemplateKind::Inflow;
  const int w = header.at("w").get<int>();
  const int n = header.at("nodes").get<int>();
  const int n_edges = header.at("n_edges").get<int>();
  const int pillar = header.at("pillar_edges").get<int>();
  const std::size_t n_graphs = header.at("n_graphs").get<std::size_t>();
  std::vector<std::pair<int, int>> edges;
  for (const auto& e : header.at("edges")) edges.emplace_back(e[0].get<int>(), e[1].get<int>());
  if (static_cast<int>(edges.size()) != n_edges)
    throw std::runtime_error("graph dataset: edge list length mismatch");
  std::vector<std::string> ids = header.at("record_ids").get<std::vector<std::string>>();

  std::vector<SimGraph> graphs(n_graphs);
  std::vector<float> fbuf(static_cast<std::size_t>(n) * w);
  for (std::size_t gi = 0; gi < n_graphs; ++gi) {
    SimGraph& g = graphs[gi];
    g.kind = kind;
    g.w = w;
    g.record_id = ids.at(gi);
    g.edges = edges;
    g.pillar_start = kind == TemplateKind::Inflow ? n_edges - pillar : -1;
    read_pod(in, fbuf.data(), fbuf.size());
    g.X.assign(fbuf.begin(), fbuf.end());
    read_pod(in, fbuf.data(), fbuf.size());
    g.targets.assign(fbuf.begin(), fbuf.end());
    g.dummy.resize(n);
    read_pod(in, g.dummy.data(), n);
    g.is_target.resize(n);
    read_pod(in, g.is_target.data(), n);
    read_pod(in, g.tmc.data(), 12);
    read_pod(in, g.drv.data(), 9);
    g.sig.resize(static_cast<std::size_t>(8) * w);
    read_pod(in, g.sig.data(), g.sig.size());
    std::vector<std::int32_t> rot(n_edges);
    read_pod(in, rot.data(), n_edges);
    g.edge_rot.assign(rot.begin(), rot.end());
    g.validate();
  }
  return graphs;
}

}  // namespace looptwin
