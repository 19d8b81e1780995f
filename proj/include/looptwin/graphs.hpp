#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "looptwin/record.hpp"
#include "looptwin/topology.hpp"

namespace looptwin {

inline constexpr int kEdgeFeatureDim = 29;  // tmc 12 + drv 9 + sig 8

// One template-shaped graph sample. X holds the model input (target rows
// zeroed); targets holds the full true matrix. Edge features are defined
// componentwise from (tmc, drv, sig), so the 29×w tensor per edge is exposed
// through accessors instead of being materialized.
struct SimGraph {
  TemplateKind kind = TemplateKind::Exit;
  std::string record_id;
  int w = kWindow;
  std::vector<std::pair<int, int>> edges;
  int pillar_start = -1;  // first pillar edge index (inflow), -1 for exit

  std::vector<double> X;        // nodes×w row-major
  std::vector<double> targets;  // nodes×w row-major
  std::vector<std::uint8_t> dummy;
  std::vector<std::uint8_t> is_target;

  std::array<double, 12> tmc{};  // canonical EB/WB/NB/SB × L/T/R flatten
  std::array<double, 9> drv{};
  std::vector<std::uint8_t> sig;  // 8×w row-major
  // Per edge: approach whose tmc row is rotated to the front, -1 = canonical.
  std::vector<int> edge_rot;

  int nodes() const { return kind == TemplateKind::Exit ? kExitNodes : kInflowNodes; }
  int n_edges() const { return static_cast<int>(edges.size()); }
  int n_pillar() const { return pillar_start < 0 ? 0 : n_edges() - pillar_start; }

  double x_at(int node, int b) const { return X[static_cast<std::size_t>(node) * w + b]; }
  double target_at(int node, int b) const {
    return targets[static_cast<std::size_t>(node) * w + b];
  }
  // Edge feature channel c at bucket b: c<12 rotated tmc, c<21 drv, else sig.
  double edge_feature(int e, int c, int b) const;
  // Bucket-mean reduction, n_edges×29 row-major.
  std::vector<double> edge_feature_means() const;

  void validate() const;
};

// Canonical template edge list: exit 22, inflow 72 intra + 108 pillar.
std::vector<std::pair<int, int>> template_edges(TemplateKind kind);

// Node label used as the waveform key, "EB_T2", "N1", "SB_IN3".
std::string graph_node_label(TemplateKind kind, int node);

SimGraph build_exit_graph(const SimulationRecord& record, const IntersectionTopology& topology);
SimGraph build_inflow_graph(const SimulationRecord& record, const IntersectionTopology& topology);

inline SimGraph build_graph(const SimulationRecord& record, const IntersectionTopology& topology,
                            TemplateKind kind) {
  return kind == TemplateKind::Exit ? build_exit_graph(record, topology)
                                    : build_inflow_graph(record, topology);
}

// Binary container: magic, JSON shape header, then fixed-layout graph blocks.
void write_graph_dataset(const std::string& path, const std::vector<SimGraph>& graphs);
std::vector<SimGraph> read_graph_dataset(const std::string& path);

}  // namespace looptwin
