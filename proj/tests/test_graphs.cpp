#include <doctest.h>

#include <filesystem>
#include <set>

#include "looptwin/graphs.hpp"
#include "looptwin/simkit.hpp"

using namespace looptwin;

namespace {

SimulationRecord make_record(std::uint64_t seed, const std::string& topo_name) {
  Rng rng(seed);
  IntersectionTopology topo = IntersectionTopology::builtin(topo_name);
  SignalTimingPlan plan = sample_plan(rng, PlanConstraints::defaults());
  DemandScenario sc = sample_scenario(rng, topo, Regime::Mixed);
  sc.seed = seed;
  return simulate(topo, plan, sc);
}

}  // namespace

TEST_SUITE("graphs") {

TEST_CASE("exit graphs keep the fixed template shape on every topology") {
  std::uint64_t seed = 200;
  for (const auto& name : IntersectionTopology::builtin_names()) {
    SimulationRecord rec = make_record(seed++, name);
    SimGraph g = build_exit_graph(rec, rec.topology);
    CHECK_NOTHROW(g.validate());
    CHECK(g.nodes() == 33);
    CHECK(g.n_edges() == 22);
    CHECK(g.pillar_start == -1);
    CHECK(g.edges == template_edges(TemplateKind::Exit));
    CHECK(static_cast<int>(g.X.size()) == 33 * g.w);
  }
}

TEST_CASE("inflow graphs keep 36 nodes and 72 plus 108 edges everywhere") {
  std::uint64_t seed = 210;
  for (const auto& name : IntersectionTopology::builtin_names()) {
    SimulationRecord rec = make_record(seed++, name);
    SimGraph g = build_inflow_graph(rec, rec.topology);
    CHECK_NOTHROW(g.validate());
    CHECK(g.nodes() == 36);
    CHECK(g.n_edges() == 180);
    CHECK(g.pillar_start == 72);
    CHECK(g.n_pillar() == 108);
    CHECK(g.edges == template_edges(TemplateKind::Inflow));
    // Pillar edges connect equal slots of distinct layers.
    for (int e = g.pillar_start; e < g.n_edges(); ++e) {
      auto [s, d] = g.edges[e];
      CHECK(s % kLayerSlots == d % kLayerSlots);
      CHECK(s / kLayerSlots != d / kLayerSlots);
    }
  }
}

TEST_CASE("absent lanes become dummy slots with zero rows") {
  SimulationRecord rec = make_record(300, "tee");
  SimGraph g = build_exit_graph(rec, rec.topology);
  int dummies = 0;
  for (int i = 0; i < g.nodes(); ++i) {
    if (!g.dummy[i]) continue;
    ++dummies;
    for (int b = 0; b < g.w; ++b) {
      CHECK(g.x_at(i, b) == 0.0);
      CHECK(g.target_at(i, b) == 0.0);
    }
  }
  CHECK(dummies > 0);

  SimulationRecord full_rec = make_record(301, "full");
  SimGraph full_g = build_exit_graph(full_rec, full_rec.topology);
  int full_dummies = 0;
  for (int i = 0; i < full_g.nodes(); ++i) full_dummies += full_g.dummy[i];
  CHECK(full_dummies < dummies);
}

TEST_CASE("model input hides target rows while targets keep them") {
  SimulationRecord rec = make_record(310, "full");
  SimGraph g = build_exit_graph(rec, rec.topology);
  bool some_target_nonzero = false;
  for (int i = 0; i < g.nodes(); ++i) {
    if (!g.is_target[i]) continue;
    CHECK(i >= kExitIncoming);
    for (int b = 0; b < g.w; ++b) {
      CHECK(g.x_at(i, b) == 0.0);
      if (g.target_at(i, b) != 0.0) some_target_nonzero = true;
    }
  }
  CHECK(some_target_nonzero);
  // Non-target rows carry the observed stop-bar wave on both sides.
  for (int i = 0; i < kExitIncoming; ++i) {
    if (g.dummy[i]) continue;
    for (int b = 0; b < g.w; ++b) CHECK(g.x_at(i, b) == g.target_at(i, b));
  }
}

TEST_CASE("edge features follow the rotated tmc, drv, sig layout") {
  SimulationRecord rec = make_record(320, "asymmetric");
  SimGraph g = build_exit_graph(rec, rec.topology);
  for (int e = 0; e < g.n_edges(); e += 5) {
    int rot = g.edge_rot[e];
    int base = rot < 0 ? 0 : rot;
    for (int c = 0; c < 12; ++c) {
      int a = (base + c / 3) % 4;
      CHECK(g.edge_feature(e, c, 0) == rec.tmc.ratios[a][c % 3]);
    }
    auto drv = rec.drv.as_array();
    for (int c = 0; c < 9; ++c) CHECK(g.edge_feature(e, 12 + c, 3) == drv[c]);
    for (int p = 0; p < 8; ++p)
      for (int b = 0; b < g.w; b += 17)
        CHECK(g.edge_feature(e, 21 + p, b) == rec.sig.at(p, b));
  }
  CHECK_THROWS_AS(g.edge_feature(0, kEdgeFeatureDim, 0), std::invalid_argument);
  CHECK_THROWS_AS(g.edge_feature(g.n_edges(), 0, 0), std::invalid_argument);
}

TEST_CASE("edge feature means equal the bucket averages") {
  SimulationRecord rec = make_record(330, "full");
  SimGraph g = build_exit_graph(rec, rec.topology);
  auto means = g.edge_feature_means();
  REQUIRE(static_cast<int>(means.size()) == g.n_edges() * kEdgeFeatureDim);
  for (int e = 0; e < g.n_edges(); e += 7)
    for (int c = 0; c < kEdgeFeatureDim; ++c) {
      double direct = 0;
      for (int b = 0; b < g.w; ++b) direct += g.edge_feature(e, c, b);
      direct /= g.w;
      CHECK(means[e * kEdgeFeatureDim + c] == doctest::Approx(direct).epsilon(1e-12));
    }
}

TEST_CASE("rotation is canonical on exit edges and layer indexed on inflow edges") {
  SimulationRecord rec = make_record(340, "full");
  SimGraph g = build_exit_graph(rec, rec.topology);
  for (int e = 0; e < g.n_edges(); ++e)
    CHECK(g.edge_rot[e] == -1);

  SimGraph gi = build_inflow_graph(rec, rec.topology);
  for (int e = 0; e < gi.pillar_start; ++e)
    CHECK(gi.edge_rot[e] == gi.edges[e].first / kLayerSlots);
  for (int e = gi.pillar_start; e < gi.n_edges(); ++e)
    CHECK(gi.edge_rot[e] == gi.edges[e].second / kLayerSlots);
}

TEST_CASE("inflow stop rows are observed and feeds are the prediction side") {
  SimulationRecord rec = make_record(350, "full");
  SimGraph g = build_inflow_graph(rec, rec.topology);
  for (int node = 0; node < g.nodes(); ++node) {
    int slot = node % kLayerSlots;
    if (g.dummy[node]) continue;
    if (slot < kLayerStopSlots)
      CHECK_FALSE(g.is_target[node]);
    else
      CHECK(g.is_target[node]);
  }
}

TEST_CASE("dataset file round trips graphs exactly") {
  namespace fs = std::filesystem;
  std::vector<SimGraph> graphs;
  std::uint64_t seed = 400;
  for (const char* name : {"full", "tee"}) {
    SimulationRecord rec = make_record(seed++, name);
    graphs.push_back(build_exit_graph(rec, rec.topology));
  }
  fs::path dir = fs::temp_directory_path() / "looptwin_graphs_test";
  fs::create_directories(dir);
  std::string path = (dir / "graphs.bin").string();
  write_graph_dataset(path, graphs);
  auto back = read_graph_dataset(path);
  REQUIRE(back.size() == graphs.size());
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    CHECK(back[i].kind == graphs[i].kind);
    CHECK(back[i].record_id == graphs[i].record_id);
    CHECK(back[i].w == graphs[i].w);
    CHECK(back[i].edges == graphs[i].edges);
    CHECK(back[i].pillar_start == graphs[i].pillar_start);
    CHECK(back[i].X == graphs[i].X);
    CHECK(back[i].targets == graphs[i].targets);
    CHECK(back[i].dummy == graphs[i].dummy);
    CHECK(back[i].is_target == graphs[i].is_target);
    CHECK(back[i].tmc == graphs[i].tmc);
    CHECK(back[i].drv == graphs[i].drv);
    CHECK(back[i].sig == graphs[i].sig);
    CHECK(back[i].edge_rot == graphs[i].edge_rot);
    CHECK_NOTHROW(back[i].validate());
  }
  CHECK_THROWS(read_graph_dataset((dir / "missing.bin").string()));
}

TEST_CASE("graph labels name every node uniquely") {
  for (TemplateKind kind : {TemplateKind::Exit, TemplateKind::Inflow}) {
    int n = kind == TemplateKind::Exit ? kExitNodes : kInflowNodes;
    std::set<std::string> names;
    for (int i = 0; i < n; ++i) names.insert(graph_node_label(kind, i));
    CHECK(static_cast<int>(names.size()) == n);
  }
}

}  // TEST_SUITE
