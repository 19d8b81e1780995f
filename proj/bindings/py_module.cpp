// Python bindings for the simulator, graph builders, models, and CLI.
// The surface deals in JSON strings and plain containers so the Python side
// stays free of bespoke types.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "looptwin/cli.hpp"
#include "looptwin/gradcheck.hpp"
#include "looptwin/harness.hpp"
#include "looptwin/simkit.hpp"
#include "looptwin/twins.hpp"

namespace py = pybind11;
using namespace looptwin;

namespace {

Regime regime_of(const std::string& name) { return regime_from_name(name); }

SimulationRecord simulate_one(const std::string& topology, std::uint64_t seed,
                              const std::string& regime) {
  Rng rng(seed);
  IntersectionTopology topo = IntersectionTopology::builtin(topology);
  SignalTimingPlan plan = sample_plan(rng, PlanConstraints::defaults());
  DemandScenario sc = sample_scenario(rng, topo, regime_of(regime));
  sc.seed = seed;
  return simulate(topo, plan, sc);
}

std::vector<std::string> corpus_jsonl(const std::vector<std::string>& topologies, int n,
                                      const std::string& regime, std::uint64_t seed, int jobs) {
  CorpusSpec spec;
  spec.n_scenarios = n;
  for (const auto& t : topologies) spec.topologies.push_back(IntersectionTopology::builtin(t));
  spec.regime = regime_of(regime);
  spec.seed = seed;
  spec.jobs = jobs;
  std::vector<std::string> lines;
  for (const auto& rec : generate_corpus(spec)) lines.push_back(rec.to_jsonl());
  return lines;
}

SimGraph graph_of(const std::string& jsonl, const std::string& kind) {
  SimulationRecord rec = SimulationRecord::from_jsonl(jsonl);
  if (kind == "exit") return build_exit_graph(rec, rec.topology);
  if (kind == "inflow") return build_inflow_graph(rec, rec.topology);
  throw std::invalid_argument("unknown graph kind: " + kind);
}

py::dict graph_shape(const std::string& jsonl, const std::string& kind) {
  SimGraph g = graph_of(jsonl, kind);
  py::dict d;
  d["nodes"] = g.nodes();
  d["edges"] = g.n_edges();
  d["edge_features"] = kEdgeFeatureDim;
  d["pillar_edges"] = g.n_pillar();
  d["window"] = g.w;
  return d;
}

std::map<std::string, std::vector<int>> impute_jsonl(const std::string& checkpoint,
                                                     const std::string& jsonl) {
  TwinConfig cfg = checkpoint_config(checkpoint);
  TwinModel<float> model;
  model.init(cfg, 0);
  model.load(checkpoint);
  SimGraph g = graph_of(jsonl, cfg.kind == TemplateKind::Exit ? "exit" : "inflow");
  std::map<std::string, std::vector<int>> out;
  for (auto& [lane, wf] : model.impute(g)) out.emplace(lane, std::move(wf.buckets));
  return out;
}

std::string gradcheck_str(std::uint64_t seed, double step) {
  return gradcheck_json(run_gradcheck(seed, step)).dump();
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> full = args;
  full.insert(full.begin(), "looptwin");
  std::vector<char*> argv;
  for (auto& a : full) argv.push_back(a.data());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

PYBIND11_MODULE(_looptwin, m) {
  m.doc() = "Loop-detector digital twins: simulator, graph builders, and models";

  m.def("version", [] { return std::string(kToolVersion); });
  m.def("builtin_topologies", [] { return IntersectionTopology::builtin_names(); });
  m.def(
      "topology_json", [](const std::string& name) { return IntersectionTopology::builtin(name).to_json(); },
      py::arg("name"));
  m.def("variant_names", [] { return TwinConfig::variant_names(); });

  m.def("simulate_record",
        [](const std::string& topology, std::uint64_t seed, const std::string& regime) {
          return simulate_one(topology, seed, regime).to_jsonl();
        },
        py::arg("topology") = "full", py::arg("seed") = 0, py::arg("regime") = "real",
        "Simulate one scenario and return the record as a JSONL line");

  m.def("generate_corpus", &corpus_jsonl, py::arg("topologies"), py::arg("n"),
        py::arg("regime") = "real", py::arg("seed") = 0, py::arg("jobs") = 1,
        "Simulate a corpus and return one JSONL line per record");

  m.def("graph_shape", &graph_shape, py::arg("record_jsonl"), py::arg("kind") = "exit",
        "Template shape of the graph built from a record");

  m.def("impute", &impute_jsonl, py::arg("checkpoint"), py::arg("record_jsonl"),
        "Impute target waveforms for a record using a trained checkpoint");

  m.def("gradcheck", &gradcheck_str, py::arg("seed") = 7, py::arg("step") = 1e-5,
        "Run the gradient check and return its report as a JSON string");

  m.def("main", &run_cli, py::arg("args"),
        "Run the command-line interface in-process; returns its exit code");
}
