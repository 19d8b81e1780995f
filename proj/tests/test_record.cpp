#include <doctest.h>

#include <json.hpp>
#include <sstream>

#include "looptwin/record.hpp"
#include "looptwin/rng.hpp"
#include "looptwin/simkit.hpp"

using namespace looptwin;

namespace {

SimulationRecord sample_record(std::uint64_t seed) {
  Rng rng(seed);
  IntersectionTopology topo = IntersectionTopology::builtin("full");
  SignalTimingPlan plan = sample_plan(rng, PlanConstraints::defaults());
  DemandScenario sc = sample_scenario(rng, topo, Regime::RealTMC);
  sc.seed = seed;
  return simulate(topo, plan, sc);
}

}  // namespace

TEST_SUITE("record") {

TEST_CASE("jsonl line carries exactly the wire fields") {
  SimulationRecord rec = sample_record(101);
  std::string line = rec.to_jsonl();
  CHECK(line.find('\n') == std::string::npos);
  auto j = nlohmann::json::parse(line);
  for (const char* key : {"j", "sig", "tmc", "drv", "stp", "ext", "inf"}) CHECK(j.contains(key));
  CHECK(j.at("sig").size() == 8);
  CHECK(j.at("sig")[0].size() == 80);
  CHECK(j.at("drv").size() == 9);
  CHECK(j.at("tmc").size() == 4);
}

TEST_CASE("jsonl round trip is byte stable") {
  SimulationRecord rec = sample_record(102);
  std::string line = rec.to_jsonl();
  SimulationRecord back = SimulationRecord::from_jsonl(line);
  CHECK(back.to_jsonl() == line);
  CHECK(back.intersection_id == rec.intersection_id);
  CHECK(back.seed == rec.seed);
  CHECK(back.regime == rec.regime);
  CHECK(back.stp.size() == rec.stp.size());
  CHECK(back.ext.size() == rec.ext.size());
  CHECK(back.inf.size() == rec.inf.size());
  for (const auto& [lane, wf] : rec.stp) {
    REQUIRE(back.stp.count(lane) == 1);
    CHECK(back.stp.at(lane).buckets == wf.buckets);
  }
  for (int a = 0; a < 4; ++a)
    for (int s = 0; s < 3; ++s) {
      CHECK(back.totals[a][s].inflow == rec.totals[a][s].inflow);
      CHECK(back.totals[a][s].stopbar == rec.totals[a][s].stopbar);
      CHECK(back.totals[a][s].exited == rec.totals[a][s].exited);
    }
  CHECK(back.plan.cycle_length_s == rec.plan.cycle_length_s);
  CHECK(back.topology.to_json() == rec.topology.to_json());
}

TEST_CASE("stream io preserves order and count") {
  std::vector<SimulationRecord> recs = {sample_record(1), sample_record(2), sample_record(3)};
  std::stringstream buf;
  write_records(buf, recs);
  auto back = read_records(buf);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(back[i].to_jsonl() == recs[i].to_jsonl());
}

TEST_CASE("malformed lines are rejected") {
  CHECK_THROWS(SimulationRecord::from_jsonl("{broken"));
  CHECK_THROWS(SimulationRecord::from_jsonl("{}"));
  CHECK_THROWS_AS(read_records_file("/nonexistent/records.jsonl"), std::invalid_argument);
}

TEST_CASE("lane keys follow the template naming") {
  SimulationRecord rec = sample_record(103);
  for (const auto& [lane, wf] : rec.stp) {
    CHECK(lane.find('_') != std::string::npos);
    CHECK(wf.kind == DetectorKind::StopBar);
    CHECK(wf.window() == 80);
  }
  for (const auto& [lane, wf] : rec.ext) CHECK(wf.kind == DetectorKind::Exit);
  for (const auto& [lane, wf] : rec.inf) {
    CHECK(lane.find("_IN") != std::string::npos);
    CHECK(wf.kind == DetectorKind::Inflow);
  }
}

}  // TEST_SUITE
