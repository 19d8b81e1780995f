#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "looptwin/core.hpp"
#include "looptwin/record.hpp"
#include "looptwin/rng.hpp"
#include "looptwin/signal.hpp"
#include "looptwin/topology.hpp"

namespace looptwin {

enum class Regime { RealTMC, RandomTMC, Mixed };

Regime regime_from_name(const std::string& name);
const char* regime_name(Regime r);

struct DemandScenario {
  std::array<double, 4> rates_veh_h{};  // per approach EB/WB/NB/SB
  Regime regime = Regime::RealTMC;
  TurningMovementCounts tmc;
  DrivingBehavior drv;
  // Simulator-only speed distribution; per vehicle the factor is drawn
  // Normal(mean, sd) truncated to [0.5, 2.0].
  double speed_factor_mean = 1.2;
  double speed_factor_sd = 0.3;
  std::uint64_t seed = 0;

  void validate(double base_rate_veh_h) const;
};

inline constexpr double kBaseRateVehH = 400.0;
inline constexpr double kDischargeSpeedMps = 10.0;
inline constexpr double kIntersectionWidthM = 22.0;
inline constexpr int kFlushMinCycles = 2;
inline constexpr int kFlushMaxCycles = 40;

// Complete trace of one vehicle, reported once it crosses the exit detector.
struct VehicleTrace {
  std::uint64_t vid = 0;
  Approach approach = Approach::EB;
  Movement movement = Movement::Through;
  int stop_node = -1;  // exit-template incoming slot
  int out_node = -1;   // exit-template outgoing slot (node id >= 22)
  int feed_index = 0;  // 0-based feed lane
  double t_inflow = 0;
  double t_stopbar = 0;
  double t_exit = 0;
};

using VehicleObserver = std::function<void(const VehicleTrace&)>;

// Per-second mesoscopic queue engine. Arrivals occur only inside the recorded
// window; the run continues past it until every queue drains (bounded by
// kFlushMaxCycles, which attaches a non-conservation warning when hit).
SimulationRecord simulate(const IntersectionTopology& topology, const SignalTimingPlan& plan,
                          const DemandScenario& scenario, int w = kWindow,
                          const VehicleObserver& observer = nullptr);

// Draws rates, tmc (per regime), drv, and the speed-factor configuration.
// Mixed picks RealTMC or RandomTMC with equal probability.
DemandScenario sample_scenario(Rng& rng, const IntersectionTopology& topology, Regime regime,
                               double base_rate_veh_h = kBaseRateVehH);

struct CorpusSpec {
  int n_scenarios = 1;
  std::vector<IntersectionTopology> topologies;
  Regime regime = Regime::RealTMC;
  std::uint64_t seed = 0;
  int w = kWindow;
  PlanConstraints constraints = PlanConstraints::defaults();
  int jobs = 1;
};

// Independent seeded scenarios, topologies assigned round-robin, records
// ordered by scenario index regardless of worker count.
std::vector<SimulationRecord> generate_corpus(const CorpusSpec& spec);

// JSON manifest (per-record seeds and parameter draws) for a corpus.
std::string corpus_manifest(const std::vector<SimulationRecord>& records);

}  // namespace looptwin
