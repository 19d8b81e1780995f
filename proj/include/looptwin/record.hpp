#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "looptwin/core.hpp"
#include "looptwin/signal.hpp"
#include "looptwin/topology.hpp"

namespace looptwin {

// End-to-end counts for one (approach, movement) stream over the whole
// simulated horizon including the flush tail. Conservation holds exactly
// unless a warning says otherwise.
struct StreamTotals {
  long inflow = 0;
  long stopbar = 0;
  long exited = 0;
};

struct SimulationRecord {
  std::string intersection_id;
  SignalStateSeries sig;
  TurningMovementCounts tmc;
  DrivingBehavior drv;
  // Keyed by lane id. stp lanes are incoming slots, ext lanes outgoing slots,
  // inf lanes upstream feed slots.
  std::map<std::string, Waveform> stp;
  std::map<std::string, Waveform> ext;
  std::map<std::string, Waveform> inf;

  SignalTimingPlan plan;
  IntersectionTopology topology;
  std::uint64_t seed = 0;
  std::array<double, 4> rates_veh_h{};
  std::string regime = "real";
  double speed_factor_mean = 1.2;
  double speed_factor_sd = 0.3;
  std::array<std::array<StreamTotals, 3>, 4> totals{};
  long clipped_events = 0;
  std::vector<std::string> warnings;

  long total(DetectorKind kind) const;
  void validate() const;

  std::string to_jsonl() const;
  static SimulationRecord from_jsonl(const std::string& line);
};

void write_records(std::ostream& out, const std::vector<SimulationRecord>& records);
std::vector<SimulationRecord> read_records(std::istream& in);
std::vector<SimulationRecord> read_records_file(const std::string& path);

}  // namespace looptwin
