#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "looptwin/core.hpp"
#include "looptwin/rng.hpp"

namespace looptwin {

// NEMA dual-ring layout. Ring 1 runs phases 1,2 | barrier | 3,4; ring 2 runs
// 5,6 | barrier | 7,8. Phases 2/6 are the coordinated major-street throughs.
inline constexpr std::array<int, 4> kRing1Phases = {1, 2, 3, 4};
inline constexpr std::array<int, 4> kRing2Phases = {5, 6, 7, 8};

struct PhaseConstraint {
  int min_green_s = 8;
  int max_green_s = 60;
  int yellow_s = 3;
  int all_red_s = 2;
};

struct PlanConstraints {
  // Index 0 holds phase 1.
  std::array<PhaseConstraint, 8> phases;
  int cycle_min_s = 120;
  int cycle_max_s = 240;

  static PlanConstraints defaults();
  void validate() const;
};

struct PhaseTiming {
  int min_green_s = 0;
  int max_green_s = 0;
  int green_s = 0;
  int yellow_s = 3;
  int all_red_s = 2;

  int clearance() const { return yellow_s + all_red_s; }
  int span() const { return green_s + yellow_s + all_red_s; }
};

struct SignalTimingPlan {
  int cycle_length_s = 0;
  int offset_s = 0;
  // Duration of the first barrier group; both rings cross together here.
  int barrier_time_s = 0;
  std::array<PhaseTiming, 8> phases;

  const PhaseTiming& phase(int p) const { return phases[p - 1]; }
  // Start of phase p's green within the unshifted cycle.
  int green_start(int p) const;
  void validate() const;
};

struct SignalStateSeries {
  int w = 0;
  int bucket_seconds = kBucketSeconds;
  // Row-major 8×w, rows ordered phase 1..8.
  std::vector<std::uint8_t> data;

  int at(int phase_row, int bucket) const { return data[phase_row * w + bucket]; }
  std::vector<int> row_sums() const;
};

// Uniform cycle and offset, barrier time and green splits uniform over the
// feasible integer ranges. Throws when a ring cannot fit its minima.
SignalTimingPlan sample_plan(Rng& rng, const PlanConstraints& constraints);

// Binarizes green intervals with the half-bucket-majority rule: a bucket is 1
// iff the phase is green for at least half the bucket span.
SignalStateSeries render_series(const SignalTimingPlan& plan, int w, int bucket_seconds);

// True iff phase p shows green at absolute second t (after offset shift).
bool green_at_second(const SignalTimingPlan& plan, int p, long t);

}  // namespace looptwin
