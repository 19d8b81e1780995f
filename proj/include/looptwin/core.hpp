#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace looptwin {

// Canonical observation window: 80 buckets of 5 s. Config-adjustable for
// experiments, but every shipped artifact uses these values.
inline constexpr int kWindow = 80;
inline constexpr int kBucketSeconds = 5;
inline constexpr int kCountCap = 8;

enum class DetectorKind { StopBar, Exit, Inflow };

enum class Approach : int { EB = 0, WB = 1, NB = 2, SB = 3 };
enum class Movement : int { Left = 0, Through = 1, Right = 2 };

inline constexpr std::array<const char*, 4> kApproachNames = {"EB", "WB", "NB", "SB"};
inline constexpr std::array<const char*, 3> kMovementNames = {"left", "through", "right"};

Approach approach_from_name(const std::string& name);
Movement movement_from_name(const std::string& name);

struct Waveform {
  std::string lane_id;
  DetectorKind kind = DetectorKind::StopBar;
  std::vector<int> buckets;
  int bucket_seconds = kBucketSeconds;

  int window() const { return static_cast<int>(buckets.size()); }
  long total() const;
  void validate() const;
};

// Sums groups of `factor` adjacent buckets. factor must divide the window.
Waveform rebucket(const Waveform& wf, int factor);

// Caps counts at kCountCap; *clipped_events (if given) counts capped entries.
std::vector<int> clip_saturation(const std::vector<int>& counts, long* clipped_events = nullptr);

// Turning-movement ratios, rows EB/WB/NB/SB, columns left/through/right.
// Rows for absent approaches are all-zero and flagged absent.
struct TurningMovementCounts {
  std::array<std::array<double, 3>, 4> ratios{};
  std::array<bool, 4> present{true, true, true, true};
  int horizon_seconds = 2400;

  double at(Approach a, Movement m) const {
    return ratios[static_cast<int>(a)][static_cast<int>(m)];
  }
  std::array<double, 12> flattened() const;
  void validate() const;
};

// The nine model-visible behavior parameters. speedFactor mean/std are
// simulator configuration, not part of this vector.
struct DrivingBehavior {
  double accel = 2.6;
  double decel = 4.5;
  double emergency_decel = 9.0;
  double min_gap = 2.5;
  double sigma = 0.5;
  double tau = 1.0;
  double lc_strategic = 1.0;
  double lc_cooperative = 1.0;
  double lc_speed_gain = 1.0;

  std::array<double, 9> as_array() const;
  static DrivingBehavior from_array(const std::array<double, 9>& v);
  void validate() const;
};

struct BehaviorRange {
  const char* name;
  double lo;
  double hi;
};

// Calibrated sampling ranges for the nine behavior fields, in as_array order.
inline constexpr std::array<BehaviorRange, 9> kBehaviorRanges = {{
    {"accel", 1.6, 3.6},
    {"decel", 3.0, 6.0},
    {"emergency_decel", 6.0, 12.0},
    {"min_gap", 1.0, 4.0},
    {"sigma", 0.1, 1.0},
    {"tau", 0.1, 3.0},
    {"lc_strategic", 0.1, 3.0},
    {"lc_cooperative", 0.1, 1.0},
    {"lc_speed_gain", 0.1, 3.0},
}};

}  // namespace looptwin
