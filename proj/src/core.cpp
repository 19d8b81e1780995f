#include "looptwin/core.hpp"

#include <cmath>
#include <stdexcept>

namespace looptwin {

Approach approach_from_name(const std::string& name) {
  for (int i = 0; i < 4; ++i)
    if (name == kApproachNames[i]) return static_cast<Approach>(i);
  throw std::invalid_argument("unknown approach: " + name);
}

Movement movement_from_name(const std::string& name) {
  for (int i = 0; i < 3; ++i)
    if (name == kMovementNames[i]) return static_cast<Movement>(i);
  throw std::invalid_argument("unknown movement: " + name);
}

long Waveform::total() const {
  long t = 0;
  for (int b : buckets) t += b;
  return t;
}

void Waveform::validate() const {
  if (bucket_seconds <= 0) throw std::invalid_argument("waveform: bucket_seconds must be positive");
  for (int b : buckets) {
    if (b < 0) throw std::invalid_argument("waveform " + lane_id + ": negative count");
    if (bucket_seconds == kBucketSeconds && b > kCountCap)
      throw std::invalid_argument("waveform " + lane_id + ": count exceeds saturation cap");
  }
}

Waveform rebucket(const Waveform& wf, int factor) {
  if (factor <= 0) throw std::invalid_argument("rebucket: factor must be positive");
  int w = wf.window();
  if (w % factor != 0) throw std::invalid_argument("rebucket: factor does not divide window");
  Waveform out;
  out.lane_id = wf.lane_id;
  out.kind = wf.kind;
  out.bucket_seconds = wf.bucket_seconds * factor;
  out.buckets.resize(w / factor);
  for (int i = 0; i < w / factor; ++i) {
    int s = 0;
    for (int k = 0; k < factor; ++k) s += wf.buckets[i * factor + k];
    out.buckets[i] = s;
  }
  return out;
}

std::vector<int> clip_saturation(const std::vector<int>& counts, long* clipped_events) {
  std::vector<int> out(counts.size());
  long clipped = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] < 0) throw std::invalid_argument("clip_saturation: negative count");
    if (counts[i] > kCountCap) {
      out[i] = kCountCap;
      ++clipped;
    } else {
      out[i] = counts[i];
    }
  }
  if (clipped_events) *clipped_events = clipped;
  return out;
}

std::array<double, 12> TurningMovementCounts::flattened() const {
  std::array<double, 12> out{};
  for (int a = 0; a < 4; ++a)
    for (int m = 0; m < 3; ++m) out[a * 3 + m] = ratios[a][m];
  return out;
}

void TurningMovementCounts::validate() const {
  for (int a = 0; a < 4; ++a) {
    double row = 0.0;
    for (int m = 0; m < 3; ++m) {
      double v = ratios[a][m];
      if (v < 0.0 || v > 1.0)
        throw std::invalid_argument(std::string("tmc: ratio out of [0,1] on ") + kApproachNames[a]);
      row += v;
    }
    if (present[a]) {
      if (std::abs(row - 1.0) > 1e-9)
        throw std::invalid_argument(std::string("tmc: row of ") + kApproachNames[a] +
                                    " does not sum to 1");
    } else if (row != 0.0) {
      throw std::invalid_argument(std::string("tmc: absent approach ") + kApproachNames[a] +
                                  " has nonzero ratios");
    }
  }
  if (horizon_seconds <= 0) throw std::invalid_argument("tmc: horizon must be positive");
}

std::array<double, 9> DrivingBehavior::as_array() const {
  return {accel,        decel,          emergency_decel, min_gap, sigma,
          tau,          lc_strategic,   lc_cooperative,  lc_speed_gain};
}

DrivingBehavior DrivingBehavior::from_array(const std::array<double, 9>& v) {
  DrivingBehavior d;
  d.accel = v[0];
  d.decel = v[1];
  d.emergency_decel = v[2];
  d.min_gap = v[3];
  d.sigma = v[4];
  d.tau = v[5];
  d.lc_strategic = v[6];
  d.lc_cooperative = v[7];
  d.lc_speed_gain = v[8];
  return d;
}

void DrivingBehavior::validate() const {
  auto v = as_array();
  for (int i = 0; i < 9; ++i) {
    const auto& r = kBehaviorRanges[i];
    if (v[i] < r.lo || v[i] > r.hi)
      throw std::invalid_argument(std::string("drv: ") + r.name + " outside [" +
                                  std::to_string(r.lo) + ", " + std::to_string(r.hi) + "]");
  }
}

}  // namespace looptwin
