#include <doctest.h>

#include <numeric>
#include <vector>

#include "looptwin/core.hpp"
#include "looptwin/rng.hpp"

using namespace looptwin;

TEST_SUITE("core") {

TEST_CASE("rebucket matches a prefix sum oracle") {
  Rng r(21);
  Waveform wf;
  wf.lane_id = "EB_T1";
  wf.buckets.resize(kWindow);
  for (auto& b : wf.buckets) b = static_cast<int>(r.uniform_int(0, kCountCap));
  std::vector<long> prefix(wf.buckets.size() + 1, 0);
  for (std::size_t i = 0; i < wf.buckets.size(); ++i) prefix[i + 1] = prefix[i] + wf.buckets[i];
  for (int f : {1, 2, 4, 5, 8}) {
    Waveform out = rebucket(wf, f);
    CHECK(out.window() == kWindow / f);
    CHECK(out.bucket_seconds == wf.bucket_seconds * f);
    CHECK(out.total() == wf.total());
    for (int g = 0; g < out.window(); ++g)
      CHECK(out.buckets[g] == prefix[(g + 1) * f] - prefix[g * f]);
  }
}

TEST_CASE("rebucket rejects factors that do not divide the window") {
  Waveform wf;
  wf.buckets.assign(kWindow, 1);
  CHECK_THROWS_AS(rebucket(wf, 3), std::invalid_argument);
  CHECK_THROWS_AS(rebucket(wf, 0), std::invalid_argument);
}

TEST_CASE("clip_saturation caps counts and tallies events") {
  std::vector<int> counts = {0, 3, kCountCap, kCountCap + 1, 20, 5};
  long clipped = 0;
  auto out = clip_saturation(counts, &clipped);
  CHECK(out == std::vector<int>{0, 3, kCountCap, kCountCap, kCountCap, 5});
  CHECK(clipped == 2);
  auto same = clip_saturation(std::vector<int>{1, 2});
  CHECK(same == std::vector<int>{1, 2});
}

TEST_CASE("waveform validate rejects negatives and out of range counts") {
  Waveform wf;
  wf.buckets.assign(kWindow, 2);
  CHECK_NOTHROW(wf.validate());
  wf.buckets[4] = -1;
  CHECK_THROWS_AS(wf.validate(), std::invalid_argument);
  wf.buckets[4] = kCountCap + 1;
  CHECK_THROWS_AS(wf.validate(), std::invalid_argument);
}

TEST_CASE("tmc rows are simplex rows with absent approaches zeroed") {
  TurningMovementCounts tmc;
  for (int a = 0; a < 4; ++a) tmc.ratios[a] = {0.2, 0.5, 0.3};
  CHECK_NOTHROW(tmc.validate());
  auto flat = tmc.flattened();
  CHECK(flat.size() == 12);
  CHECK(flat[0] == 0.2);
  CHECK(flat[5] == 0.3);

  tmc.ratios[1][0] = 0.4;  // row sums to 1.2
  CHECK_THROWS_AS(tmc.validate(), std::invalid_argument);
  tmc.ratios[1] = {1.2, -0.1, -0.1};
  CHECK_THROWS_AS(tmc.validate(), std::invalid_argument);

  tmc.ratios[1] = {0.0, 0.0, 0.0};
  tmc.present[1] = false;
  CHECK_NOTHROW(tmc.validate());
  tmc.ratios[1] = {0.2, 0.5, 0.3};
  CHECK_THROWS_AS(tmc.validate(), std::invalid_argument);
}

TEST_CASE("behavior vector round trips through its array form") {
  DrivingBehavior drv;
  drv.accel = 2.0;
  drv.tau = 1.4;
  auto arr = drv.as_array();
  CHECK(arr.size() == 9);
  DrivingBehavior back = DrivingBehavior::from_array(arr);
  CHECK(back.as_array() == arr);
  CHECK_NOTHROW(drv.validate());
}

TEST_CASE("behavior ranges bound their defaults") {
  DrivingBehavior drv;
  auto arr = drv.as_array();
  for (std::size_t i = 0; i < kBehaviorRanges.size(); ++i) {
    CHECK(kBehaviorRanges[i].lo < kBehaviorRanges[i].hi);
    CHECK(arr[i] >= kBehaviorRanges[i].lo);
    CHECK(arr[i] <= kBehaviorRanges[i].hi);
  }
}

TEST_CASE("approach and movement names round trip") {
  for (int a = 0; a < 4; ++a)
    CHECK(static_cast<int>(approach_from_name(kApproachNames[a])) == a);
  for (int m = 0; m < 3; ++m)
    CHECK(static_cast<int>(movement_from_name(kMovementNames[m])) == m);
  CHECK_THROWS_AS(approach_from_name("XX"), std::invalid_argument);
  CHECK_THROWS_AS(movement_from_name("uturn"), std::invalid_argument);
}

}  // TEST_SUITE
