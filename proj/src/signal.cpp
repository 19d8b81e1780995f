#include "looptwin/signal.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace looptwin {
namespace {

// First and second phase of each barrier group, per ring.
struct Group {
  int a;
  int b;
};
constexpr Group kGroups[2][2] = {{{1, 2}, {3, 4}}, {{5, 6}, {7, 8}}};

int group_clearance(const std::array<PhaseTiming, 8>& ph, Group g) {
  return ph[g.a - 1].clearance() + ph[g.b - 1].clearance();
}

}  // namespace

PlanConstraints PlanConstraints::defaults() {
  PlanConstraints c;
  for (int p = 1; p <= 8; ++p) {
    PhaseConstraint& pc = c.phases[p - 1];
    switch (p) {
      case 2:
      case 6:
        pc.min_green_s = 15;
        pc.max_green_s = 80;
        break;
      case 4:
      case 8:
        pc.min_green_s = 12;
        pc.max_green_s = 60;
        break;
      default:
        pc.min_green_s = 8;
        pc.max_green_s = 40;
        break;
    }
  }
  return c;
}

void PlanConstraints::validate() const {
  if (cycle_min_s < 1 || cycle_max_s < cycle_min_s)
    throw std::invalid_argument("constraints: bad cycle range");
  for (int p = 1; p <= 8; ++p) {
    const auto& pc = phases[p - 1];
    if (pc.min_green_s < 1 || pc.max_green_s < pc.min_green_s)
      throw std::invalid_argument("constraints: bad green bounds for phase " + std::to_string(p));
    if (pc.yellow_s < 1 || pc.all_red_s < 0)
      throw std::invalid_argument("constraints: bad clearance for phase " + std::to_string(p));
  }
}

int SignalTimingPlan::green_start(int p) const {
  // Group 1 phases start at 0; group 2 phases start at the barrier.
  switch (p) {
    case 1:
    case 5:
      return 0;
    case 2:
      return phases[0].span();
    case 6:
      return phases[4].span();
    case 3:
    case 7:
      return barrier_time_s;
    case 4:
      return barrier_time_s + phases[2].span();
    case 8:
      return barrier_time_s + phases[6].span();
    default:
      throw std::invalid_argument("phase index out of range");
  }
}

void SignalTimingPlan::validate() const {
  if (cycle_length_s < 1) throw std::invalid_argument("plan: cycle must be positive");
  if (offset_s < 0 || offset_s >= cycle_length_s)
    throw std::invalid_argument("plan: offset outside [0, cycle)");
  for (int ring = 0; ring < 2; ++ring) {
    int total = 0;
    for (int p : ring == 0 ? kRing1Phases : kRing2Phases) total += phases[p - 1].span();
    if (total != cycle_length_s)
      throw std::invalid_argument("plan: ring " + std::to_string(ring + 1) +
                                  " spans do not fill the cycle");
    int first = phases[kGroups[ring][0].a - 1].span() + phases[kGroups[ring][0].b - 1].span();
    if (first != barrier_time_s)
      throw std::invalid_argument("plan: ring " + std::to_string(ring + 1) +
                                  " misses the barrier time");
  }
  for (int p = 1; p <= 8; ++p) {
    const auto& ph = phases[p - 1];
    if (ph.green_s < ph.min_green_s || ph.green_s > ph.max_green_s)
      throw std::invalid_argument("plan: green outside bounds for phase " + std::to_string(p));
  }
}

SignalTimingPlan sample_plan(Rng& rng, const PlanConstraints& constraints) {
  constraints.validate();
  SignalTimingPlan plan;
  for (int p = 1; p <= 8; ++p) {
    const auto& pc = constraints.phases[p - 1];
    PhaseTiming& ph = plan.phases[p - 1];
    ph.min_green_s = pc.min_green_s;
    ph.max_green_s = pc.max_green_s;
    ph.yellow_s = pc.yellow_s;
    ph.all_red_s = pc.all_red_s;
  }

  plan.cycle_length_s =
      static_cast<int>(rng.uniform_int(constraints.cycle_min_s, constraints.cycle_max_s));
  const int C = plan.cycle_length_s;

  // Barrier window: each ring needs its first group to fit in [0, Tb] and its
  // second group in [Tb, C].
  int tb_lo = 1;
  int tb_hi = C - 1;
  for (int ring = 0; ring < 2; ++ring) {
    Group ga = kGroups[ring][0];
    Group gb = kGroups[ring][1];
    int min_a = plan.phases[ga.a - 1].min_green_s + plan.phases[ga.b - 1].min_green_s +
                group_clearance(plan.phases, ga);
    int max_a = plan.phases[ga.a - 1].max_green_s + plan.phases[ga.b - 1].max_green_s +
                group_clearance(plan.phases, ga);
    int min_b = plan.phases[gb.a - 1].min_green_s + plan.phases[gb.b - 1].min_green_s +
                group_clearance(plan.phases, gb);
    int max_b = plan.phases[gb.a - 1].max_green_s + plan.phases[gb.b - 1].max_green_s +
                group_clearance(plan.phases, gb);
    tb_lo = std::max({tb_lo, min_a, C - max_b});
    tb_hi = std::min({tb_hi, max_a, C - min_b});
    if (tb_lo > tb_hi)
      throw std::invalid_argument("sample_plan: ring " + std::to_string(ring + 1) +
                                  " cannot fit cycle " + std::to_string(C) +
                                  " (group minima " + std::to_string(min_a) + "+" +
                                  std::to_string(min_b) + ", maxima " + std::to_string(max_a) +
                                  "+" + std::to_string(max_b) + ")");
  }
  plan.barrier_time_s = static_cast<int>(rng.uniform_int(tb_lo, tb_hi));

  // Split each group's green budget between its two phases.
  for (int ring = 0; ring < 2; ++ring) {
    for (int half = 0; half < 2; ++half) {
      Group g = kGroups[ring][half];
      int span = half == 0 ? plan.barrier_time_s : C - plan.barrier_time_s;
      int budget = span - group_clearance(plan.phases, g);
      PhaseTiming& pa = plan.phases[g.a - 1];
      PhaseTiming& pb = plan.phases[g.b - 1];
      int lo = std::max(pa.min_green_s, budget - pb.max_green_s);
      int hi = std::min(pa.max_green_s, budget - pb.min_green_s);
      if (lo > hi)
        throw std::invalid_argument("sample_plan: infeasible split for phases " +
                                    std::to_string(g.a) + "/" + std::to_string(g.b));
      pa.green_s = static_cast<int>(rng.uniform_int(lo, hi));
      pb.green_s = budget - pa.green_s;
    }
  }

  plan.offset_s = static_cast<int>(rng.uniform_int(0, C - 1));
  plan.validate();
  return plan;
}

bool green_at_second(const SignalTimingPlan& plan, int p, long t) {
  long C = plan.cycle_length_s;
  long u = (t - plan.offset_s) % C;
  if (u < 0) u += C;
  long s = plan.green_start(p);
  return u >= s && u < s + plan.phase(p).green_s;
}

SignalStateSeries render_series(const SignalTimingPlan& plan, int w, int bucket_seconds) {
  plan.validate();
  if (w < 1 || bucket_seconds < 1) throw std::invalid_argument("render_series: bad window");
  SignalStateSeries out;
  out.w = w;
  out.bucket_seconds = bucket_seconds;
  out.data.assign(static_cast<std::size_t>(8) * w, 0);

  const long C = plan.cycle_length_s;
  for (int p = 1; p <= 8; ++p) {
    const long gs = plan.green_start(p);
    const long ge = gs + plan.phase(p).green_s;
    for (int b = 0; b < w; ++b) {
      // Map the bucket span into unshifted cycle time; it covers at most two
      // arcs of [0, C).
      long t0 = static_cast<long>(b) * bucket_seconds - plan.offset_s;
      long u0 = t0 % C;
      if (u0 < 0) u0 += C;
      long overlap = 0;
      long remaining = bucket_seconds;
      long pos = u0;
      while (remaining > 0) {
        long chunk = std::min(remaining, C - pos);
        overlap += std::max(0l, std::min(pos + chunk, ge) - std::max(pos, gs));
        remaining -= chunk;
        pos = 0;
      }
      if (2 * overlap >= bucket_seconds) out.data[(p - 1) * w + b] = 1;
    }
  }
  return out;
}

std::vector<int> SignalStateSeries::row_sums() const {
  std::vector<int> sums(8, 0);
  for (int p = 0; p < 8; ++p)
    for (int b = 0; b < w; ++b) sums[p] += data[p * w + b];
  return sums;
}

}  // namespace looptwin
