#include "looptwin/simkit.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "nlohmann/json.hpp"

namespace looptwin {

Regime regime_from_name(const std::string& name) {
  if (name == "real") return Regime::RealTMC;
  if (name == "random") return Regime::RandomTMC;
  if (name == "mixed") return Regime::Mixed;
  throw std::invalid_argument("unknown regime: " + name);
}

const char* regime_name(Regime r) {
  switch (r) {
    case Regime::RealTMC: return "real";
    case Regime::RandomTMC: return "random";
    case Regime::Mixed: return "mixed";
  }
  return "?";
}

void DemandScenario::validate(double base_rate_veh_h) const {
  for (double r : rates_veh_h)
    if (r < 0.0 || r > 2.0 * base_rate_veh_h)
      throw std::invalid_argument("scenario: rate outside [0, 2*base]");
  tmc.validate();
  drv.validate();
  if (speed_factor_sd <= 0.0) throw std::invalid_argument("scenario: speed factor sd <= 0");
}

namespace {

enum class PhaseState { Red, Green, Yellow };

struct PhaseWindow {
  PhaseState state = PhaseState::Red;
  double green_on = 0;    // absolute onset of the current green run
  double green_off = 0;   // absolute end of green
  double yellow_off = 0;  // absolute end of yellow
};

PhaseWindow phase_window(const SignalTimingPlan& plan, int p, long t) {
  const long C = plan.cycle_length_s;
  long u = (t - plan.offset_s) % C;
  if (u < 0) u += C;
  const long base = t - u;
  const long gs = plan.green_start(p);
  const auto& ph = plan.phase(p);
  PhaseWindow w;
  w.green_on = static_cast<double>(base + gs);
  w.green_off = w.green_on + ph.green_s;
  w.yellow_off = w.green_off + ph.yellow_s;
  if (u >= gs && u < gs + ph.green_s)
    w.state = PhaseState::Green;
  else if (u >= gs + ph.green_s && u < gs + ph.green_s + ph.yellow_s)
    w.state = PhaseState::Yellow;
  return w;
}

struct SimVehicle {
  std::uint64_t vid = 0;
  double t_queue = 0;  // arrival at the back of the stop-bar queue
  double t_inflow = 0;
  Approach approach = Approach::EB;
  Movement movement = Movement::Through;
  int feed_index = 0;
  int out_node = -1;
};

struct PendingOrder {
  bool operator()(const SimVehicle& a, const SimVehicle& b) const {
    if (a.t_queue != b.t_queue) return a.t_queue > b.t_queue;
    return a.vid > b.vid;
  }
};

struct Lane {
  int node = -1;  // exit-template incoming slot
  Approach approach = Approach::EB;
  Movement movement = Movement::Through;
  int phase = 0;
  std::priority_queue<SimVehicle, std::vector<SimVehicle>, PendingOrder> pending;
  std::deque<SimVehicle> queue;
  double ready_at = -1e9;
  bool was_green = false;
  bool spill_used = false;

  std::size_t load() const { return pending.size() + queue.size(); }
};

struct ExitEvent {
  double t = 0;
  std::uint64_t seq = 0;
  SimVehicle veh;
  double t_stopbar = 0;
  int stop_node = -1;
  bool operator>(const ExitEvent& o) const {
    if (t != o.t) return t > o.t;
    return seq > o.seq;
  }
};

int pick_movement(const TurningMovementCounts& tmc, const ApproachSpec& ap, Approach a, double u) {
  double mass = 0;
  for (int m = 0; m < 3; ++m)
    if (ap.lanes[m] > 0) mass += tmc.at(a, static_cast<Movement>(m));
  if (mass <= 0) {
    int best = 0;
    for (int m = 1; m < 3; ++m)
      if (ap.lanes[m] > ap.lanes[best]) best = m;
    return best;
  }
  double r = u * mass;
  for (int m = 0; m < 3; ++m) {
    if (ap.lanes[m] <= 0) continue;
    r -= tmc.at(a, static_cast<Movement>(m));
    if (r < 0) return m;
  }
  for (int m = 2; m >= 0; --m)
    if (ap.lanes[m] > 0) return m;
  return 1;
}

}  // namespace

SimulationRecord simulate(const IntersectionTopology& topology, const SignalTimingPlan& plan,
                          const DemandScenario& scenario, int w, const VehicleObserver& observer) {
  topology.validate();
  plan.validate();
  scenario.validate(kBaseRateVehH);
  if (w < 1) throw std::invalid_argument("simulate: window must be positive");

  const ExitTemplate& tmpl = ExitTemplate::instance();
  const long window_s = static_cast<long>(w) * kBucketSeconds;
  const long min_end = window_s + static_cast<long>(kFlushMinCycles) * plan.cycle_length_s;
  const long cap_end = window_s + static_cast<long>(kFlushMaxCycles) * plan.cycle_length_s;

  const DrivingBehavior& drv = scenario.drv;
  const double headway = drv.tau + drv.min_gap / kDischargeSpeedMps;
  const double startup = (2.0 / drv.accel) * (1.0 + 0.25 / (0.25 + drv.lc_cooperative));
  const double exit_delay = kIntersectionWidthM / kDischargeSpeedMps;
  const double reassign_p =
      std::clamp(0.05 * drv.lc_speed_gain + 0.02 * drv.lc_strategic, 0.0, 0.5);

  // Lanes in template order; lanes_by_movement[a][m] indexes into `lanes`.
  std::vector<Lane> lanes;
  std::array<std::array<std::vector<int>, 3>, 4> lanes_by_movement;
  std::array<std::vector<int>, 4> approach_lanes;
  for (int i = 0; i < kExitIncoming; ++i) {
    const auto& slot = tmpl.incoming()[i];
    if (!topology.has_lane(slot.approach, slot.movement, slot.ordinal)) continue;
    Lane lane;
    lane.node = i;
    lane.approach = slot.approach;
    lane.movement = slot.movement;
    lane.phase = governing_phase(slot.approach, slot.movement);
    int idx = static_cast<int>(lanes.size());
    lanes.push_back(std::move(lane));
    lanes_by_movement[static_cast<int>(slot.approach)][static_cast<int>(slot.movement)].push_back(idx);
    approach_lanes[static_cast<int>(slot.approach)].push_back(idx);
  }

  // Raw (unclipped) per-bucket counts.
  std::map<int, std::vector<long>> stp_raw;   // keyed by incoming node
  std::map<int, std::vector<long>> ext_raw;   // keyed by outgoing node
  std::map<std::pair<int, int>, std::vector<long>> inf_raw;  // (approach, feed index)
  for (const auto& lane : lanes) stp_raw[lane.node].assign(w, 0);
  std::vector<bool> exit_mask = dummy_mask(topology, TemplateKind::Exit);
  for (int o = 0; o < kExitOutgoing; ++o)
    if (!exit_mask[kExitIncoming + o]) ext_raw[kExitIncoming + o].assign(w, 0);
  for (int a = 0; a < 4; ++a) {
    const auto& ap = topology.approaches[a];
    if (!ap.present) continue;
    for (int f = 0; f < ap.feed_lanes; ++f) inf_raw[{a, f}].assign(w, 0);
  }

  SimulationRecord rec;
  rec.intersection_id = topology.id;
  rec.tmc = scenario.tmc;
  rec.drv = drv;
  rec.plan = plan;
  rec.topology = topology;
  rec.seed = scenario.seed;
  rec.rates_veh_h = scenario.rates_veh_h;
  rec.regime = regime_name(scenario.regime == Regime::Mixed ? Regime::RealTMC : scenario.regime);
  rec.speed_factor_mean = scenario.speed_factor_mean;
  rec.speed_factor_sd = scenario.speed_factor_sd;

  Rng master(scenario.seed);
  std::array<Rng, 4> arrival_streams = {master.substream("arrivals", 0),
                                        master.substream("arrivals", 1),
                                        master.substream("arrivals", 2),
                                        master.substream("arrivals", 3)};

  std::priority_queue<ExitEvent, std::vector<ExitEvent>, std::greater<ExitEvent>> exits;
  std::uint64_t next_vid = 0;
  std::uint64_t exit_seq = 0;

  auto bucket_of = [&](double t) -> int {
    long s = static_cast<long>(std::floor(t));
    if (s < 0 || s >= window_s) return -1;
    return static_cast<int>(s / kBucketSeconds);
  };

  auto drained = [&]() {
    if (!exits.empty()) return false;
    for (const auto& lane : lanes)
      if (lane.load() > 0) return false;
    return true;
  };

  auto discharge = [&](Lane& lane, SimVehicle veh, double at) {
    int b = bucket_of(at);
    if (b >= 0) ++stp_raw[lane.node][b];
    auto& tot = rec.totals[static_cast<int>(veh.approach)][static_cast<int>(veh.movement)];
    ++tot.stopbar;
    ExitEvent ev;
    ev.t = at + exit_delay;
    ev.seq = exit_seq++;
    ev.veh = veh;
    ev.t_stopbar = at;
    ev.stop_node = lane.node;
    exits.push(ev);
  };

  long t = 0;
  for (; t < cap_end; ++t) {
    if (t >= min_end && drained()) break;

    // Arrivals cross the inflow detectors inside the recorded window only.
    if (t < window_s) {
      for (int a = 0; a < 4; ++a) {
        const auto& ap = topology.approaches[a];
        if (!ap.present) continue;
        double u = arrival_streams[a].uniform();
        int n = Rng::poisson_inverse(scenario.rates_veh_h[a] / 3600.0, u);
        for (int k = 0; k < n; ++k) {
          std::uint64_t vid = next_vid++;
          Rng vr = master.substream("veh", vid);
          Approach appr = static_cast<Approach>(a);
          int m = pick_movement(scenario.tmc, ap, appr, vr.uniform());
          const auto& choices = lanes_by_movement[a][m];
          int lane_idx = choices[0];
          for (int c : choices)
            if (lanes[c].load() < lanes[lane_idx].load()) lane_idx = c;
          if (vr.uniform() < reassign_p)
            lane_idx = choices[static_cast<std::size_t>(vr.uniform() * choices.size()) %
                               choices.size()];

          // Feed lane tracks the lateral position of the chosen stop-bar lane.
          const auto& all = approach_lanes[a];
          int pos = 0;
          for (std::size_t q = 0; q < all.size(); ++q)
            if (all[q] == lane_idx) pos = static_cast<int>(q);
          double frac = all.size() > 1 ? static_cast<double>(pos) / (all.size() - 1) : 0.0;
          int feed = static_cast<int>(std::lround(frac * (ap.feed_lanes - 1)));
          double uj = vr.uniform();
          if (uj < 0.3 && ap.feed_lanes > 1) {
            feed += uj < 0.15 ? -1 : 1;
            feed = std::clamp(feed, 0, ap.feed_lanes - 1);
          }

          double sf = vr.truncated_normal(scenario.speed_factor_mean, scenario.speed_factor_sd,
                                          0.5, 2.0);
          double base = topology.setback_m(appr) / (ap.free_flow_mps * sf);
          double jitter = vr.normal(0.0, base * (0.12 * drv.sigma + 0.04 * drv.tau));
          double travel = std::clamp(base + jitter, 1.0, 120.0);

          SimVehicle veh;
          veh.vid = vid;
          veh.t_inflow = static_cast<double>(t);
          veh.t_queue = static_cast<double>(t) + travel;
          veh.approach = appr;
          veh.movement = static_cast<Movement>(m);
          veh.feed_index = feed;
          veh.out_node = tmpl.edges()[lanes[lane_idx].node].second;

          int b = bucket_of(veh.t_inflow);
          if (b >= 0) ++inf_raw[{a, feed}][b];
          ++rec.totals[a][m].inflow;
          lanes[lane_idx].pending.push(veh);
        }
      }
    }

    for (auto& lane : lanes) {
      while (!lane.pending.empty() && lane.pending.top().t_queue < t + 1) {
        lane.queue.push_back(lane.pending.top());
        lane.pending.pop();
      }

      PhaseWindow pw = phase_window(plan, lane.phase, t);
      if (pw.state == PhaseState::Green) {
        if (!lane.was_green) {
          lane.ready_at = std::max(lane.ready_at, pw.green_on + startup);
          lane.spill_used = false;
        }
        lane.was_green = true;
        double cur = std::max(lane.ready_at, static_cast<double>(t));
        while (!lane.queue.empty()) {
          double start = std::max(cur, lane.queue.front().t_queue);
          if (start >= t + 1 || start >= pw.green_off) break;
          SimVehicle veh = lane.queue.front();
          lane.queue.pop_front();
          discharge(lane, veh, start);
          lane.ready_at = start + headway;
          cur = lane.ready_at;
        }
      } else {
        lane.was_green = false;
        if (pw.state == PhaseState::Yellow && !lane.spill_used && !lane.queue.empty()) {
          double start = std::max({lane.ready_at, static_cast<double>(t),
                                   lane.queue.front().t_queue});
          if (start < t + 1 && start < pw.yellow_off) {
            SimVehicle veh = lane.queue.front();
            lane.queue.pop_front();
            discharge(lane, veh, start);
            lane.ready_at = start + headway;
            lane.spill_used = true;
          }
        }
      }
    }

    while (!exits.empty() && exits.top().t < t + 1) {
      ExitEvent ev = exits.top();
      exits.pop();
      int b = bucket_of(ev.t);
      auto it = ext_raw.find(ev.veh.out_node);
      if (b >= 0 && it != ext_raw.end()) ++it->second[b];
      ++rec.totals[static_cast<int>(ev.veh.approach)][static_cast<int>(ev.veh.movement)].exited;
      if (observer) {
        VehicleTrace trace;
        trace.vid = ev.veh.vid;
        trace.approach = ev.veh.approach;
        trace.movement = ev.veh.movement;
        trace.stop_node = ev.stop_node;
        trace.out_node = ev.veh.out_node;
        trace.feed_index = ev.veh.feed_index;
        trace.t_inflow = ev.veh.t_inflow;
        trace.t_stopbar = ev.t_stopbar;
        trace.t_exit = ev.t;
        observer(trace);
      }
    }
  }

  if (!drained()) {
    std::ostringstream msg;
    long stuck = 0;
    for (const auto& lane : lanes) stuck += static_cast<long>(lane.load());
    msg << "non-conservation: flush cap of " << kFlushMaxCycles << " cycles reached with "
        << stuck << " vehicles still queued";
    rec.warnings.push_back(msg.str());
  }

  // Clip and assemble waveforms.
  long clipped = 0;
  auto finish = [&](const std::vector<long>& raw, const std::string& id, DetectorKind kind) {
    Waveform wf;
    wf.lane_id = id;
    wf.kind = kind;
    wf.bucket_seconds = kBucketSeconds;
    wf.buckets.resize(w);
    for (int b = 0; b < w; ++b) {
      long v = raw[b];
      if (v > kCountCap) {
        ++clipped;
        v = kCountCap;
      }
      wf.buckets[b] = static_cast<int>(v);
    }
    return wf;
  };
  for (const auto& [node, raw] : stp_raw) {
    std::string id = tmpl.node_name(node);
    rec.stp[id] = finish(raw, id, DetectorKind::StopBar);
  }
  for (const auto& [node, raw] : ext_raw) {
    std::string id = tmpl.node_name(node);
    rec.ext[id] = finish(raw, id, DetectorKind::Exit);
  }
  for (const auto& [key, raw] : inf_raw) {
    std::string id = std::string(kApproachNames[key.first]) + "_IN" + std::to_string(key.second + 1);
    rec.inf[id] = finish(raw, id, DetectorKind::Inflow);
  }
  rec.clipped_events = clipped;

  SignalStateSeries series = render_series(plan, w, kBucketSeconds);
  rec.sig = std::move(series);
  rec.validate();
  return rec;
}

DemandScenario sample_scenario(Rng& rng, const IntersectionTopology& topology, Regime regime,
                               double base_rate_veh_h) {
  DemandScenario sc;
  if (regime == Regime::Mixed)
    regime = rng.uniform() < 0.5 ? Regime::RealTMC : Regime::RandomTMC;
  sc.regime = regime;

  for (int a = 0; a < 4; ++a)
    sc.rates_veh_h[a] =
        topology.approaches[a].present ? rng.uniform(0.0, 2.0 * base_rate_veh_h) : 0.0;

  for (int a = 0; a < 4; ++a) {
    const auto& ap = topology.approaches[a];
    sc.tmc.present[a] = ap.present;
    if (!ap.present) {
      sc.tmc.ratios[a] = {0.0, 0.0, 0.0};
      continue;
    }
    std::vector<double> row;
    if (regime == Regime::RealTMC) {
      // Field-like splits: through-heavy with jitter.
      bool major = a < 2;
      std::vector<double> preset = major ? std::vector<double>{0.15, 0.70, 0.15}
                                         : std::vector<double>{0.20, 0.60, 0.20};
      std::vector<double> alpha(3);
      for (int m = 0; m < 3; ++m) alpha[m] = 60.0 * preset[m];
      row = rng.dirichlet(alpha);
    } else {
      row = rng.simplex(3);
    }
    // Mass on laneless movements goes to the others.
    double mass = 0;
    for (int m = 0; m < 3; ++m) {
      if (ap.lanes[m] == 0) row[m] = 0;
      mass += row[m];
    }
    if (mass <= 0) {
      int best = 0;
      for (int m = 1; m < 3; ++m)
        if (ap.lanes[m] > ap.lanes[best]) best = m;
      row.assign(3, 0.0);
      row[best] = 1.0;
      mass = 1.0;
    }
    for (int m = 0; m < 3; ++m) sc.tmc.ratios[a][m] = row[m] / mass;
  }

  auto ranges = kBehaviorRanges;
  std::array<double, 9> draws{};
  for (int i = 0; i < 9; ++i) draws[i] = rng.uniform(ranges[i].lo, ranges[i].hi);
  sc.drv = DrivingBehavior::from_array(draws);

  sc.speed_factor_mean = rng.uniform(1.0, 1.5);
  sc.speed_factor_sd = rng.uniform(0.1, 2.0);
  return sc;
}

std::vector<SimulationRecord> generate_corpus(const CorpusSpec& spec) {
  if (spec.n_scenarios < 1) throw std::invalid_argument("generate_corpus: need n >= 1");
  if (spec.topologies.empty()) throw std::invalid_argument("generate_corpus: need >= 1 topology");
  for (const auto& t : spec.topologies) t.validate();

  std::vector<SimulationRecord> out(spec.n_scenarios);
  Rng master(spec.seed);

  auto run_one = [&](int i) {
    const IntersectionTopology& topo = spec.topologies[i % spec.topologies.size()];
    Rng child = master.substream("scenario", static_cast<std::uint64_t>(i));
    Rng plan_rng = child.substream("plan");
    Rng param_rng = child.substream("params");
    Regime regime = spec.regime;
    if (regime == Regime::Mixed) regime = i % 2 == 0 ? Regime::RealTMC : Regime::RandomTMC;
    SignalTimingPlan plan = sample_plan(plan_rng, spec.constraints);
    DemandScenario sc = sample_scenario(param_rng, topo, regime);
    sc.seed = child.substream("sim").seed_value();
    SimulationRecord rec = simulate(topo, plan, sc, spec.w);
    std::ostringstream id;
    id << topo.id << "-" << i;
    rec.intersection_id = id.str();
    out[i] = std::move(rec);
  };

  int jobs = std::max(1, spec.jobs);
  if (jobs == 1) {
    for (int i = 0; i < spec.n_scenarios; ++i) run_one(i);
  } else {
    std::vector<std::thread> workers;
    for (int wkr = 0; wkr < jobs; ++wkr)
      workers.emplace_back([&, wkr]() {
        for (int i = wkr; i < spec.n_scenarios; i += jobs) run_one(i);
      });
    for (auto& th : workers) th.join();
  }
  return out;
}

std::string corpus_manifest(const std::vector<SimulationRecord>& records) {
  nlohmann::json j;
  j["n_records"] = records.size();
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    nlohmann::json row;
    row["index"] = i;
    row["j"] = r.intersection_id;
    row["seed"] = r.seed;
    row["topology"] = r.topology.id;
    row["regime"] = r.regime;
    row["rates_veh_h"] = r.rates_veh_h;
    row["tmc"] = r.tmc.ratios;
    row["drv"] = r.drv.as_array();
    row["speed_factor_mean"] = r.speed_factor_mean;
    row["speed_factor_sd"] = r.speed_factor_sd;
    row["cycle"] = r.plan.cycle_length_s;
    row["offset"] = r.plan.offset_s;
    row["barrier"] = r.plan.barrier_time_s;
    row["warnings"] = r.warnings;
    rows.push_back(row);
  }
  j["records"] = rows;
  return j.dump(2);
}

}  // namespace looptwin
