#include "looptwin/record.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "nlohmann/json.hpp"

namespace looptwin {

namespace {

using nlohmann::json;

json waveforms_to_json(const std::map<std::string, Waveform>& wfs) {
  json out = json::object();
  for (const auto& [id, wf] : wfs) out[id] = wf.buckets;
  return out;
}

std::map<std::string, Waveform> waveforms_from_json(const json& j, DetectorKind kind,
                                                    int bucket_seconds) {
  std::map<std::string, Waveform> out;
  for (auto& [id, arr] : j.items()) {
    Waveform wf;
    wf.lane_id = id;
    wf.kind = kind;
    wf.bucket_seconds = bucket_seconds;
    wf.buckets = arr.get<std::vector<int>>();
    out[id] = std::move(wf);
  }
  return out;
}

json plan_to_json(const SignalTimingPlan& plan) {
  json j;
  j["cycle"] = plan.cycle_length_s;
  j["offset"] = plan.offset_s;
  j["barrier"] = plan.barrier_time_s;
  j["phases"] = json::array();
  for (const auto& ph : plan.phases) {
    j["phases"].push_back({{"min", ph.min_green_s},
                           {"max", ph.max_green_s},
                           {"green", ph.green_s},
                           {"yellow", ph.yellow_s},
                           {"all_red", ph.all_red_s}});
  }
  return j;
}

SignalTimingPlan plan_from_json(const json& j) {
  SignalTimingPlan plan;
  plan.cycle_length_s = j.at("cycle").get<int>();
  plan.offset_s = j.at("offset").get<int>();
  plan.barrier_time_s = j.at("barrier").get<int>();
  const auto& phases = j.at("phases");
  if (phases.size() != 8) throw std::invalid_argument("plan: need 8 phases");
  for (int p = 0; p < 8; ++p) {
    const auto& jp = phases[p];
    PhaseTiming& ph = plan.phases[p];
    ph.min_green_s = jp.at("min").get<int>();
    ph.max_green_s = jp.at("max").get<int>();
    ph.green_s = jp.at("green").get<int>();
    ph.yellow_s = jp.at("yellow").get<int>();
    ph.all_red_s = jp.at("all_red").get<int>();
  }
  return plan;
}

}  // namespace

long SimulationRecord::total(DetectorKind kind) const {
  const std::map<std::string, Waveform>* wfs = nullptr;
  switch (kind) {
    case DetectorKind::StopBar: wfs = &stp; break;
    case DetectorKind::Exit: wfs = &ext; break;
    case DetectorKind::Inflow: wfs = &inf; break;
  }
  long t = 0;
  for (const auto& [id, wf] : *wfs) t += wf.total();
  return t;
}

void SimulationRecord::validate() const {
  tmc.validate();
  drv.validate();
  int w = sig.w;
  auto check = [&](const std::map<std::string, Waveform>& wfs) {
    for (const auto& [id, wf] : wfs) {
      wf.validate();
      if (wf.window() != w || wf.bucket_seconds != sig.bucket_seconds)
        throw std::invalid_argument("record " + intersection_id + ": waveform " + id +
                                    " window mismatch");
    }
  };
  check(stp);
  check(ext);
  check(inf);
}

std::string SimulationRecord::to_jsonl() const {
  json j;
  j["j"] = intersection_id;
  json sig_rows = json::array();
  for (int p = 0; p < 8; ++p) {
    json row = json::array();
    for (int b = 0; b < sig.w; ++b) row.push_back(sig.at(p, b));
    sig_rows.push_back(row);
  }
  j["sig"] = sig_rows;
  j["tmc"] = tmc.ratios;
  j["drv"] = drv.as_array();
  j["stp"] = waveforms_to_json(stp);
  j["ext"] = waveforms_to_json(ext);
  j["inf"] = waveforms_to_json(inf);

  json meta;
  meta["w"] = sig.w;
  meta["bucket_seconds"] = sig.bucket_seconds;
  meta["seed"] = seed;
  meta["tmc_present"] = tmc.present;
  meta["tmc_horizon_s"] = tmc.horizon_seconds;
  meta["plan"] = plan_to_json(plan);
  meta["topology"] = json::parse(topology.to_json());
  meta["scenario"] = {{"rates_veh_h", rates_veh_h},
                      {"regime", regime},
                      {"speed_factor_mean", speed_factor_mean},
                      {"speed_factor_sd", speed_factor_sd}};
  json tot = json::object();
  for (int a = 0; a < 4; ++a) {
    json row = json::object();
    for (int m = 0; m < 3; ++m) {
      const auto& t = totals[a][m];
      row[kMovementNames[m]] = {t.inflow, t.stopbar, t.exited};
    }
    tot[kApproachNames[a]] = row;
  }
  meta["totals"] = tot;
  meta["clipped"] = clipped_events;
  meta["warnings"] = warnings;
  j["meta"] = meta;
  return j.dump();
}

SimulationRecord SimulationRecord::from_jsonl(const std::string& line) {
  json j = json::parse(line);
  SimulationRecord rec;
  rec.intersection_id = j.at("j").get<std::string>();

  const json& meta = j.at("meta");
  int w = meta.at("w").get<int>();
  int bucket_seconds = meta.at("bucket_seconds").get<int>();
  rec.seed = meta.at("seed").get<std::uint64_t>();
  rec.plan = plan_from_json(meta.at("plan"));
  rec.topology = IntersectionTopology::from_json(meta.at("topology").dump());
  const auto& sc = meta.at("scenario");
  rec.rates_veh_h = sc.at("rates_veh_h").get<std::array<double, 4>>();
  rec.regime = sc.at("regime").get<std::string>();
  rec.speed_factor_mean = sc.at("speed_factor_mean").get<double>();
  rec.speed_factor_sd = sc.at("speed_factor_sd").get<double>();
  for (int a = 0; a < 4; ++a)
    for (int m = 0; m < 3; ++m) {
      const auto& arr = meta.at("totals").at(kApproachNames[a]).at(kMovementNames[m]);
      rec.totals[a][m] = {arr[0].get<long>(), arr[1].get<long>(), arr[2].get<long>()};
    }
  rec.clipped_events = meta.at("clipped").get<long>();
  rec.warnings = meta.at("warnings").get<std::vector<std::string>>();

  rec.sig.w = w;
  rec.sig.bucket_seconds = bucket_seconds;
  rec.sig.data.assign(static_cast<std::size_t>(8) * w, 0);
  const auto& sig_rows = j.at("sig");
  if (sig_rows.size() != 8) throw std::invalid_argument("record: sig needs 8 rows");
  for (int p = 0; p < 8; ++p) {
    const auto& row = sig_rows[p];
    if (static_cast<int>(row.size()) != w) throw std::invalid_argument("record: sig row width");
    for (int b = 0; b < w; ++b) rec.sig.data[p * w + b] = row[b].get<int>() ? 1 : 0;
  }

  rec.tmc.ratios = j.at("tmc").get<std::array<std::array<double, 3>, 4>>();
  rec.tmc.present = meta.at("tmc_present").get<std::array<bool, 4>>();
  rec.tmc.horizon_seconds = meta.at("tmc_horizon_s").get<int>();
  rec.drv = DrivingBehavior::from_array(j.at("drv").get<std::array<double, 9>>());

  rec.stp = waveforms_from_json(j.at("stp"), DetectorKind::StopBar, bucket_seconds);
  rec.ext = waveforms_from_json(j.at("ext"), DetectorKind::Exit, bucket_seconds);
  rec.inf = waveforms_from_json(j.at("inf"), DetectorKind::Inflow, bucket_seconds);
  rec.validate();
  return rec;
}

void write_records(std::ostream& out, const std::vector<SimulationRecord>& records) {
  for (const auto& rec : records) out << rec.to_jsonl() << "\n";
}

std::vector<SimulationRecord> read_records(std::istream& in) {
  std::vector<SimulationRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(SimulationRecord::from_jsonl(line));
  }
  return out;
}

std::vector<SimulationRecord> read_records_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open records file: " + path);
  return read_records(in);
}

}  // namespace looptwin
