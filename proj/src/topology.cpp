#include "looptwin/topology.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "nlohmann/json.hpp"

namespace looptwin {

namespace {

char movement_letter(Movement m) {
  switch (m) {
    case Movement::Left: return 'L';
    case Movement::Through: return 'T';
    case Movement::Right: return 'R';
  }
  return '?';
}

int side_base(char side) {
  int base = kExitIncoming;
  for (int s = 0; s < 4; ++s) {
    if (kSideNames[s] == side) return base;
    base += kOutgoingPerSide[s];
  }
  throw std::invalid_argument(std::string("unknown outgoing side ") + side);
}

}  // namespace

std::string IncomingSlot::name() const {
  return std::string(kApproachNames[static_cast<int>(approach)]) + "_" +
         movement_letter(movement) + std::to_string(ordinal);
}

std::string OutgoingSlot::name() const { return std::string(1, side) + std::to_string(ordinal); }

ExitTemplate::ExitTemplate() {
  int idx = 0;
  for (int a = 0; a < 4; ++a)
    for (int m = 0; m < 3; ++m)
      for (int k = 1; k <= kExitCapacity[a][m]; ++k)
        incoming_[idx++] = {static_cast<Approach>(a), static_cast<Movement>(m), k};

  idx = 0;
  for (int s = 0; s < 4; ++s)
    for (int k = 1; k <= kOutgoingPerSide[s]; ++k) outgoing_[idx++] = {kSideNames[s], k};

  // Turn geometry: throughs continue onto the matching-ordinal receiving lane,
  // lefts fan across the cross street's inner lanes, rights merge onto the
  // outermost receiving lane.
  auto out = [&](char side, int k) { return side_base(side) + k - 1; };
  const std::pair<const char*, int> targets[kExitEdges] = {
      {"N", 1}, {"N", 2}, {"E", 1}, {"E", 2}, {"E", 3}, {"S", 2},  // EB L1 L2 T1 T2 T3 R1
      {"S", 1}, {"S", 2}, {"W", 1}, {"W", 2}, {"W", 3}, {"N", 3},  // WB
      {"W", 1}, {"N", 1}, {"N", 2}, {"N", 3}, {"E", 3},            // NB L1 T1 T2 T3 R1
      {"E", 1}, {"E", 2}, {"S", 1}, {"S", 2}, {"W", 3},            // SB L1 L2 T1 T2 R1
  };
  for (int i = 0; i < kExitEdges; ++i) edges_[i] = {i, out(targets[i].first[0], targets[i].second)};
}

const ExitTemplate& ExitTemplate::instance() {
  static const ExitTemplate t;
  return t;
}

int ExitTemplate::incoming_index(Approach a, Movement m, int ordinal) const {
  for (int i = 0; i < kExitIncoming; ++i) {
    const auto& s = incoming_[i];
    if (s.approach == a && s.movement == m && s.ordinal == ordinal) return i;
  }
  throw std::invalid_argument("no exit-template slot " +
                              IncomingSlot{a, m, ordinal}.name());
}

std::string ExitTemplate::node_name(int node) const {
  if (node < 0 || node >= kExitNodes) throw std::invalid_argument("exit node out of range");
  if (node < kExitIncoming) return incoming_[node].name();
  return outgoing_[node - kExitIncoming].name();
}

Movement layer_slot_movement(int slot) {
  if (slot < 0 || slot >= kLayerStopSlots) throw std::invalid_argument("not a stop-bar slot");
  if (slot < 2) return Movement::Left;
  if (slot < 5) return Movement::Through;
  return Movement::Right;
}

int layer_slot_ordinal(int slot) {
  if (slot < 2) return slot + 1;
  if (slot < 5) return slot - 1;
  return 1;
}

std::string inflow_node_name(int node) {
  if (node < 0 || node >= kInflowNodes) throw std::invalid_argument("inflow node out of range");
  int layer = node / kLayerSlots;
  int slot = node % kLayerSlots;
  std::string base = std::string(kApproachNames[layer]) + "_";
  if (slot < kLayerStopSlots)
    return base + movement_letter(layer_slot_movement(slot)) + std::to_string(layer_slot_ordinal(slot));
  return base + "IN" + std::to_string(slot - kLayerStopSlots + 1);
}

double IntersectionTopology::setback_m(Approach a) const {
  const auto& ap = at(a);
  if (ap.link_length_m < 750.0) return ap.link_length_m / 2.0;
  return 500.0;
}

int IntersectionTopology::incoming_lane_count() const {
  int n = 0;
  for (const auto& ap : approaches)
    if (ap.present) n += ap.total_lanes();
  return n;
}

void IntersectionTopology::validate() const {
  for (int a = 0; a < 4; ++a) {
    const auto& ap = approaches[a];
    if (!ap.present) {
      if (ap.total_lanes() != 0 || ap.feed_lanes != 0)
        throw std::invalid_argument(std::string("topology ") + id + ": absent approach " +
                                    kApproachNames[a] + " declares lanes");
      continue;
    }
    for (int m = 0; m < 3; ++m) {
      if (ap.lanes[m] < 0 || ap.lanes[m] > kExitCapacity[a][m])
        throw std::invalid_argument(std::string("topology ") + id + ": approach " +
                                    kApproachNames[a] + " exceeds template capacity for " +
                                    kMovementNames[m] + " (max " +
                                    std::to_string(kExitCapacity[a][m]) + ")");
    }
    if (ap.total_lanes() < 1)
      throw std::invalid_argument(std::string("topology ") + id + ": approach " +
                                  kApproachNames[a] + " has no lanes");
    if (ap.feed_lanes < 1 || ap.feed_lanes > kLayerFeedSlots)
      throw std::invalid_argument(std::string("topology ") + id + ": approach " +
                                  kApproachNames[a] + " needs 1..3 feed lanes");
    if (ap.link_length_m <= 0 || ap.free_flow_mps <= 0)
      throw std::invalid_argument(std::string("topology ") + id + ": approach " +
                                  kApproachNames[a] + " has non-positive geometry");
  }
}

std::string IntersectionTopology::to_json() const {
  nlohmann::json j;
  j["id"] = id;
  for (int a = 0; a < 4; ++a) {
    const auto& ap = approaches[a];
    if (!ap.present) continue;
    nlohmann::json ja;
    ja["left"] = ap.lanes[0];
    ja["through"] = ap.lanes[1];
    ja["right"] = ap.lanes[2];
    ja["feeds"] = ap.feed_lanes;
    ja["link_length_m"] = ap.link_length_m;
    ja["free_flow_mps"] = ap.free_flow_mps;
    j["approaches"][kApproachNames[a]] = ja;
  }
  return j.dump(2);
}

IntersectionTopology IntersectionTopology::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  IntersectionTopology topo;
  topo.id = j.at("id").get<std::string>();
  for (auto& [name, ja] : j.at("approaches").items()) {
    Approach a = approach_from_name(name);
    ApproachSpec& ap = topo.approaches[static_cast<int>(a)];
    ap.present = true;
    ap.lanes[0] = ja.value("left", 0);
    ap.lanes[1] = ja.value("through", 0);
    ap.lanes[2] = ja.value("right", 0);
    ap.feed_lanes = ja.value("feeds", 1);
    ap.link_length_m = ja.value("link_length_m", 1000.0);
    ap.free_flow_mps = ja.value("free_flow_mps", 15.0);
  }
  topo.validate();
  return topo;
}

IntersectionTopology IntersectionTopology::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open topology file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

IntersectionTopology IntersectionTopology::builtin(const std::string& name) {
  IntersectionTopology t;
  t.id = name;
  auto set = [&](Approach a, int l, int th, int r, int feeds, double link) {
    ApproachSpec& ap = t.approaches[static_cast<int>(a)];
    ap.present = true;
    ap.lanes = {l, th, r};
    ap.feed_lanes = feeds;
    ap.link_length_m = link;
    ap.free_flow_mps = 15.0;
  };
  if (name == "full") {
    set(Approach::EB, 2, 3, 1, 3, 1000);
    set(Approach::WB, 2, 3, 1, 3, 1000);
    set(Approach::NB, 1, 3, 1, 3, 1000);
    set(Approach::SB, 2, 2, 1, 3, 1000);
  } else if (name == "tee") {
    // No south leg: NB approach absent, SB keeps only turns, EB loses its
    // right, WB loses its lefts.
    set(Approach::EB, 2, 3, 0, 3, 1000);
    set(Approach::WB, 0, 3, 1, 3, 1000);
    set(Approach::SB, 2, 0, 1, 2, 800);
  } else if (name == "narrow-minor") {
    set(Approach::EB, 2, 3, 1, 3, 1000);
    set(Approach::WB, 2, 3, 1, 3, 1000);
    set(Approach::NB, 1, 1, 1, 1, 600);
    set(Approach::SB, 1, 1, 1, 1, 600);
  } else if (name == "asymmetric") {
    set(Approach::EB, 2, 3, 1, 3, 1200);
    set(Approach::WB, 1, 2, 1, 2, 900);
    set(Approach::NB, 1, 3, 1, 2, 700);
    set(Approach::SB, 1, 1, 1, 1, 650);
  } else {
    throw std::invalid_argument("unknown builtin topology: " + name);
  }
  t.validate();
  return t;
}

std::vector<std::string> IntersectionTopology::builtin_names() {
  return {"full", "tee", "narrow-minor", "asymmetric"};
}

std::vector<bool> dummy_mask(const IntersectionTopology& topo, TemplateKind kind) {
  topo.validate();
  if (kind == TemplateKind::Exit) {
    const auto& tmpl = ExitTemplate::instance();
    std::vector<bool> mask(kExitNodes, false);
    for (int i = 0; i < kExitIncoming; ++i) {
      const auto& s = tmpl.incoming()[i];
      mask[i] = !topo.has_lane(s.approach, s.movement, s.ordinal);
    }
    // An outgoing slot is dummy iff nothing physical feeds it.
    for (int o = 0; o < kExitOutgoing; ++o) {
      bool fed = false;
      for (const auto& [src, dst] : tmpl.edges())
        if (dst == kExitIncoming + o && !mask[src]) fed = true;
      mask[kExitIncoming + o] = !fed;
    }
    return mask;
  }
  std::vector<bool> mask(kInflowNodes, false);
  for (int node = 0; node < kInflowNodes; ++node) {
    Approach a = static_cast<Approach>(node / kLayerSlots);
    int slot = node % kLayerSlots;
    if (slot < kLayerStopSlots) {
      mask[node] = !topo.has_lane(a, layer_slot_movement(slot), layer_slot_ordinal(slot));
    } else {
      const auto& ap = topo.at(a);
      mask[node] = !(ap.present && slot - kLayerStopSlots + 1 <= ap.feed_lanes);
    }
  }
  return mask;
}

int governing_phase(Approach a, Movement m) {
  bool left = m == Movement::Left;
  switch (a) {
    case Approach::EB: return left ? 1 : 6;
    case Approach::WB: return left ? 5 : 2;
    case Approach::NB: return left ? 3 : 8;
    case Approach::SB: return left ? 7 : 4;
  }
  throw std::invalid_argument("bad approach");
}

}  // namespace looptwin
