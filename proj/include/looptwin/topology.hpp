#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "looptwin/core.hpp"

namespace looptwin {

enum class TemplateKind { Exit, Inflow };

// Incoming slot capacity of the exit template, [approach][movement], rows
// EB/WB/NB/SB, columns left/through/right. Totals 22 incoming slots.
inline constexpr int kExitCapacity[4][3] = {{2, 3, 1}, {2, 3, 1}, {1, 3, 1}, {2, 2, 1}};

// Outgoing sides of the exit template in node order: E1..E3, W1..W3, N1..N3,
// S1..S2. Totals 11 outgoing slots.
inline constexpr int kOutgoingPerSide[4] = {3, 3, 3, 2};
inline constexpr std::array<char, 4> kSideNames = {'E', 'W', 'N', 'S'};

inline constexpr int kExitIncoming = 22;
inline constexpr int kExitOutgoing = 11;
inline constexpr int kExitNodes = 33;
inline constexpr int kExitEdges = 22;

// Inflow template: 4 layers (EB/WB/NB/SB) of 9 slots each. Slots 0..5 are the
// canonical stop-bar positions L1,L2,T1,T2,T3,R1; slots 6..8 the inflow
// detectors IN1..IN3.
inline constexpr int kLayerSlots = 9;
inline constexpr int kLayerStopSlots = 6;
inline constexpr int kLayerFeedSlots = 3;
inline constexpr int kInflowNodes = 36;
inline constexpr int kInflowIntraEdges = 72;
inline constexpr int kInflowPillarEdges = 108;
inline constexpr int kInflowEdges = 180;

struct IncomingSlot {
  Approach approach;
  Movement movement;
  int ordinal;  // 1-based within (approach, movement)
  std::string name() const;
};

struct OutgoingSlot {
  char side;
  int ordinal;  // 1-based within side
  std::string name() const;
};

// The fixed 22-edge exit template. Each incoming slot feeds exactly one
// outgoing slot; edge i has source node i.
class ExitTemplate {
 public:
  static const ExitTemplate& instance();

  const std::array<IncomingSlot, kExitIncoming>& incoming() const { return incoming_; }
  const std::array<OutgoingSlot, kExitOutgoing>& outgoing() const { return outgoing_; }
  // (source incoming node, destination outgoing node), outgoing nodes offset
  // by kExitIncoming.
  const std::array<std::pair<int, int>, kExitEdges>& edges() const { return edges_; }

  int incoming_index(Approach a, Movement m, int ordinal) const;
  std::string node_name(int node) const;

 private:
  ExitTemplate();
  std::array<IncomingSlot, kExitIncoming> incoming_;
  std::array<OutgoingSlot, kExitOutgoing> outgoing_;
  std::array<std::pair<int, int>, kExitEdges> edges_;
};

// Canonical stop-bar slot layout shared by every inflow-template layer.
Movement layer_slot_movement(int slot);   // valid for slot in [0, 6)
int layer_slot_ordinal(int slot);         // 1-based within its movement
std::string inflow_node_name(int node);

struct ApproachSpec {
  bool present = false;
  std::array<int, 3> lanes{0, 0, 0};  // physical incoming lanes, L/T/R
  int feed_lanes = 0;                 // upstream inflow detectors
  double link_length_m = 1000.0;
  double free_flow_mps = 15.0;

  int total_lanes() const { return lanes[0] + lanes[1] + lanes[2]; }
};

struct IntersectionTopology {
  std::string id;
  std::array<ApproachSpec, 4> approaches;  // EB, WB, NB, SB

  const ApproachSpec& at(Approach a) const { return approaches[static_cast<int>(a)]; }
  bool has_lane(Approach a, Movement m, int ordinal) const {
    const auto& ap = at(a);
    return ap.present && ordinal <= ap.lanes[static_cast<int>(m)];
  }
  // Detector setback; links shorter than 750 m put the detector at midpoint.
  double setback_m(Approach a) const;
  int incoming_lane_count() const;
  void validate() const;

  std::string to_json() const;
  static IntersectionTopology from_json(const std::string& text);
  static IntersectionTopology load(const std::string& path);

  // Shipped defaults: "full", "tee", "narrow-minor", "asymmetric".
  static IntersectionTopology builtin(const std::string& name);
  static std::vector<std::string> builtin_names();
};

// True for template slots with no physical lane. Exit masks cover 33 nodes
// (outgoing slot dummy iff every feeder is dummy), inflow masks 36.
std::vector<bool> dummy_mask(const IntersectionTopology& topo, TemplateKind kind);

// NEMA phase governing a movement's discharge: majors EB/WB carry 1/6, 5/2;
// minors NB/SB carry 3/8, 7/4. Right turns move with the through phase.
int governing_phase(Approach a, Movement m);

}  // namespace looptwin
