// SPDX-License-Identifier: Apache-2.0
//
// Online decisions: per-pair 4-case probabilities are merged into per-room
// [empty, presence] pairs. Every RX room is decided from its own pair; the
// shared TX room averages its merged probabilities over all pairs first.
//
// Case order: 1 both empty, 2 TX room only, 3 RX room only, 4 both occupied.
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace tcdfern::voting {

struct PairPrediction {
  int pair_id = 1;
  std::array<double, 4> probs{};
};

struct RoomProbability {
  int room_id = 0;
  std::array<double, 2> pv{};  // [p_empty, p_presence]
};

struct RoomDecision {
  int room_id = 0;
  bool occupied = false;
  double confidence = 0.0;
};

/// Star topology: one TX room shared by every pair, one distinct RX room per pair.
struct Topology {
  int tx_room = 1;
  std::map<int, int> rx_room_of_pair;  // pair_id -> room_id

  void validate() const;
  int room_count() const { return static_cast<int>(rx_room_of_pair.size()) + 1; }
  /// Two-room: pair 1 between TX room 1 and RX room 2. Three-room adds pair 2 -> room 3.
  static Topology star(int pairs);
};

RoomProbability merge_rx(const PairPrediction& pred, int room_id = 0);
RoomProbability merge_tx(const PairPrediction& pred, int room_id = 0);
/// Elementwise mean over pairs.
RoomProbability vote_tx(std::span<const RoomProbability> merged);
/// Argmax; an exact 0.5 / 0.5 tie counts as occupied.
RoomDecision decide(const RoomProbability& pv);
/// One decision per room, TX room first, then RX rooms by pair id.
std::vector<RoomDecision> predict_rooms(std::span<const PairPrediction> preds, const Topology& topology);

/// Majority over the last `window` decisions per room; off unless requested.
class DecisionSmoother {
 public:
  explicit DecisionSmoother(int window) : window_(window) {}
  RoomDecision push(const RoomDecision& d);

 private:
  int window_;
  std::map<int, std::vector<bool>> history_;
};

}  // namespace tcdfern::voting
