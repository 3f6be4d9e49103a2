// SPDX-License-Identifier: Apache-2.0
#include "tcdfern/voting.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "tcdfern/errors.hpp"

namespace tcdfern::voting {

namespace {

void check_simplex(const PairPrediction& pred) {
  double total = 0.0;
  for (double p : pred.probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw DataIntegrityError("pair " + std::to_string(pred.pair_id) + ": probabilities must be finite and >= 0");
    }
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw DataIntegrityError("pair " + std::to_string(pred.pair_id) + ": probabilities sum to " + std::to_string(total));
  }
}

}  // namespace

void Topology::validate() const {
  if (rx_room_of_pair.empty()) throw StructuralError("topology: at least one transmission pair is required");
  std::set<int> rooms;
  for (const auto& [pair, room] : rx_room_of_pair) {
    if (room == tx_room) throw StructuralError("topology: pair " + std::to_string(pair) + " uses the TX room as RX");
    if (!rooms.insert(room).second) {
      throw StructuralError("topology: RX room " + std::to_string(room) + " appears in more than one pair");
    }
  }
}

Topology Topology::star(int pairs) {
  Topology t;
  t.tx_room = 1;
  for (int p = 1; p <= pairs; ++p) t.rx_room_of_pair[p] = p + 1;
  return t;
}

RoomProbability merge_rx(const PairPrediction& pred, int room_id) {
  check_simplex(pred);
  const auto& o = pred.probs;
  return {room_id, {o[0] + o[1], o[2] + o[3]}};
}

RoomProbability merge_tx(const PairPrediction& pred, int room_id) {
  check_simplex(pred);
  const auto& o = pred.probs;
  return {room_id, {o[0] + o[2], o[1] + o[3]}};
}

RoomProbability vote_tx(std::span<const RoomProbability> merged) {
  if (merged.empty()) throw StructuralError("vote_tx: no pairs to vote over");
  const bool identical = std::all_of(merged.begin(), merged.end(),
                                     [&](const RoomProbability& m) { return m.pv == merged.front().pv; });
  if (identical) return {merged.front().room_id, merged.front().pv};
  // Summing in sorted order makes the mean bitwise independent of pair order.
  RoomProbability out{merged.front().room_id, {0.0, 0.0}};
  std::vector<double> column(merged.size());
  for (std::size_t j = 0; j < 2; ++j) {
    for (std::size_t i = 0; i < merged.size(); ++i) column[i] = merged[i].pv[j];
    std::sort(column.begin(), column.end());
    double total = 0.0;
    for (double v : column) total += v;
    out.pv[j] = total / static_cast<double>(merged.size());
  }
  return out;
}

RoomDecision decide(const RoomProbability& pv) {
  const bool occupied = pv.pv[1] >= pv.pv[0];
  return {pv.room_id, occupied, occupied ? pv.pv[1] : pv.pv[0]};
}

std::vector<RoomDecision> predict_rooms(std::span<const PairPrediction> preds, const Topology& topology) {
  topology.validate();
  if (preds.size() != topology.rx_room_of_pair.size()) {
    throw StructuralError("predict_rooms: " + std::to_string(preds.size()) + " predictions for " +
                          std::to_string(topology.rx_room_of_pair.size()) + " pairs");
  }
  std::set<int> seen;
  std::vector<RoomProbability> tx;
  std::vector<RoomDecision> rx;
  for (const auto& pred : preds) {
    const auto it = topology.rx_room_of_pair.find(pred.pair_id);
    if (it == topology.rx_room_of_pair.end()) {
      throw StructuralError("predict_rooms: pair " + std::to_string(pred.pair_id) + " is not in the topology");
    }
    if (!seen.insert(pred.pair_id).second) {
      throw StructuralError("predict_rooms: pair " + std::to_string(pred.pair_id) + " given twice");
    }
    rx.push_back(decide(merge_rx(pred, it->second)));
    tx.push_back(merge_tx(pred, topology.tx_room));
  }
  std::vector<RoomDecision> out;
  out.push_back(decide(vote_tx(tx)));
  std::sort(rx.begin(), rx.end(), [](const RoomDecision& a, const RoomDecision& b) { return a.room_id < b.room_id; });
  out.insert(out.end(), rx.begin(), rx.end());
  return out;
}

RoomDecision DecisionSmoother::push(const RoomDecision& d) {
  auto& h = history_[d.room_id];
  h.push_back(d.occupied);
  if (static_cast<int>(h.size()) > window_) h.erase(h.begin());
  std::size_t occupied = 0;
  for (bool b : h) occupied += b ? 1 : 0;
  RoomDecision out = d;
  out.occupied = 2 * occupied >= h.size();
  return out;
}

}  // namespace tcdfern::voting
