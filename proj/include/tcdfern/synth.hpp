// SPDX-License-Identifier: Apache-2.0
//
// Seeded synthetic CSI. This is a qualitative surrogate, not a radio model:
// it reproduces amplitude-variance orderings (empty < TX-room presence seen
// through a wall < RX-room presence, with NLoS-open < NLoS-rich < LoS
// blocking) and band-limited shape fluctuations, so every pipeline stage can
// be trained and tested without hardware.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tcdfern/csi.hpp"

namespace tcdfern::synth {

enum class Richness { Rich, Scarce };
enum class Regime { LosBlocking, NlosRich, NlosOpen };
enum class Scenario { TwoRoom, ThreeRoom };

Scenario parse_scenario(const std::string& name);
std::string scenario_name(Scenario s);
std::string regime_name(Regime r);

struct GenConfig {
  std::uint64_t seed = 7;
  int subcarriers = 56;
  int antenna_pairs = 4;
  double sample_rate = 10.0;
  int tau = 50;
  int stride = 5;
  int samples_per_segment = 20;

  // Modulation scales; the strict ordering is the encoded observation.
  double sigma_empty = 0.002;
  double sigma_tx = 0.03;
  double sigma_rx_nlos_open = 0.06;
  double sigma_rx_nlos_rich = 0.08;
  double sigma_rx_los = 0.12;

  double tx_footprint_depth = 0.3;   // static dip a still TX-room occupant leaves
  double rx_footprint_depth = 0.1;   // static bump left by an RX-room occupant
  double wall_attenuation = 0.6;     // scales TX-room effects at pair 1
  double wall_attenuation_step = 0.15;  // further attenuation per extra pair
  double baseline_drift = 0.02;      // per-segment slow change of the empty room

  void validate() const;
  int segment_ticks(int samples) const { return tau + 1 + (samples - 1) * stride; }
};

struct EnvironmentProfile {
  int subcarriers = 56;
  int antenna_pairs = 4;
  std::vector<double> baseline;  // K x Q, antenna-pair-major, strictly positive
  double noise_sigma = 0.002;
  double wall_attenuation = 0.6;
  Richness richness = Richness::Rich;
  double tx_center = 0.0;  // subcarrier index of the TX-room footprint
  double tx_width = 6.0;
  std::array<double, 4> antenna_phase{};

  /// Environment seen by one transmission pair, derived from (seed, pair_id).
  static EnvironmentProfile make(const GenConfig& cfg, int pair_id);
};

struct MotionModel {
  int occupancy_case = 1;  // 1..4
  Regime regime = Regime::NlosRich;
  bool tx_occupied() const { return occupancy_case == 2 || occupancy_case == 4; }
  bool rx_occupied() const { return occupancy_case == 3 || occupancy_case == 4; }
};

/// Occupancy case of a pair from (TX room occupied, RX room occupied).
int case_from_occupancy(bool tx_occupied, bool rx_occupied);

/// Deterministic stream of complex CSI frames for one pair.
std::vector<csi::CsiFrame> gen_stream(const EnvironmentProfile& env, const MotionModel& motion, int ticks,
                                      std::uint64_t seed, const GenConfig& cfg, int pair_id = 1,
                                      std::int64_t first_tick = 0);

/// One labelled stretch of ticks for one pair; [start_tick, end_tick).
struct Segment {
  std::uint32_t start_tick = 0;
  std::uint32_t end_tick = 0;
  std::uint16_t pair_id = 1;
  std::uint8_t case_label = 1;
};

/// Amplitude-only dataset, f32 on disk order [tick][pair][k][q].
struct CsiDataset {
  csi::StreamHeader header;
  std::vector<float> amplitudes;
  std::vector<Segment> segments;

  std::size_t frame_offset(std::uint32_t tick, int pair_id) const {
    return (static_cast<std::size_t>(tick) * header.pairs + static_cast<std::size_t>(pair_id - 1)) *
           static_cast<std::size_t>(header.frame_size());
  }
  csi::AmplitudeFrame amplitude_frame(std::uint32_t tick, int pair_id) const;
};

struct SegmentInfo {
  std::uint32_t start_tick = 0;
  std::uint32_t end_tick = 0;
  std::array<int, 3> occupancy{};  // rooms 1..R; unused entries stay 0
  std::vector<int> pair_labels;    // per pair
  std::vector<std::string> regimes;
  std::uint64_t seed = 0;
  int samples = 0;
};

struct SplitManifest {
  std::vector<SegmentInfo> segments;
  std::vector<int> samples_per_case;  // index 0 -> case 1, counted per pair
};

struct GeneratedDataset {
  Scenario scenario = Scenario::TwoRoom;
  GenConfig config;
  CsiDataset train;
  CsiDataset test;
  SplitManifest train_manifest;
  SplitManifest test_manifest;
};

/// Balanced dataset: `train_per_case` / `test_per_case` windows per case and
/// pair, in disjoint segments. Three-room cycles all 8 room-occupancy tuples
/// (TX room 1, RX rooms 2 and 3).
GeneratedDataset gen_dataset(Scenario scenario, int train_per_case, int test_per_case, const GenConfig& cfg);

}  // namespace tcdfern::synth
