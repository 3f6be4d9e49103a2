// SPDX-License-Identifier: Apache-2.0
#include "tcdfern/synth.hpp"

#include <algorithm>
#include <cmath>

#include "tcdfern/errors.hpp"
#include "tcdfern/random.hpp"

namespace tcdfern::synth {

namespace {

constexpr std::uint64_t kEnvTag = 0x6A09E667F3BCC909ULL;
constexpr std::uint64_t kTrainTag = 0xBB67AE8584CAA73BULL;
constexpr std::uint64_t kTestTag = 0x3C6EF372FE94F82BULL;

double bump(double q, double center, double width) {
  const double z = (q - center) / width;
  return std::exp(-0.5 * z * z);
}

double bandwidth_scale(Richness r) { return r == Richness::Rich ? 1.25 : 0.8; }

// A band-limited, time-varying ripple: the walker's phase advances every
// tick, so the band's shape (not just its level) changes.
struct Source {
  double sigma = 0.0;
  double center = 0.0;
  double width = 1.0;
  double period = 12.0;
  double phase = 0.0;
  bool full_band = false;

  double value(double q, double antenna_phase) const {
    const double envelope = full_band ? 1.0 : bump(q, center, width);
    return sigma * envelope * std::cos(2.0 * M_PI * q / period + phase + antenna_phase);
  }
};

}  // namespace

Scenario parse_scenario(const std::string& name) {
  if (name == "two-room") return Scenario::TwoRoom;
  if (name == "three-room") return Scenario::ThreeRoom;
  throw ConfigError("unknown scenario '" + name + "' (expected two-room or three-room)");
}

std::string scenario_name(Scenario s) { return s == Scenario::TwoRoom ? "two-room" : "three-room"; }

std::string regime_name(Regime r) {
  switch (r) {
    case Regime::LosBlocking: return "los-blocking";
    case Regime::NlosRich: return "nlos-rich";
    case Regime::NlosOpen: return "nlos-open";
  }
  return "?";
}

void GenConfig::validate() const {
  if (subcarriers < 2 || antenna_pairs < 1 || antenna_pairs > 4)
    throw ConfigError("generator needs Q >= 2 and 1 <= K <= 4");
  if (tau < 1 || stride < 1 || samples_per_segment < 1) throw ConfigError("tau, stride and samples_per_segment must be positive");
  if (!(sample_rate > 0.0)) throw ConfigError("sample_rate must be positive");
  if (!(0.0 < sigma_empty && sigma_empty < sigma_tx && sigma_tx < sigma_rx_nlos_open &&
        sigma_rx_nlos_open < sigma_rx_nlos_rich && sigma_rx_nlos_rich < sigma_rx_los))
    throw ConfigError("generator sigmas must satisfy 0 < empty < tx < rx_nlos_open < rx_nlos_rich < rx_los");
  if (sigma_rx_los >= 0.5) throw ConfigError("sigma_rx_los must stay below 0.5 to keep amplitudes positive");
  if (tx_footprint_depth < 0.0 || tx_footprint_depth >= 0.9 || rx_footprint_depth < 0.0 || rx_footprint_depth > 1.0)
    throw ConfigError("footprint depths out of range");
  if (!(wall_attenuation > 0.0 && wall_attenuation <= 1.0) || wall_attenuation_step < 0.0)
    throw ConfigError("wall_attenuation must lie in (0, 1] and its step must be nonnegative");
  if (baseline_drift < 0.0 || baseline_drift > 0.2) throw ConfigError("baseline_drift must lie in [0, 0.2]");
}

int case_from_occupancy(bool tx_occupied, bool rx_occupied) {
  return 1 + (tx_occupied ? 1 : 0) + (rx_occupied ? 2 : 0);
}

EnvironmentProfile EnvironmentProfile::make(const GenConfig& cfg, int pair_id) {
  cfg.validate();
  Rng rng(splitmix64(cfg.seed ^ kEnvTag ^ (static_cast<std::uint64_t>(pair_id) * 0x9E3779B97F4A7C15ULL)));
  EnvironmentProfile env;
  env.subcarriers = cfg.subcarriers;
  env.antenna_pairs = cfg.antenna_pairs;
  env.noise_sigma = cfg.sigma_empty;
  env.wall_attenuation = std::max(0.05, cfg.wall_attenuation - cfg.wall_attenuation_step * (pair_id - 1));
  env.richness = uniform01(rng) < 0.5 ? Richness::Rich : Richness::Scarce;

  const int Q = cfg.subcarriers;
  env.baseline.assign(static_cast<std::size_t>(Q) * cfg.antenna_pairs, 0.0);
  for (int k = 0; k < cfg.antenna_pairs; ++k) {
    const int terms = 3 + static_cast<int>(rng() % 4);
    for (int j = 0; j < terms; ++j) {
      const double freq = uniform(rng, 0.5, 3.5) / Q;
      const double phase = uniform(rng, 0.0, 2.0 * M_PI);
      const double amp = uniform(rng, 0.3, 1.0) / terms;
      for (int q = 0; q < Q; ++q)
        env.baseline[static_cast<std::size_t>(k) * Q + q] += amp * std::sin(2.0 * M_PI * freq * q + phase);
    }
    // sum of amplitudes is at most 1, so 1 + 0.6 * sum stays >= 0.4
    for (int q = 0; q < Q; ++q) {
      double& b = env.baseline[static_cast<std::size_t>(k) * Q + q];
      b = 1.0 + 0.6 * b;
    }
  }
  const double bw = bandwidth_scale(env.richness);
  env.tx_center = uniform(rng, 0.2 * Q, 0.8 * Q);
  env.tx_width = 0.1 * Q * bw;
  for (auto& p : env.antenna_phase) p = uniform(rng, 0.0, 2.0 * M_PI);
  return env;
}

std::vector<csi::CsiFrame> gen_stream(const EnvironmentProfile& env, const MotionModel& motion, int ticks,
                                      std::uint64_t seed, const GenConfig& cfg, int pair_id,
                                      std::int64_t first_tick) {
  cfg.validate();
  if (motion.occupancy_case < 1 || motion.occupancy_case > 4) throw ConfigError("occupancy case must be 1..4");
  if (ticks < 0) throw ConfigError("tick count must be nonnegative");
  const int Q = env.subcarriers;
  const int K = env.antenna_pairs;
  const double bw = bandwidth_scale(env.richness);
  Rng rng(splitmix64(seed));

  // Slow per-segment drift of the empty-room curve.
  std::vector<double> base(env.baseline);
  for (int k = 0; k < K; ++k) {
    const double freq = uniform(rng, 0.3, 1.5) / Q;
    const double phase = uniform(rng, 0.0, 2.0 * M_PI);
    const double amp = cfg.baseline_drift * uniform(rng, 0.5, 1.0);
    for (int q = 0; q < Q; ++q)
      base[static_cast<std::size_t>(k) * Q + q] *= 1.0 + amp * std::sin(2.0 * M_PI * freq * q + phase);
  }

  // Static footprints of still bodies.
  if (motion.tx_occupied()) {
    const double center = env.tx_center + uniform(rng, -1.5, 1.5);
    const double depth = cfg.tx_footprint_depth * env.wall_attenuation * uniform(rng, 0.8, 1.2);
    for (int k = 0; k < K; ++k)
      for (int q = 0; q < Q; ++q) base[static_cast<std::size_t>(k) * Q + q] *= 1.0 - depth * bump(q, center, env.tx_width);
  }
  if (motion.rx_occupied()) {
    const double center = uniform(rng, 0.0, Q - 1.0);
    const double depth = cfg.rx_footprint_depth * uniform(rng, 0.5, 1.0);
    for (int k = 0; k < K; ++k)
      for (int q = 0; q < Q; ++q)
        base[static_cast<std::size_t>(k) * Q + q] *= 1.0 + depth * bump(q, center, 0.15 * Q * bw);
  }

  Source tx_src;
  if (motion.tx_occupied()) {
    tx_src.sigma = cfg.sigma_tx * env.wall_attenuation;
    tx_src.center = env.tx_center;
    tx_src.width = env.tx_width;
    tx_src.period = uniform(rng, 10.0, 20.0);
    tx_src.phase = uniform(rng, 0.0, 2.0 * M_PI);
  }
  Source rx_src;
  double walker = uniform(rng, 0.1, 0.9);  // position across the band, 0..1
  if (motion.rx_occupied()) {
    rx_src.period = uniform(rng, 8.0, 16.0);
    rx_src.phase = uniform(rng, 0.0, 2.0 * M_PI);
    switch (motion.regime) {
      case Regime::NlosOpen:
        rx_src.sigma = cfg.sigma_rx_nlos_open;
        rx_src.width = 0.08 * Q * bw;
        break;
      case Regime::NlosRich:
        rx_src.sigma = cfg.sigma_rx_nlos_rich;
        rx_src.width = 0.3 * Q * bw;
        break;
      case Regime::LosBlocking:
        rx_src.sigma = cfg.sigma_rx_los;
        rx_src.width = 0.35 * Q * bw;
        walker = uniform(rng, 0.35, 0.65);
        break;
    }
  }

  std::vector<csi::CsiFrame> out;
  out.reserve(static_cast<std::size_t>(ticks));
  for (int t = 0; t < ticks; ++t) {
    if (motion.tx_occupied()) tx_src.phase += 0.4 * normal(rng);
    if (motion.rx_occupied()) {
      rx_src.phase += 0.6 * normal(rng);
      const double lo = motion.regime == Regime::LosBlocking ? 0.3 : 0.0;
      walker = std::clamp(walker + 0.03 * normal(rng), lo, 1.0 - lo);
      rx_src.center = walker * (Q - 1);
      // crossing the direct path: the whole band is disturbed
      rx_src.full_band = motion.regime == Regime::LosBlocking && std::abs(walker - 0.5) < 0.1;
    }
    csi::CsiFrame frame(pair_id, first_tick + t, Q, K);
    for (int k = 0; k < K; ++k) {
      const double ap = env.antenna_phase[static_cast<std::size_t>(k)];
      for (int q = 0; q < Q; ++q) {
        double m = 1.0;
        if (motion.tx_occupied()) m += tx_src.value(q, ap);
        if (motion.rx_occupied()) m += rx_src.value(q, ap);
        const double a = base[static_cast<std::size_t>(k) * Q + q] * m * (1.0 + env.noise_sigma * normal(rng));
        const double phi = uniform(rng, -M_PI, M_PI);
        frame.at(q, k) = std::polar(std::max(a, 1e-6), phi);
      }
    }
    out.push_back(std::move(frame));
  }
  return out;
}

csi::AmplitudeFrame CsiDataset::amplitude_frame(std::uint32_t tick, int pair_id) const {
  if (tick >= header.n_ticks || pair_id < 1 || pair_id > header.pairs)
    throw StructuralError("dataset frame (" + std::to_string(tick) + ", pair " + std::to_string(pair_id) +
                          ") out of range");
  csi::AmplitudeFrame f(header.subcarriers, header.antenna_pairs);
  const std::size_t off = frame_offset(tick, pair_id);
  for (std::size_t i = 0; i < f.size(); ++i) f.values()[i] = amplitudes[off + i];
  return f;
}

namespace {

struct Occupancy {
  std::array<int, 3> rooms{};
};

// Samples each occupancy tuple must contribute so every (pair, case) reaches
// exactly `per_case`.
std::vector<std::pair<Occupancy, int>> schedule(Scenario scenario, int per_case) {
  std::vector<std::pair<Occupancy, int>> out;
  if (scenario == Scenario::TwoRoom) {
    for (int c = 1; c <= 4; ++c) {
      Occupancy o;
      o.rooms = {(c == 2 || c == 4) ? 1 : 0, (c >= 3) ? 1 : 0, 0};
      out.push_back({o, per_case});
    }
    return out;
  }
  // each per-pair case is covered by two tuples differing in the other RX room
  for (int bits = 0; bits < 8; ++bits) {
    Occupancy o;
    o.rooms = {bits & 1, (bits >> 1) & 1, (bits >> 2) & 1};
    const int extra = (per_case % 2 == 1 && o.rooms[1] == o.rooms[2]) ? 1 : 0;
    out.push_back({o, per_case / 2 + extra});
  }
  return out;
}

void build_split(Scenario scenario, int per_case, const GenConfig& cfg, std::uint64_t tag,
                 const std::vector<EnvironmentProfile>& envs, CsiDataset& ds, SplitManifest& manifest) {
  const int P = static_cast<int>(envs.size());
  ds.header.subcarriers = cfg.subcarriers;
  ds.header.antenna_pairs = cfg.antenna_pairs;
  ds.header.pairs = P;
  ds.header.sample_rate = cfg.sample_rate;
  manifest.samples_per_case.assign(4, 0);

  // Round-robin over tuples so that every stretch of the split is mixed.
  const auto plan = schedule(scenario, per_case);
  std::vector<int> remaining;
  for (const auto& [o, n] : plan) remaining.push_back(n);
  struct Pending {
    Occupancy occ;
    int samples;
  };
  std::vector<Pending> order;
  bool any = true;
  while (any) {
    any = false;
    for (std::size_t i = 0; i < plan.size(); ++i) {
      if (remaining[i] <= 0) continue;
      const int s = std::min(cfg.samples_per_segment, remaining[i]);
      remaining[i] -= s;
      order.push_back({plan[i].first, s});
      any = true;
    }
  }

  std::size_t total_ticks = 0;
  for (const auto& p : order) total_ticks += static_cast<std::size_t>(cfg.segment_ticks(p.samples));
  if (total_ticks > 0xFFFFFFFFULL) throw ConfigError("requested dataset exceeds 2^32 ticks");
  const std::size_t fsize = static_cast<std::size_t>(ds.header.frame_size());
  ds.amplitudes.assign(total_ticks * P * fsize, 0.0f);
  ds.header.n_ticks = static_cast<std::uint32_t>(total_ticks);

  std::uint32_t cursor = 0;
  for (std::size_t si = 0; si < order.size(); ++si) {
    const auto& pend = order[si];
    const int ticks = cfg.segment_ticks(pend.samples);
    const std::uint64_t seg_seed = splitmix64(cfg.seed ^ tag ^ (static_cast<std::uint64_t>(si) << 20));
    Rng seg_rng(seg_seed);
    SegmentInfo info;
    info.start_tick = cursor;
    info.end_tick = cursor + static_cast<std::uint32_t>(ticks);
    info.occupancy = pend.occ.rooms;
    info.seed = seg_seed;
    info.samples = pend.samples;
    for (int p = 1; p <= P; ++p) {
      const bool tx = pend.occ.rooms[0] != 0;
      const bool rx = pend.occ.rooms[static_cast<std::size_t>(p)] != 0;
      MotionModel motion;
      motion.occupancy_case = case_from_occupancy(tx, rx);
      motion.regime = static_cast<Regime>(seg_rng() % 3);
      const std::uint64_t stream_seed = splitmix64(seg_seed + static_cast<std::uint64_t>(p));
      const auto frames = gen_stream(envs[static_cast<std::size_t>(p - 1)], motion, ticks, stream_seed, cfg, p, cursor);
      for (int t = 0; t < ticks; ++t) {
        const auto amp = csi::amplitude_of(frames[static_cast<std::size_t>(t)]);
        const std::size_t off = ds.frame_offset(cursor + static_cast<std::uint32_t>(t), p);
        for (std::size_t i = 0; i < fsize; ++i) ds.amplitudes[off + i] = static_cast<float>(amp.values()[i]);
      }
      ds.segments.push_back({info.start_tick, info.end_tick, static_cast<std::uint16_t>(p),
                             static_cast<std::uint8_t>(motion.occupancy_case)});
      info.pair_labels.push_back(motion.occupancy_case);
      info.regimes.push_back(motion.rx_occupied() ? regime_name(motion.regime) : "none");
      manifest.samples_per_case[static_cast<std::size_t>(motion.occupancy_case - 1)] += pend.samples;
    }
    manifest.segments.push_back(std::move(info));
    cursor += static_cast<std::uint32_t>(ticks);
  }
  // counted per pair
  for (auto& c : manifest.samples_per_case) c /= P;
}

}  // namespace

GeneratedDataset gen_dataset(Scenario scenario, int train_per_case, int test_per_case, const GenConfig& cfg) {
  cfg.validate();
  if (train_per_case < 1 || test_per_case < 1) throw ConfigError("per-case sample counts must be positive");
  GeneratedDataset out;
  out.scenario = scenario;
  out.config = cfg;
  const int P = scenario == Scenario::TwoRoom ? 1 : 2;
  std::vector<EnvironmentProfile> envs;
  for (int p = 1; p <= P; ++p) envs.push_back(EnvironmentProfile::make(cfg, p));
  build_split(scenario, train_per_case, cfg, kTrainTag, envs, out.train, out.train_manifest);
  build_split(scenario, test_per_case, cfg, kTestTag, envs, out.test, out.test_manifest);
  return out;
}

}  // namespace tcdfern::synth
