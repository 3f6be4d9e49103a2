// SPDX-License-Identifier: Apache-2.0
//
// CSI frame types and per-antenna-pair amplitude normalization.
//
// All frames store their Q x K entries antenna-pair-major: entry (q, k) lives
// at index k * Q + q, so a column (one antenna pair across subcarriers) is
// contiguous and flattening is a plain copy.
#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace tcdfern::csi {

struct StreamHeader {
  int subcarriers = 56;     // Q
  int antenna_pairs = 4;    // K
  int pairs = 1;            // P
  double sample_rate = 10.0;
  std::uint32_t n_ticks = 0;

  int frame_size() const { return subcarriers * antenna_pairs; }
  void validate() const;
};

/// Raw complex channel estimate for one transmission pair at one tick.
struct CsiFrame {
  int pair_id = 1;
  std::int64_t tick = 0;
  int subcarriers = 0;
  int antenna_pairs = 0;
  std::vector<std::complex<double>> values;

  CsiFrame() = default;
  CsiFrame(int pair, std::int64_t t, int q, int k);

  std::complex<double>& at(int q, int k) { return values[static_cast<std::size_t>(k) * subcarriers + q]; }
  const std::complex<double>& at(int q, int k) const {
    return values[static_cast<std::size_t>(k) * subcarriers + q];
  }
};

// Amplitude and normalized frames share storage but are distinct types so a
// raw amplitude cannot be fed where a normalized one is expected.
template <class Tag>
class RealFrame {
 public:
  RealFrame() = default;
  RealFrame(int q, int k) : subcarriers_(q), antenna_pairs_(k), values_(static_cast<std::size_t>(q) * k, 0.0) {}
  RealFrame(int q, int k, std::vector<double> values);

  int subcarriers() const { return subcarriers_; }
  int antenna_pairs() const { return antenna_pairs_; }
  std::size_t size() const { return values_.size(); }

  double at(int q, int k) const { return values_[static_cast<std::size_t>(k) * subcarriers_ + q]; }
  double& at(int q, int k) { return values_[static_cast<std::size_t>(k) * subcarriers_ + q]; }

  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

 private:
  int subcarriers_ = 0;
  int antenna_pairs_ = 0;
  std::vector<double> values_;
};

struct AmplitudeTag {};
struct NormalizedTag {};
using AmplitudeFrame = RealFrame<AmplitudeTag>;
using NormalizedFrame = RealFrame<NormalizedTag>;

struct NormalizeStats {
  std::size_t degenerate_columns = 0;
};

/// Complex magnitude of every entry; phase is dropped here.
/// Throws DataIntegrityError naming (tick, q, k) for non-finite input.
AmplitudeFrame amplitude_of(const CsiFrame& frame);

/// Min-max normalization over subcarriers, independently per antenna pair.
/// A constant column maps to 0.5 everywhere and bumps stats->degenerate_columns.
NormalizedFrame normalize_frame(const AmplitudeFrame& frame, NormalizeStats* stats = nullptr);

}  // namespace tcdfern::csi
