// SPDX-License-Identifier: Apache-2.0
//
// DaS preprocessing: amplitude shape trend (first-order temporal difference of
// normalized frames), time windowing, subcarrier fusion and assembly of the
// network input triple (S, m, s_n) plus the empty-room reference b.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "tcdfern/csi.hpp"

namespace tcdfern::das {

struct MovingTag {};
using MovingFrame = csi::RealFrame<MovingTag>;

/// Dense row-major matrix, oldest time step first when it holds a window.
struct WindowMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;

  WindowMatrix() = default;
  WindowMatrix(int r, int c) : rows(r), cols(c), values(static_cast<std::size_t>(r) * c, 0.0) {}

  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
  double& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols + c]; }
  std::span<const double> row(int r) const {
    return {values.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }
};

using SpatialWindow = WindowMatrix;

struct DasSample {
  SpatialWindow spatial;             // S: tau x (Q*K)
  std::vector<double> moving;        // m: tau fused AST values
  std::vector<double> last_spatial;  // s_n: equals the final row of S
  std::optional<int> label;          // case 1..4
  int pair_id = 1;
  std::int64_t end_tick = 0;
};

struct ReferenceSpatial {
  std::vector<double> values;  // b
};

struct WindowingStats {
  std::size_t short_streams = 0;
};

/// cur - prev, elementwise.
MovingFrame ast(const csi::NormalizedFrame& prev, const csi::NormalizedFrame& cur);

/// Subcarrier-major within each antenna pair: index = k * Q + q.
template <class Tag>
std::vector<double> flatten_frame(const csi::RealFrame<Tag>& frame) {
  return frame.values();
}

/// Row-wise arithmetic mean of a tau x (Q*K) window of AST values.
std::vector<double> subcarrier_fusion(const WindowMatrix& window_of_moving);

/// Slides a tau-wide window over a stream of normalized frames. The first tick
/// only seeds the AST and never ends a window, so a stream of length L yields
/// floor((L - 1 - tau) / stride) + 1 samples.
std::vector<DasSample> make_samples(std::span<const csi::NormalizedFrame> stream, int tau, int stride,
                                    std::optional<int> label = std::nullopt, int pair_id = 1,
                                    std::int64_t first_tick = 0, WindowingStats* stats = nullptr);

/// Mean of up to max_count empty-room spatial vectors.
ReferenceSpatial reference_spatial(std::span<const std::vector<double>> empty_vectors, std::size_t max_count = 100);

/// Network input for B samples. Sequences are time-major: row t * B + i holds
/// step t of sample i.
struct BatchInput {
  int batch = 0;
  int tau = 0;
  int dim = 0;
  std::vector<double> spatial;       // (tau * B) x dim
  std::vector<double> moving;        // (tau * B) x 1
  std::vector<double> last_spatial;  // B x dim
  std::vector<double> references;    // R x dim
  std::vector<int> reference_index;  // per sample, row into references
  std::vector<int> labels;           // per sample 0..3, or -1 when unknown
  int reference_count() const { return dim == 0 ? 0 : static_cast<int>(references.size() / dim); }
};

/// Builds a batch where every sample uses the same reference b.
BatchInput assemble_batch(std::span<const DasSample> samples, const ReferenceSpatial& reference);

/// Compact storage for many overlapping windows: each preprocessed stream is
/// kept once and windows are indices into it.
class SampleSet {
 public:
  struct Window {
    std::uint32_t stream = 0;
    std::uint32_t end = 0;  // index of the window's last tick within the stream
    int label = 0;          // case 1..4, 0 when unknown
  };

  SampleSet() = default;
  SampleSet(int tau, int dim) : tau_(tau), dim_(dim) {}

  int tau() const { return tau_; }
  int dim() const { return dim_; }
  std::size_t size() const { return windows_.size(); }
  std::size_t stream_count() const { return streams_.size(); }

  /// Appends a stream and all its windows; returns the number of windows added.
  std::size_t add_stream(std::span<const csi::NormalizedFrame> frames, int pair_id, std::int64_t first_tick,
                         int label, int stride, WindowingStats* stats = nullptr);

  /// Same, but from already-flattened normalized rows (ticks x dim).
  std::size_t add_flat_stream(std::vector<double> flat, int pair_id, std::int64_t first_tick, int label, int stride,
                              WindowingStats* stats = nullptr);

  void set_reference(int pair_id, ReferenceSpatial ref);
  const ReferenceSpatial& reference(int pair_id) const;
  bool has_reference(int pair_id) const;
  std::vector<int> reference_pairs() const;

  const Window& window(std::size_t i) const { return windows_[i]; }
  int label(std::size_t i) const { return windows_[i].label; }
  int pair_id(std::size_t i) const { return streams_[windows_[i].stream].pair_id; }
  std::int64_t end_tick(std::size_t i) const;

  DasSample sample(std::size_t i) const;
  BatchInput batch(std::span<const std::size_t> indices) const;

  /// Spatial vectors from case-1 streams of the pair, taken round-robin by tick.
  std::vector<std::vector<double>> empty_room_vectors(int pair_id, std::size_t max_count) const;

  /// Raw access for serialization.
  struct Stream {
    int pair_id = 1;
    std::int64_t first_tick = 0;
    int label = 0;
    int stride = 1;
    std::vector<double> flat;   // ticks x dim, normalized
    std::vector<double> fused;  // per tick; entry 0 is unused
    std::size_t ticks(int dim) const { return dim == 0 ? 0 : flat.size() / static_cast<std::size_t>(dim); }
  };
  const std::vector<Stream>& streams() const { return streams_; }
  const std::vector<std::pair<int, ReferenceSpatial>>& references() const { return references_; }

 private:
  int tau_ = 0;
  int dim_ = 0;
  std::vector<Stream> streams_;
  std::vector<Window> windows_;
  std::vector<std::pair<int, ReferenceSpatial>> references_;
};

}  // namespace tcdfern::das
