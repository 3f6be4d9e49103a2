// SPDX-License-Identifier: Apache-2.0
#include "tcdfern/csi.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tcdfern/errors.hpp"

namespace tcdfern::csi {

void StreamHeader::validate() const {
  if (subcarriers <= 0 || antenna_pairs <= 0 || pairs <= 0 || !(sample_rate > 0.0)) {
    throw StructuralError("stream header: Q, K, P and sample_rate must be positive");
  }
}

CsiFrame::CsiFrame(int pair, std::int64_t t, int q, int k)
    : pair_id(pair), tick(t), subcarriers(q), antenna_pairs(k), values(static_cast<std::size_t>(q) * k) {
  if (q < 1 || k < 1) throw StructuralError("CsiFrame: Q and K must be >= 1");
}

template <class Tag>
RealFrame<Tag>::RealFrame(int q, int k, std::vector<double> values)
    : subcarriers_(q), antenna_pairs_(k), values_(std::move(values)) {
  if (q < 1 || k < 1) throw StructuralError("frame: Q and K must be >= 1");
  if (values_.size() != static_cast<std::size_t>(q) * k) {
    throw StructuralError("frame: expected " + std::to_string(q * k) + " values, got " +
                          std::to_string(values_.size()));
  }
}

template class RealFrame<AmplitudeTag>;
template class RealFrame<NormalizedTag>;

AmplitudeFrame amplitude_of(const CsiFrame& frame) {
  if (frame.values.size() != static_cast<std::size_t>(frame.subcarriers) * frame.antenna_pairs) {
    throw StructuralError("amplitude_of: value count does not match Q x K");
  }
  AmplitudeFrame out(frame.subcarriers, frame.antenna_pairs);
  for (int k = 0; k < frame.antenna_pairs; ++k) {
    for (int q = 0; q < frame.subcarriers; ++q) {
      const auto& v = frame.at(q, k);
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) {
        throw DataIntegrityError("non-finite CSI value at (t=" + std::to_string(frame.tick) +
                                 ", q=" + std::to_string(q + 1) + ", k=" + std::to_string(k + 1) + ")");
      }
      out.at(q, k) = std::abs(v);
    }
  }
  return out;
}

NormalizedFrame normalize_frame(const AmplitudeFrame& frame, NormalizeStats* stats) {
  const int n_sub = frame.subcarriers();
  const int n_ant = frame.antenna_pairs();
  if (n_sub < 2) throw StructuralError("normalize_frame: need at least 2 subcarriers");

  NormalizedFrame out(n_sub, n_ant);
  const auto& in = frame.values();
  auto& dst = out.values();
  for (int k = 0; k < n_ant; ++k) {
    const auto first = in.begin() + static_cast<std::ptrdiff_t>(k) * n_sub;
    const auto last = first + n_sub;
    if (!std::all_of(first, last, [](double x) { return std::isfinite(x); })) {
      throw DataIntegrityError("normalize_frame: non-finite amplitude in antenna pair " + std::to_string(k + 1));
    }
    const auto [lo_it, hi_it] = std::minmax_element(first, last);
    const double lo = *lo_it;
    const double span = *hi_it - lo;
    double* col = dst.data() + static_cast<std::ptrdiff_t>(k) * n_sub;
    if (span == 0.0) {
      std::fill(col, col + n_sub, 0.5);
      if (stats) ++stats->degenerate_columns;
      continue;
    }
    for (int q = 0; q < n_sub; ++q) {
      // Clamp guards against rounding pushing (x - lo) / span a hair past 1.
      col[q] = std::clamp((first[q] - lo) / span, 0.0, 1.0);
    }
  }
  return out;
}

}  // namespace tcdfern::csi
