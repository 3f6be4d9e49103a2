// SPDX-License-Identifier: Apache-2.0
#include "tcdfern/das.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "tcdfern/errors.hpp"

namespace tcdfern::das {

MovingFrame ast(const csi::NormalizedFrame& prev, const csi::NormalizedFrame& cur) {
  if (prev.subcarriers() != cur.subcarriers() || prev.antenna_pairs() != cur.antenna_pairs()) {
    throw StructuralError("ast: frame shapes differ (" + std::to_string(prev.subcarriers()) + "x" +
                          std::to_string(prev.antenna_pairs()) + " vs " + std::to_string(cur.subcarriers()) + "x" +
                          std::to_string(cur.antenna_pairs()) + ")");
  }
  MovingFrame out(cur.subcarriers(), cur.antenna_pairs());
  const auto& a = prev.values();
  const auto& b = cur.values();
  auto& d = out.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = b[i] - a[i];
  return out;
}

std::vector<double> subcarrier_fusion(const WindowMatrix& window_of_moving) {
  if (window_of_moving.rows < 1 || window_of_moving.cols < 1) {
    throw StructuralError("subcarrier_fusion: empty window");
  }
  std::vector<double> fused(static_cast<std::size_t>(window_of_moving.rows));
  for (int r = 0; r < window_of_moving.rows; ++r) {
    const auto row = window_of_moving.row(r);
    fused[static_cast<std::size_t>(r)] = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size());
  }
  return fused;
}

std::vector<DasSample> make_samples(std::span<const csi::NormalizedFrame> stream, int tau, int stride,
                                    std::optional<int> label, int pair_id, std::int64_t first_tick,
                                    WindowingStats* stats) {
  if (tau < 1 || stride < 1) throw StructuralError("make_samples: tau and stride must be >= 1");
  std::vector<DasSample> out;
  if (stream.size() < static_cast<std::size_t>(tau) + 1) {
    if (stats) ++stats->short_streams;
    return out;
  }
  const int dim = static_cast<int>(stream.front().size());

  // AST row for every tick but the first.
  std::vector<std::vector<double>> moving(stream.size());
  for (std::size_t t = 1; t < stream.size(); ++t) moving[t] = ast(stream[t - 1], stream[t]).values();

  for (std::size_t end = static_cast<std::size_t>(tau); end < stream.size(); end += static_cast<std::size_t>(stride)) {
    DasSample s;
    s.spatial = SpatialWindow(tau, dim);
    WindowMatrix window_of_moving(tau, dim);
    for (int r = 0; r < tau; ++r) {
      const std::size_t t = end - static_cast<std::size_t>(tau) + 1 + static_cast<std::size_t>(r);
      const auto& frame = stream[t].values();
      if (static_cast<int>(frame.size()) != dim) throw StructuralError("make_samples: frame shape changed mid-stream");
      std::copy(frame.begin(), frame.end(), s.spatial.values.begin() + static_cast<std::ptrdiff_t>(r) * dim);
      std::copy(moving[t].begin(), moving[t].end(), window_of_moving.values.begin() + static_cast<std::ptrdiff_t>(r) * dim);
    }
    s.moving = subcarrier_fusion(window_of_moving);
    const auto last = s.spatial.row(tau - 1);
    s.last_spatial.assign(last.begin(), last.end());
    s.label = label;
    s.pair_id = pair_id;
    s.end_tick = first_tick + static_cast<std::int64_t>(end);
    out.push_back(std::move(s));
  }
  return out;
}

ReferenceSpatial reference_spatial(std::span<const std::vector<double>> empty_vectors, std::size_t max_count) {
  if (empty_vectors.empty() || max_count == 0) throw StructuralError("reference_spatial: no empty-room vectors");
  const std::size_t n = std::min(max_count, empty_vectors.size());
  ReferenceSpatial ref;
  ref.values.assign(empty_vectors.front().size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (empty_vectors[i].size() != ref.values.size()) throw StructuralError("reference_spatial: length mismatch");
    for (std::size_t j = 0; j < ref.values.size(); ++j) ref.values[j] += empty_vectors[i][j];
  }
  for (auto& v : ref.values) v /= static_cast<double>(n);
  return ref;
}

BatchInput assemble_batch(std::span<const DasSample> samples, const ReferenceSpatial& reference) {
  if (samples.empty()) throw StructuralError("assemble_batch: empty batch");
  BatchInput in;
  in.batch = static_cast<int>(samples.size());
  in.tau = samples.front().spatial.rows;
  in.dim = samples.front().spatial.cols;
  if (static_cast<int>(reference.values.size()) != in.dim) {
    throw StructuralError("assemble_batch: reference length " + std::to_string(reference.values.size()) +
                          " != input dim " + std::to_string(in.dim));
  }
  const auto B = static_cast<std::size_t>(in.batch);
  const auto D = static_cast<std::size_t>(in.dim);
  in.spatial.resize(static_cast<std::size_t>(in.tau) * B * D);
  in.moving.resize(static_cast<std::size_t>(in.tau) * B);
  in.last_spatial.resize(B * D);
  in.references = reference.values;
  in.reference_index.assign(B, 0);
  in.labels.assign(B, -1);
  for (std::size_t i = 0; i < B; ++i) {
    const auto& s = samples[i];
    if (s.spatial.rows != in.tau || s.spatial.cols != in.dim || static_cast<int>(s.moving.size()) != in.tau) {
      throw StructuralError("assemble_batch: inconsistent sample shapes");
    }
    for (int t = 0; t < in.tau; ++t) {
      const auto row = s.spatial.row(t);
      std::copy(row.begin(), row.end(), in.spatial.begin() + static_cast<std::ptrdiff_t>((t * B + i) * D));
      in.moving[t * B + i] = s.moving[static_cast<std::size_t>(t)];
    }
    std::copy(s.last_spatial.begin(), s.last_spatial.end(), in.last_spatial.begin() + static_cast<std::ptrdiff_t>(i * D));
    if (s.label) in.labels[i] = *s.label - 1;
  }
  return in;
}

std::size_t SampleSet::add_stream(std::span<const csi::NormalizedFrame> frames, int pair_id, std::int64_t first_tick,
                                  int label, int stride, WindowingStats* stats) {
  std::vector<double> flat;
  flat.reserve(frames.size() * static_cast<std::size_t>(dim_));
  for (const auto& f : frames) {
    if (static_cast<int>(f.size()) != dim_) throw StructuralError("SampleSet: frame size does not match set dim");
    flat.insert(flat.end(), f.values().begin(), f.values().end());
  }
  return add_flat_stream(std::move(flat), pair_id, first_tick, label, stride, stats);
}

std::size_t SampleSet::add_flat_stream(std::vector<double> flat, int pair_id, std::int64_t first_tick, int label,
                                       int stride, WindowingStats* stats) {
  if (tau_ < 1 || dim_ < 1 || stride < 1) throw StructuralError("SampleSet: tau, dim and stride must be >= 1");
  if (flat.size() % static_cast<std::size_t>(dim_) != 0) throw StructuralError("SampleSet: ragged stream");
  Stream s;
  s.pair_id = pair_id;
  s.first_tick = first_tick;
  s.label = label;
  s.stride = stride;
  s.flat = std::move(flat);
  const std::size_t ticks = s.ticks(dim_);
  s.fused.assign(ticks, 0.0);
  const auto D = static_cast<std::size_t>(dim_);
  for (std::size_t t = 1; t < ticks; ++t) {
    double acc = 0.0;
    const double* cur = s.flat.data() + t * D;
    const double* prev = cur - D;
    for (std::size_t j = 0; j < D; ++j) acc += cur[j] - prev[j];
    s.fused[t] = acc / static_cast<double>(D);
  }
  if (ticks < static_cast<std::size_t>(tau_) + 1) {
    if (stats) ++stats->short_streams;
    streams_.push_back(std::move(s));
    return 0;
  }
  const auto stream_idx = static_cast<std::uint32_t>(streams_.size());
  streams_.push_back(std::move(s));
  std::size_t added = 0;
  for (std::size_t end = static_cast<std::size_t>(tau_); end < ticks; end += static_cast<std::size_t>(stride)) {
    windows_.push_back({stream_idx, static_cast<std::uint32_t>(end), label});
    ++added;
  }
  return added;
}

void SampleSet::set_reference(int pair_id, ReferenceSpatial ref) {
  if (static_cast<int>(ref.values.size()) != dim_) throw StructuralError("SampleSet: reference length mismatch");
  for (auto& [p, r] : references_) {
    if (p == pair_id) {
      r = std::move(ref);
      return;
    }
  }
  references_.emplace_back(pair_id, std::move(ref));
  std::sort(references_.begin(), references_.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
}

bool SampleSet::has_reference(int pair_id) const {
  return std::any_of(references_.begin(), references_.end(), [&](const auto& r) { return r.first == pair_id; });
}

const ReferenceSpatial& SampleSet::reference(int pair_id) const {
  for (const auto& [p, r] : references_) {
    if (p == pair_id) return r;
  }
  throw StructuralError("SampleSet: no reference for pair " + std::to_string(pair_id));
}

std::vector<int> SampleSet::reference_pairs() const {
  std::vector<int> out;
  for (const auto& r : references_) out.push_back(r.first);
  return out;
}

std::int64_t SampleSet::end_tick(std::size_t i) const {
  const auto& w = windows_[i];
  return streams_[w.stream].first_tick + static_cast<std::int64_t>(w.end);
}

DasSample SampleSet::sample(std::size_t i) const {
  const auto& w = windows_.at(i);
  const auto& s = streams_[w.stream];
  const auto D = static_cast<std::size_t>(dim_);
  DasSample out;
  out.spatial = SpatialWindow(tau_, dim_);
  out.moving.resize(static_cast<std::size_t>(tau_));
  const std::size_t first = w.end + 1 - static_cast<std::size_t>(tau_);
  std::copy(s.flat.begin() + static_cast<std::ptrdiff_t>(first * D),
            s.flat.begin() + static_cast<std::ptrdiff_t>((w.end + 1) * D), out.spatial.values.begin());
  for (int r = 0; r < tau_; ++r) out.moving[static_cast<std::size_t>(r)] = s.fused[first + static_cast<std::size_t>(r)];
  out.last_spatial.assign(s.flat.begin() + static_cast<std::ptrdiff_t>(w.end * D),
                          s.flat.begin() + static_cast<std::ptrdiff_t>((w.end + 1) * D));
  if (w.label > 0) out.label = w.label;
  out.pair_id = s.pair_id;
  out.end_tick = s.first_tick + static_cast<std::int64_t>(w.end);
  return out;
}

BatchInput SampleSet::batch(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw StructuralError("SampleSet::batch: empty batch");
  BatchInput in;
  in.batch = static_cast<int>(indices.size());
  in.tau = tau_;
  in.dim = dim_;
  const auto B = indices.size();
  const auto D = static_cast<std::size_t>(dim_);
  const auto T = static_cast<std::size_t>(tau_);
  in.spatial.resize(T * B * D);
  in.moving.resize(T * B);
  in.last_spatial.resize(B * D);
  in.reference_index.assign(B, 0);
  in.labels.assign(B, -1);

  std::vector<int> pairs;
  for (std::size_t i = 0; i < B; ++i) {
    const auto& w = windows_.at(indices[i]);
    const auto& s = streams_[w.stream];
    const std::size_t first = w.end + 1 - T;
    for (std::size_t t = 0; t < T; ++t) {
      const double* src = s.flat.data() + (first + t) * D;
      std::copy(src, src + D, in.spatial.begin() + static_cast<std::ptrdiff_t>((t * B + i) * D));
      in.moving[t * B + i] = s.fused[first + t];
    }
    const double* last = s.flat.data() + w.end * D;
    std::copy(last, last + D, in.last_spatial.begin() + static_cast<std::ptrdiff_t>(i * D));
    in.labels[i] = w.label > 0 ? w.label - 1 : -1;

    auto it = std::find(pairs.begin(), pairs.end(), s.pair_id);
    if (it == pairs.end()) {
      pairs.push_back(s.pair_id);
      it = pairs.end() - 1;
    }
    in.reference_index[i] = static_cast<int>(it - pairs.begin());
  }
  for (int p : pairs) {
    const auto& ref = reference(p).values;
    in.references.insert(in.references.end(), ref.begin(), ref.end());
  }
  return in;
}

std::vector<std::vector<double>> SampleSet::empty_room_vectors(int pair_id, std::size_t max_count) const {
  // Round-robin over empty-room streams so the reference spans segments.
  std::vector<const Stream*> empty;
  std::size_t longest = 0;
  for (const auto& s : streams_) {
    if (s.pair_id == pair_id && s.label == 1) {
      empty.push_back(&s);
      longest = std::max(longest, s.ticks(dim_));
    }
  }
  std::vector<std::vector<double>> out;
  const auto D = static_cast<std::size_t>(dim_);
  for (std::size_t t = 0; t < longest && out.size() < max_count; ++t) {
    for (const Stream* s : empty) {
      if (out.size() >= max_count) break;
      if (t >= s->ticks(dim_)) continue;
      out.emplace_back(s->flat.begin() + static_cast<std::ptrdiff_t>(t * D),
                       s->flat.begin() + static_cast<std::ptrdiff_t>((t + 1) * D));
    }
  }
  return out;
}

}  // namespace tcdfern::das
