// SPDX-License-Identifier: Apache-2.0
#include "tcdfern/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "tcdfern/errors.hpp"

static_assert(std::endian::native == std::endian::little, "on-disk formats assume a little-endian host");

namespace tcdfern::io {

namespace {

class Writer {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void put_string(const std::string& s) {
    if (s.size() > 0xFFFF) throw ConfigError("name too long for a length-prefixed field: " + s.substr(0, 40));
    put<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  void put_checksum() { put<std::uint64_t>(fnv1a64(bytes_.data(), bytes_.size())); }
  std::vector<std::uint8_t>& bytes() { return bytes_; }
  void reserve(std::size_t n) { bytes_.reserve(n); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void get_bytes(void* out, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::string get_string(const char* what) {
    const auto n = get<std::uint16_t>(what);
    std::string s(n, '\0');
    get_bytes(s.data(), n, what);
    return s;
  }
  void expect_magic(const char* magic) {
    char m[4];
    get_bytes(m, 4, "magic");
    if (std::memcmp(m, magic, 4) != 0) fail(std::string("bad magic (expected ") + magic + ")");
  }
  // The checksum covers every byte before it and must be the last field.
  void verify_checksum() {
    const std::size_t covered = pos_;
    const auto stored = get<std::uint64_t>("checksum");
    if (fnv1a64(bytes_.data(), covered) != stored) fail("checksum mismatch");
  }
  void expect_end() {
    if (pos_ != bytes_.size()) fail(std::to_string(bytes_.size() - pos_) + " trailing bytes");
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  [[noreturn]] void fail(const std::string& msg) const { throw CorruptFileError(origin_ + ": " + msg); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) fail(std::string("truncated while reading ") + what);
  }
  const std::vector<std::uint8_t>& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot open '" + path.string() + "'");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> bytes(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size)))
    throw CorruptFileError(path.string() + ": read failed");
  return bytes;
}

void write_file(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write '" + tmp.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ConfigError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

// ---- dataset ----------------------------------------------------------------

void validate_segments(const synth::CsiDataset& ds) {
  std::map<int, std::vector<std::pair<std::uint32_t, std::uint32_t>>> by_pair;
  for (std::size_t i = 0; i < ds.segments.size(); ++i) {
    const auto& s = ds.segments[i];
    const std::string where = "segment " + std::to_string(i);
    if (s.case_label < 1 || s.case_label > 4)
      throw StructuralError(where + ": case label " + std::to_string(s.case_label) + " outside 1..4");
    if (s.pair_id < 1 || s.pair_id > ds.header.pairs)
      throw StructuralError(where + ": pair id " + std::to_string(s.pair_id) + " outside 1.." +
                            std::to_string(ds.header.pairs));
    if (s.start_tick >= s.end_tick || s.end_tick > ds.header.n_ticks)
      throw StructuralError(where + ": tick range [" + std::to_string(s.start_tick) + ", " +
                            std::to_string(s.end_tick) + ") invalid for " + std::to_string(ds.header.n_ticks) +
                            " ticks");
    by_pair[s.pair_id].push_back({s.start_tick, s.end_tick});
  }
  for (auto& [pair, ranges] : by_pair) {
    std::sort(ranges.begin(), ranges.end());
    for (std::size_t i = 1; i < ranges.size(); ++i)
      if (ranges[i].first < ranges[i - 1].second)
        throw StructuralError("overlapping segments for pair " + std::to_string(pair));
  }
}

std::vector<std::uint8_t> encode_dataset(const synth::CsiDataset& ds) {
  ds.header.validate();
  const std::size_t expected =
      static_cast<std::size_t>(ds.header.n_ticks) * ds.header.pairs * static_cast<std::size_t>(ds.header.frame_size());
  if (ds.amplitudes.size() != expected) throw StructuralError("dataset amplitude count does not match its header");
  validate_segments(ds);
  Writer w;
  w.reserve(24 + expected * 4 + ds.segments.size() * 11);
  w.put_bytes("CSIB", 4);
  w.put<std::uint16_t>(kDatasetVersion);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(ds.header.subcarriers));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(ds.header.antenna_pairs));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(ds.header.pairs));
  w.put<float>(static_cast<float>(ds.header.sample_rate));
  w.put<std::uint32_t>(ds.header.n_ticks);
  w.put_bytes(ds.amplitudes.data(), expected * sizeof(float));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.segments.size()));
  for (const auto& s : ds.segments) {
    w.put<std::uint32_t>(s.start_tick);
    w.put<std::uint32_t>(s.end_tick);
    w.put<std::uint16_t>(s.pair_id);
    w.put<std::uint8_t>(s.case_label);
  }
  return std::move(w.bytes());
}

synth::CsiDataset decode_dataset(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  r.expect_magic("CSIB");
  const auto version = r.get<std::uint16_t>("version");
  if (version != kDatasetVersion) r.fail("unsupported version " + std::to_string(version));
  synth::CsiDataset ds;
  ds.header.subcarriers = r.get<std::uint16_t>("Q");
  ds.header.antenna_pairs = r.get<std::uint16_t>("K");
  ds.header.pairs = r.get<std::uint16_t>("P");
  ds.header.sample_rate = r.get<float>("sample_rate");
  ds.header.n_ticks = r.get<std::uint32_t>("n_ticks");
  try {
    ds.header.validate();
  } catch (const Error& e) {
    r.fail(std::string("invalid header: ") + e.what());
  }
  const std::size_t count =
      static_cast<std::size_t>(ds.header.n_ticks) * ds.header.pairs * static_cast<std::size_t>(ds.header.frame_size());
  if (r.remaining() / sizeof(float) < count) r.fail("truncated amplitude block");
  ds.amplitudes.resize(count);
  r.get_bytes(ds.amplitudes.data(), count * sizeof(float), "amplitudes");
  const auto n_segments = r.get<std::uint32_t>("n_segments");
  if (r.remaining() / 11 < n_segments) r.fail("truncated label block");
  ds.segments.resize(n_segments);
  for (auto& s : ds.segments) {
    s.start_tick = r.get<std::uint32_t>("segment start");
    s.end_tick = r.get<std::uint32_t>("segment end");
    s.pair_id = r.get<std::uint16_t>("segment pair");
    s.case_label = r.get<std::uint8_t>("segment label");
  }
  r.expect_end();
  try {
    validate_segments(ds);
  } catch (const StructuralError& e) {
    r.fail(e.what());
  }
  return ds;
}

void write_dataset(const fs::path& path, const synth::CsiDataset& ds) { write_file(path, encode_dataset(ds)); }

synth::CsiDataset read_dataset(const fs::path& path) { return decode_dataset(read_file(path), path.string()); }

std::string manifest_text(const synth::GeneratedDataset& gd) {
  using nlohmann::ordered_json;
  const auto& g = gd.config;
  ordered_json j;
  j["format_version"] = kDatasetVersion;
  j["scenario"] = synth::scenario_name(gd.scenario);
  j["header"] = {{"subcarriers", g.subcarriers},
                 {"antenna_pairs", g.antenna_pairs},
                 {"pairs", gd.train.header.pairs},
                 {"sample_rate", g.sample_rate}};
  j["generator"] = {{"seed", g.seed},
                    {"tau", g.tau},
                    {"stride", g.stride},
                    {"samples_per_segment", g.samples_per_segment},
                    {"sigma_empty", g.sigma_empty},
                    {"sigma_tx", g.sigma_tx},
                    {"sigma_rx_nlos_open", g.sigma_rx_nlos_open},
                    {"sigma_rx_nlos_rich", g.sigma_rx_nlos_rich},
                    {"sigma_rx_los", g.sigma_rx_los},
                    {"tx_footprint_depth", g.tx_footprint_depth},
                    {"rx_footprint_depth", g.rx_footprint_depth},
                    {"wall_attenuation", g.wall_attenuation},
                    {"wall_attenuation_step", g.wall_attenuation_step},
                    {"baseline_drift", g.baseline_drift}};
  auto split = [](const synth::CsiDataset& ds, const synth::SplitManifest& m, const char* file) {
    ordered_json s;
    s["file"] = file;
    s["n_ticks"] = ds.header.n_ticks;
    s["samples_per_case"] = m.samples_per_case;
    ordered_json segs = ordered_json::array();
    for (const auto& info : m.segments) {
      segs.push_back({{"start_tick", info.start_tick},
                      {"end_tick", info.end_tick},
                      {"occupancy", info.occupancy},
                      {"pair_labels", info.pair_labels},
                      {"regimes", info.regimes},
                      {"samples", info.samples},
                      {"seed", info.seed}});
    }
    s["segments"] = std::move(segs);
    return s;
  };
  j["train"] = split(gd.train, gd.train_manifest, "train.csib");
  j["test"] = split(gd.test, gd.test_manifest, "test.csib");
  return j.dump(1) + "\n";
}

void write_generated(const fs::path& dir, const synth::GeneratedDataset& gd) {
  fs::create_directories(dir);
  write_dataset(dir / "train.csib", gd.train);
  write_dataset(dir / "test.csib", gd.test);
  write_text(dir / "manifest.json", manifest_text(gd));
}

// ---- preprocessing ----------------------------------------------------------

das::SampleSet preprocess(const synth::CsiDataset& ds, int tau, int stride, std::size_t reference_count,
                          PreprocessStats* stats) {
  validate_segments(ds);
  const int dim = ds.header.frame_size();
  das::SampleSet set(tau, dim);
  PreprocessStats local;
  for (const auto& seg : ds.segments) {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(seg.end_tick - seg.start_tick) * static_cast<std::size_t>(dim));
    for (std::uint32_t t = seg.start_tick; t < seg.end_tick; ++t) {
      const auto amp = ds.amplitude_frame(t, seg.pair_id);
      const auto norm = csi::normalize_frame(amp, &local.normalize);
      const auto row = das::flatten_frame(norm);
      flat.insert(flat.end(), row.begin(), row.end());
    }
    set.add_flat_stream(std::move(flat), seg.pair_id, seg.start_tick, seg.case_label, stride, &local.windowing);
    ++local.segments;
  }
  for (int p = 1; p <= ds.header.pairs; ++p) {
    const auto empties = set.empty_room_vectors(p, reference_count);
    if (!empties.empty()) set.set_reference(p, das::reference_spatial(empties, reference_count));
  }
  if (stats) *stats = local;
  return set;
}

void copy_references(const das::SampleSet& from, das::SampleSet& to) {
  if (from.dim() != to.dim()) throw StructuralError("reference dimension differs between sample sets");
  for (const auto& [pair, ref] : from.references()) to.set_reference(pair, ref);
}

PreparedData load_prepared(const fs::path& dir, int tau, int stride, std::size_t reference_count) {
  PreparedData out;
  if (fs::exists(dir / "train.dasf") && fs::exists(dir / "test.dasf")) {
    out.train = read_features(dir / "train.dasf");
    out.test = read_features(dir / "test.dasf");
    out.from_features = true;
    if (out.train.tau() != tau || out.test.tau() != tau)
      throw IncompatibleError(dir.string() + ": features were built with tau " + std::to_string(out.train.tau()) +
                              ", configuration asks for " + std::to_string(tau));
    int pairs = 0;
    for (const auto& s : out.train.streams()) pairs = std::max(pairs, s.pair_id);
    out.pairs = pairs;
    return out;
  }
  if (!fs::exists(dir / "train.csib") || !fs::exists(dir / "test.csib"))
    throw MissingFileError(dir.string() + ": neither train/test.dasf nor train/test.csib found");
  const auto train_ds = read_dataset(dir / "train.csib");
  const auto test_ds = read_dataset(dir / "test.csib");
  if (train_ds.header.subcarriers != test_ds.header.subcarriers ||
      train_ds.header.antenna_pairs != test_ds.header.antenna_pairs || train_ds.header.pairs != test_ds.header.pairs)
    throw IncompatibleError(dir.string() + ": train and test headers differ");
  out.train = preprocess(train_ds, tau, stride, reference_count);
  out.test = preprocess(test_ds, tau, stride, reference_count);
  copy_references(out.train, out.test);
  out.pairs = train_ds.header.pairs;
  return out;
}

// ---- features ---------------------------------------------------------------

void write_features(const fs::path& path, const das::SampleSet& set) {
  Writer w;
  std::size_t total = 0;
  for (const auto& s : set.streams()) total += s.flat.size();
  w.reserve(64 + total * 8);
  w.put_bytes("DASF", 4);
  w.put<std::uint16_t>(kFeaturesVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(set.tau()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(set.dim()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(set.streams().size()));
  for (const auto& s : set.streams()) {
    w.put<std::int32_t>(s.pair_id);
    w.put<std::int64_t>(s.first_tick);
    w.put<std::int32_t>(s.label);
    w.put<std::int32_t>(s.stride);
    w.put<std::uint64_t>(s.ticks(set.dim()));
    w.put_bytes(s.flat.data(), s.flat.size() * sizeof(double));
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(set.references().size()));
  for (const auto& [pair, ref] : set.references()) {
    w.put<std::int32_t>(pair);
    w.put_bytes(ref.values.data(), ref.values.size() * sizeof(double));
  }
  w.put_checksum();
  write_file(path, w.bytes());
}

das::SampleSet read_features(const fs::path& path) {
  const auto bytes = read_file(path);
  Reader r(bytes, path.string());
  r.expect_magic("DASF");
  const auto version = r.get<std::uint16_t>("version");
  if (version != kFeaturesVersion) r.fail("unsupported version " + std::to_string(version));
  const auto tau = r.get<std::uint32_t>("tau");
  const auto dim = r.get<std::uint32_t>("dim");
  if (tau < 1 || dim < 1 || tau > 100000 || dim > 1000000) r.fail("implausible tau/dim");
  das::SampleSet set(static_cast<int>(tau), static_cast<int>(dim));
  const auto n_streams = r.get<std::uint32_t>("stream count");
  for (std::uint32_t i = 0; i < n_streams; ++i) {
    const auto pair = r.get<std::int32_t>("pair");
    const auto first = r.get<std::int64_t>("first tick");
    const auto label = r.get<std::int32_t>("label");
    const auto stride = r.get<std::int32_t>("stride");
    const auto ticks = r.get<std::uint64_t>("ticks");
    if (label < 0 || label > 4 || stride < 1 || pair < 1) r.fail("invalid stream record " + std::to_string(i));
    if (r.remaining() / sizeof(double) / dim < ticks) r.fail("truncated stream " + std::to_string(i));
    std::vector<double> flat(static_cast<std::size_t>(ticks) * dim);
    r.get_bytes(flat.data(), flat.size() * sizeof(double), "stream values");
    set.add_flat_stream(std::move(flat), pair, first, label, stride);
  }
  const auto n_refs = r.get<std::uint32_t>("reference count");
  for (std::uint32_t i = 0; i < n_refs; ++i) {
    const auto pair = r.get<std::int32_t>("reference pair");
    das::ReferenceSpatial ref;
    ref.values.resize(dim);
    r.get_bytes(ref.values.data(), dim * sizeof(double), "reference values");
    set.set_reference(pair, std::move(ref));
  }
  r.verify_checksum();
  r.expect_end();
  return set;
}

// ---- checkpoint -------------------------------------------------------------

std::vector<std::uint8_t> encode_checkpoint(const model::ModelParams& params, const model::ModelConfig& cfg,
                                            std::uint64_t seed) {
  Writer w;
  w.put_bytes("TCDF", 4);
  w.put<std::uint16_t>(kCheckpointVersion);
  w.put<std::uint64_t>(cfg.hash());
  w.put<std::uint64_t>(seed);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.entries().size()));
  for (const auto& e : params.entries()) {
    w.put_string(e.name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(e.value.rank()));
    for (int d : e.value.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.put_bytes(e.value.data(), e.value.size() * sizeof(double));
  }
  w.put_checksum();
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  r.expect_magic("TCDF");
  const auto version = r.get<std::uint16_t>("version");
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.config_hash = r.get<std::uint64_t>("config hash");
  ck.seed = r.get<std::uint64_t>("seed");
  const auto n = r.get<std::uint32_t>("tensor count");
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.get_string("tensor name");
    if (!seen.insert(name).second) r.fail("duplicate tensor '" + name + "'");
    const auto rank = r.get<std::uint8_t>("rank");
    ad::Shape shape;
    std::size_t size = 1;
    for (int d = 0; d < rank; ++d) {
      const auto extent = r.get<std::uint32_t>("dim");
      shape.push_back(static_cast<int>(extent));
      size *= extent;
    }
    if (r.remaining() / sizeof(double) < size) r.fail("truncated payload of '" + name + "'");
    std::vector<double> data(size);
    r.get_bytes(data.data(), size * sizeof(double), "payload");
    ck.params.add(std::move(name), model::Tensor(std::move(shape), std::move(data)));
  }
  r.verify_checksum();
  r.expect_end();
  return ck;
}

void write_checkpoint(const fs::path& path, const model::ModelParams& params, const model::ModelConfig& cfg,
                      std::uint64_t seed) {
  write_file(path, encode_checkpoint(params, cfg, seed));
}

Checkpoint read_checkpoint(const fs::path& path, const model::ModelConfig& cfg) {
  Checkpoint ck = decode_checkpoint(read_file(path), path.string());
  if (ck.config_hash != cfg.hash())
    throw IncompatibleError(path.string() + ": checkpoint was written for a different model configuration");
  // Reorder and flag entries exactly like a fresh model.
  model::ModelParams layout = model::zero_params(cfg);
  if (layout.entries().size() != ck.params.entries().size())
    throw IncompatibleError(path.string() + ": tensor count differs from the configured model");
  for (auto& e : layout.entries()) {
    if (!ck.params.contains(e.name)) throw IncompatibleError(path.string() + ": missing tensor '" + e.name + "'");
    const auto& v = ck.params.at(e.name);
    if (v.shape() != e.value.shape())
      throw IncompatibleError(path.string() + ": tensor '" + e.name + "' has shape " + ad::shape_str(v.shape()) +
                              ", expected " + ad::shape_str(e.value.shape()));
    e.value = v;
  }
  ck.params = std::move(layout);
  return ck;
}

// ---- run configuration ------------------------------------------------------

namespace {

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* b = text.data();
  const char* e = b + text.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) throw ConfigError("key '" + key + "': cannot parse '" + text + "'");
  return v;
}

std::string fmt_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define TCD_INT(KEY, MEMBER)                                                                   \
  Field {                                                                                      \
    KEY, [](const RunConfig& c) { return std::to_string(c.MEMBER); },                         \
        [](RunConfig& c, const std::string& v) { c.MEMBER = parse_number<int>(KEY, v); }      \
  }
#define TCD_DBL(KEY, MEMBER)                                                                   \
  Field {                                                                                      \
    KEY, [](const RunConfig& c) { return fmt_double(c.MEMBER); },                              \
        [](RunConfig& c, const std::string& v) { c.MEMBER = parse_number<double>(KEY, v); }   \
  }

const std::vector<Field>& schema() {
  static const std::vector<Field> fields = {
      Field{"seed", [](const RunConfig& c) { return std::to_string(c.train.seed); },
            [](RunConfig& c, const std::string& v) { c.set_seed(parse_number<std::uint64_t>("seed", v)); }},
      Field{"data.scenario", [](const RunConfig& c) { return c.scenario; },
            [](RunConfig& c, const std::string& v) {
              synth::parse_scenario(v);
              c.scenario = v;
            }},
      TCD_INT("data.train_per_case", train_per_case),
      TCD_INT("data.test_per_case", test_per_case),
      Field{"data.reference_count", [](const RunConfig& c) { return std::to_string(c.reference_count); },
            [](RunConfig& c, const std::string& v) {
              c.reference_count = parse_number<std::size_t>("data.reference_count", v);
            }},
      TCD_INT("model.tau", model.tau),
      TCD_INT("model.input_dim", model.input_dim),
      TCD_INT("model.cond_dim", model.cond_dim),
      TCD_INT("model.gru_units", model.gru_units),
      TCD_INT("model.conv1_filters", model.conv1_filters),
      TCD_INT("model.conv2_filters", model.conv2_filters),
      TCD_INT("model.kernel", model.kernel),
      TCD_DBL("model.dropout", model.dropout),
      TCD_DBL("model.margin", model.margin),
      TCD_DBL("model.lambda", model.lambda),
      TCD_INT("model.attn_hidden", model.attn_hidden),
      TCD_INT("model.head_hidden", model.head_hidden),
      TCD_DBL("model.bn_momentum", model.bn_momentum),
      TCD_DBL("model.bn_eps", model.bn_eps),
      Field{"model.variant", [](const RunConfig& c) { return std::string(model::variant_name(c.model.variant)); },
            [](RunConfig& c, const std::string& v) { c.model.variant = model::parse_variant(v); }},
      TCD_INT("train.epochs", train.epochs),
      TCD_INT("train.batch_size", train.batch_size),
      TCD_DBL("train.learning_rate", train.learning_rate),
      Field{"train.optimizer", [](const RunConfig& c) { return train::optimizer_name(c.train.optimizer); },
            [](RunConfig& c, const std::string& v) { c.train.optimizer = train::parse_optimizer(v); }},
      TCD_INT("train.patience", train.patience),
      TCD_DBL("train.validation_fraction", train.validation_fraction),
      TCD_DBL("train.beta1", train.beta1),
      TCD_DBL("train.beta2", train.beta2),
      TCD_DBL("train.adam_eps", train.adam_eps),
      TCD_INT("train.threads", train.threads),
      TCD_INT("gen.subcarriers", gen.subcarriers),
      TCD_INT("gen.antenna_pairs", gen.antenna_pairs),
      TCD_DBL("gen.sample_rate", gen.sample_rate),
      TCD_INT("gen.stride", gen.stride),
      TCD_INT("gen.samples_per_segment", gen.samples_per_segment),
      TCD_DBL("gen.sigma_empty", gen.sigma_empty),
      TCD_DBL("gen.sigma_tx", gen.sigma_tx),
      TCD_DBL("gen.sigma_rx_nlos_open", gen.sigma_rx_nlos_open),
      TCD_DBL("gen.sigma_rx_nlos_rich", gen.sigma_rx_nlos_rich),
      TCD_DBL("gen.sigma_rx_los", gen.sigma_rx_los),
      TCD_DBL("gen.tx_footprint_depth", gen.tx_footprint_depth),
      TCD_DBL("gen.rx_footprint_depth", gen.rx_footprint_depth),
      TCD_DBL("gen.wall_attenuation", gen.wall_attenuation),
      TCD_DBL("gen.wall_attenuation_step", gen.wall_attenuation_step),
      TCD_DBL("gen.baseline_drift", gen.baseline_drift),
  };
  return fields;
}

#undef TCD_INT
#undef TCD_DBL

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::set_seed(std::uint64_t seed) {
  gen.seed = seed;
  train.seed = seed;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  gen.validate();
  synth::parse_scenario(scenario);
  if (gen.tau != model.tau) throw ConfigError("gen.tau must equal model.tau");
  if (model.input_dim != gen.subcarriers * gen.antenna_pairs)
    throw ConfigError("model.input_dim (" + std::to_string(model.input_dim) + ") must equal gen.subcarriers * " +
                      "gen.antenna_pairs (" + std::to_string(gen.subcarriers * gen.antenna_pairs) + ")");
  if (train_per_case < 1 || test_per_case < 1) throw ConfigError("per-case counts must be positive");
  if (reference_count < 1) throw ConfigError("data.reference_count must be positive");
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig rc;
  std::map<std::string, const Field*> by_key;
  for (const auto& f : schema()) by_key[f.key] = &f;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = by_key.find(key);
    if (it == by_key.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      it->second->set(rc, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  rc.gen.tau = rc.model.tau;
  rc.validate();
  return rc;
}

RunConfig load_run_config(const fs::path& path) {
  const auto bytes = read_file(path);
  return parse_run_config(std::string(bytes.begin(), bytes.end()));
}

std::string run_config_text(const RunConfig& rc) {
  std::string out;
  for (const auto& f : schema()) out += f.key + " = " + f.get(rc) + "\n";
  return out;
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : schema()) keys.push_back(f.key);
  return keys;
}

}  // namespace tcdfern::io
