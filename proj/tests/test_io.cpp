// SPDX-License-Identifier: Apache-2.0
#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "tcdfern/errors.hpp"
#include "tcdfern/io.hpp"

using namespace tcdfern;
namespace fs = std::filesystem;

namespace {

synth::GeneratedDataset small_dataset(synth::Scenario scenario = synth::Scenario::TwoRoom) {
  synth::GenConfig cfg;
  cfg.tau = 5;
  cfg.subcarriers = 6;
  cfg.antenna_pairs = 2;
  cfg.samples_per_segment = 3;
  return synth::gen_dataset(scenario, 6, 3, cfg);
}

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("tcdfern_io_" + std::to_string(::getpid()) + "_" + std::to_string(++counter));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

bool same_params(const model::ModelParams& a, const model::ModelParams& b, bool check_flags = true) {
  if (a.entries().size() != b.entries().size()) return false;
  for (std::size_t i = 0; i < a.entries().size(); ++i) {
    const auto& x = a.entries()[i];
    const auto& y = b.entries()[i];
    if (x.name != y.name || (check_flags && x.trainable != y.trainable) || x.value.shape() != y.value.shape()) return false;
    if (x.value.to_vector() != y.value.to_vector()) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("dataset round trip is exact") {
    for (auto scenario : {synth::Scenario::TwoRoom, synth::Scenario::ThreeRoom}) {
      const auto gd = small_dataset(scenario);
      const auto bytes = io::encode_dataset(gd.train);
      const auto back = io::decode_dataset(bytes);
      CHECK(back.header.pairs == gd.train.header.pairs);
      CHECK(back.header.n_ticks == gd.train.header.n_ticks);
      CHECK(back.amplitudes == gd.train.amplitudes);
      REQUIRE(back.segments.size() == gd.train.segments.size());
      for (std::size_t i = 0; i < back.segments.size(); ++i) {
        CHECK(back.segments[i].start_tick == gd.train.segments[i].start_tick);
        CHECK(back.segments[i].end_tick == gd.train.segments[i].end_tick);
        CHECK(back.segments[i].pair_id == gd.train.segments[i].pair_id);
        CHECK(back.segments[i].case_label == gd.train.segments[i].case_label);
      }
      CHECK(io::encode_dataset(back) == bytes);
    }
  }

  TEST_CASE("dataset payload holds one f32 per subcarrier, antenna pair and tick") {
    const auto gd = small_dataset();
    const auto& h = gd.train.header;
    CHECK(gd.train.amplitudes.size() == static_cast<std::size_t>(h.n_ticks) * h.pairs * 12);
    CHECK(io::encode_dataset(gd.train).size() > gd.train.amplitudes.size() * sizeof(float));
  }

  TEST_CASE("corrupt datasets are rejected") {
    const auto bytes = io::encode_dataset(small_dataset().train);

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(io::decode_dataset(bad_magic), CorruptFileError);

    auto truncated = bytes;
    truncated.resize(bytes.size() / 2);
    CHECK_THROWS_AS(io::decode_dataset(truncated), CorruptFileError);

    auto bad_version = bytes;
    bad_version[4] = 9;
    CHECK_THROWS_AS(io::decode_dataset(bad_version), CorruptFileError);

    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(io::decode_dataset(trailing), CorruptFileError);

    CHECK_THROWS_AS(io::decode_dataset({}), CorruptFileError);
  }

  TEST_CASE("segment validation") {
    auto ds = small_dataset().train;
    io::validate_segments(ds);

    auto bad_label = ds;
    bad_label.segments[0].case_label = 5;
    CHECK_THROWS_AS(io::validate_segments(bad_label), StructuralError);

    auto bad_pair = ds;
    bad_pair.segments[0].pair_id = 9;
    CHECK_THROWS_AS(io::validate_segments(bad_pair), StructuralError);

    auto out_of_range = ds;
    out_of_range.segments.back().end_tick = ds.header.n_ticks + 1;
    CHECK_THROWS_AS(io::validate_segments(out_of_range), StructuralError);

    auto overlap = ds;
    REQUIRE(overlap.segments.size() >= 2);
    overlap.segments[1].start_tick = overlap.segments[0].end_tick - 1;
    CHECK_THROWS_AS(io::validate_segments(overlap), StructuralError);
  }

  TEST_CASE("files: missing path, written dataset and features") {
    TempDir tmp;
    CHECK_THROWS_AS(io::read_dataset(tmp.path / "absent.csib"), MissingFileError);
    CHECK_THROWS_AS(io::read_features(tmp.path / "absent.dasf"), MissingFileError);

    const auto gd = small_dataset();
    io::write_generated(tmp.path, gd);
    CHECK(fs::exists(tmp.path / "manifest.json"));
    const auto back = io::read_dataset(tmp.path / "train.csib");
    CHECK(back.amplitudes == gd.train.amplitudes);

    const auto set = io::preprocess(gd.train, 5, 1);
    io::write_features(tmp.path / "train.dasf", set);
    const auto again = io::read_features(tmp.path / "train.dasf");
    REQUIRE(again.size() == set.size());
    CHECK(again.tau() == set.tau());
    CHECK(again.dim() == set.dim());
    CHECK(again.reference_pairs() == set.reference_pairs());
    for (std::size_t i = 0; i < set.size(); ++i) {
      const auto a = set.sample(i);
      const auto b = again.sample(i);
      REQUIRE(a.spatial.values == b.spatial.values);
      REQUIRE(a.moving == b.moving);
      REQUIRE(a.label == b.label);
      REQUIRE(a.pair_id == b.pair_id);
      REQUIRE(a.end_tick == b.end_tick);
    }
  }

  TEST_CASE("preprocessing yields the expected window count") {
    const auto gd = small_dataset();
    io::PreprocessStats stats;
    const auto set = io::preprocess(gd.train, 5, 5, 100, &stats);
    // 6 windows per case with 3 per segment: 2 segments per case
    CHECK(set.size() == 24);
    CHECK(stats.segments == 8);
    CHECK(set.has_reference(1));
  }

  TEST_CASE("checkpoint round trip is bit exact and guarded") {
    const auto cfg = model::ModelConfig::tiny();
    const auto params = model::init_params(cfg, 5);
    const auto bytes = io::encode_checkpoint(params, cfg, 5);
    const auto ck = io::decode_checkpoint(bytes);
    CHECK(ck.seed == 5);
    CHECK(ck.config_hash == cfg.hash());
    CHECK(same_params(ck.params, params, false));

    auto flipped = bytes;
    flipped[flipped.size() / 3] ^= 0x01;
    CHECK_THROWS_AS(io::decode_checkpoint(flipped), CorruptFileError);

    TempDir tmp;
    io::write_checkpoint(tmp.path / "m.ckpt", params, cfg, 5);
    CHECK(same_params(io::read_checkpoint(tmp.path / "m.ckpt", cfg).params, params));
    auto other = cfg;
    other.gru_units += 1;
    CHECK_THROWS_AS(io::read_checkpoint(tmp.path / "m.ckpt", other), IncompatibleError);
    auto variant = cfg;
    variant.variant = model::Variant::Fern;
    CHECK_THROWS_AS(io::read_checkpoint(tmp.path / "m.ckpt", variant), IncompatibleError);
  }

  TEST_CASE("run configuration text") {
    io::RunConfig rc;
    rc.set_seed(11);
    const auto text = io::run_config_text(rc);
    const auto back = io::parse_run_config(text);
    CHECK(io::run_config_text(back) == text);
    CHECK(back.train.seed == 11);

    CHECK(io::parse_run_config("# comment only\n\n").train.seed == io::RunConfig{}.train.seed);
    CHECK_THROWS_AS(io::parse_run_config("no.such.key = 1\n"), ConfigError);
    CHECK_THROWS_AS(io::parse_run_config("seed = 1\nseed = 2\n"), ConfigError);
    CHECK_THROWS_AS(io::parse_run_config("seed = banana\n"), ConfigError);
    CHECK_THROWS_AS(io::parse_run_config("seed 1\n"), ConfigError);
    CHECK_THROWS_AS(io::parse_run_config("data.scenario = four-room\n"), ConfigError);

    const auto keys = io::run_config_keys();
    CHECK(std::find(keys.begin(), keys.end(), "model.variant") != keys.end());
    try {
      io::parse_run_config("seed = 1\n\nbogus = 3\n");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
  }

  TEST_CASE("fnv1a64 reference values") {
    CHECK(io::fnv1a64(nullptr, 0) == 0xcbf29ce484222325ULL);
    const std::uint8_t a[] = {'a'};
    CHECK(io::fnv1a64(a, 1) == 0xaf63dc4c8601ec8cULL);
  }
}
