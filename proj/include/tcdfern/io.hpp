// SPDX-License-Identifier: Apache-2.0
//
// On-disk formats and run configuration.
//
// Everything binary is little-endian. Amplitudes are f32 on disk and widened
// to f64 when read; features and checkpoints keep f64 so a reload reproduces
// a run bit for bit.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tcdfern/das.hpp"
#include "tcdfern/model.hpp"
#include "tcdfern/synth.hpp"
#include "tcdfern/trainer.hpp"

namespace tcdfern::io {

namespace fs = std::filesystem;

inline constexpr std::uint16_t kDatasetVersion = 1;
inline constexpr std::uint16_t kCheckpointVersion = 1;
inline constexpr std::uint16_t kFeaturesVersion = 1;

// ---- CSI dataset ("CSIB") ---------------------------------------------------

std::vector<std::uint8_t> encode_dataset(const synth::CsiDataset& ds);
synth::CsiDataset decode_dataset(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>");
void write_dataset(const fs::path& path, const synth::CsiDataset& ds);
synth::CsiDataset read_dataset(const fs::path& path);

/// Throws StructuralError unless segments are in range, labelled 1..4 and
/// non-overlapping per pair.
void validate_segments(const synth::CsiDataset& ds);

/// Human-readable sidecar for a generated train/test pair (JSON text).
std::string manifest_text(const synth::GeneratedDataset& gd);

/// Writes train.csib, test.csib and manifest.json into `dir`.
void write_generated(const fs::path& dir, const synth::GeneratedDataset& gd);

// ---- Preprocessing ----------------------------------------------------------

struct PreprocessStats {
  csi::NormalizeStats normalize;
  das::WindowingStats windowing;
  std::size_t segments = 0;
};

/// Amplitude -> normalized frames -> windows, one stream per labelled segment.
/// References b are computed from this set's case-1 segments when present.
das::SampleSet preprocess(const synth::CsiDataset& ds, int tau, int stride, std::size_t reference_count = 100,
                          PreprocessStats* stats = nullptr);

/// Copies every per-pair reference of `from` into `to` (test sets use the
/// references of the training set).
void copy_references(const das::SampleSet& from, das::SampleSet& to);

/// Train and test windows of a data directory. A directory holding
/// train.dasf/test.dasf is read directly; otherwise train.csib/test.csib are
/// preprocessed with the run configuration. Test windows use the training
/// references.
struct PreparedData {
  das::SampleSet train;
  das::SampleSet test;
  int pairs = 1;
  bool from_features = false;
};
PreparedData load_prepared(const fs::path& dir, int tau, int stride, std::size_t reference_count);

// ---- Features file ("DASF") -------------------------------------------------

void write_features(const fs::path& path, const das::SampleSet& set);
das::SampleSet read_features(const fs::path& path);

// ---- Checkpoint ("TCDF") ----------------------------------------------------

struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  model::ModelParams params;
};

std::vector<std::uint8_t> encode_checkpoint(const model::ModelParams& params, const model::ModelConfig& cfg,
                                            std::uint64_t seed);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>");
void write_checkpoint(const fs::path& path, const model::ModelParams& params, const model::ModelConfig& cfg,
                      std::uint64_t seed);
/// Reads and checks the file against `cfg`: hash, tensor names and shapes.
Checkpoint read_checkpoint(const fs::path& path, const model::ModelConfig& cfg);

// ---- Run configuration ------------------------------------------------------

struct RunConfig {
  model::ModelConfig model;
  train::TrainConfig train;
  synth::GenConfig gen;
  std::string scenario = "two-room";
  int train_per_case = 2000;
  int test_per_case = 400;
  std::size_t reference_count = 100;

  /// One seed drives generation and training.
  void set_seed(std::uint64_t seed);
  void validate() const;
};

/// Flat `key = value` lines; `#` starts a comment. Unknown keys, duplicate
/// keys and malformed values throw ConfigError naming the line.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const fs::path& path);
/// Every key with its current value, in schema order.
std::string run_config_text(const RunConfig& rc);
std::vector<std::string> run_config_keys();

// ---- helpers ----------------------------------------------------------------

std::vector<std::uint8_t> read_file(const fs::path& path);
/// Writes through a temporary file and renames, so readers never see a partial file.
void write_file(const fs::path& path, const std::vector<std::uint8_t>& bytes);
void write_text(const fs::path& path, const std::string& text);
std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n);

}  // namespace tcdfern::io
