#pragma once

#include "sipfuse/fusion.hpp"
#include "sipfuse/head.hpp"
#include "sipfuse/model.hpp"

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace sipfuse {

enum class Backbone : std::uint8_t { canary = 0, wavlm = 1 };

std::string_view to_string(Backbone b);
std::string_view to_string(Ear e);

/// One cached encoder output: layer-aggregated frames of one ear and backbone.
struct CacheRecord {
  std::string utterance_id;
  Ear ear = Ear::left;
  Backbone backbone = Backbone::canary;
  double frame_rate_hz = 0.0;
  Mat<float> frames;  // T x d
};

// FCACHE01 layout (little-endian):
//   "FCACHE01"
//   records, each:
//     u32 id_len, id bytes, u8 ear, u8 backbone, f64 frame_rate_hz,
//     u32 T, u32 d, T*d f32 row-major, u64 FNV-1a of the record bytes above
//   index: u64 count, count * u64 record offsets, u64 FNV-1a of the index
//   u64 offset of the index
std::vector<std::byte> encode_cache(const std::vector<CacheRecord>& records);
/// Throws FormatError naming the offending record on magic mismatch,
/// checksum failure, truncation or an inconsistent index.
std::vector<CacheRecord> decode_cache(const std::vector<std::byte>& bytes, const std::string& context = "cache");

void write_cache(const std::string& path, const std::vector<CacheRecord>& records);
std::vector<CacheRecord> read_cache(const std::string& path);

enum class Split { train, dev, eval };

std::string_view to_string(Split s);
Split parse_split(std::string_view text);

struct ManifestRow {
  std::string utterance_id;
  std::string scene_token;
  Severity severity = Severity::moderate;
  std::string system_id;
  double label = 0.0;  // percent words correct, [0, 100]
  Split split = Split::train;
};

/// Delimited text. Lines starting with '#' carry "key=value" metadata and
/// precede the fixed header
///   utterance_id,scene_token,severity,system_id,label,split
struct Manifest {
  std::map<std::string, std::string> metadata;
  std::vector<ManifestRow> rows;
};

inline constexpr const char* kManifestHeader = "utterance_id,scene_token,severity,system_id,label,split";

/// Throws DataError citing the row number for out-of-range labels,
/// duplicate ids, unknown severities/splits and malformed lines.
Manifest parse_manifest(const std::string& text, const std::string& context = "manifest");
std::string format_manifest(const Manifest& manifest);
Manifest read_manifest(const std::string& path);
void write_manifest(const std::string& path, const Manifest& manifest);

/// Manifest rows joined with their four cache records.
struct Item {
  ManifestRow row;
  UtteranceInput<float> input;
};

/// Validates that every manifest id resolves to exactly four records with
/// consistent frame rates; returns one message per problem (empty = valid).
std::vector<std::string> validate_dataset(const Manifest& manifest, const std::vector<CacheRecord>& records);

/// Joins manifest and cache; throws DataError listing the first problems
/// reported by validate_dataset.
std::vector<Item> assemble_items(const Manifest& manifest, const std::vector<CacheRecord>& records);

// ---------------------------------------------------------------------------
// Synthetic data with planted structure.

enum class SynthProfile { global, local };

std::string_view to_string(SynthProfile p);
SynthProfile parse_profile(std::string_view text);

struct SynthOptions {
  int feature_dim = kEncoderDim;
  /// Generation fails when n_items < 2 * min_folds.
  int min_folds = 1;
  double noise_std = 0.3;
};

/// Per-item latent values behind the features and label.
struct PlantedItem {
  double canary_global = 0.0;
  double wavlm_global = 0.0;
  std::vector<std::uint8_t> relevant;  // per coarse frame
  std::vector<double> local_value;     // per coarse frame
  int system_index = 0;
  double label_noise = 0.0;
};

/// Dataset-level planted directions and label-function constants.
struct PlantedModel {
  SynthProfile profile = SynthProfile::local;
  Mat<double> directions;  // orthonormal rows: see synth.cpp for the row roles
  double global_amp = 1.0;
  double relevance_amp = 2.0;
  double local_amp = 2.0;
  double system_amp = 1.0;
  double ear_gain_right = 0.9;
  double local_weight = 1.0;
  double local_scale = 4.0;
  double squash = 0.9;
  std::vector<double> severity_offset;  // indexed by Severity
  std::vector<double> system_bias;      // 9 synthetic systems
};

struct SynthDataset {
  Manifest manifest;
  std::vector<CacheRecord> records;
  PlantedModel planted;
  std::vector<PlantedItem> items;  // aligned with manifest.rows
};

inline constexpr int kSynthSystems = 9;

/// Pure function of (n_items, seed, profile, options).
SynthDataset synth_generate(int n_items, std::uint64_t seed, SynthProfile profile, const SynthOptions& options = {});

/// Noiseless label (0-100) implied by the planted latents of one item.
double planted_label(const PlantedModel& model, const PlantedItem& item, Severity severity);

/// Regressor with access to the planted directions: recovers the latents
/// (including the system signature) from the item's features by projection
/// and applies the label function.
double planted_oracle_predict(const PlantedModel& model, const UtteranceInput<float>& input);

}  // namespace sipfuse
