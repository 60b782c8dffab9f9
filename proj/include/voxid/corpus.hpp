#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "voxid/audio.hpp"

namespace voxid {

/// Fixed-length utterance embedding; finite with nonzero norm once loaded.
struct Embedding {
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
};

struct UtteranceRecord {
  std::string id;
  std::string speaker_id;
  double duration_s = 0.0;
  std::optional<std::filesystem::path> audio_path;
  std::optional<std::filesystem::path> embedding_path;
  std::optional<std::filesystem::path> units_path;
  std::optional<std::filesystem::path> segments_path;
  /// Embeddings re-extracted from perturbed copies, keyed by condition name.
  std::map<std::string, std::filesystem::path> condition_embeddings;
};

struct CorpusManifest {
  std::filesystem::path base_dir;
  std::size_t embedding_dim = 0;
  std::optional<std::size_t> unit_vocab_size;
  double unit_hop_ms = 20.0;
  std::vector<UtteranceRecord> utterances;
  /// Free-form description of each perturbation condition (passed through to reports).
  std::map<std::string, std::string> conditions_json;

  /// Utterances grouped by speaker, speakers and utterances ordered by id.
  std::map<std::string, std::vector<const UtteranceRecord*>> by_speaker() const;
};

struct Segment {
  double start_ms = 0.0;
  double end_ms = 0.0;
  std::string label;
};

struct SegmentLabelTrack {
  std::vector<Segment> segments;
};

/// Loads and validates a JSON manifest. Paths inside it are resolved against
/// the manifest's directory. Every referenced embedding and unit file is
/// opened and checked against embedding_dim / unit_vocab_size.
CorpusManifest load_manifest(const std::filesystem::path& path);

/// Same validation as load_manifest, without touching referenced files.
CorpusManifest parse_manifest(const std::string& json_text, const std::filesystem::path& base_dir);

Embedding read_embedding(const std::filesystem::path& path, std::size_t dim);
void write_embedding(const std::filesystem::path& path, const Embedding& emb);

/// Raw little-endian uint16 unit ids, one per frame.
std::vector<std::uint16_t> read_units(const std::filesystem::path& path);
void write_units(const std::filesystem::path& path, std::span<const std::uint16_t> units);

/// `start_ms,end_ms,label` CSV with header.
SegmentLabelTrack read_segment_labels(const std::filesystem::path& path);
SegmentLabelTrack parse_segment_labels(const std::string& csv_text);

using RecordGroups = std::pair<std::vector<UtteranceRecord>, std::vector<UtteranceRecord>>;

/// Shuffles (records sorted by id) with the portable Rng; the first
/// ceil(n/2) go to the first group.
RecordGroups split_random(std::span<const UtteranceRecord> records, std::uint64_t seed);

/// Sorts by (duration, id). The shorter ceil(n/2) form the first group, so an
/// odd-sized median lands in the short group.
RecordGroups split_by_duration(std::span<const UtteranceRecord> records);

}  // namespace voxid
