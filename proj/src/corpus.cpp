#include "voxid/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "voxid/rng.hpp"

namespace voxid {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<unsigned char> slurp(const fs::path& path, const char* who) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(std::string(who) + ": cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string slurp_text(const fs::path& path, const char* who) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(std::string(who) + ": cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

[[noreturn]] void manifest_error(const std::string& what) {
  throw std::runtime_error("load_manifest: " + what);
}

std::optional<fs::path> optional_path(const json& obj, const char* key, const fs::path& base) {
  if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
  if (!obj.at(key).is_string()) manifest_error(std::string("field '") + key + "' must be a string");
  return base / obj.at(key).get<std::string>();
}

bool compare_by_id(const UtteranceRecord& a, const UtteranceRecord& b) { return a.id < b.id; }

std::vector<UtteranceRecord> sorted_by_id(std::span<const UtteranceRecord> records) {
  std::vector<UtteranceRecord> out(records.begin(), records.end());
  std::sort(out.begin(), out.end(), compare_by_id);
  return out;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

}  // namespace

std::map<std::string, std::vector<const UtteranceRecord*>> CorpusManifest::by_speaker() const {
  std::map<std::string, std::vector<const UtteranceRecord*>> out;
  for (const auto& u : utterances) out[u.speaker_id].push_back(&u);
  for (auto& [_, list] : out) {
    std::sort(list.begin(), list.end(),
              [](const UtteranceRecord* a, const UtteranceRecord* b) { return a->id < b->id; });
  }
  return out;
}

CorpusManifest parse_manifest(const std::string& json_text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    manifest_error(std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) manifest_error("top level must be an object");

  CorpusManifest m;
  m.base_dir = base_dir;
  try {
    if (!doc.contains("embedding_dim")) manifest_error("missing field 'embedding_dim'");
    const auto dim = doc.at("embedding_dim").get<long long>();
    if (dim <= 0) manifest_error("'embedding_dim' must be positive");
    m.embedding_dim = static_cast<std::size_t>(dim);

    if (doc.contains("unit_vocab_size") && !doc.at("unit_vocab_size").is_null()) {
      const auto k = doc.at("unit_vocab_size").get<long long>();
      if (k <= 0 || k > 65536) manifest_error("'unit_vocab_size' must be in [1, 65536]");
      m.unit_vocab_size = static_cast<std::size_t>(k);
    }
    if (doc.contains("unit_hop_ms")) {
      m.unit_hop_ms = doc.at("unit_hop_ms").get<double>();
      if (!(m.unit_hop_ms > 0.0) || !std::isfinite(m.unit_hop_ms)) {
        manifest_error("'unit_hop_ms' must be positive");
      }
    }
    if (doc.contains("conditions")) {
      if (!doc.at("conditions").is_object()) manifest_error("'conditions' must be an object");
      for (const auto& [name, meta] : doc.at("conditions").items()) m.conditions_json[name] = meta.dump();
    }

    if (!doc.contains("utterances") || !doc.at("utterances").is_array()) {
      manifest_error("missing array 'utterances'");
    }
    std::set<std::string> seen;
    for (const auto& item : doc.at("utterances")) {
      if (!item.is_object()) manifest_error("utterance entries must be objects");
      UtteranceRecord r;
      if (!item.contains("id") || !item.at("id").is_string()) manifest_error("utterance without string 'id'");
      r.id = item.at("id").get<std::string>();
      if (r.id.empty()) manifest_error("empty utterance id");
      if (!seen.insert(r.id).second) manifest_error("duplicate utterance id '" + r.id + "'");
      if (!item.contains("speaker") || !item.at("speaker").is_string()) {
        manifest_error("utterance '" + r.id + "' has no string 'speaker'");
      }
      r.speaker_id = item.at("speaker").get<std::string>();
      if (item.contains("duration_s") && !item.at("duration_s").is_null()) {
        r.duration_s = item.at("duration_s").get<double>();
        if (!std::isfinite(r.duration_s) || r.duration_s < 0.0) {
          manifest_error("utterance '" + r.id + "' has invalid 'duration_s'");
        }
      }
      r.audio_path = optional_path(item, "audio", base_dir);
      r.embedding_path = optional_path(item, "embedding", base_dir);
      r.units_path = optional_path(item, "units", base_dir);
      r.segments_path = optional_path(item, "segments", base_dir);
      if (item.contains("condition_embeddings")) {
        const auto& ce = item.at("condition_embeddings");
        if (!ce.is_object()) manifest_error("utterance '" + r.id + "': 'condition_embeddings' must be an object");
        for (const auto& [name, p] : ce.items()) {
          if (!p.is_string()) manifest_error("utterance '" + r.id + "': condition path must be a string");
          r.condition_embeddings[name] = base_dir / p.get<std::string>();
        }
      }
      m.utterances.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    manifest_error(std::string("malformed field: ") + e.what());
  }
  if (m.utterances.empty()) manifest_error("no utterances");
  return m;
}

CorpusManifest load_manifest(const fs::path& path) {
  CorpusManifest m = parse_manifest(slurp_text(path, "load_manifest"), path.parent_path());
  for (auto& r : m.utterances) {
    const auto check_embedding = [&](const fs::path& p) {
      try {
        (void)read_embedding(p, m.embedding_dim);
      } catch (const std::exception& e) {
        manifest_error("utterance '" + r.id + "': " + e.what());
      }
    };
    if (r.embedding_path) check_embedding(*r.embedding_path);
    for (const auto& [_, p] : r.condition_embeddings) check_embedding(p);
    if (r.units_path) {
      std::vector<std::uint16_t> units;
      try {
        units = read_units(*r.units_path);
      } catch (const std::exception& e) {
        manifest_error("utterance '" + r.id + "': " + e.what());
      }
      if (m.unit_vocab_size) {
        for (auto u : units) {
          if (u >= *m.unit_vocab_size) {
            manifest_error("utterance '" + r.id + "': unit id " + std::to_string(u) +
                           " >= unit_vocab_size " + std::to_string(*m.unit_vocab_size));
          }
        }
      }
    }
    if (r.audio_path) {
      AudioBuffer audio;
      try {
        audio = read_wav(*r.audio_path);
      } catch (const std::exception& e) {
        manifest_error("utterance '" + r.id + "': " + e.what());
      }
      const double actual = audio.duration_s();
      if (r.duration_s == 0.0) {
        r.duration_s = actual;
      } else if (std::abs(r.duration_s - actual) > 1e-3) {
        manifest_error("utterance '" + r.id + "': duration_s " + std::to_string(r.duration_s) +
                       " disagrees with audio length " + std::to_string(actual));
      }
      if (!(r.duration_s > 0.0)) manifest_error("utterance '" + r.id + "': empty audio");
    }
  }
  return m;
}

Embedding read_embedding(const fs::path& path, std::size_t dim) {
  const auto bytes = slurp(path, "read_embedding");
  if (bytes.size() != 4 * dim) {
    throw std::runtime_error("read_embedding: " + path.string() + ": expected " + std::to_string(4 * dim) +
                             " bytes (dim " + std::to_string(dim) + "), got " + std::to_string(bytes.size()));
  }
  Embedding e;
  e.values.resize(dim);
  double norm2 = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    const unsigned char* p = bytes.data() + 4 * i;
    const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    const float v = std::bit_cast<float>(bits);
    if (!std::isfinite(v)) {
      throw std::runtime_error("read_embedding: " + path.string() + ": non-finite value at index " +
                               std::to_string(i));
    }
    e.values[i] = v;
    norm2 += static_cast<double>(v) * v;
  }
  if (norm2 == 0.0) throw std::runtime_error("read_embedding: " + path.string() + ": zero-norm embedding");
  return e;
}

void write_embedding(const fs::path& path, const Embedding& emb) {
  std::string out;
  out.reserve(4 * emb.values.size());
  for (double v : emb.values) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_embedding: cannot open " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

std::vector<std::uint16_t> read_units(const fs::path& path) {
  const auto bytes = slurp(path, "read_units");
  if (bytes.size() % 2 != 0) throw std::runtime_error("read_units: " + path.string() + ": odd byte length");
  std::vector<std::uint16_t> out(bytes.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint16_t>(bytes[2 * i] | (bytes[2 * i + 1] << 8));
  }
  return out;
}

void write_units(const fs::path& path, std::span<const std::uint16_t> units) {
  std::string out;
  out.reserve(2 * units.size());
  for (auto u : units) {
    out.push_back(static_cast<char>(u & 0xFF));
    out.push_back(static_cast<char>(u >> 8));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_units: cannot open " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

SegmentLabelTrack parse_segment_labels(const std::string& csv_text) {
  std::istringstream in(csv_text);
  std::string line;
  SegmentLabelTrack track;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);
    if (trim(line).empty()) continue;
    if (!header_seen) {
      header_seen = true;
      if (trim(line) == "start_ms,end_ms,label") continue;
      throw std::runtime_error("read_segment_labels: expected header 'start_ms,end_ms,label'");
    }
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c2 == std::string::npos) {
      throw std::runtime_error("read_segment_labels: malformed row " + std::to_string(line_no));
    }
    Segment s;
    try {
      std::size_t used = 0;
      const std::string a = trim(line.substr(0, c1));
      const std::string b = trim(line.substr(c1 + 1, c2 - c1 - 1));
      s.start_ms = std::stod(a, &used);
      if (used != a.size()) throw std::invalid_argument(a);
      s.end_ms = std::stod(b, &used);
      if (used != b.size()) throw std::invalid_argument(b);
    } catch (const std::exception&) {
      throw std::runtime_error("read_segment_labels: malformed number on row " + std::to_string(line_no));
    }
    s.label = line.substr(c2 + 1);
    if (!std::isfinite(s.start_ms) || !std::isfinite(s.end_ms)) {
      throw std::runtime_error("read_segment_labels: non-finite time on row " + std::to_string(line_no));
    }
    if (!(s.end_ms > s.start_ms)) {
      throw std::runtime_error("read_segment_labels: zero or negative length segment on row " +
                               std::to_string(line_no));
    }
    if (!track.segments.empty() && s.start_ms < track.segments.back().end_ms) {
      throw std::runtime_error("read_segment_labels: segment on row " + std::to_string(line_no) +
                               " overlaps or precedes the previous one");
    }
    track.segments.push_back(std::move(s));
  }
  if (!header_seen) throw std::runtime_error("read_segment_labels: empty file");
  return track;
}

SegmentLabelTrack read_segment_labels(const fs::path& path) {
  try {
    return parse_segment_labels(slurp_text(path, "read_segment_labels"));
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(std::string(e.what()) + " (" + path.string() + ")");
  }
}

RecordGroups split_random(std::span<const UtteranceRecord> records, std::uint64_t seed) {
  if (records.size() < 4) throw std::invalid_argument("split_random: need at least 4 records");
  auto items = sorted_by_id(records);
  Rng rng(seed);
  for (std::size_t i = items.size() - 1; i > 0; --i) {
    std::swap(items[i], items[rng.below(i + 1)]);
  }
  const std::size_t half = (items.size() + 1) / 2;
  RecordGroups out;
  out.first.assign(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(half));
  out.second.assign(items.begin() + static_cast<std::ptrdiff_t>(half), items.end());
  return out;
}

RecordGroups split_by_duration(std::span<const UtteranceRecord> records) {
  if (records.size() < 4) throw std::invalid_argument("split_by_duration: need at least 4 records");
  for (const auto& r : records) {
    if (!(r.duration_s > 0.0)) throw std::invalid_argument("split_by_duration: missing duration for '" + r.id + "'");
  }
  std::vector<UtteranceRecord> items(records.begin(), records.end());
  std::sort(items.begin(), items.end(), [](const UtteranceRecord& a, const UtteranceRecord& b) {
    if (a.duration_s != b.duration_s) return a.duration_s < b.duration_s;
    return a.id < b.id;
  });
  const std::size_t half = (items.size() + 1) / 2;
  RecordGroups out;
  out.first.assign(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(half));
  out.second.assign(items.begin() + static_cast<std::ptrdiff_t>(half), items.end());
  return out;
}

}  // namespace voxid
