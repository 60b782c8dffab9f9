// Regenerates the committed test fixtures, or with --check verifies that the
// committed copy is byte-identical to a fresh generation.
//
//   make_fixtures <dir>
//   make_fixtures --check <dir>
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "synth.hpp"
#include "voxid/audio.hpp"
#include "voxid/corpus.hpp"
#include "voxid/probe.hpp"
#include "voxid/rhythm.hpp"

namespace fs = std::filesystem;
using namespace voxid;
using namespace voxid::testing;
using nlohmann::ordered_json;

namespace {

void write_json(const fs::path& path, const ordered_json& j) {
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << '\n';
}

/// 10 speakers x 12 utterances with a planted duration component, a
/// channel-shifted "snr0" condition and a feature table for the probe.
void make_embeddings(const fs::path& root) {
  fs::create_directories(root / "emb");
  fs::create_directories(root / "cond");
  SyntheticCorpusSpec spec;
  spec.speakers = 10;
  spec.utterances = 12;
  spec.dim = 16;
  spec.duration_strength = 0.3;
  const auto c = make_embedding_corpus(spec, 20240601);

  Rng rng(77);
  std::vector<double> channel(spec.dim);
  double norm = 0.0;
  for (auto& v : channel) {
    v = rng.normal();
    norm += v * v;
  }
  for (auto& v : channel) v *= 0.8 / std::sqrt(norm);

  ordered_json m;
  m["embedding_dim"] = spec.dim;
  m["unit_vocab_size"] = nullptr;
  m["unit_hop_ms"] = 20.0;
  m["conditions"]["snr0"] = {{"kind", "white_noise"}, {"snr_db", 0}};
  m["utterances"] = ordered_json::array();

  double mean_d = 0.0, var_d = 0.0;
  for (const auto& u : c.manifest.utterances) mean_d += u.duration_s;
  mean_d /= static_cast<double>(c.manifest.utterances.size());
  for (const auto& u : c.manifest.utterances) var_d += (u.duration_s - mean_d) * (u.duration_s - mean_d);
  const double sd_d = std::sqrt(var_d / static_cast<double>(c.manifest.utterances.size()));

  FeatureTable features;
  features.columns = {"duration_s", "duration_noisy", "null_target"};
  for (const auto& u : c.manifest.utterances) {
    const auto& e = c.table.base.at(u.id);
    write_embedding(root / "emb" / (u.id + ".f32"), e);
    Embedding shifted = e;
    double n2 = 0.0;
    for (std::size_t d = 0; d < spec.dim; ++d) {
      shifted.values[d] += channel[d] + 0.05 * rng.normal();
      n2 += shifted.values[d] * shifted.values[d];
    }
    for (auto& v : shifted.values) v /= std::sqrt(n2);
    write_embedding(root / "cond" / (u.id + ".f32"), shifted);

    ordered_json item;
    item["id"] = u.id;
    item["speaker"] = u.speaker_id;
    item["duration_s"] = u.duration_s;
    item["embedding"] = "emb/" + u.id + ".f32";
    item["condition_embeddings"] = {{"snr0", "cond/" + u.id + ".f32"}};
    m["utterances"].push_back(item);

    const double rounded = std::round(u.duration_s * 1000.0) / 1000.0;
    features.rows.push_back({u.id, u.speaker_id,
                             {rounded, std::round((u.duration_s + 1.2 * sd_d * rng.normal()) * 1000.0) / 1000.0,
                              std::round(rng.normal() * 1000.0) / 1000.0}});
  }
  write_json(root / "manifest.json", m);
  write_feature_table(root / "features.csv", features);
}

const std::vector<std::vector<std::string>> kPhones{
    {"AA1", "IY1", "EH0", "OW1", "L", "R", "M", "N"},
    {"T", "S", "K", "P", "F", "D"},
    {"sil"},
};

/// 4 speakers x 16 utterances x 150 runs of unit streams over a planted 3-group
/// codebook, with matching phone-label tracks.
void make_rhythm(const fs::path& root) {
  fs::create_directories(root / "units");
  fs::create_directories(root / "labels");
  const std::size_t per_group = 8;
  const auto cb = planted_codebook(3, per_group, 12, 0.5, 11);
  write_codebook(root / "codebook.json", root / "codebook.f32", cb);

  const std::vector<RhythmSpeaker> speakers{
      {"spk00", {100.0, 60.0, 200.0}},
      {"spk01", {180.0, 110.0, 360.0}},
      {"spk02", {260.0, 150.0, 500.0}},
      {"spk03", {140.0, 80.0, 260.0}},
  };
  Rng rng(12);
  ordered_json m;
  m["embedding_dim"] = 1;
  m["unit_vocab_size"] = cb.num_units;
  m["unit_hop_ms"] = 20.0;
  m["utterances"] = ordered_json::array();
  for (const auto& spk : speakers) {
    for (std::size_t u = 0; u < 16; ++u) {
      const auto id = spk.id + "_u" + std::to_string(u);
      const auto seq = synth_units(spk, 150, per_group, 20.0, rng, 0.4);
      write_units(root / "units" / (id + ".u16"), seq.unit_ids);

      std::string csv = "start_ms,end_ms,label\n";
      std::size_t i = 0;
      while (i < seq.unit_ids.size()) {
        const auto g = seq.unit_ids[i] / per_group;
        std::size_t j = i;
        while (j < seq.unit_ids.size() && seq.unit_ids[j] / per_group == g) ++j;
        const auto& pool = kPhones[g];
        csv += std::to_string(i * 20) + "," + std::to_string(j * 20) + "," + pool[rng.below(pool.size())] + "\n";
        i = j;
      }
      std::ofstream(root / "labels" / (id + ".csv"), std::ios::trunc) << csv;

      ordered_json item;
      item["id"] = id;
      item["speaker"] = spk.id;
      item["duration_s"] = static_cast<double>(seq.unit_ids.size()) * 0.02;
      item["units"] = "units/" + id + ".u16";
      item["segments"] = "labels/" + id + ".csv";
      m["utterances"].push_back(item);
    }
  }
  write_json(root / "manifest.json", m);
}

/// Four 2 s speech-like WAVs from two speakers.
void make_audio(const fs::path& root) {
  fs::create_directories(root / "wav");
  const std::vector<std::tuple<std::string, std::string, double, double>> files{
      {"spk00_u0", "spk00", 120.0, 0.30},
      {"spk00_u1", "spk00", 128.0, 0.25},
      {"spk01_u0", "spk01", 210.0, 0.35},
      {"spk01_u1", "spk01", 220.0, 0.20},
  };
  ordered_json m;
  m["embedding_dim"] = 1;
  m["utterances"] = ordered_json::array();
  std::uint64_t seed = 500;
  for (const auto& [id, spk, f0, level] : files) {
    const auto a = speech_like(2.0, f0, level, ++seed);
    write_wav(root / "wav" / (id + ".wav"), a);
    m["utterances"].push_back({{"id", id}, {"speaker", spk}, {"duration_s", 2.0}, {"audio", "wav/" + id + ".wav"}});
  }
  write_json(root / "manifest.json", m);
}

void generate(const fs::path& root) {
  make_embeddings(root / "embeddings");
  make_rhythm(root / "rhythm");
  make_audio(root / "audio");
}

std::set<fs::path> relative_files(const fs::path& root) {
  std::set<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out.insert(fs::relative(e.path(), root));
  }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int check(const fs::path& committed) {
  TempDir fresh;
  generate(fresh.path());
  const auto want = relative_files(fresh.path());
  const auto have = fs::exists(committed) ? relative_files(committed) : std::set<fs::path>{};
  int problems = 0;
  for (const auto& f : want) {
    if (!have.count(f)) {
      std::cerr << "missing: " << f.string() << '\n';
      ++problems;
    } else if (slurp(fresh.path() / f) != slurp(committed / f)) {
      std::cerr << "differs: " << f.string() << '\n';
      ++problems;
    }
  }
  for (const auto& f : have) {
    if (!want.count(f)) {
      std::cerr << "unexpected: " << f.string() << '\n';
      ++problems;
    }
  }
  std::cout << want.size() << " fixture files, " << problems << " problems\n";
  return problems == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    if (argc == 3 && std::string(argv[1]) == "--check") return check(argv[2]);
    if (argc == 2) {
      fs::remove_all(fs::path(argv[1]) / "embeddings");
      fs::remove_all(fs::path(argv[1]) / "rhythm");
      fs::remove_all(fs::path(argv[1]) / "audio");
      generate(argv[1]);
      std::cout << "wrote " << relative_files(argv[1]).size() << " files under " << argv[1] << '\n';
      return 0;
    }
    std::cerr << "usage: make_fixtures [--check] <dir>\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "make_fixtures: " << e.what() << '\n';
    return 1;
  }
}
