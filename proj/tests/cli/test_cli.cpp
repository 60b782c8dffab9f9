#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "synth.hpp"
#include "voxid/audio.hpp"
#include "voxid/dsp.hpp"
#include "voxid/report.hpp"

namespace fs = std::filesystem;
using namespace voxid;
using voxid::testing::TempDir;

namespace {

const fs::path kFixtures = VOXID_FIXTURE_DIR;

struct Result {
  int code = 0;
  std::string err;
};

Result voxid_run(const std::string& args, const TempDir& scratch) {
  const auto err_file = scratch / "stderr.txt";
  const std::string cmd = std::string("\"") + VOXID_CLI_PATH + "\" " + args + " > /dev/null 2> \"" +
                          err_file.string() + "\"";
  const int status = std::system(cmd.c_str());
  std::ifstream in(err_file);
  std::string err{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, err};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

std::map<std::string, std::string> column(const fs::path& csv, const std::string& key, const std::string& value) {
  const auto rows = read_csv(csv);
  std::size_t k = 0, v = 0;
  for (std::size_t i = 0; i < rows[0].size(); ++i) {
    if (rows[0][i] == key) k = i;
    if (rows[0][i] == value) v = i;
  }
  std::map<std::string, std::string> out;
  for (std::size_t r = 1; r < rows.size(); ++r) out[rows[r][k]] = rows[r][v];
  return out;
}

const std::vector<std::string> kAudioIds{"spk00_u0", "spk00_u1", "spk01_u0", "spk01_u1"};

AudioBuffer fixture_wav(const std::string& id) { return read_wav(kFixtures / "audio" / "wav" / (id + ".wav")); }

std::vector<double> band_db(const PowerSpectrum& s) {
  const auto edges = band_edges(band_centers({}));
  std::vector<double> out;
  for (std::size_t b = 0; b + 1 < edges.size(); ++b) out.push_back(10.0 * std::log10(band_mean(s, edges[b], edges[b + 1])));
  return out;
}

}  // namespace

TEST_CASE("perturb --snr 20 gives 20 dB on every file and records the run") {
  TempDir dir;
  const auto r = voxid_run("perturb --snr 20 --seed 3 --manifest " + (kFixtures / "audio/manifest.json").string() +
                               " --out " + (dir / "noisy").string(),
                           dir);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto scale = column(dir / "noisy/perturb.csv", "id", "scale");
  for (const auto& id : kAudioIds) {
    CAPTURE(id);
    const auto clean = fixture_wav(id);
    const auto noisy = read_wav(dir / "noisy/wav" / (id + ".wav"));
    const double s = std::stod(scale.at(id));
    double ps = 0.0, pn = 0.0;
    for (std::size_t i = 0; i < clean.samples.size(); ++i) {
      const double n = noisy.samples[i] / s - clean.samples[i];
      ps += clean.samples[i] * clean.samples[i];
      pn += n * n;
    }
    CHECK(std::abs(10.0 * std::log10(ps / pn) - 20.0) <= 0.1);
  }
  const auto run = nlohmann::json::parse(slurp(dir / "noisy/run.json"));
  CHECK(run["version"] == kVersion);
  CHECK(run["command"] == "perturb");
  CHECK(run["config"]["snr_db"] == 20.0);
  CHECK(run["config"]["seed"] == 3);
  CHECK(run["config"]["mode"] == "noise");
  CHECK(run["metadata"]["skipped_count"] == 0);
  CHECK(fs::exists(dir / "noisy/manifest.json"));
}

TEST_CASE("perturb skips and counts silent files") {
  TempDir dir;
  fs::create_directories(dir / "in");
  write_wav(dir / "in/quiet.wav", AudioBuffer{std::vector<double>(16000, 0.0)});
  write_wav(dir / "in/tone.wav", voxid::testing::sine(300.0, 1.0, 0.3));
  std::ofstream(dir / "in/manifest.json") << R"({"embedding_dim": 1, "utterances": [
    {"id": "quiet", "speaker": "a", "audio": "quiet.wav"},
    {"id": "tone", "speaker": "a", "audio": "tone.wav"}]})";
  const auto r = voxid_run("perturb --snr 10 --manifest " + (dir / "in/manifest.json").string() + " --out " +
                               (dir / "out").string(),
                           dir);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.err.find("quiet") != std::string::npos);
  const auto run = nlohmann::json::parse(slurp(dir / "out/run.json"));
  CHECK(run["metadata"]["skipped_count"] == 1);
  CHECK(run["metadata"]["skipped"][0] == "quiet");
  CHECK(!fs::exists(dir / "out/wav/quiet.wav"));
  CHECK(fs::exists(dir / "out/wav/tone.wav"));
}

TEST_CASE("perturb --emphasis then --deemphasis round-trips through 16-bit files") {
  TempDir dir;
  auto r = voxid_run("perturb --emphasis --manifest " + (kFixtures / "audio/manifest.json").string() + " --out " +
                         (dir / "emph").string(),
                     dir);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  r = voxid_run("perturb --deemphasis --manifest " + (dir / "emph/manifest.json").string() + " --out " +
                    (dir / "back").string(),
                dir);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  for (const auto& id : kAudioIds) {
    CAPTURE(id);
    const auto a = fixture_wav(id);
    const auto b = read_wav(dir / "back/wav" / (id + ".wav"));
    REQUIRE(a.samples.size() == b.samples.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < a.samples.size(); ++i) worst = std::max(worst, std::abs(a.samples[i] - b.samples[i]));
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("eq-match restores the band PSD of de-emphasized files") {
  TempDir dir;
  auto r = voxid_run("perturb --deemphasis --manifest " + (kFixtures / "audio/manifest.json").string() + " --out " +
                         (dir / "deemph").string(),
                     dir);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  r = voxid_run("eq-match --clamp-db 40 --manifest " + (dir / "deemph/manifest.json").string() + " --reference " +
                    (kFixtures / "audio/wav").string() + " --out " + (dir / "eq").string(),
                dir);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  std::vector<AudioBuffer> ref, before, after;
  for (const auto& id : kAudioIds) {
    ref.push_back(fixture_wav(id));
    before.push_back(read_wav(dir / "deemph/wav" / (id + ".wav")));
    after.push_back(read_wav(dir / "eq/wav" / (id + ".wav")));
  }
  const auto r_db = band_db(welch_psd_pooled(ref));
  const auto b_db = band_db(welch_psd_pooled(before));
  const auto a_db = band_db(welch_psd_pooled(after));
  double worst_before = 0.0, worst_after = 0.0;
  for (std::size_t k = 0; k < r_db.size(); ++k) {
    worst_before = std::max(worst_before, std::abs(b_db[k] - r_db[k]));
    worst_after = std::max(worst_after, std::abs(a_db[k] - r_db[k]));
  }
  CAPTURE(worst_before);
  CHECK(worst_after <= 1.5);
  CHECK(worst_before > 5.0);
  CHECK(read_csv(dir / "eq/eq_bands.csv").size() == 17);
  CHECK(read_csv(dir / "eq/eq_taps.csv").size() == 514);
}

TEST_CASE("perturb rejects conflicting modes") {
  TempDir dir;
  const auto r = voxid_run("perturb --snr 10 --emphasis --manifest " + (kFixtures / "audio/manifest.json").string() +
                               " --out " + (dir / "x").string(),
                           dir);
  CHECK(r.code != 0);
}

TEST_CASE("eer protocols on the embedding fixture") {
  TempDir dir;
  const auto manifest = (kFixtures / "embeddings/manifest.json").string();
  auto r = voxid_run("eer --protocol same_speaker_random --seed 1 --manifest " + manifest + " --out " +
                         (dir / "same").string(),
                     dir);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  auto summary = nlohmann::json::parse(slurp(dir / "same/eer_summary.json"));
  CHECK(summary["mean_eer"].get<double>() >= 0.45);
  CHECK(summary["mean_eer"].get<double>() <= 0.55);
  CHECK(read_csv(dir / "same/eer_per_speaker.csv").size() == 11);

  r = voxid_run("eer --protocol one_vs_rest --manifest " + manifest + " --out " + (dir / "ovr").string(), dir);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  summary = nlohmann::json::parse(slurp(dir / "ovr/eer_summary.json"));
  CHECK(summary["mean_eer"].get<double>() < 0.05);

  r = voxid_run("eer --protocol same_speaker_duration --manifest " + manifest + " --out " + (dir / "dur").string(), dir);
  REQUIRE_MESSAGE(r.code == 0, r.err);

  r = voxid_run("eer --protocol perturbed --condition snr0 --manifest " + manifest + " --out " + (dir / "pert").string(),
                dir);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  summary = nlohmann::json::parse(slurp(dir / "pert/eer_summary.json"));
  CHECK(summary["metadata"]["condition"] == "snr0");
  CHECK(summary["metadata"]["condition_spec"]["snr_db"] == 0);
  CHECK(summary["mean_eer"].get<double>() < 0.2);

  r = voxid_run("eer --protocol bogus --manifest " + manifest + " --out " + (dir / "bad").string(), dir);
  CHECK(r.code != 0);
}

TEST_CASE("eer names the utterance whose embedding is missing") {
  TempDir dir;
  auto doc = nlohmann::json::parse(slurp(kFixtures / "embeddings/manifest.json"));
  for (auto& u : doc["utterances"]) {
    u["embedding"] = (kFixtures / "embeddings" / u["embedding"].get<std::string>()).string();
    for (auto& [_, p] : u["condition_embeddings"].items()) p = (kFixtures / "embeddings" / p.get<std::string>()).string();
  }
  doc["utterances"][5]["embedding"] = (dir / "nowhere.f32").string();
  const auto missing_id = doc["utterances"][5]["id"].get<std::string>();
  std::ofstream(dir / "m.json") << doc.dump();
  const auto r = voxid_run("eer --manifest " + (dir / "m.json").string() + " --out " + (dir / "o").string(), dir);
  CHECK(r.code != 0);
  CHECK(r.err.find(missing_id) != std::string::npos);
}

TEST_CASE("eer refuses speakers with fewer than 4 utterances") {
  TempDir dir;
  auto doc = nlohmann::json::parse(slurp(kFixtures / "embeddings/manifest.json"));
  nlohmann::json kept = nlohmann::json::array();
  for (auto& u : doc["utterances"]) {
    const auto id = u["id"].get<std::string>();
    if (u["speaker"] == "spk03" && id > "spk03_u002") continue;
    u["embedding"] = (kFixtures / "embeddings" / u["embedding"].get<std::string>()).string();
    u.erase("condition_embeddings");
    kept.push_back(u);
  }
  doc["utterances"] = kept;
  doc.erase("conditions");
  std::ofstream(dir / "m.json") << doc.dump();
  const auto r = voxid_run("eer --manifest " + (dir / "m.json").string() + " --out " + (dir / "o").string(), dir);
  CHECK(r.code != 0);
  CHECK(r.err.find("spk03") != std::string::npos);
  CHECK(r.err.find("at least 4") != std::string::npos);
}

TEST_CASE("u3d scenarios on the unit fixture") {
  TempDir dir;
  const auto manifest = (kFixtures / "rhythm/manifest.json").string();
  const auto codebook = (kFixtures / "rhythm/codebook.json").string();
  auto r = voxid_run("u3d --codebook " + codebook + " --sonorant-unit 0 --seed 4 --manifest " + manifest + " --out " +
                         (dir / "units").string(),
                     dir);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto avg = column(dir / "units/u3d_table.csv", "scenario", "average");
  const double same = std::stod(avg.at("same")), random = std::stod(avg.at("random"));
  CAPTURE(same);
  CAPTURE(random);
  CHECK(same / random < 0.25);
  CHECK(avg.count("nearest") == 1);
  const auto header = read_csv(dir / "units/u3d_table.csv")[0];
  CHECK(header == std::vector<std::string>{"scenario", "g0", "g1", "g2", "average", "comparisons"});
  CHECK(read_csv(dir / "units/partition.csv").size() == 25);

  r = voxid_run("u3d --labels --seed 4 --manifest " + manifest + " --out " + (dir / "labels").string(), dir);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto rows = read_csv(dir / "labels/u3d_table.csv");
  CHECK(rows[0] == std::vector<std::string>{"scenario", "approximant", "fricative", "nasal", "sil", "stop", "vowel",
                                            "average", "comparisons"});
  for (std::size_t i = 1; i < rows.size(); ++i) {
    for (const auto& cell : rows[i]) CHECK(!cell.empty());
  }

  r = voxid_run("u3d --manifest " + manifest + " --out " + (dir / "nocb").string(), dir);
  CHECK(r.code != 0);
  CHECK(r.err.find("codebook") != std::string::npos);

  r = voxid_run("u3d --codebook " + codebook + " --manifest " + manifest + " --out " + (dir / "nosono").string(), dir);
  CHECK(r.code != 0);
}

TEST_CASE("u3d nearest scenario needs two speakers") {
  TempDir dir;
  auto doc = nlohmann::json::parse(slurp(kFixtures / "rhythm/manifest.json"));
  nlohmann::json kept = nlohmann::json::array();
  for (auto& u : doc["utterances"]) {
    if (u["speaker"] != "spk00") continue;
    u["units"] = (kFixtures / "rhythm" / u["units"].get<std::string>()).string();
    u["segments"] = (kFixtures / "rhythm" / u["segments"].get<std::string>()).string();
    kept.push_back(u);
  }
  doc["utterances"] = kept;
  std::ofstream(dir / "one.json") << doc.dump();
  auto r = voxid_run("u3d --labels --scenarios nearest --manifest " + (dir / "one.json").string() + " --out " +
                         (dir / "o").string(),
                     dir);
  CHECK(r.code != 0);
  CHECK(r.err.find("at least 2 speakers") != std::string::npos);
  r = voxid_run("u3d --labels --scenarios same --manifest " + (dir / "one.json").string() + " --out " +
                    (dir / "s").string(),
                dir);
  CHECK_MESSAGE(r.code == 0, r.err);
}

TEST_CASE("features writes 11 marker columns per utterance") {
  TempDir dir;
  const auto r = voxid_run("features --manifest " + (kFixtures / "audio/manifest.json").string() + " --out " +
                               (dir / "f").string(),
                           dir);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto rows = read_csv(dir / "f/features.csv");
  REQUIRE(rows.size() == 5);
  CHECK(rows[0].size() == 13);
  CHECK(rows[0][2] == "duration_s");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i].size() == 13);
    CHECK(std::stod(rows[i][2]) == doctest::Approx(2.0));
    CHECK(rows[i][3].empty());  // speech rate needs units
    for (std::size_t c = 4; c < 13; ++c) CHECK(std::isfinite(std::stod(rows[i][c])));
  }
}

TEST_CASE("probe ranks planted features by strength and writes an SVG") {
  TempDir dir;
  const auto r = voxid_run("probe --manifest " + (kFixtures / "embeddings/manifest.json").string() + " --features " +
                               (kFixtures / "embeddings/features.csv").string() + " --out " + (dir / "p").string(),
                           dir);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto r2 = column(dir / "p/probe.csv", "feature", "r2");
  const double strong = std::stod(r2.at("duration_s")), medium = std::stod(r2.at("duration_noisy")),
               null = std::stod(r2.at("null_target"));
  CAPTURE(strong);
  CAPTURE(medium);
  CAPTURE(null);
  CHECK(strong > medium);
  CHECK(medium > null);
  CHECK(strong > 0.9);
  CHECK(slurp(dir / "p/probe.svg").find("<svg") == 0);
}

TEST_CASE("an empty manifest is an error") {
  TempDir dir;
  std::ofstream(dir / "empty.json") << R"({"embedding_dim": 4, "utterances": []})";
  std::ofstream(dir / "f.csv") << "id,speaker,a\n";
  const auto r = voxid_run("probe --manifest " + (dir / "empty.json").string() + " --features " +
                               (dir / "f.csv").string() + " --out " + (dir / "o").string(),
                           dir);
  CHECK(r.code != 0);
  CHECK(r.err.find("no utterances") != std::string::npos);
}

TEST_CASE("replaying run.json reproduces byte-identical CSVs") {
  TempDir dir;
  const auto emb = kFixtures / "embeddings";
  const auto rhythm = kFixtures / "rhythm";
  const std::vector<std::pair<std::string, std::vector<std::string>>> runs{
      {"eer --protocol same_speaker_random --seed 9 --manifest " + (emb / "manifest.json").string(),
       {"eer_per_speaker.csv"}},
      {"probe --manifest " + (emb / "manifest.json").string() + " --features " + (emb / "features.csv").string(),
       {"probe.csv"}},
      {"u3d --codebook " + (rhythm / "codebook.json").string() + " --sonorant-unit 0 --seed 2 --manifest " +
           (rhythm / "manifest.json").string(),
       {"u3d_table.csv", "u3d_pairs.csv"}},
      {"perturb --snr 5 --seed 8 --manifest " + (kFixtures / "audio/manifest.json").string(), {"perturb.csv"}},
  };
  int n = 0;
  for (const auto& [args, outputs] : runs) {
    const auto first = dir / ("a" + std::to_string(n));
    const auto second = dir / ("b" + std::to_string(n));
    ++n;
    auto r = voxid_run(args + " --out " + first.string(), dir);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    r = voxid_run("--workers 3 replay " + (first / "run.json").string() + " --out " + second.string(), dir);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    for (const auto& o : outputs) {
      CAPTURE(o);
      CHECK(slurp(first / o) == slurp(second / o));
    }
  }
}
