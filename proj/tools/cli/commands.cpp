#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>

#include "voxid/audio.hpp"
#include "voxid/corpus.hpp"
#include "voxid/dsp.hpp"
#include "voxid/features.hpp"
#include "voxid/parallel.hpp"
#include "voxid/probe.hpp"
#include "voxid/report.hpp"
#include "voxid/rhythm.hpp"
#include "voxid/rng.hpp"
#include "voxid/similarity.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace voxid::cli {
namespace {

std::string absolute_or_empty(const std::string& p) {
  return p.empty() ? p : fs::absolute(p).lexically_normal().string();
}

void prepare_out(const std::string& out) {
  if (out.empty()) throw std::runtime_error("--out is required");
  fs::create_directories(out);
}

template <typename Config>
void write_run_json(const Config& config, const std::string& command, const ordered_json& metadata) {
  ordered_json run;
  run["tool"] = "voxid";
  run["version"] = kVersion;
  run["command"] = command;
  run["config"] = nlohmann::json(config);
  run["metadata"] = metadata;
  write_text(fs::path(config.out) / "run.json", run.dump(2) + "\n");
}

std::string require_audio(const UtteranceRecord& u) {
  if (!u.audio_path) throw std::runtime_error("utterance '" + u.id + "' has no audio path");
  return u.audio_path->string();
}

AudioBuffer read_audio(const UtteranceRecord& u) {
  try {
    return read_wav(require_audio(u));
  } catch (const std::exception& e) {
    throw std::runtime_error("utterance '" + u.id + "': " + e.what());
  }
}

/// Rescales so every sample fits in the 16-bit range; returns the factor (1 if untouched).
double fit_to_range(AudioBuffer& a) {
  double peak = 0.0;
  for (double s : a.samples) peak = std::max(peak, std::abs(s));
  const double limit = 32767.0 / 32768.0;
  if (peak <= limit) return 1.0;
  const double scale = limit / peak;
  for (auto& s : a.samples) s *= scale;
  return scale;
}

std::vector<fs::path> wav_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("reference directory not found: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".wav") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw std::runtime_error("no .wav files in reference directory " + dir.string());
  return out;
}

ordered_json manifest_json_from(const CorpusManifest& m) {
  ordered_json j;
  j["embedding_dim"] = m.embedding_dim;
  j["unit_vocab_size"] = m.unit_vocab_size ? ordered_json(*m.unit_vocab_size) : ordered_json(nullptr);
  j["unit_hop_ms"] = m.unit_hop_ms;
  return j;
}

CoarsePartition partition_from(const std::string& codebook, std::size_t n_groups, Linkage linkage,
                               int sonorant_unit) {
  const auto cb = read_codebook(codebook);
  auto partition = cluster_codebook(cb, n_groups, linkage);
  if (sonorant_unit >= 0) {
    if (static_cast<std::size_t>(sonorant_unit) >= partition.group_of_unit.size()) {
      throw std::runtime_error("--sonorant-unit " + std::to_string(sonorant_unit) + " is outside the codebook");
    }
    partition.sonorant_group = partition.group_of_unit[static_cast<std::size_t>(sonorant_unit)];
  }
  return partition;
}

Linkage parse_linkage(const std::string& s) {
  if (s == "ward") return Linkage::ward;
  if (s == "average") return Linkage::average;
  throw std::runtime_error("unknown linkage '" + s + "' (expected ward or average)");
}

}  // namespace

// ------------------------------------------------------------------ perturb

int run_perturb(PerturbConfig c) {
  c.manifest = absolute_or_empty(c.manifest);
  c.out = absolute_or_empty(c.out);
  c.reference = absolute_or_empty(c.reference);
  static const std::set<std::string> modes{"noise", "emphasis", "deemphasis", "eq_match"};
  if (!modes.count(c.mode)) throw std::runtime_error("perturb: choose one of --snr, --emphasis, --deemphasis, --eq-match");
  if (c.mode == "eq_match" && c.reference.empty()) throw std::runtime_error("perturb: --eq-match needs --reference");
  prepare_out(c.out);
  fs::create_directories(fs::path(c.out) / "wav");

  const auto manifest = load_manifest(c.manifest);
  const auto& utts = manifest.utterances;
  std::vector<AudioBuffer> audio(utts.size());
  for (std::size_t i = 0; i < utts.size(); ++i) audio[i] = read_audio(utts[i]);
  std::vector<bool> silent(utts.size());
  for (std::size_t i = 0; i < utts.size(); ++i) silent[i] = mean_power(audio[i]) == 0.0;

  std::optional<EqFilter> eq;
  ordered_json condition{{"kind", c.mode}};
  if (c.mode == "noise") {
    condition["snr_db"] = c.snr_db;
    condition["seed"] = c.seed;
  } else if (c.mode == "eq_match") {
    std::vector<AudioBuffer> refs;
    for (const auto& p : wav_files(c.reference)) refs.push_back(read_wav(p));
    std::vector<AudioBuffer> targets;
    for (std::size_t i = 0; i < utts.size(); ++i) {
      if (!silent[i]) targets.push_back(audio[i]);
    }
    if (targets.empty()) throw std::runtime_error("perturb: every input file is silent");
    const WelchOptions welch{c.segment_len, 0.5};
    EqDesignOptions opt;
    opt.n_bands = c.n_bands;
    opt.n_taps = c.n_taps;
    opt.clamp_db = c.clamp_db;
    eq = design_match_eq(welch_psd_pooled(refs, welch), welch_psd_pooled(targets, welch), opt);
    write_text(fs::path(c.out) / "eq_taps.csv", eq_taps_csv(*eq));
    write_text(fs::path(c.out) / "eq_bands.csv", eq_bands_csv(*eq));
    condition["reference"] = c.reference;
    condition["n_bands"] = c.n_bands;
    condition["n_taps"] = c.n_taps;
    condition["clamp_db"] = c.clamp_db;
  } else {
    condition["alpha"] = c.alpha;
  }

  struct Row {
    std::string status = "ok";
    double scale = 1.0;
    double signal_power = 0.0;
    double noise_power = 0.0;
  };
  std::vector<Row> rows(utts.size());
  parallel_for(utts.size(), c.workers, [&](std::size_t i) {
    auto& row = rows[i];
    if (silent[i]) {
      row.status = "skipped: silent";
      return;
    }
    AudioBuffer y;
    double feedback = 0.0;
    if (c.mode == "noise") {
      auto r = add_white_noise(audio[i], c.snr_db, mix_seed(c.seed, i));
      y = std::move(r.audio);
      row.scale = r.scale;
      row.signal_power = r.signal_power;
      row.noise_power = r.noise_power;
    } else if (c.mode == "emphasis") {
      y = apply_emphasis(audio[i], c.alpha);
      feedback = c.alpha;
      row.scale = fit_to_range(y);
    } else if (c.mode == "deemphasis") {
      y = apply_deemphasis(audio[i], c.alpha);
      row.scale = fit_to_range(y);
    } else {
      y = apply_eq(audio[i], *eq);
      row.scale = fit_to_range(y);
    }
    write_wav(fs::path(c.out) / "wav" / (utts[i].id + ".wav"), y, row.scale == 1.0 ? feedback : 0.0);
  });

  std::ostringstream csv;
  csv << "id,status,scale,signal_power,noise_power\n";
  ordered_json out_manifest = manifest_json_from(manifest);
  out_manifest["conditions"][c.mode] = condition;
  out_manifest["utterances"] = ordered_json::array();
  ordered_json skipped = ordered_json::array();
  for (std::size_t i = 0; i < utts.size(); ++i) {
    csv << utts[i].id << ',' << rows[i].status << ',' << format_number(rows[i].scale) << ','
        << format_number(rows[i].signal_power) << ',' << format_number(rows[i].noise_power) << '\n';
    if (silent[i]) {
      skipped.push_back(utts[i].id);
      continue;
    }
    out_manifest["utterances"].push_back({{"id", utts[i].id},
                                          {"speaker", utts[i].speaker_id},
                                          {"duration_s", audio[i].duration_s()},
                                          {"audio", "wav/" + utts[i].id + ".wav"}});
  }
  write_text(fs::path(c.out) / "perturb.csv", csv.str());
  if (!out_manifest["utterances"].empty()) write_text(fs::path(c.out) / "manifest.json", out_manifest.dump(2) + "\n");
  for (const auto& id : skipped) std::cerr << "perturb: skipped silent file '" << id.get<std::string>() << "'\n";

  ordered_json meta;
  meta["condition"] = condition;
  meta["processed"] = utts.size() - skipped.size();
  meta["skipped_count"] = skipped.size();
  meta["skipped"] = skipped;
  write_run_json(c, "perturb", meta);
  return 0;
}

// ---------------------------------------------------------------------- eer

int run_eer(EerConfig c) {
  c.manifest = absolute_or_empty(c.manifest);
  c.out = absolute_or_empty(c.out);
  const auto protocol = parse_protocol(c.protocol);
  if (protocol == Protocol::perturbed && c.condition.empty()) {
    throw std::runtime_error("eer: the perturbed protocol needs --condition");
  }
  prepare_out(c.out);
  const auto manifest = load_manifest(c.manifest);
  const auto table =
      load_embeddings(manifest, protocol == Protocol::perturbed ? std::optional<std::string>(c.condition) : std::nullopt);
  const auto report = run_protocol(manifest, table, {protocol, c.seed, c.condition, c.workers});
  write_text(fs::path(c.out) / "eer_per_speaker.csv", protocol_csv(report));
  write_text(fs::path(c.out) / "eer_summary.json", protocol_summary_json(report));

  ordered_json meta;
  meta["mean_eer"] = report.mean_eer;
  meta["std_eer"] = report.std_eer;
  meta["n_speakers"] = report.per_speaker.size();
  meta["skipped_count"] = 0;
  write_run_json(c, "eer", meta);
  return 0;
}

// ---------------------------------------------------------------------- u3d

namespace {

struct UtteranceRhythm {
  DurationDistribution durations;
  double rate_events = 0.0;
  double minutes = 0.0;
};

DurationDistribution merge(const std::vector<const UtteranceRhythm*>& parts) {
  DurationDistribution out;
  for (const auto* p : parts) {
    for (const auto& [name, v] : p->durations) out[name].insert(out[name].end(), v.begin(), v.end());
  }
  for (auto& [_, v] : out) std::sort(v.begin(), v.end());
  return out;
}

}  // namespace

int run_u3d(U3DConfig c) {
  c.manifest = absolute_or_empty(c.manifest);
  c.out = absolute_or_empty(c.out);
  c.codebook = absolute_or_empty(c.codebook);
  c.label_map = absolute_or_empty(c.label_map);
  std::set<std::string> wanted;
  for (const auto& s : c.scenarios) {
    if (s != "same" && s != "nearest" && s != "random") throw std::runtime_error("u3d: unknown scenario '" + s + "'");
    wanted.insert(s);
  }
  if (!c.use_labels && c.codebook.empty()) {
    throw std::runtime_error("u3d: the unit path needs --codebook (or pass --labels for segment-label files)");
  }
  prepare_out(c.out);
  const auto manifest = load_manifest(c.manifest);

  std::optional<CoarsePartition> partition;
  std::optional<LabelMap> labels;
  if (c.use_labels) {
    labels = c.label_map.empty() ? LabelMap::arpabet() : LabelMap::from_csv(c.label_map);
  } else {
    partition = partition_from(c.codebook, c.n_groups, parse_linkage(c.linkage), c.sonorant_unit);
    std::ostringstream p;
    p << "unit,group\n";
    for (std::size_t u = 0; u < partition->group_of_unit.size(); ++u) {
      p << u << ',' << group_name(partition->group_of_unit[u]) << '\n';
    }
    write_text(fs::path(c.out) / "partition.csv", p.str());
  }
  if (wanted.count("nearest") && partition && !partition->sonorant_group) {
    throw std::runtime_error("u3d: the nearest scenario needs --sonorant-unit to designate the sonorant group");
  }

  const auto& utts = manifest.utterances;
  std::vector<UtteranceRhythm> rhythm(utts.size());
  parallel_for(utts.size(), c.workers, [&](std::size_t i) {
    const auto& u = utts[i];
    auto& r = rhythm[i];
    try {
      if (labels) {
        if (!u.segments_path) throw std::runtime_error("no segment-label file");
        const auto track = read_segment_labels(*u.segments_path);
        const std::vector<SegmentLabelTrack> one{track};
        r.durations = distributions_from_labels(one, *labels);
        for (const auto& s : track.segments) {
          const auto cls = labels->classify(s.label);
          if (cls && *cls == c.rate_class) r.rate_events += 1.0;
        }
        r.minutes = track.segments.empty() ? 0.0 : track.segments.back().end_ms / 60000.0;
      } else {
        if (!u.units_path) throw std::runtime_error("no unit file");
        UnitSequence seq{read_units(*u.units_path), manifest.unit_hop_ms};
        const auto segs = segment(seq, *partition, c.min_dur_ms);
        const std::vector<std::vector<GroupSegment>> one{segs};
        r.durations = duration_distributions(one);
        if (partition->sonorant_group) {
          for (const auto& s : segment(seq, *partition, 0.0)) r.rate_events += s.group == *partition->sonorant_group;
        }
        r.minutes = static_cast<double>(seq.unit_ids.size()) * seq.hop_ms / 60000.0;
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("utterance '" + u.id + "': " + e.what());
    }
  });

  const auto by_speaker = manifest.by_speaker();
  std::vector<std::string> speakers;
  std::map<std::string, std::vector<const UtteranceRhythm*>> parts;
  std::map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < utts.size(); ++i) index_of[utts[i].id] = i;
  for (const auto& [spk, list] : by_speaker) {
    speakers.push_back(spk);
    for (const auto* u : list) parts[spk].push_back(&rhythm[index_of.at(u->id)]);
  }
  if ((wanted.count("nearest") || wanted.count("random")) && speakers.size() < 2) {
    throw std::runtime_error("u3d: nearest and random scenarios need at least 2 speakers, manifest has " +
                             std::to_string(speakers.size()));
  }
  std::map<std::string, DurationDistribution> whole;
  std::map<std::string, double> rates;
  for (const auto& spk : speakers) {
    whole[spk] = merge(parts[spk]);
    double events = 0.0, minutes = 0.0;
    for (const auto* p : parts[spk]) {
      events += p->rate_events;
      minutes += p->minutes;
    }
    rates[spk] = minutes > 0.0 ? events / minutes : 0.0;
  }

  struct Pair {
    std::string scenario, speaker, partner;
    U3DReport report;
  };
  std::vector<Pair> pairs;
  std::size_t skipped_same = 0;
  if (wanted.count("same")) {
    for (std::size_t si = 0; si < speakers.size(); ++si) {
      const auto& spk = speakers[si];
      const auto& list = by_speaker.at(spk);
      if (list.size() < 4) {
        ++skipped_same;
        continue;
      }
      std::vector<UtteranceRecord> records;
      for (const auto* u : list) records.push_back(*u);
      const auto [a, b] = split_random(records, mix_seed(c.seed, si));
      std::vector<const UtteranceRhythm*> pa, pb;
      for (const auto& r : a) pa.push_back(&rhythm[index_of.at(r.id)]);
      for (const auto& r : b) pb.push_back(&rhythm[index_of.at(r.id)]);
      pairs.push_back({"same", spk, spk, u3d(merge(pa), merge(pb))});
    }
  }
  if (wanted.count("nearest")) {
    const auto nearest = nearest_by_rate(rates);
    for (const auto& spk : speakers) {
      const auto& other = nearest.at(spk);
      pairs.push_back({"nearest", spk, other, u3d(whole[spk], whole[other])});
    }
  }
  if (wanted.count("random")) {
    Rng rng(mix_seed(c.seed, 0x52414e44));
    for (std::size_t si = 0; si < speakers.size(); ++si) {
      auto r = rng.below(speakers.size() - 1);
      if (r >= si) ++r;
      pairs.push_back({"random", speakers[si], speakers[r], u3d(whole[speakers[si]], whole[speakers[r]])});
    }
  }

  std::vector<U3DScenarioRow> table;
  for (const char* scenario : {"same", "nearest", "random"}) {
    if (!wanted.count(scenario)) continue;
    U3DScenarioRow row;
    row.scenario = scenario;
    std::map<std::string, std::pair<double, std::size_t>> acc;
    for (const auto& p : pairs) {
      if (p.scenario != scenario) continue;
      ++row.comparisons;
      for (const auto& [g, d] : p.report.per_group_distance) {
        acc[g].first += d;
        ++acc[g].second;
      }
    }
    if (row.comparisons == 0) throw std::runtime_error(std::string("u3d: no comparisons for scenario '") + scenario + "'");
    double sum = 0.0;
    for (const auto& [g, v] : acc) {
      row.per_group[g] = v.first / static_cast<double>(v.second);
      sum += row.per_group[g];
    }
    row.average = sum / static_cast<double>(row.per_group.size());
    table.push_back(row);
  }
  write_text(fs::path(c.out) / "u3d_table.csv", u3d_table_csv(table));
  std::ostringstream pcsv;
  pcsv << "scenario,speaker,partner,average\n";
  for (const auto& p : pairs) {
    pcsv << p.scenario << ',' << p.speaker << ',' << p.partner << ',' << format_number(p.report.average) << '\n';
  }
  write_text(fs::path(c.out) / "u3d_pairs.csv", pcsv.str());
  std::ostringstream rcsv;
  rcsv << "speaker,rate_per_minute\n";
  for (const auto& [spk, r] : rates) rcsv << spk << ',' << format_number(r) << '\n';
  write_text(fs::path(c.out) / "speech_rates.csv", rcsv.str());

  ordered_json meta;
  meta["path"] = c.use_labels ? "segment_labels" : "units";
  meta["n_speakers"] = speakers.size();
  meta["skipped_count"] = skipped_same;
  meta["skipped_reason"] = "speakers with fewer than 4 utterances are left out of the same scenario";
  for (const auto& row : table) meta["averages"][row.scenario] = row.average;
  write_run_json(c, "u3d", meta);
  return 0;
}

// ----------------------------------------------------------------- features

int run_features(FeaturesConfig c) {
  c.manifest = absolute_or_empty(c.manifest);
  c.out = absolute_or_empty(c.out);
  c.codebook = absolute_or_empty(c.codebook);
  prepare_out(c.out);
  const auto manifest = load_manifest(c.manifest);
  std::optional<CoarsePartition> partition;
  if (!c.codebook.empty()) {
    partition = partition_from(c.codebook, c.n_groups, Linkage::ward, c.sonorant_unit);
    if (!partition->sonorant_group) throw std::runtime_error("features: --codebook needs --sonorant-unit");
  }
  PitchConfig pitch;
  pitch.voicing_threshold = c.voicing_threshold;
  pitch.silence_floor_dbfs = c.silence_floor_dbfs;

  const auto& utts = manifest.utterances;
  std::vector<std::optional<FeatureVector>> results(utts.size());
  std::vector<std::vector<std::pair<std::string, std::string>>> failures(utts.size());
  parallel_for(utts.size(), c.workers, [&](std::size_t i) {
    const auto audio = read_audio(utts[i]);
    std::optional<UnitSequence> units;
    if (partition && utts[i].units_path) units = UnitSequence{read_units(*utts[i].units_path), manifest.unit_hop_ms};
    try {
      results[i] = extract_all(audio, units ? &*units : nullptr, partition ? &*partition : nullptr, pitch);
    } catch (const FeatureError& e) {
      failures[i] = e.failures();
    }
  });

  FeatureTable table;
  table.columns.assign(kFeatureNames.begin(), kFeatureNames.end());
  ordered_json failed = ordered_json::array();
  for (std::size_t i = 0; i < utts.size(); ++i) {
    if (results[i]) {
      const auto values = feature_values(*results[i]);
      table.rows.push_back({utts[i].id, utts[i].speaker_id, {values.begin(), values.end()}});
      continue;
    }
    for (const auto& [feature, message] : failures[i]) {
      std::cerr << "features: utterance '" << utts[i].id << "' feature '" << feature << "': " << message << '\n';
      failed.push_back({{"id", utts[i].id}, {"feature", feature}, {"message", message}});
    }
  }
  if (table.rows.empty()) throw std::runtime_error("features: extraction failed for every utterance");
  write_feature_table(fs::path(c.out) / "features.csv", table);

  ordered_json meta;
  meta["rows"] = table.rows.size();
  meta["skipped_count"] = utts.size() - table.rows.size();
  meta["failures"] = failed;
  meta["speech_rate"] = partition ? "from unit files" : "absent (no --codebook)";
  write_run_json(c, "features", meta);
  return 0;
}

// -------------------------------------------------------------------- probe

int run_probe_command(ProbeConfig c) {
  c.manifest = absolute_or_empty(c.manifest);
  c.out = absolute_or_empty(c.out);
  c.features = absolute_or_empty(c.features);
  ProbeOptions opt;
  opt.folds = c.folds;
  opt.grid_points = c.grid_points;
  opt.grid_ratio = c.grid_ratio;
  opt.iqr_multiplier = c.iqr_multiplier;
  opt.workers = c.workers;
  if (c.mode == "held_out") {
    opt.mode = ProbeMode::held_out;
  } else if (c.mode != "refit_on_training") {
    throw std::runtime_error("probe: --mode must be refit_on_training or held_out");
  }
  if (c.features.empty()) throw std::runtime_error("probe: --features is required");
  prepare_out(c.out);
  const auto manifest = load_manifest(c.manifest);
  const auto table = load_embeddings(manifest, std::nullopt);
  const auto report = run_probe(manifest, table, read_feature_table(c.features), opt);
  write_text(fs::path(c.out) / "probe.csv", probe_csv(report));
  write_text(fs::path(c.out) / "probe.svg", probe_svg(report, c.label));

  ordered_json meta;
  meta["mode"] = report.mode;
  meta["skipped_count"] = report.skipped;
  for (const auto& e : report.entries) {
    if (!e.r2) meta["skipped"].push_back({{"feature", e.feature}, {"status", e.status}});
  }
  write_run_json(c, "probe", meta);
  return 0;
}

// ------------------------------------------------------------------- replay

int replay(const fs::path& run_json, const std::string& out_override) {
  std::ifstream in(run_json);
  if (!in) throw std::runtime_error("replay: cannot open " + run_json.string());
  nlohmann::json run;
  try {
    run = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("replay: malformed run.json: ") + e.what());
  }
  if (!run.contains("command") || !run.contains("config")) throw std::runtime_error("replay: run.json lacks command/config");
  auto config = run.at("config");
  if (!out_override.empty()) config["out"] = out_override;
  const auto command = run.at("command").get<std::string>();
  if (command == "perturb") return run_perturb(config.get<PerturbConfig>());
  if (command == "eq-match") return run_perturb(config.get<PerturbConfig>());
  if (command == "eer") return run_eer(config.get<EerConfig>());
  if (command == "u3d") return run_u3d(config.get<U3DConfig>());
  if (command == "features") return run_features(config.get<FeaturesConfig>());
  if (command == "probe") return run_probe_command(config.get<ProbeConfig>());
  throw std::runtime_error("replay: unknown command '" + command + "'");
}

}  // namespace voxid::cli
