#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "cli/commands.hpp"
#include "voxid/parallel.hpp"
#include "voxid/report.hpp"

using namespace voxid::cli;

int main(int argc, char** argv) {
  CLI::App app{"voxid: speaker-similarity, rhythm and probing experiments"};
  app.set_version_flag("--version", std::string(voxid::kVersion));
  app.require_subcommand(1);
  std::size_t workers = voxid::default_workers();
  app.add_option("--workers", workers, "Worker threads (default: VOXID_WORKERS or hardware concurrency)")
      ->check(CLI::PositiveNumber);

  PerturbConfig perturb;
  bool noise = false, emphasis = false, deemphasis = false, eq_match = false;
  auto* p = app.add_subcommand("perturb", "Write perturbed copies of every WAV in a manifest");
  p->add_option("--manifest", perturb.manifest, "Corpus manifest with audio paths")->required();
  p->add_option("--out", perturb.out, "Output directory")->required();
  auto* snr = p->add_option("--snr", perturb.snr_db, "Add white noise at this SNR (dB)");
  p->add_flag("--emphasis", emphasis, "Apply pre-emphasis y[n] = x[n] - alpha x[n-1]");
  p->add_flag("--deemphasis", deemphasis, "Apply de-emphasis y[n] = x[n] + alpha y[n-1]");
  p->add_flag("--eq-match", eq_match, "Re-equalize toward the --reference long-term spectrum");
  p->add_option("--alpha", perturb.alpha, "Emphasis coefficient")->capture_default_str();
  p->add_option("--seed", perturb.seed, "Noise seed")->capture_default_str();
  p->add_option("--reference", perturb.reference, "Directory of reference WAVs for --eq-match");
  p->add_option("--n-bands", perturb.n_bands, "EQ bands")->capture_default_str();
  p->add_option("--taps", perturb.n_taps, "EQ FIR length (odd)")->capture_default_str();
  p->add_option("--clamp-db", perturb.clamp_db, "EQ band gain limit (dB)")->capture_default_str();
  p->add_option("--segment-len", perturb.segment_len, "Welch segment length (power of two)")->capture_default_str();

  PerturbConfig eq;
  eq.mode = "eq_match";
  auto* e = app.add_subcommand("eq-match", "Design and apply a matching EQ (same as perturb --eq-match)");
  e->add_option("--manifest", eq.manifest, "Manifest of the files to equalize")->required();
  e->add_option("--reference", eq.reference, "Directory of reference WAVs")->required();
  e->add_option("--out", eq.out, "Output directory")->required();
  e->add_option("--n-bands", eq.n_bands, "EQ bands")->capture_default_str();
  e->add_option("--taps", eq.n_taps, "EQ FIR length (odd)")->capture_default_str();
  e->add_option("--clamp-db", eq.clamp_db, "EQ band gain limit (dB)")->capture_default_str();
  e->add_option("--segment-len", eq.segment_len, "Welch segment length (power of two)")->capture_default_str();

  EerConfig eer;
  auto* r = app.add_subcommand("eer", "Per-speaker EER under a split protocol");
  r->add_option("--manifest", eer.manifest, "Corpus manifest with embedding paths")->required();
  r->add_option("--out", eer.out, "Output directory")->required();
  r->add_option("--protocol", eer.protocol, "one_vs_rest | same_speaker_random | same_speaker_duration | perturbed")
      ->capture_default_str();
  r->add_option("--condition", eer.condition, "Condition key for the perturbed protocol");
  r->add_option("--seed", eer.seed, "Split seed")->capture_default_str();

  U3DConfig u3d;
  auto* u = app.add_subcommand("u3d", "Unit duration distances for the Same / Nearest / Random scenarios");
  u->add_option("--manifest", u3d.manifest, "Corpus manifest with unit or segment-label paths")->required();
  u->add_option("--out", u3d.out, "Output directory")->required();
  u->add_option("--codebook", u3d.codebook, "Codebook sidecar JSON (unit path)");
  u->add_flag("--labels", u3d.use_labels, "Use the segment-label files instead of units");
  u->add_option("--label-map", u3d.label_map, "CSV label,class mapping (default: built-in ARPAbet classes)");
  u->add_option("--n-groups", u3d.n_groups, "Coarse groups cut from the codebook tree")->capture_default_str();
  u->add_option("--linkage", u3d.linkage, "ward | average")->capture_default_str();
  u->add_option("--min-dur", u3d.min_dur_ms, "Absorb segments shorter than this (ms)")->capture_default_str();
  u->add_option("--sonorant-unit", u3d.sonorant_unit, "A unit id inside the sonorant group (speech rate)");
  u->add_option("--rate-class", u3d.rate_class, "Label class counted for speech rate")->capture_default_str();
  u->add_option("--scenarios", u3d.scenarios, "Subset of same nearest random")->delimiter(',')->capture_default_str();
  u->add_option("--seed", u3d.seed, "Split and pairing seed")->capture_default_str();

  FeaturesConfig features;
  auto* f = app.add_subcommand("features", "Extract the 11 handcrafted markers per utterance");
  f->add_option("--manifest", features.manifest, "Corpus manifest with audio paths")->required();
  f->add_option("--out", features.out, "Output directory")->required();
  f->add_option("--codebook", features.codebook, "Codebook sidecar JSON; enables speech rate from unit files");
  f->add_option("--n-groups", features.n_groups, "Coarse groups for speech rate")->capture_default_str();
  f->add_option("--sonorant-unit", features.sonorant_unit, "A unit id inside the sonorant group");
  f->add_option("--voicing-threshold", features.voicing_threshold, "NCCF voicing threshold")->capture_default_str();
  f->add_option("--silence-floor", features.silence_floor_dbfs, "Silence floor (dBFS)")->capture_default_str();

  ProbeConfig probe;
  auto* b = app.add_subcommand("probe", "Lasso probes of each feature from the embeddings");
  b->add_option("--manifest", probe.manifest, "Corpus manifest with embedding paths")->required();
  b->add_option("--features", probe.features, "Feature table CSV (id,speaker,...)")->required();
  b->add_option("--out", probe.out, "Output directory")->required();
  b->add_option("--folds", probe.folds, "Speaker-grouped CV folds")->capture_default_str();
  b->add_option("--grid-points", probe.grid_points, "Lambda grid size")->capture_default_str();
  b->add_option("--grid-ratio", probe.grid_ratio, "Smallest lambda as a fraction of lambda_max")->capture_default_str();
  b->add_option("--iqr", probe.iqr_multiplier, "IQR outlier fence multiplier")->capture_default_str();
  b->add_option("--mode", probe.mode, "refit_on_training | held_out")->capture_default_str();
  b->add_option("--label", probe.label, "Row label in the SVG")->capture_default_str();

  std::string run_json, replay_out;
  auto* rp = app.add_subcommand("replay", "Re-run the command recorded in a run.json");
  rp->add_option("run_json", run_json, "Path to run.json")->required();
  rp->add_option("--out", replay_out, "Output directory (default: the recorded one)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (p->parsed()) {
      noise = snr->count() > 0;
      if (noise + emphasis + deemphasis + eq_match != 1) {
        std::cerr << "voxid perturb: choose exactly one of --snr, --emphasis, --deemphasis, --eq-match\n";
        return 2;
      }
      perturb.mode = noise ? "noise" : emphasis ? "emphasis" : deemphasis ? "deemphasis" : "eq_match";
      perturb.workers = workers;
      return run_perturb(perturb);
    }
    if (e->parsed()) {
      eq.workers = workers;
      return run_perturb(eq);
    }
    if (r->parsed()) {
      eer.workers = workers;
      return run_eer(eer);
    }
    if (u->parsed()) {
      u3d.workers = workers;
      return run_u3d(u3d);
    }
    if (f->parsed()) {
      features.workers = workers;
      return run_features(features);
    }
    if (b->parsed()) {
      probe.workers = workers;
      return run_probe_command(probe);
    }
    if (rp->parsed()) return replay(run_json, replay_out);
  } catch (const std::exception& ex) {
    std::cerr << "voxid: " << ex.what() << '\n';
    return 1;
  }
  return 2;
}
