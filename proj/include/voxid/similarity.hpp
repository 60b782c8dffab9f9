#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "voxid/corpus.hpp"

namespace voxid {

struct TrialSet {
  std::vector<double> target_scores;
  std::vector<double> nontarget_scores;
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
  std::size_t n_target = 0;
  std::size_t n_nontarget = 0;
};

double cosine(const Embedding& a, const Embedding& b);

/// Targets: every unordered pair within `reference`. Non-targets: every
/// reference x candidate pair.
TrialSet build_trials(std::span<const Embedding> reference, std::span<const Embedding> candidate);

/// Threshold sweep over midpoints of consecutive distinct pooled scores plus
/// +-infinity, with FAR = P(nontarget >= t) and FRR = P(target < t). The EER
/// is linearly interpolated where FAR - FRR changes sign.
EerResult eer(const TrialSet& trials);

enum class Protocol { one_vs_rest, same_speaker_random, same_speaker_duration, perturbed };

Protocol parse_protocol(const std::string& name);
std::string protocol_name(Protocol p);

struct ProtocolOptions {
  Protocol protocol = Protocol::same_speaker_random;
  std::uint64_t seed = 0;
  /// Condition key in `condition_embeddings`, required for Protocol::perturbed.
  std::string condition;
  std::size_t workers = 1;
};

struct SpeakerEer {
  std::string speaker;
  EerResult result;
};

struct ProtocolReport {
  std::string protocol_name;
  std::vector<SpeakerEer> per_speaker;  // ordered by speaker id
  double mean_eer = 0.0;
  double std_eer = 0.0;  // population std over speakers
  std::map<std::string, std::string> perturbation_metadata;
};

/// Embeddings loaded once per utterance (and per perturbation condition).
struct EmbeddingTable {
  std::map<std::string, Embedding> base;
  std::map<std::string, std::map<std::string, Embedding>> by_condition;
};

EmbeddingTable load_embeddings(const CorpusManifest& manifest, const std::optional<std::string>& condition);

ProtocolReport run_protocol(const CorpusManifest& manifest, const EmbeddingTable& embeddings,
                            const ProtocolOptions& opt);

/// Convenience overload that loads the embeddings from disk first.
ProtocolReport run_protocol(const CorpusManifest& manifest, const ProtocolOptions& opt);

}  // namespace voxid
