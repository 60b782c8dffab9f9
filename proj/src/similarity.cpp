#include "voxid/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "voxid/parallel.hpp"
#include "voxid/rng.hpp"

namespace voxid {
namespace {

double norm_of(const Embedding& e) {
  double acc = 0.0;
  for (double v : e.values) acc += v * v;
  return std::sqrt(acc);
}

std::vector<UtteranceRecord> records_of(const std::vector<const UtteranceRecord*>& ptrs) {
  std::vector<UtteranceRecord> out;
  out.reserve(ptrs.size());
  for (const auto* p : ptrs) out.push_back(*p);
  return out;
}

const Embedding& lookup(const std::map<std::string, Embedding>& table, const std::string& id, const std::string& what) {
  const auto it = table.find(id);
  if (it == table.end()) throw std::runtime_error("run_protocol: missing " + what + " embedding for utterance '" + id + "'");
  return it->second;
}

}  // namespace

double cosine(const Embedding& a, const Embedding& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("cosine: dimension mismatch");
  const double na = norm_of(a), nb = norm_of(b);
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine: zero-norm embedding");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) dot += a.values[i] * b.values[i];
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

TrialSet build_trials(std::span<const Embedding> reference, std::span<const Embedding> candidate) {
  if (reference.size() < 2) throw std::invalid_argument("build_trials: need at least 2 reference embeddings");
  if (candidate.empty()) throw std::invalid_argument("build_trials: need at least 1 candidate embedding");
  TrialSet t;
  t.target_scores.reserve(reference.size() * (reference.size() - 1) / 2);
  t.nontarget_scores.reserve(reference.size() * candidate.size());
  for (std::size_t i = 0; i < reference.size(); ++i) {
    for (std::size_t j = i + 1; j < reference.size(); ++j) t.target_scores.push_back(cosine(reference[i], reference[j]));
  }
  for (const auto& r : reference) {
    for (const auto& c : candidate) t.nontarget_scores.push_back(cosine(r, c));
  }
  return t;
}

EerResult eer(const TrialSet& trials) {
  if (trials.target_scores.empty() || trials.nontarget_scores.empty()) {
    throw std::invalid_argument("eer: empty score list");
  }
  auto tar = trials.target_scores;
  auto non = trials.nontarget_scores;
  for (double s : tar) {
    if (!std::isfinite(s)) throw std::invalid_argument("eer: non-finite target score");
  }
  for (double s : non) {
    if (!std::isfinite(s)) throw std::invalid_argument("eer: non-finite nontarget score");
  }
  std::sort(tar.begin(), tar.end());
  std::sort(non.begin(), non.end());
  std::vector<double> pooled;
  pooled.reserve(tar.size() + non.size());
  std::merge(tar.begin(), tar.end(), non.begin(), non.end(), std::back_inserter(pooled));
  pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());

  const double nt = static_cast<double>(tar.size()), nn = static_cast<double>(non.size());
  constexpr double inf = std::numeric_limits<double>::infinity();

  // Threshold i: -inf for i = 0, midpoint of pooled[i-1], pooled[i] for
  // 1 <= i < m, +inf for i = m. Scores at or below pooled[i-1] fall under it.
  const std::size_t m = pooled.size();
  const auto threshold = [&](std::size_t i) {
    if (i == 0) return -inf;
    if (i == m) return inf;
    return 0.5 * (pooled[i - 1] + pooled[i]);
  };
  const auto rates = [&](std::size_t i) {
    if (i == 0) return std::pair{1.0, 0.0};
    const double cut = pooled[i - 1];
    const auto non_below = static_cast<double>(std::upper_bound(non.begin(), non.end(), cut) - non.begin());
    const auto tar_below = static_cast<double>(std::upper_bound(tar.begin(), tar.end(), cut) - tar.begin());
    return std::pair{(nn - non_below) / nn, tar_below / nt};
  };

  EerResult out;
  out.n_target = tar.size();
  out.n_nontarget = non.size();
  auto [far_prev, frr_prev] = rates(0);
  for (std::size_t i = 1; i <= m; ++i) {
    const auto [far, frr] = rates(i);
    const double d_prev = far_prev - frr_prev;
    const double d = far - frr;
    if (d <= 0.0) {
      if (d == 0.0) {
        out.eer = far;
        out.threshold = threshold(i);
      } else {
        const double t = d_prev / (d_prev - d);
        out.eer = far_prev + t * (far - far_prev);
        const double lo = threshold(i - 1), hi = threshold(i);
        if (!std::isfinite(lo)) {
          out.threshold = hi;
        } else if (!std::isfinite(hi)) {
          out.threshold = lo;
        } else {
          out.threshold = lo + t * (hi - lo);
        }
      }
      return out;
    }
    far_prev = far;
    frr_prev = frr;
  }
  // Unreachable: at +inf FAR = 0 and FRR = 1.
  throw std::logic_error("eer: no FAR/FRR crossing");
}

Protocol parse_protocol(const std::string& name) {
  if (name == "one_vs_rest") return Protocol::one_vs_rest;
  if (name == "same_speaker_random") return Protocol::same_speaker_random;
  if (name == "same_speaker_duration") return Protocol::same_speaker_duration;
  if (name == "perturbed") return Protocol::perturbed;
  throw std::invalid_argument("unknown protocol '" + name + "'");
}

std::string protocol_name(Protocol p) {
  switch (p) {
    case Protocol::one_vs_rest: return "one_vs_rest";
    case Protocol::same_speaker_random: return "same_speaker_random";
    case Protocol::same_speaker_duration: return "same_speaker_duration";
    case Protocol::perturbed: return "perturbed";
  }
  return "unknown";
}

EmbeddingTable load_embeddings(const CorpusManifest& manifest, const std::optional<std::string>& condition) {
  EmbeddingTable table;
  for (const auto& u : manifest.utterances) {
    if (!u.embedding_path) throw std::runtime_error("missing embedding for utterance '" + u.id + "'");
    try {
      table.base.emplace(u.id, read_embedding(*u.embedding_path, manifest.embedding_dim));
    } catch (const std::exception& e) {
      throw std::runtime_error("utterance '" + u.id + "': " + e.what());
    }
    if (condition) {
      const auto it = u.condition_embeddings.find(*condition);
      if (it == u.condition_embeddings.end()) continue;
      try {
        table.by_condition[*condition].emplace(u.id, read_embedding(it->second, manifest.embedding_dim));
      } catch (const std::exception& e) {
        throw std::runtime_error("utterance '" + u.id + "' condition '" + *condition + "': " + e.what());
      }
    }
  }
  return table;
}

ProtocolReport run_protocol(const CorpusManifest& manifest, const EmbeddingTable& embeddings,
                            const ProtocolOptions& opt) {
  const auto speakers = manifest.by_speaker();
  std::vector<std::string> ids;
  for (const auto& [spk, utts] : speakers) {
    if (utts.size() < 4) {
      throw std::runtime_error("run_protocol: speaker '" + spk + "' has " + std::to_string(utts.size()) +
                               " utterances; at least 4 are required");
    }
    ids.push_back(spk);
  }
  if (opt.protocol == Protocol::one_vs_rest && ids.size() < 2) {
    throw std::runtime_error("run_protocol: one_vs_rest needs at least 2 speakers");
  }
  const std::map<std::string, Embedding>* perturbed = nullptr;
  if (opt.protocol == Protocol::perturbed) {
    if (opt.condition.empty()) throw std::runtime_error("run_protocol: perturbed protocol needs a condition name");
    const auto it = embeddings.by_condition.find(opt.condition);
    if (it == embeddings.by_condition.end()) {
      throw std::runtime_error("run_protocol: no embeddings for condition '" + opt.condition + "'");
    }
    perturbed = &it->second;
  }

  ProtocolReport report;
  report.protocol_name = protocol_name(opt.protocol);
  report.per_speaker.resize(ids.size());

  parallel_for(ids.size(), opt.workers, [&](std::size_t si) {
    const auto& spk = ids[si];
    const auto& utts = speakers.at(spk);
    std::vector<Embedding> reference, candidate;
    const auto collect = [&](const std::vector<UtteranceRecord>& group, std::vector<Embedding>& out,
                             const std::map<std::string, Embedding>& table, const std::string& what) {
      for (const auto& r : group) out.push_back(lookup(table, r.id, what));
    };
    switch (opt.protocol) {
      case Protocol::one_vs_rest: {
        for (const auto* u : utts) reference.push_back(lookup(embeddings.base, u->id, "base"));
        for (const auto& other : manifest.utterances) {
          if (other.speaker_id != spk) candidate.push_back(lookup(embeddings.base, other.id, "base"));
        }
        break;
      }
      case Protocol::same_speaker_random:
      case Protocol::perturbed: {
        const auto [a, b] = split_random(records_of(utts), mix_seed(opt.seed, si));
        collect(a, reference, embeddings.base, "base");
        if (perturbed) {
          collect(b, candidate, *perturbed, "condition '" + opt.condition + "'");
        } else {
          collect(b, candidate, embeddings.base, "base");
        }
        break;
      }
      case Protocol::same_speaker_duration: {
        const auto [shorter, longer] = split_by_duration(records_of(utts));
        collect(shorter, reference, embeddings.base, "base");
        collect(longer, candidate, embeddings.base, "base");
        break;
      }
    }
    report.per_speaker[si] = {spk, eer(build_trials(reference, candidate))};
  });

  double sum = 0.0;
  for (const auto& s : report.per_speaker) sum += s.result.eer;
  report.mean_eer = sum / static_cast<double>(report.per_speaker.size());
  double ss = 0.0;
  for (const auto& s : report.per_speaker) ss += (s.result.eer - report.mean_eer) * (s.result.eer - report.mean_eer);
  report.std_eer = std::sqrt(ss / static_cast<double>(report.per_speaker.size()));

  report.perturbation_metadata["seed"] = std::to_string(opt.seed);
  switch (opt.protocol) {
    case Protocol::one_vs_rest:
      report.perturbation_metadata["trials"] = "targets: within-speaker pairs; nontargets: speaker x all other speakers";
      break;
    case Protocol::same_speaker_random:
      report.perturbation_metadata["trials"] = "random halves; targets within reference half";
      break;
    case Protocol::same_speaker_duration:
      report.perturbation_metadata["trials"] = "duration-sorted halves; reference = shorter half";
      break;
    case Protocol::perturbed: {
      report.perturbation_metadata["trials"] = "random halves; targets within reference half";
      report.perturbation_metadata["applied_to"] = "candidate group only";
      report.perturbation_metadata["condition"] = opt.condition;
      const auto it = manifest.conditions_json.find(opt.condition);
      if (it != manifest.conditions_json.end()) report.perturbation_metadata["condition_spec"] = it->second;
      break;
    }
  }
  return report;
}

ProtocolReport run_protocol(const CorpusManifest& manifest, const ProtocolOptions& opt) {
  std::optional<std::string> cond;
  if (opt.protocol == Protocol::perturbed) cond = opt.condition;
  return run_protocol(manifest, load_embeddings(manifest, cond), opt);
}

}  // namespace voxid
