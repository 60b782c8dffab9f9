#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "voxid/audio.hpp"
#include "voxid/corpus.hpp"
#include "voxid/dsp.hpp"
#include "voxid/features.hpp"
#include "voxid/probe.hpp"
#include "voxid/report.hpp"
#include "voxid/rhythm.hpp"
#include "voxid/similarity.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace voxid;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<double> to_numpy(const std::vector<double>& v) { return py::array_t<double>(v.size(), v.data()); }

std::vector<double> to_vector(const F64Array& a) {
  if (a.ndim() != 1) throw std::invalid_argument("expected a 1-D array");
  return {a.data(), a.data() + a.size()};
}

AudioBuffer to_audio(const F64Array& a, int sample_rate) {
  AudioBuffer b;
  b.samples = to_vector(a);
  b.sample_rate = sample_rate;
  return b;
}

py::object optional_path(const std::optional<fs::path>& p) {
  return p ? py::cast(p->string()) : py::none();
}

py::dict manifest_dict(const CorpusManifest& m) {
  py::dict d;
  d["base_dir"] = m.base_dir.string();
  d["embedding_dim"] = m.embedding_dim;
  d["unit_vocab_size"] = m.unit_vocab_size ? py::cast(*m.unit_vocab_size) : py::none();
  d["unit_hop_ms"] = m.unit_hop_ms;
  py::list utts;
  for (const auto& u : m.utterances) {
    py::dict r;
    r["id"] = u.id;
    r["speaker"] = u.speaker_id;
    r["duration_s"] = u.duration_s;
    r["audio"] = optional_path(u.audio_path);
    r["embedding"] = optional_path(u.embedding_path);
    r["units"] = optional_path(u.units_path);
    r["segments"] = optional_path(u.segments_path);
    py::dict cond;
    for (const auto& [k, p] : u.condition_embeddings) cond[py::str(k)] = p.string();
    r["condition_embeddings"] = cond;
    utts.append(r);
  }
  d["utterances"] = utts;
  py::dict conditions;
  for (const auto& [k, v] : m.conditions_json) conditions[py::str(k)] = v;
  d["conditions"] = conditions;
  return d;
}

py::dict eer_dict(const EerResult& r) {
  py::dict d;
  d["eer"] = r.eer;
  d["threshold"] = r.threshold;
  d["n_target"] = r.n_target;
  d["n_nontarget"] = r.n_nontarget;
  return d;
}

Codebook codebook_from(const F64Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("codebook: expected a 2-D array");
  Codebook cb;
  cb.num_units = static_cast<std::size_t>(a.shape(0));
  cb.dim = static_cast<std::size_t>(a.shape(1));
  cb.values.assign(a.data(), a.data() + a.size());
  return cb;
}

Linkage parse_linkage(const std::string& s) {
  if (s == "ward") return Linkage::ward;
  if (s == "average") return Linkage::average;
  throw std::invalid_argument("cluster_codebook: unknown linkage '" + s + "'");
}

}  // namespace

PYBIND11_MODULE(_voxid, m) {
  m.doc() = "Speaker-embedding similarity, rhythm and probing tools";
  m.attr("__version__") = kVersion;
  m.attr("SAMPLE_RATE") = kSampleRate;
  m.attr("FEATURE_NAMES") = py::cast(std::vector<std::string>(kFeatureNames.begin(), kFeatureNames.end()));

  m.def(
      "read_wav",
      [](const fs::path& path) {
        const auto b = read_wav(path);
        return py::make_tuple(to_numpy(b.samples), b.sample_rate);
      },
      py::arg("path"), "Returns (samples, sample_rate) from a 16 kHz mono 16-bit WAV.");
  m.def(
      "write_wav",
      [](const fs::path& path, const F64Array& samples, double error_feedback) {
        write_wav(path, to_audio(samples, kSampleRate), error_feedback);
      },
      py::arg("path"), py::arg("samples"), py::arg("error_feedback") = 0.0);

  m.def(
      "load_manifest", [](const fs::path& path) { return manifest_dict(load_manifest(path)); }, py::arg("path"),
      "Loads and validates a manifest; referenced files are opened and checked.");
  m.def(
      "read_embedding", [](const fs::path& path, std::size_t dim) { return to_numpy(read_embedding(path, dim).values); },
      py::arg("path"), py::arg("dim"));
  m.def(
      "write_embedding",
      [](const fs::path& path, const F64Array& values) { write_embedding(path, Embedding{to_vector(values)}); },
      py::arg("path"), py::arg("values"));
  m.def(
      "read_units",
      [](const fs::path& path) {
        const auto u = read_units(path);
        return py::array_t<std::uint16_t>(u.size(), u.data());
      },
      py::arg("path"));
  m.def(
      "write_units",
      [](const fs::path& path, const py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast>& units) {
        write_units(path, std::span<const std::uint16_t>(units.data(), static_cast<std::size_t>(units.size())));
      },
      py::arg("path"), py::arg("units"));
  m.def(
      "read_segment_labels",
      [](const fs::path& path) {
        py::list out;
        for (const auto& s : read_segment_labels(path).segments) out.append(py::make_tuple(s.start_ms, s.end_ms, s.label));
        return out;
      },
      py::arg("path"), "Returns [(start_ms, end_ms, label), ...].");
  m.def(
      "read_codebook",
      [](const fs::path& sidecar) {
        const auto cb = read_codebook(sidecar);
        py::array_t<double> a({cb.num_units, cb.dim});
        std::copy(cb.values.begin(), cb.values.end(), a.mutable_data());
        return a;
      },
      py::arg("sidecar_json"));
  m.def(
      "write_codebook",
      [](const fs::path& sidecar, const fs::path& data_file, const F64Array& values) {
        write_codebook(sidecar, data_file, codebook_from(values));
      },
      py::arg("sidecar_json"), py::arg("data_file"), py::arg("values"));

  m.def("cosine", [](const F64Array& a, const F64Array& b) { return cosine(Embedding{to_vector(a)}, Embedding{to_vector(b)}); },
        py::arg("a"), py::arg("b"));
  m.def(
      "eer",
      [](const F64Array& target, const F64Array& nontarget) {
        return eer_dict(eer(TrialSet{to_vector(target), to_vector(nontarget)}));
      },
      py::arg("target_scores"), py::arg("nontarget_scores"));
  m.def(
      "run_protocol",
      [](const fs::path& manifest, const std::string& protocol, std::uint64_t seed, const std::string& condition,
         std::size_t workers) {
        ProtocolOptions opt;
        opt.protocol = parse_protocol(protocol);
        opt.seed = seed;
        opt.condition = condition;
        opt.workers = workers;
        const auto report = run_protocol(load_manifest(manifest), opt);
        py::dict d;
        d["protocol"] = report.protocol_name;
        d["mean_eer"] = report.mean_eer;
        d["std_eer"] = report.std_eer;
        py::dict per;
        for (const auto& s : report.per_speaker) per[py::str(s.speaker)] = eer_dict(s.result);
        d["per_speaker"] = per;
        d["metadata"] = report.perturbation_metadata;
        return d;
      },
      py::arg("manifest"), py::arg("protocol") = "same_speaker_random", py::arg("seed") = 0,
      py::arg("condition") = "", py::arg("workers") = 1);

  m.def(
      "add_white_noise",
      [](const F64Array& x, double snr_db, std::uint64_t seed) {
        const auto r = add_white_noise(to_audio(x, kSampleRate), snr_db, seed);
        return py::make_tuple(to_numpy(r.audio.samples), r.scale);
      },
      py::arg("samples"), py::arg("snr_db"), py::arg("seed"), "Returns (noisy, scale).");
  m.def(
      "apply_emphasis", [](const F64Array& x, double a) { return to_numpy(apply_emphasis(to_audio(x, kSampleRate), a).samples); },
      py::arg("samples"), py::arg("alpha") = 0.97);
  m.def(
      "apply_deemphasis",
      [](const F64Array& x, double a) { return to_numpy(apply_deemphasis(to_audio(x, kSampleRate), a).samples); },
      py::arg("samples"), py::arg("alpha") = 0.97);

  m.def(
      "cluster_codebook",
      [](const F64Array& values, std::size_t n_groups, const std::string& linkage) {
        return cluster_codebook(codebook_from(values), n_groups, parse_linkage(linkage)).group_of_unit;
      },
      py::arg("codebook"), py::arg("n_groups") = 3, py::arg("linkage") = "ward", "Returns the group of each unit.");
  m.def(
      "wasserstein1",
      [](F64Array a, F64Array b) {
        auto va = to_vector(a), vb = to_vector(b);
        std::sort(va.begin(), va.end());
        std::sort(vb.begin(), vb.end());
        return wasserstein1(va, vb);
      },
      py::arg("a"), py::arg("b"));

  m.def(
      "extract_features",
      [](const F64Array& samples) {
        const auto values = feature_values(extract_all(to_audio(samples, kSampleRate)));
        py::dict d;
        for (std::size_t i = 0; i < values.size(); ++i)
          d[py::str(kFeatureNames[i])] = values[i] ? py::cast(*values[i]) : py::none();
        return d;
      },
      py::arg("samples"));

  m.def(
      "fit_lasso",
      [](const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda) {
        ProbeDataset data{x, y, std::vector<std::string>(static_cast<std::size_t>(x.rows()))};
        const auto model = fit_lasso(data, lambda);
        py::dict d;
        d["weights"] = std::vector<double>(model.weights.data(), model.weights.data() + model.weights.size());
        d["intercept"] = model.intercept;
        d["objective_history"] = model.objective_history;
        d["sweeps"] = model.sweeps;
        return d;
      },
      py::arg("x"), py::arg("y"), py::arg("lam"));
  m.def(
      "run_probe",
      [](const fs::path& manifest_path, const fs::path& features, std::size_t folds, std::size_t workers) {
        const auto manifest = load_manifest(manifest_path);
        ProbeOptions opt;
        opt.folds = folds;
        opt.workers = workers;
        const auto report = run_probe(manifest, load_embeddings(manifest, std::nullopt), read_feature_table(features), opt);
        py::list out;
        for (const auto& e : report.entries) {
          py::dict d;
          d["feature"] = e.feature;
          d["r2"] = e.r2 ? py::cast(*e.r2) : py::none();
          d["n_used"] = e.n_used;
          d["n_outliers"] = e.n_outliers;
          d["lambda"] = e.lambda;
          d["status"] = e.status;
          out.append(d);
        }
        return out;
      },
      py::arg("manifest"), py::arg("features"), py::arg("folds") = 5, py::arg("workers") = 1);
}
