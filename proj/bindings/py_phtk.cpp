#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "phtk/config.hpp"
#include "phtk/probes.hpp"

namespace py = pybind11;
using namespace phtk;

namespace {

grad::Tensor to_tensor(const std::vector<std::vector<double>>& rows) {
    return grad::Tensor::from_rows(rows);
}

std::vector<std::vector<double>> to_rows(const grad::Tensor& t) {
    std::vector<std::vector<double>> out(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) out[i][j] = t.at(i, j);
    return out;
}

}  // namespace

PYBIND11_MODULE(_phtk, m) {
    m.doc() = "phonological tokenizer core operations";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<InitError>(m, "InitError", PyExc_RuntimeError);
    py::register_exception<InfeasibleTargetError>(m, "InfeasibleTargetError",
                                                  PyExc_ValueError);

    m.def("bitrate", &diffkm::bitrate, py::arg("vocab_size"),
          py::arg("tokens_per_second"),
          "tokens_per_second * log2(vocab_size), in bits/s");

    m.def(
        "ctc_loss",
        [](const std::vector<std::vector<double>>& logprobs,
           const std::vector<int>& target) {
            return grad::ctc_forward_loss(to_tensor(logprobs), target);
        },
        py::arg("logprobs"), py::arg("target"),
        "-log p(target) under the CTC lattice; blank is the last column");

    m.def(
        "lloyd",
        [](const std::vector<std::vector<double>>& features, std::size_t k,
           std::uint64_t seed) {
            return to_rows(diffkm::init_codebook_lloyd(to_tensor(features), k, seed)
                               .centroids);
        },
        py::arg("features"), py::arg("k"), py::arg("seed") = 1,
        "k-means++ seeded Lloyd; returns k x d centroids");

    m.def(
        "soft_assign",
        [](const std::vector<std::vector<double>>& z,
           const std::vector<std::vector<double>>& centroids, double tau) {
            diffkm::Codebook cb{to_tensor(centroids)};
            auto a = diffkm::soft_assign(to_tensor(z), cb, tau);
            return py::make_tuple(to_rows(a.weights), a.hard_ids);
        },
        py::arg("z"), py::arg("centroids"), py::arg("tau") = 1.0,
        "softmax(-dist^2/tau) weights and hard argmax ids");

    m.def(
        "quantize",
        [](const std::vector<std::vector<double>>& z,
           const std::vector<std::vector<double>>& centroids) {
            diffkm::Codebook cb{to_tensor(centroids)};
            return to_rows(diffkm::quantize_infer(to_tensor(z), cb));
        },
        py::arg("z"), py::arg("centroids"),
        "hard nearest-centroid rows (inference path)");

    m.def(
        "codebook_stats",
        [](const std::vector<std::vector<int>>& ids, std::size_t k) {
            auto s = diffkm::codebook_stats(ids, k);
            return py::make_tuple(s.utilization, s.perplexity);
        },
        py::arg("id_sequences"), py::arg("k"),
        "(utilization, perplexity) of token id usage");

    m.def("levenshtein", &probe::levenshtein, py::arg("a"), py::arg("b"));
    m.def("pearson", &probe::pearson, py::arg("x"), py::arg("y"));
    m.def("spearman", &probe::spearman, py::arg("x"), py::arg("y"));

    m.def(
        "config_hash",
        [](const std::string& text) { return config::parse_config(text).hash(); },
        py::arg("text"), "FNV-1a hash of the canonical config form");

    py::class_<synth::GenConfig>(m, "GenConfig")
        .def(py::init<>())
        .def_readwrite("v_c", &synth::GenConfig::v_c)
        .def_readwrite("s", &synth::GenConfig::s)
        .def_readwrite("d", &synth::GenConfig::d)
        .def_readwrite("d_s", &synth::GenConfig::d_s)
        .def_readwrite("len_min", &synth::GenConfig::len_min)
        .def_readwrite("len_max", &synth::GenConfig::len_max)
        .def_readwrite("dur_min", &synth::GenConfig::dur_min)
        .def_readwrite("dur_max", &synth::GenConfig::dur_max)
        .def_readwrite("noise_sigma", &synth::GenConfig::noise_sigma)
        .def_readwrite("seed", &synth::GenConfig::seed);

    py::class_<synth::Generator>(m, "Generator")
        .def(py::init<synth::GenConfig>(), py::arg("config"))
        .def(
            "utterance",
            [](const synth::Generator& g, std::uint64_t index, int speaker) {
                auto seq = g.gen_utterance(index, speaker);
                py::dict d;
                d["utterance_id"] = seq.utterance_id;
                d["features"] = to_rows(seq.features);
                d["content_labels"] = seq.factors.content_labels;
                d["frame_labels"] = seq.factors.frame_labels;
                d["prosody_contour"] = seq.factors.prosody_contour;
                d["speaker_id"] = seq.factors.speaker_id;
                return d;
            },
            py::arg("index"), py::arg("speaker"))
        .def("speaker_embedding", &synth::Generator::oracle_speaker_embedding,
             py::arg("speaker_id"));
}
