#include "phtk/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include "phtk/errors.hpp"

namespace phtk::synth {

void GenConfig::validate() const {
    if (v_c < 2) throw ConfigError("gen: v_c must be >= 2");
    if (s < 1) throw ConfigError("gen: s must be >= 1");
    if (d < 1 || d_s < 1) throw ConfigError("gen: d and d_s must be >= 1");
    if (len_min < 1 || len_min > len_max) throw ConfigError("gen: bad symbol length range");
    if (dur_min < 1 || dur_min > dur_max) throw ConfigError("gen: bad duration range");
    if (noise_sigma < 0) throw ConfigError("gen: noise_sigma must be >= 0");
    if (prosody_smoothness <= 0) throw ConfigError("gen: prosody_smoothness must be positive");
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Gram-Schmidt orthonormalization of Gaussian columns; falls back to plain
// normalized columns when there are more columns than dimensions.
Tensor mixing_matrix(std::size_t d, std::size_t cols, std::mt19937_64& rng,
                     std::vector<std::vector<double>>& prior_columns) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Tensor w(d, cols);
    for (std::size_t c = 0; c < cols; ++c) {
        std::vector<double> v(d);
        for (;;) {
            for (auto& x : v) x = dist(rng);
            if (prior_columns.size() < d) {
                for (const auto& q : prior_columns) {
                    double dot = 0;
                    for (std::size_t i = 0; i < d; ++i) dot += v[i] * q[i];
                    for (std::size_t i = 0; i < d; ++i) v[i] -= dot * q[i];
                }
            }
            double norm = 0;
            for (double x : v) norm += x * x;
            norm = std::sqrt(norm);
            if (norm > 1e-8) {
                for (auto& x : v) x /= norm;
                break;
            }
        }
        for (std::size_t i = 0; i < d; ++i) w.at(i, c) = v[i];
        prior_columns.push_back(std::move(v));
    }
    return w;
}

std::array<double, 4> prosody_basis(double p) {
    // scaled so the content component dominates feature variance; prosody is
    // a secondary cue, recoverable but not the cheapest thing to encode
    const double s = 0.5;
    return {s * p, s * p * p, s * std::sin(M_PI * p), s * std::cos(M_PI * p)};
}

}  // namespace

Generator::Generator(GenConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(mix_seed(cfg_.seed, 0));
    // each mixing matrix is internally orthonormal; across factors the
    // subspaces are independent random draws (generically non-degenerate),
    // so factors overlap obliquely the way real feature spaces do instead of
    // living in disjoint axis-aligned blocks
    std::vector<std::vector<double>> cols_c, cols_p, cols_s;
    w_content_ = mixing_matrix(cfg_.d, cfg_.v_c, rng, cols_c);
    w_prosody_ = mixing_matrix(cfg_.d, kProsodyBasisDim, rng, cols_p);
    w_speaker_ = mixing_matrix(cfg_.d, cfg_.d_s, rng, cols_s);

    std::normal_distribution<double> dist(0.0, 1.0);
    speaker_vectors_.resize(cfg_.s);
    for (auto& v : speaker_vectors_) {
        v.resize(cfg_.d_s);
        for (auto& x : v) x = dist(rng);
    }
    // distinct-vector construction check
    for (std::size_t a = 0; a < cfg_.s; ++a)
        for (std::size_t b = a + 1; b < cfg_.s; ++b)
            if (speaker_vectors_[a] == speaker_vectors_[b])
                throw InitError("gen: duplicate speaker vectors");

}

const std::vector<double>& Generator::oracle_speaker_embedding(int speaker_id) const {
    if (speaker_id < 0 || static_cast<std::size_t>(speaker_id) >= cfg_.s)
        throw DataError("unknown speaker id " + std::to_string(speaker_id));
    return speaker_vectors_[speaker_id];
}

FrameSequence Generator::gen_utterance(std::uint64_t utt_index, int speaker_id) const {
    if (speaker_id < 0 || static_cast<std::size_t>(speaker_id) >= cfg_.s)
        throw DataError("unknown speaker id " + std::to_string(speaker_id));
    std::mt19937_64 rng(mix_seed(cfg_.seed, utt_index + 1));

    FrameSequence seq;
    seq.utterance_id = "utt" + std::to_string(utt_index);
    LatentFactors& f = seq.factors;
    f.speaker_id = speaker_id;
    f.speaker_vector = speaker_vectors_[speaker_id];

    // content: no adjacent repeats so run-length collapse is invertible
    std::uniform_int_distribution<std::size_t> len_dist(cfg_.len_min, cfg_.len_max);
    std::uniform_int_distribution<int> sym_dist(0, static_cast<int>(cfg_.v_c) - 1);
    std::uniform_int_distribution<std::size_t> dur_dist(cfg_.dur_min, cfg_.dur_max);
    std::size_t len = len_dist(rng);
    f.content_labels.reserve(len);
    for (std::size_t i = 0; i < len; ++i) {
        int sym = sym_dist(rng);
        while (i > 0 && sym == f.content_labels.back()) sym = sym_dist(rng);
        f.content_labels.push_back(sym);
        std::size_t dur = dur_dist(rng);
        for (std::size_t j = 0; j < dur; ++j) f.frame_labels.push_back(sym);
    }
    const std::size_t t_len = f.frame_labels.size();

    // prosody: bounded-step random walk, moving-average smoothed, clipped
    std::uniform_real_distribution<double> step(-cfg_.prosody_smoothness,
                                                cfg_.prosody_smoothness);
    std::uniform_real_distribution<double> start(-0.8, 0.8);
    std::vector<double> walk(t_len + cfg_.prosody_window);
    walk[0] = start(rng);
    for (std::size_t i = 1; i < walk.size(); ++i) walk[i] = walk[i - 1] + step(rng);
    f.prosody_contour.resize(t_len);
    for (std::size_t i = 0; i < t_len; ++i) {
        double acc = 0;
        for (std::size_t j = 0; j < cfg_.prosody_window; ++j) acc += walk[i + j];
        f.prosody_contour[i] =
            std::clamp(acc / static_cast<double>(cfg_.prosody_window), -1.0, 1.0);
    }

    // features = W_c onehot + W_p basis(contour) + W_s spk + noise
    seq.features = Tensor(t_len, cfg_.d);
    std::normal_distribution<double> noise(0.0, 1.0);
    // speaker amplitude sits below the content amplitude: the speaker offset
    // must stay recoverable from raw frames through the oblique factor
    // overlap without dominating the within-class variance
    const double spk_scale = 0.8 / std::sqrt(static_cast<double>(cfg_.d_s));
    for (std::size_t t = 0; t < t_len; ++t) {
        auto basis = prosody_basis(f.prosody_contour[t]);
        for (std::size_t i = 0; i < cfg_.d; ++i) {
            double v = w_content_.at(i, f.frame_labels[t]);
            for (std::size_t b = 0; b < kProsodyBasisDim; ++b)
                v += w_prosody_.at(i, b) * basis[b];
            for (std::size_t sdim = 0; sdim < cfg_.d_s; ++sdim)
                v += spk_scale * w_speaker_.at(i, sdim) * f.speaker_vector[sdim];
            if (cfg_.noise_sigma > 0) v += cfg_.noise_sigma * noise(rng);
            seq.features.at(t, i) = v;
        }
    }
    return seq;
}

FrameSequence Generator::gen_utterance_from_pool(
    std::uint64_t utt_index, const std::vector<int>& speaker_pool) const {
    if (speaker_pool.empty()) throw ConfigError("gen: empty speaker pool");
    std::mt19937_64 rng(mix_seed(cfg_.seed ^ 0x5059ULL, utt_index + 1));
    std::uniform_int_distribution<std::size_t> pick(0, speaker_pool.size() - 1);
    return gen_utterance(utt_index, speaker_pool[pick(rng)]);
}

Dataset gen_dataset(const GenConfig& cfg, std::size_t n_utterances,
                    std::array<double, 3> split_ratios, bool speaker_independent) {
    double rsum = split_ratios[0] + split_ratios[1] + split_ratios[2];
    if (std::fabs(rsum - 1.0) > 1e-9)
        throw ConfigError("gen_dataset: split ratios must sum to 1");

    Generator gen(cfg);
    std::size_t n_train = static_cast<std::size_t>(n_utterances * split_ratios[0]);
    std::size_t n_dev = static_cast<std::size_t>(n_utterances * split_ratios[1]);
    std::size_t n_test = n_utterances - n_train - n_dev;

    std::vector<int> all_speakers, seen_pool, heldout_pool;
    for (std::size_t i = 0; i < cfg.s; ++i) all_speakers.push_back(static_cast<int>(i));
    if (speaker_independent) {
        if (cfg.s < 2)
            throw ConfigError("gen_dataset: need >= 2 speakers for a "
                              "speaker-independent split");
        std::size_t heldout = std::max<std::size_t>(1, cfg.s / 5);
        seen_pool.assign(all_speakers.begin(), all_speakers.end() - heldout);
        heldout_pool.assign(all_speakers.end() - heldout, all_speakers.end());
    } else {
        seen_pool = all_speakers;
        heldout_pool = all_speakers;
    }

    Dataset ds;
    for (std::size_t i = 0; i < n_utterances; ++i) {
        bool is_test = i >= n_train + n_dev;
        FrameSequence seq =
            gen.gen_utterance_from_pool(i, is_test ? heldout_pool : seen_pool);
        if (i < n_train)
            ds.train.push_back(std::move(seq));
        else if (i < n_train + n_dev)
            ds.dev.push_back(std::move(seq));
        else
            ds.test.push_back(std::move(seq));
    }
    (void)n_test;
    return ds;
}

namespace {

void write_ints(std::ostream& os, const std::vector<int>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
    os << '\n';
}

}  // namespace

void write_split(std::ostream& os, const std::vector<FrameSequence>& split,
                 std::uint64_t config_hash) {
    os << "PHTK-DATASET 1 " << std::hex << config_hash << std::dec << '\n';
    os << split.size() << '\n';
    char buf[64];
    for (const FrameSequence& seq : split) {
        os << "v1\n" << seq.utterance_id << '\n' << seq.factors.speaker_id << '\n';
        os << seq.factors.content_labels.size() << '\n';
        write_ints(os, seq.factors.content_labels);
        os << seq.features.rows() << '\n';
        for (std::size_t t = 0; t < seq.factors.prosody_contour.size(); ++t) {
            std::snprintf(buf, sizeof buf, "%.6f", seq.factors.prosody_contour[t]);
            os << (t ? " " : "") << buf;
        }
        os << '\n';
        for (std::size_t t = 0; t < seq.features.rows(); ++t) {
            for (std::size_t j = 0; j < seq.features.cols(); ++j) {
                std::snprintf(buf, sizeof buf, "%.17g", seq.features.at(t, j));
                os << (j ? " " : "") << buf;
            }
            os << '\n';
        }
    }
}

std::vector<FrameSequence> read_split(std::istream& is,
                                      std::uint64_t* config_hash_out) {
    std::string magic;
    int version = 0;
    std::uint64_t hash = 0;
    is >> magic >> version >> std::hex >> hash >> std::dec;
    if (magic != "PHTK-DATASET" || version != 1)
        throw IoError("dataset: bad header (" + magic + ")");
    if (config_hash_out) *config_hash_out = hash;

    std::size_t count = 0;
    is >> count;
    std::vector<FrameSequence> out;
    out.reserve(count);
    for (std::size_t u = 0; u < count; ++u) {
        FrameSequence seq;
        std::string rec_ver;
        is >> rec_ver;
        if (rec_ver != "v1") throw IoError("dataset: bad record version");
        is >> seq.utterance_id >> seq.factors.speaker_id;
        std::size_t l = 0;
        is >> l;
        seq.factors.content_labels.resize(l);
        for (auto& v : seq.factors.content_labels) is >> v;
        std::size_t t_len = 0;
        is >> t_len;
        seq.factors.prosody_contour.resize(t_len);
        for (auto& v : seq.factors.prosody_contour) is >> v;
        std::size_t d = 0;
        // infer feature width from the first row
        std::string line;
        std::getline(is, line);  // end of contour line
        std::getline(is, line);
        {
            std::istringstream row(line);
            std::vector<double> first;
            double x;
            while (row >> x) first.push_back(x);
            d = first.size();
            seq.features = Tensor(t_len, d);
            for (std::size_t j = 0; j < d; ++j) seq.features.at(0, j) = first[j];
        }
        for (std::size_t t = 1; t < t_len; ++t)
            for (std::size_t j = 0; j < d; ++j) is >> seq.features.at(t, j);
        // frame_labels are not serialized; loaded records carry them empty
        if (!is) throw IoError("dataset: truncated record " + std::to_string(u));
        out.push_back(std::move(seq));
    }
    return out;
}

}  // namespace phtk::synth
