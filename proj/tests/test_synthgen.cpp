#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "phtk/errors.hpp"
#include "phtk/synthgen.hpp"

using namespace phtk;
using synth::GenConfig;
using synth::Generator;

namespace {

std::vector<int> collapse(const std::vector<int>& frames) {
    std::vector<int> out;
    for (int v : frames)
        if (out.empty() || out.back() != v) out.push_back(v);
    return out;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= x.size();
    my /= y.size();
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST_CASE("generation is a pure function of (seed, utt_index, speaker)") {
    GenConfig cfg;
    Generator g1(cfg), g2(cfg);
    auto a = g1.gen_utterance(7, 3);
    auto b = g2.gen_utterance(7, 3);
    CHECK(a.features.data == b.features.data);
    CHECK(a.factors.content_labels == b.factors.content_labels);
    CHECK(a.factors.frame_labels == b.factors.frame_labels);
    CHECK(a.factors.prosody_contour == b.factors.prosody_contour);
    CHECK(a.utterance_id == b.utterance_id);

    GenConfig cfg0 = cfg;
    cfg0.noise_sigma = 0.0;
    Generator g0(cfg0);
    CHECK(g0.gen_utterance(7, 3).features.data == g0.gen_utterance(7, 3).features.data);
}

TEST_CASE("latent factor invariants") {
    GenConfig cfg;
    Generator gen(cfg);
    for (std::uint64_t u = 0; u < 40; ++u) {
        auto seq = gen.gen_utterance(u, static_cast<int>(u % cfg.s));
        const auto& f = seq.factors;

        CHECK(collapse(f.frame_labels) == f.content_labels);
        for (std::size_t i = 1; i < f.content_labels.size(); ++i)
            CHECK(f.content_labels[i] != f.content_labels[i - 1]);

        CHECK(f.frame_labels.size() == f.prosody_contour.size());
        CHECK(seq.features.rows() == f.frame_labels.size());
        CHECK(seq.features.cols() == cfg.d);
        CHECK(f.content_labels.size() >= cfg.len_min);
        CHECK(f.content_labels.size() <= cfg.len_max);

        for (double p : f.prosody_contour) {
            CHECK(p >= -1.0);
            CHECK(p <= 1.0);
        }
        for (std::size_t t = 1; t < f.prosody_contour.size(); ++t)
            CHECK(std::fabs(f.prosody_contour[t] - f.prosody_contour[t - 1]) <=
                  cfg.prosody_smoothness + 1e-12);
    }
}

TEST_CASE("oracle speaker embeddings") {
    GenConfig cfg;
    Generator gen(cfg);
    CHECK(gen.oracle_speaker_embedding(0).size() == cfg.d_s);
    CHECK(gen.oracle_speaker_embedding(2) == gen.oracle_speaker_embedding(2));
    CHECK(gen.oracle_speaker_embedding(0) != gen.oracle_speaker_embedding(1));
    CHECK(gen.gen_utterance(1, 4).factors.speaker_vector ==
          gen.oracle_speaker_embedding(4));
    CHECK(gen.gen_utterance(9, 4).factors.speaker_vector ==
          gen.gen_utterance(1, 4).factors.speaker_vector);
    CHECK_THROWS_AS(gen.oracle_speaker_embedding(-1), DataError);
    CHECK_THROWS_AS(gen.oracle_speaker_embedding(static_cast<int>(cfg.s)), DataError);
}

TEST_CASE("gen_dataset split sizes and speaker independence") {
    GenConfig cfg;
    auto ds = synth::gen_dataset(cfg, 100, {0.8, 0.1, 0.1});
    CHECK(ds.train.size() == 80);
    CHECK(ds.dev.size() == 10);
    CHECK(ds.test.size() == 10);

    std::set<int> seen, heldout;
    for (const auto& s : ds.train) seen.insert(s.factors.speaker_id);
    for (const auto& s : ds.dev) seen.insert(s.factors.speaker_id);
    for (const auto& s : ds.test) heldout.insert(s.factors.speaker_id);
    for (int sp : heldout) CHECK(seen.count(sp) == 0);

    CHECK_THROWS_AS(synth::gen_dataset(cfg, 10, {0.5, 0.4, 0.3}), ConfigError);
    GenConfig one = cfg;
    one.s = 1;
    CHECK_THROWS_AS(synth::gen_dataset(one, 10, {0.8, 0.1, 0.1}, true), ConfigError);
    CHECK_NOTHROW(synth::gen_dataset(one, 10, {0.8, 0.1, 0.1}, false));
}

TEST_CASE("content labels are uniform; prosody decorrelated from content/speaker") {
    GenConfig cfg;
    cfg.seed = 21;
    Generator gen(cfg);
    std::vector<std::size_t> counts(cfg.v_c, 0);
    std::size_t total = 0;
    std::vector<double> contour_all, content_all, speaker_all;
    for (std::uint64_t u = 0; u < 10000; ++u) {
        auto seq = gen.gen_utterance(u, static_cast<int>(u % cfg.s));
        for (int c : seq.factors.content_labels) {
            ++counts[c];
            ++total;
        }
        if (contour_all.size() < 10000) {
            for (std::size_t t = 0; t < seq.factors.prosody_contour.size(); ++t) {
                contour_all.push_back(seq.factors.prosody_contour[t]);
                content_all.push_back(seq.factors.frame_labels[t]);
                speaker_all.push_back(seq.factors.speaker_id);
            }
        }
    }
    double p = 1.0 / static_cast<double>(cfg.v_c);
    double sigma = std::sqrt(total * p * (1 - p));
    for (std::size_t c = 0; c < cfg.v_c; ++c)
        CHECK(std::fabs(static_cast<double>(counts[c]) - total * p) <= 3.0 * sigma);

    CHECK(std::fabs(pearson(contour_all, content_all)) < 0.1);
    CHECK(std::fabs(pearson(contour_all, speaker_all)) < 0.1);
}

TEST_CASE("config validation") {
    GenConfig cfg;
    cfg.v_c = 1;
    CHECK_THROWS_AS(Generator{cfg}, ConfigError);
    cfg = GenConfig{};
    cfg.dur_min = 0;
    CHECK_THROWS_AS(Generator{cfg}, ConfigError);
    cfg = GenConfig{};
    cfg.noise_sigma = -0.1;
    CHECK_THROWS_AS(Generator{cfg}, ConfigError);
    cfg = GenConfig{};
    cfg.len_min = 9;
    cfg.len_max = 6;
    CHECK_THROWS_AS(Generator{cfg}, ConfigError);
}

TEST_CASE("split serialization roundtrip") {
    GenConfig cfg;
    auto ds = synth::gen_dataset(cfg, 6, {0.5, 0.25, 0.25});
    std::stringstream ss;
    synth::write_split(ss, ds.train, 0xDEADBEEFULL);
    std::uint64_t hash = 0;
    auto back = synth::read_split(ss, &hash);
    CHECK(hash == 0xDEADBEEFULL);
    REQUIRE(back.size() == ds.train.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].utterance_id == ds.train[i].utterance_id);
        CHECK(back[i].factors.speaker_id == ds.train[i].factors.speaker_id);
        CHECK(back[i].factors.content_labels == ds.train[i].factors.content_labels);
        // features use %.17g, so doubles roundtrip exactly
        CHECK(back[i].features.data == ds.train[i].features.data);
        REQUIRE(back[i].factors.prosody_contour.size() ==
                ds.train[i].factors.prosody_contour.size());
        for (std::size_t t = 0; t < back[i].factors.prosody_contour.size(); ++t)
            CHECK(back[i].factors.prosody_contour[t] ==
                  doctest::Approx(ds.train[i].factors.prosody_contour[t]).epsilon(1e-6));
    }

    std::stringstream bad("PHTK-GARBAGE 1 0\n0\n");
    CHECK_THROWS_AS(synth::read_split(bad, nullptr), IoError);
    std::stringstream trunc;
    synth::write_split(trunc, ds.train, 1);
    std::string text = trunc.str();
    std::stringstream half(text.substr(0, text.size() / 2));
    CHECK_THROWS_AS(synth::read_split(half, nullptr), IoError);
}
