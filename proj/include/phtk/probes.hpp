#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "phtk/model.hpp"
#include "phtk/synthgen.hpp"
#include "phtk/trainer.hpp"

namespace phtk::probe {

using grad::Tensor;

struct TokenSequence {
    std::vector<int> ids;
    std::string utterance_id;
    const synth::LatentFactors* factors = nullptr;
};

struct ProbeReport {
    double content_uer = 0;
    double er_proxy_acc = 0;   // 4-quantile prosody class, speaker-independent
    double prosody_corr = 0;   // Pearson r of ridge-predicted contour
    bool prosody_degenerate = false;  // zero-variance prediction flagged as r=0
    double sid_acc = 0;
    double er_chance = 0;
    double sid_chance = 0;
};

std::size_t levenshtein(const std::vector<int>& a, const std::vector<int>& b);
double pearson(const std::vector<double>& x, const std::vector<double>& y);
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// Inference-mode tokenization: encoder + hard nearest-centroid only.
std::vector<TokenSequence> tokenize_corpus(const std::vector<synth::FrameSequence>& split,
                                           const model::ModelParams& params,
                                           const diffkm::Codebook& codebook);

// Greedy CTC decoding of re-embedded tokens against content labels;
// sum of edit distances over sum of reference lengths.
double content_uer(const std::vector<TokenSequence>& tokens,
                   const diffkm::Codebook& codebook,
                   const model::AsrHeadParams& head);

// Multinomial logistic regression, full-batch gradient descent, fixed seed.
struct LinearProbe {
    Tensor w;  // features x classes
    std::vector<int> class_ids;

    std::vector<int> predict(const Tensor& x) const;
};
LinearProbe train_probe(const Tensor& x, const std::vector<int>& labels,
                        std::uint64_t seed, std::size_t iters = 300,
                        double lr = 0.5);
double probe_accuracy(const LinearProbe& p, const Tensor& x,
                      const std::vector<int>& labels);

// Ridge regression from token one-hots to contour values; returns held-out
// Pearson r (0 with a flag when the prediction has zero variance).
double prosody_regression(const std::vector<TokenSequence>& train_tokens,
                          const std::vector<TokenSequence>& test_tokens,
                          std::size_t k, bool* degenerate_out = nullptr);

struct ProbeOptions {
    std::size_t max_probe_frames = 4000;
    std::uint64_t seed = 1;
};

ProbeReport evaluate(const synth::Dataset& ds, const model::ModelParams& params,
                     const diffkm::Codebook& codebook,
                     const model::AsrHeadParams& asr_head,
                     const ProbeOptions& opts = {});

struct SweepCell {
    double alpha = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    ProbeReport report;
    double l_asr = 0, l_voc = 0;       // final dev losses
    double utilization = 0, perplexity = 0;
};

struct SweepSummaryRow {
    double alpha = 0;
    ProbeReport mean;
    ProbeReport stddev;
};

struct SweepResult {
    std::vector<SweepCell> cells;
    std::vector<SweepSummaryRow> summary;
    // Spearman rank correlation of each per-alpha mean metric against alpha.
    double spearman_uer_alpha = 0;
    double spearman_sid_alpha = 0;
    double spearman_er_alpha = 0;
    double spearman_prosody_alpha = 0;
};

SweepResult sweep_alpha(const std::vector<double>& alphas, const synth::GenConfig& gcfg,
                        const model::ModelConfig& mcfg, const train::TrainConfig& tcfg,
                        std::size_t n_utterances, std::size_t n_seeds,
                        std::size_t parallel = 1);

}  // namespace phtk::probe
