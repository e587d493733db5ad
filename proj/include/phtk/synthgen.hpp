#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "phtk/tensor.hpp"

namespace phtk::synth {

using grad::Tensor;

struct GenConfig {
    std::size_t v_c = 12;   // content vocabulary size
    std::size_t s = 10;     // speaker count
    std::size_t d = 32;     // feature dimension
    std::size_t d_s = 8;    // speaker embedding dimension
    std::size_t len_min = 6, len_max = 12;  // symbols per utterance
    std::size_t dur_min = 2, dur_max = 6;   // frames per symbol
    double prosody_smoothness = 0.2;        // bound on |contour[t+1]-contour[t]|
    std::size_t prosody_window = 5;
    double noise_sigma = 0.1;
    std::uint64_t seed = 1;

    void validate() const;
};

struct LatentFactors {
    std::vector<int> content_labels;     // length L, no adjacent repeats
    std::vector<int> frame_labels;       // length T, run-length expansion
    std::vector<double> prosody_contour; // length T, in [-1, 1]
    int speaker_id = 0;
    std::vector<double> speaker_vector;  // d_s entries, fixed per speaker
};

struct FrameSequence {
    Tensor features;  // T x D
    LatentFactors factors;
    std::string utterance_id;
};

// Deterministic factorized feature generator. Mixing matrices have
// orthonormal columns so the three factors stay independently recoverable.
class Generator {
  public:
    explicit Generator(GenConfig cfg);

    // Pure function of (cfg.seed, utt_index, speaker_id).
    FrameSequence gen_utterance(std::uint64_t utt_index, int speaker_id) const;

    // Utterance with a speaker drawn from the given pool.
    FrameSequence gen_utterance_from_pool(std::uint64_t utt_index,
                                          const std::vector<int>& speaker_pool) const;

    const std::vector<double>& oracle_speaker_embedding(int speaker_id) const;

    const GenConfig& config() const { return cfg_; }
    static constexpr std::size_t kProsodyBasisDim = 4;

  private:
    GenConfig cfg_;
    Tensor w_content_;  // d x v_c
    Tensor w_prosody_;  // d x kProsodyBasisDim
    Tensor w_speaker_;  // d x d_s
    std::vector<std::vector<double>> speaker_vectors_;
};

struct Dataset {
    std::vector<FrameSequence> train, dev, test;
};

// Splits by utterance count; with speaker_independent, test utterances use a
// held-out speaker pool so speaker-probe train/test speakers are disjoint.
Dataset gen_dataset(const GenConfig& cfg, std::size_t n_utterances,
                    std::array<double, 3> split_ratios,
                    bool speaker_independent = true);

// Line-oriented dataset serialization (schema v1).
void write_split(std::ostream& os, const std::vector<FrameSequence>& split,
                 std::uint64_t config_hash);
std::vector<FrameSequence> read_split(std::istream& is, std::uint64_t* config_hash_out);

}  // namespace phtk::synth
