#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "phtk/model.hpp"
#include "phtk/probes.hpp"
#include "phtk/synthgen.hpp"
#include "phtk/trainer.hpp"

namespace phtk::config {

struct DataOptions {
    std::size_t n_utterances = 1000;
    std::array<double, 3> split_ratios = {0.8, 0.1, 0.1};
    bool speaker_independent = true;
};

struct SweepOptions {
    std::vector<double> alphas = {0.0, 0.1, 0.3, 0.5, 1.0};
    std::size_t n_seeds = 3;
};

struct RunConfig {
    synth::GenConfig gen;
    model::ModelConfig model;
    train::TrainConfig train;
    probe::ProbeOptions probe;
    DataOptions data;
    SweepOptions sweep;

    void validate() const;

    // Canonical text form: sorted sections and keys. Hash and file output
    // are both derived from it so they agree by construction.
    std::string canonical() const;
    std::uint64_t hash() const;

    // Hash of the dataset-determining sections only ([gen] and [data]), so
    // training-flag overrides do not invalidate an existing dataset.
    std::uint64_t data_hash() const;
};

// Flat "[section]" / "key = value" file; unknown sections or keys are errors.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
void write_config(const RunConfig& cfg, const std::string& path);

std::uint64_t fnv1a_hash(const std::string& bytes);

}  // namespace phtk::config
