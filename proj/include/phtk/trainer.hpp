#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "phtk/diffkm.hpp"
#include "phtk/model.hpp"
#include "phtk/synthgen.hpp"

namespace phtk::train {

using diffkm::Codebook;
using grad::Tensor;

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    double alpha = 0.1;
    std::size_t stage1_epochs = 15;
    std::size_t stage2_epochs = 30;  // 1:2 epoch ratio, 10x lr ratio
    double stage1_lr = 1e-2;
    double stage2_lr = 1e-3;
    std::size_t batch_size = 8;
    std::uint64_t seed = 1;
    AdamHyper adam;
    diffkm::TauSchedule tau_schedule;
    diffkm::AssignmentMode mode = diffkm::AssignmentMode::SoftMixture;
    double clip_norm = 5.0;
    std::size_t k = 32;

    std::size_t total_epochs() const { return stage1_epochs + stage2_epochs; }
};

struct EpochMetrics {
    int stage = 1;
    std::size_t epoch = 0;  // global epoch index
    double tau = 1.0;
    double train_l_asr = 0, train_l_voc = 0, train_l_total = 0;
    double dev_l_asr = 0, dev_l_voc = 0, dev_l_total = 0;
    double utilization = 0, perplexity = 0;
};

struct Moments {
    Tensor m, v;
};

struct TrainState {
    model::ModelParams params;
    Codebook codebook;
    std::map<std::string, Moments> moments;
    std::uint64_t adam_steps = 0;
    std::size_t next_epoch = 0;
    std::mt19937_64 rng;
    std::uint64_t config_hash = 0;
    std::uint64_t data_hash = 0;  // hash of the dataset-determining config sections
    std::vector<EpochMetrics> history;
};

// Bias-corrected adaptive-moment update for one tensor (step t is 1-based).
void adam_step(Tensor& param, const Tensor& grad, Moments& mom, std::uint64_t t,
               double lr, const AdamHyper& hyper);

// Lloyd init on a 10% slice of the training features, passed through the
// (initial) encoder so the centroids live in bottleneck space.
Codebook init_codebook_from_dataset(const std::vector<synth::FrameSequence>& train,
                                    const model::ModelParams& params, std::size_t k,
                                    std::uint64_t seed);

TrainState init_train_state(const synth::Dataset& ds, const model::ModelConfig& mcfg,
                            const TrainConfig& cfg, std::uint64_t config_hash);

// Runs up to run_epochs further epochs (all remaining by default).
void train(TrainState& state, const synth::Dataset& ds, const synth::Generator& gen,
           const model::ModelConfig& mcfg, const TrainConfig& cfg,
           std::size_t run_epochs = static_cast<std::size_t>(-1));

// Versioned binary container with a trailing checksum.
void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);

double tau_for_epoch(const TrainConfig& cfg, std::size_t global_epoch);
std::set<std::string> frozen_for_epoch(const TrainConfig& cfg, std::size_t global_epoch);

}  // namespace phtk::train
