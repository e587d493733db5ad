#pragma once

#include <cstdint>
#include <vector>

#include "phtk/graph.hpp"

namespace phtk::diffkm {

using grad::Graph;
using grad::Tensor;

struct Codebook {
    Tensor centroids;  // K x D
    std::size_t k() const { return centroids.rows(); }
    std::size_t dim() const { return centroids.cols(); }
};

enum class AssignmentMode { SoftMixture, StraightThrough };

enum class TauDecay { Constant, Exponential };

struct TauSchedule {
    double initial = 1.0;
    double final_ = 0.1;
    TauDecay decay = TauDecay::Exponential;

    // progress in [0, 1]
    double at(double progress) const;
};

struct DiffKmConfig {
    double tau = 1.0;
    TauSchedule tau_schedule;
    AssignmentMode assignment_mode = AssignmentMode::SoftMixture;
};

struct SoftAssignment {
    Tensor weights;             // T x K, rows sum to 1
    std::vector<int> hard_ids;  // argmax per row, lowest index on ties
};

// Lloyd's algorithm with k-means++ seeding. Empty clusters are re-seeded to
// the point farthest from its assigned centroid. Deterministic given seed.
Codebook init_codebook_lloyd(const Tensor& features, std::size_t k,
                             std::uint64_t seed, std::size_t max_iters = 100,
                             std::vector<double>* objective_trace = nullptr);

// weights[t] = softmax_k( -||z_t - m_k||^2 / tau )
SoftAssignment soft_assign(const Tensor& z, const Codebook& codebook, double tau);

// Inference path: hard nearest-centroid lookup, no graph recording.
Tensor quantize_infer(const Tensor& z, const Codebook& codebook,
                      SoftAssignment* assignment_out = nullptr);

// Training path: records the soft-mixture (or straight-through) quantization
// on the tape so gradients reach both z and the centroids.
struct QuantizeNodes {
    int output;       // T x D quantized features
    int weights;      // T x K soft assignment
    SoftAssignment assignment;
};
QuantizeNodes quantize_train(Graph& g, int z_node, int codebook_node, double tau,
                             AssignmentMode mode);

struct CodebookStats {
    double utilization = 0.0;  // fraction of clusters used at least once
    double perplexity = 0.0;   // exp(entropy of empirical id distribution)
};
CodebookStats codebook_stats(const std::vector<std::vector<int>>& id_sequences,
                             std::size_t k);

// tokens_per_second * log2(vocab_size)
double bitrate(std::size_t vocab_size, double tokens_per_second);

}  // namespace phtk::diffkm
