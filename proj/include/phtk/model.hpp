#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "phtk/diffkm.hpp"
#include "phtk/graph.hpp"
#include "phtk/synthgen.hpp"

namespace phtk::model {

using diffkm::AssignmentMode;
using diffkm::Codebook;
using grad::Graph;
using grad::Tensor;

struct ModelConfig {
    std::size_t d = 32;    // input feature width
    std::size_t h = 64;    // hidden width
    std::size_t d_z = 16;  // bottleneck width
    std::size_t v_c = 12;  // content vocabulary (CTC adds a blank)
    std::size_t d_s = 8;   // speaker embedding width
    std::size_t k = 32;    // codebook size
};

struct LayerParams {
    Tensor w;  // in x out
    Tensor b;  // 1 x out
};

struct EncoderParams { LayerParams l1, l2; };   // d -> h -> d_z, tanh hidden
struct AsrHeadParams { LayerParams l1, l2; };   // d_z -> h -> v_c + 1
struct DecoderParams { LayerParams l1, l2; };   // d_z + d_s -> h -> d

struct ModelParams {
    EncoderParams enc;
    AsrHeadParams asr;
    DecoderParams dec;

    static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

    // Stable name -> tensor view, used by the optimizer and checkpointing.
    std::vector<std::pair<std::string, Tensor*>> named_tensors();
    std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;
};

struct LossReport {
    double l_asr = 0;
    double l_voc = 0;
    double l_total = 0;
    double alpha = 0;
};

// Tape leaves for one forward/backward pass. Frozen tensors are recorded
// without requires_grad so their values cannot move.
struct GraphBinding {
    std::vector<std::pair<std::string, int>> leaves;  // name -> node id
    int codebook = -1;

    int id(const std::string& name) const;
};

GraphBinding bind_params(Graph& g, const ModelParams& params, const Codebook& cb,
                         const std::set<std::string>& frozen);

int encode(Graph& g, int features, const GraphBinding& b);

struct ForwardResult {
    int loss_node = -1;       // node to run backward on (includes aux branches)
    int quantized = -1;       // shared bottleneck output, consumed by both heads
    LossReport report;
    std::vector<int> token_ids;
};

// Full pass of the weighted two-head objective. At alpha extremes the
// zero-weighted head still trains through a detached auxiliary branch when
// train_aux is set; with it off, loss_node is exactly the weighted loss
// (the form gradient checks differentiate).
ForwardResult total_loss(Graph& g, const GraphBinding& b,
                         const synth::FrameSequence& x,
                         const std::vector<double>& speaker_embedding,
                         double alpha, double tau, AssignmentMode mode,
                         bool train_aux = true);

// Standalone pieces, shared with the tests and probes.
int ctc_loss(Graph& g, int logprobs, const std::vector<int>& target);
std::vector<int> ctc_greedy_decode(const Tensor& logits);
double recon_loss(const Tensor& x_hat, const Tensor& x);

// Per-frame ASR logits from already-quantized features (plain, no tape).
Tensor asr_logits(const Tensor& quantized, const AsrHeadParams& head);

}  // namespace phtk::model
