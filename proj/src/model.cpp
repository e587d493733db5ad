#include "phtk/model.hpp"

#include <cmath>
#include <random>

#include "phtk/errors.hpp"

namespace phtk::model {

namespace {

LayerParams init_layer(std::size_t in, std::size_t out, std::mt19937_64& rng) {
    LayerParams l;
    double stddev = 1.0 / std::sqrt(static_cast<double>(in));
    l.w = Tensor::randn(in, out, rng, stddev);
    l.b = Tensor(1, out);
    return l;
}

// x (T x in) -> tanh(x w1 + b1) w2 + b2
int mlp2(Graph& g, int x, const GraphBinding& b, const std::string& prefix) {
    int h = g.tanh_(g.add_rowvec(g.matmul(x, b.id(prefix + ".l1.w")), b.id(prefix + ".l1.b")));
    return g.add_rowvec(g.matmul(h, b.id(prefix + ".l2.w")), b.id(prefix + ".l2.b"));
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ModelParams p;
    p.enc.l1 = init_layer(cfg.d, cfg.h, rng);
    p.enc.l2 = init_layer(cfg.h, cfg.d_z, rng);
    p.asr.l1 = init_layer(cfg.d_z, cfg.h, rng);
    p.asr.l2 = init_layer(cfg.h, cfg.v_c + 1, rng);
    p.dec.l1 = init_layer(cfg.d_z + cfg.d_s, cfg.h, rng);
    p.dec.l2 = init_layer(cfg.h, cfg.d, rng);
    return p;
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named_tensors() {
    return {
        {"enc.l1.w", &enc.l1.w}, {"enc.l1.b", &enc.l1.b},
        {"enc.l2.w", &enc.l2.w}, {"enc.l2.b", &enc.l2.b},
        {"asr.l1.w", &asr.l1.w}, {"asr.l1.b", &asr.l1.b},
        {"asr.l2.w", &asr.l2.w}, {"asr.l2.b", &asr.l2.b},
        {"dec.l1.w", &dec.l1.w}, {"dec.l1.b", &dec.l1.b},
        {"dec.l2.w", &dec.l2.w}, {"dec.l2.b", &dec.l2.b},
    };
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named_tensors() const {
    auto mut = const_cast<ModelParams*>(this)->named_tensors();
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mut.size());
    for (auto& [name, t] : mut) out.emplace_back(name, t);
    return out;
}

int GraphBinding::id(const std::string& name) const {
    for (const auto& [n, id] : leaves)
        if (n == name) return id;
    throw DataError("no leaf named " + name);
}

GraphBinding bind_params(Graph& g, const ModelParams& params, const Codebook& cb,
                         const std::set<std::string>& frozen) {
    GraphBinding b;
    for (const auto& [name, t] : params.named_tensors())
        b.leaves.emplace_back(name, g.leaf(*t, !frozen.count(name)));
    b.codebook = g.leaf(cb.centroids, !frozen.count("codebook"));
    b.leaves.emplace_back("codebook", b.codebook);
    return b;
}

int encode(Graph& g, int features, const GraphBinding& b) {
    return mlp2(g, features, b, "enc");
}

int ctc_loss(Graph& g, int logprobs, const std::vector<int>& target) {
    return g.ctc(logprobs, target);
}

std::vector<int> ctc_greedy_decode(const Tensor& logits) {
    const int blank = static_cast<int>(logits.cols()) - 1;
    std::vector<int> out;
    int prev = blank;
    for (std::size_t t = 0; t < logits.rows(); ++t) {
        int best = 0;
        for (std::size_t j = 1; j < logits.cols(); ++j)
            if (logits.at(t, j) > logits.at(t, best)) best = static_cast<int>(j);
        if (best != blank && best != prev) out.push_back(best);
        prev = best;
    }
    return out;
}

double recon_loss(const Tensor& x_hat, const Tensor& x) {
    if (!x_hat.same_shape(x))
        throw DimensionError("recon_loss: shapes " + x_hat.shape_str() + " vs " +
                             x.shape_str());
    double acc = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double d = x_hat.data[i] - x.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(x.size());
}

Tensor asr_logits(const Tensor& quantized, const AsrHeadParams& head) {
    Graph g;
    GraphBinding b;
    b.leaves.emplace_back("asr.l1.w", g.leaf(head.l1.w));
    b.leaves.emplace_back("asr.l1.b", g.leaf(head.l1.b));
    b.leaves.emplace_back("asr.l2.w", g.leaf(head.l2.w));
    b.leaves.emplace_back("asr.l2.b", g.leaf(head.l2.b));
    int q = g.leaf(quantized);
    return g.value(mlp2(g, q, b, "asr"));
}

ForwardResult total_loss(Graph& g, const GraphBinding& b,
                         const synth::FrameSequence& x,
                         const std::vector<double>& speaker_embedding,
                         double alpha, double tau, AssignmentMode mode,
                         bool train_aux) {
    if (alpha < 0 || alpha > 1) throw ConfigError("total_loss: alpha must be in [0,1]");

    int features = g.leaf(x.features, false);
    int z = encode(g, features, b);
    auto q = diffkm::quantize_train(g, z, b.codebook, tau, mode);

    auto asr_branch = [&](int quantized) {
        int logits = mlp2(g, quantized, b, "asr");
        int logprobs = g.log_softmax_rows(logits);
        // per-frame normalization keeps l_asr on the same scale as the
        // per-element reconstruction MSE, so interior alpha actually mixes
        return g.scale(g.ctc(logprobs, x.factors.content_labels),
                       1.0 / static_cast<double>(x.features.rows()));
    };
    auto voc_branch = [&](int quantized) {
        Tensor spk(1, speaker_embedding.size());
        spk.data = speaker_embedding;
        int spk_rows = g.repeat_rows(g.leaf(spk, false), x.features.rows());
        int dec_in = g.concat_cols(quantized, spk_rows);
        int x_hat = mlp2(g, dec_in, b, "dec");
        return g.mean_all(g.square_(g.sub(x_hat, features)));
    };

    ForwardResult r;
    r.quantized = q.output;
    r.token_ids = q.assignment.hard_ids;
    r.report.alpha = alpha;

    int total;
    if (alpha == 0.0) {
        int l_asr = asr_branch(q.output);
        int l_voc = voc_branch(train_aux ? g.detach(q.output) : q.output);
        r.report.l_asr = g.value(l_asr).data[0];
        r.report.l_voc = g.value(l_voc).data[0];
        r.report.l_total = r.report.l_asr;
        total = train_aux ? g.add(l_asr, l_voc) : l_asr;
    } else if (alpha == 1.0) {
        int l_voc = voc_branch(q.output);
        int l_asr = asr_branch(train_aux ? g.detach(q.output) : q.output);
        r.report.l_asr = g.value(l_asr).data[0];
        r.report.l_voc = g.value(l_voc).data[0];
        r.report.l_total = r.report.l_voc;
        total = train_aux ? g.add(l_voc, l_asr) : l_voc;
    } else {
        int l_asr = asr_branch(q.output);
        int l_voc = voc_branch(q.output);
        r.report.l_asr = g.value(l_asr).data[0];
        r.report.l_voc = g.value(l_voc).data[0];
        r.report.l_total = (1.0 - alpha) * r.report.l_asr + alpha * r.report.l_voc;
        total = g.add(g.scale(l_asr, 1.0 - alpha), g.scale(l_voc, alpha));
    }
    r.loss_node = total;
    return r;
}

}  // namespace phtk::model
