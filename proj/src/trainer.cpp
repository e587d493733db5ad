#include "phtk/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "phtk/errors.hpp"

namespace phtk::train {

void adam_step(Tensor& param, const Tensor& grad, Moments& mom, std::uint64_t t,
               double lr, const AdamHyper& hyper) {
    if (!param.same_shape(grad))
        throw DimensionError("adam_step: param " + param.shape_str() + " vs grad " +
                             grad.shape_str());
    if (mom.m.size() == 0) {
        mom.m = Tensor(param.rows(), param.cols());
        mom.v = Tensor(param.rows(), param.cols());
    }
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        double g = grad.data[i];
        mom.m.data[i] = hyper.beta1 * mom.m.data[i] + (1.0 - hyper.beta1) * g;
        mom.v.data[i] = hyper.beta2 * mom.v.data[i] + (1.0 - hyper.beta2) * g * g;
        double mhat = mom.m.data[i] / bc1;
        double vhat = mom.v.data[i] / bc2;
        param.data[i] -= lr * mhat / (std::sqrt(vhat) + hyper.eps);
    }
}

Codebook init_codebook_from_dataset(const std::vector<synth::FrameSequence>& train,
                                    const model::ModelParams& params, std::size_t k,
                                    std::uint64_t seed) {
    std::vector<const synth::FrameSequence*> subset;
    for (std::size_t i = 0; i < train.size(); i += 10) subset.push_back(&train[i]);
    std::size_t rows = 0, d = 0;
    for (auto* s : subset) {
        rows += s->features.rows();
        d = s->features.cols();
    }
    Tensor pool(rows, d);
    std::size_t r = 0;
    for (auto* s : subset)
        for (std::size_t t = 0; t < s->features.rows(); ++t, ++r)
            for (std::size_t j = 0; j < d; ++j) pool.at(r, j) = s->features.at(t, j);

    // centroids must live in the same space the quantizer sees
    grad::Graph g;
    model::GraphBinding b;
    b.leaves = {{"enc.l1.w", g.leaf(params.enc.l1.w)},
                {"enc.l1.b", g.leaf(params.enc.l1.b)},
                {"enc.l2.w", g.leaf(params.enc.l2.w)},
                {"enc.l2.b", g.leaf(params.enc.l2.b)}};
    Tensor encoded = g.value(model::encode(g, g.leaf(pool), b));

    // per-utterance mean normalization (CMN-style) before clustering: the
    // utterance mean carries the speaker offset, and clustering raw encodings
    // imprints speaker splits into the initial codes that no later objective
    // removes. The pool's global mean is restored so centroids stay in the
    // un-normalized space the quantizer sees at train time.
    const std::size_t dz = encoded.cols();
    std::vector<double> global_mean(dz, 0.0);
    for (std::size_t t = 0; t < encoded.rows(); ++t)
        for (std::size_t j = 0; j < dz; ++j) global_mean[j] += encoded.at(t, j);
    for (auto& v : global_mean) v /= static_cast<double>(encoded.rows());
    std::size_t row0 = 0;
    for (auto* s : subset) {
        const std::size_t t_len = s->features.rows();
        std::vector<double> utt_mean(dz, 0.0);
        for (std::size_t t = 0; t < t_len; ++t)
            for (std::size_t j = 0; j < dz; ++j) utt_mean[j] += encoded.at(row0 + t, j);
        for (auto& v : utt_mean) v /= static_cast<double>(t_len);
        for (std::size_t t = 0; t < t_len; ++t)
            for (std::size_t j = 0; j < dz; ++j)
                encoded.at(row0 + t, j) += global_mean[j] - utt_mean[j];
        row0 += t_len;
    }
    return diffkm::init_codebook_lloyd(encoded, k, seed);
}

double tau_for_epoch(const TrainConfig& cfg, std::size_t global_epoch) {
    if (global_epoch < cfg.stage1_epochs) return cfg.tau_schedule.initial;
    std::size_t e2 = global_epoch - cfg.stage1_epochs;
    double denom = cfg.stage2_epochs > 1 ? static_cast<double>(cfg.stage2_epochs - 1) : 1.0;
    return cfg.tau_schedule.at(static_cast<double>(e2) / denom);
}

std::set<std::string> frozen_for_epoch(const TrainConfig& cfg, std::size_t global_epoch) {
    if (global_epoch < cfg.stage1_epochs)
        return {"enc.l1.w", "enc.l1.b", "enc.l2.w", "enc.l2.b", "codebook"};
    return {};
}

TrainState init_train_state(const synth::Dataset& ds, const model::ModelConfig& mcfg,
                            const TrainConfig& cfg, std::uint64_t config_hash) {
    TrainState st;
    st.params = model::ModelParams::init(mcfg, cfg.seed);
    st.codebook = init_codebook_from_dataset(ds.train, st.params, cfg.k, cfg.seed);
    st.rng.seed(cfg.seed);
    st.config_hash = config_hash;
    return st;
}

namespace {

struct BatchGrads {
    std::map<std::string, Tensor> by_name;
};

void eval_split(const std::vector<synth::FrameSequence>& split,
                const synth::Generator& gen, const TrainState& st,
                const TrainConfig& cfg, double tau, EpochMetrics& out) {
    double la = 0, lv = 0, lt = 0;
    std::vector<std::vector<int>> ids;
    for (const auto& utt : split) {
        grad::Graph g;
        auto b = model::bind_params(g, st.params, st.codebook, {});
        auto r = model::total_loss(g, b, utt,
                                   gen.oracle_speaker_embedding(utt.factors.speaker_id),
                                   cfg.alpha, tau, cfg.mode, /*train_aux=*/false);
        la += r.report.l_asr;
        lv += r.report.l_voc;
        lt += r.report.l_total;
        ids.push_back(std::move(r.token_ids));
    }
    const double n = split.empty() ? 1.0 : static_cast<double>(split.size());
    out.dev_l_asr = la / n;
    out.dev_l_voc = lv / n;
    out.dev_l_total = lt / n;
    auto stats = diffkm::codebook_stats(ids, cfg.k);
    out.utilization = stats.utilization;
    out.perplexity = stats.perplexity;
}

}  // namespace

void train(TrainState& state, const synth::Dataset& ds, const synth::Generator& gen,
           const model::ModelConfig& /*mcfg*/, const TrainConfig& cfg,
           std::size_t run_epochs) {
    if (ds.train.empty()) throw TrainingError("train: empty training split");

    const std::size_t total = cfg.total_epochs();
    std::size_t done = 0;
    auto names = state.params.named_tensors();

    while (state.next_epoch < total && done < run_epochs) {
        const std::size_t epoch = state.next_epoch;
        const bool stage1 = epoch < cfg.stage1_epochs;
        const double lr = stage1 ? cfg.stage1_lr : cfg.stage2_lr;
        const double tau = tau_for_epoch(cfg, epoch);
        const auto frozen = frozen_for_epoch(cfg, epoch);

        std::vector<std::size_t> order(ds.train.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), state.rng);

        double ep_la = 0, ep_lv = 0, ep_lt = 0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::size_t end = std::min(start + cfg.batch_size, order.size());
            grad::Graph g;
            auto b = model::bind_params(g, state.params, state.codebook, frozen);
            int batch_loss = -1;
            for (std::size_t i = start; i < end; ++i) {
                const auto& utt = ds.train[order[i]];
                auto r = model::total_loss(
                    g, b, utt, gen.oracle_speaker_embedding(utt.factors.speaker_id),
                    cfg.alpha, tau, cfg.mode);
                ep_la += r.report.l_asr;
                ep_lv += r.report.l_voc;
                ep_lt += r.report.l_total;
                if (!std::isfinite(r.report.l_total))
                    throw TrainingError("non-finite loss at epoch " +
                                        std::to_string(epoch) + " batch " +
                                        std::to_string(n_batches));
                batch_loss = batch_loss < 0 ? r.loss_node : g.add(batch_loss, r.loss_node);
            }
            batch_loss = g.scale(batch_loss, 1.0 / static_cast<double>(end - start));
            g.backward(batch_loss);

            // collect, clip at global norm, step
            BatchGrads grads;
            double sq = 0;
            for (const auto& [name, node] : b.leaves) {
                if (frozen.count(name) || !g.requires_grad(node)) continue;
                const Tensor& gt = g.gradient(node);
                if (gt.size() == 0) continue;
                for (double v : gt.data) {
                    if (!std::isfinite(v))
                        throw TrainingError("non-finite gradient for " + name +
                                            " at epoch " + std::to_string(epoch));
                    sq += v * v;
                }
                grads.by_name.emplace(name, gt);
            }
            double scale = 1.0;
            double norm = std::sqrt(sq);
            if (cfg.clip_norm > 0 && norm > cfg.clip_norm) scale = cfg.clip_norm / norm;

            ++state.adam_steps;
            for (auto& [name, t] : names) {
                auto it = grads.by_name.find(name);
                if (it == grads.by_name.end()) continue;
                if (scale != 1.0)
                    for (auto& v : it->second.data) v *= scale;
                adam_step(*t, it->second, state.moments[name], state.adam_steps, lr,
                          cfg.adam);
            }
            auto itc = grads.by_name.find("codebook");
            if (itc != grads.by_name.end()) {
                if (scale != 1.0)
                    for (auto& v : itc->second.data) v *= scale;
                adam_step(state.codebook.centroids, itc->second,
                          state.moments["codebook"], state.adam_steps, lr, cfg.adam);
            }
            ++n_batches;
        }

        EpochMetrics em;
        em.stage = stage1 ? 1 : 2;
        em.epoch = epoch;
        em.tau = tau;
        const double n = static_cast<double>(ds.train.size());
        em.train_l_asr = ep_la / n;
        em.train_l_voc = ep_lv / n;
        em.train_l_total = ep_lt / n;
        eval_split(ds.dev.empty() ? ds.train : ds.dev, gen, state, cfg, tau, em);
        state.history.push_back(em);

        ++state.next_epoch;
        ++done;
    }
}

// ---------------------------------------------------------------------------
// Checkpoint container: "PHTK" magic, u32 version, u64 config hash, named
// tensors, counters, rng state, trailing FNV-1a checksum of all prior bytes.

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

struct Sink {
    std::string bytes;
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void f64(double d) {
        std::uint64_t v;
        static_assert(sizeof v == sizeof d);
        std::memcpy(&v, &d, 8);
        u64(v);
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes += s;
    }
    void tensor(const std::string& name, const Tensor& t) {
        str(name);
        u32(static_cast<std::uint32_t>(t.shape.size()));
        for (auto s : t.shape) u64(s);
        for (double d : t.data) f64(d);
    }
};

struct Source {
    const std::string& bytes;
    std::size_t pos = 0;
    explicit Source(const std::string& b) : bytes(b) {}
    void need(std::size_t n) {
        if (pos + n > bytes.size()) throw IoError("checkpoint: truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos++])) << (8 * i);
        return v;
    }
    double f64() {
        std::uint64_t v = u64();
        double d;
        std::memcpy(&d, &v, 8);
        return d;
    }
    std::string str() {
        std::uint32_t n = u32();
        need(n);
        std::string s = bytes.substr(pos, n);
        pos += n;
        return s;
    }
    std::pair<std::string, Tensor> tensor() {
        std::string name = str();
        std::uint32_t rank = u32();
        Tensor t;
        t.shape.resize(rank);
        std::size_t n = 1;
        for (auto& s : t.shape) {
            s = u64();
            n *= s;
        }
        t.data.resize(n);
        for (auto& d : t.data) d = f64();
        return {std::move(name), std::move(t)};
    }
};

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::string& path) {
    Sink s;
    s.bytes += "PHTK";
    s.u32(kCheckpointVersion);
    s.u64(state.config_hash);
    s.u64(state.data_hash);

    auto named = state.params.named_tensors();
    s.u32(static_cast<std::uint32_t>(named.size()) + 1);
    for (const auto& [name, t] : named) s.tensor(name, *t);
    s.tensor("codebook", state.codebook.centroids);

    s.u32(static_cast<std::uint32_t>(state.moments.size()));
    for (const auto& [name, mom] : state.moments) {
        s.tensor(name + ".m", mom.m);
        s.tensor(name + ".v", mom.v);
    }

    s.u64(state.adam_steps);
    s.u64(state.next_epoch);

    std::ostringstream rng_os;
    rng_os << state.rng;
    s.str(rng_os.str());

    s.u64(fnv1a(s.bytes));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("checkpoint: cannot write " + path);
    f.write(s.bytes.data(), static_cast<std::streamsize>(s.bytes.size()));
}

TrainState load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot read " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    std::string bytes = buf.str();
    if (bytes.size() < 8 + 4 + 4) throw IoError("checkpoint: truncated");

    std::string body = bytes.substr(0, bytes.size() - 8);
    Source tail(bytes);
    tail.pos = bytes.size() - 8;
    if (tail.u64() != fnv1a(body)) throw IoError("checkpoint: checksum mismatch");

    Source s(body);
    s.need(4);
    if (body.substr(0, 4) != "PHTK") throw IoError("checkpoint: bad magic");
    s.pos = 4;
    std::uint32_t version = s.u32();
    if (version != kCheckpointVersion)
        throw IoError("checkpoint: unsupported version " + std::to_string(version));

    TrainState st;
    st.config_hash = s.u64();
    st.data_hash = s.u64();

    std::uint32_t n_params = s.u32();
    std::map<std::string, Tensor> loaded;
    for (std::uint32_t i = 0; i < n_params; ++i) {
        auto [name, t] = s.tensor();
        loaded.emplace(std::move(name), std::move(t));
    }
    for (auto& [name, t] : st.params.named_tensors()) {
        auto it = loaded.find(name);
        if (it == loaded.end()) throw IoError("checkpoint: missing tensor " + name);
        *t = std::move(it->second);
    }
    auto itc = loaded.find("codebook");
    if (itc == loaded.end()) throw IoError("checkpoint: missing codebook");
    st.codebook.centroids = std::move(itc->second);

    std::uint32_t n_moments = s.u32();
    for (std::uint32_t i = 0; i < n_moments; ++i) {
        auto [mname, mt] = s.tensor();
        auto [vname, vt] = s.tensor();
        if (mname.size() < 2 || vname.size() < 2 ||
            mname.substr(mname.size() - 2) != ".m" ||
            vname.substr(vname.size() - 2) != ".v")
            throw IoError("checkpoint: malformed moment pair");
        std::string base = mname.substr(0, mname.size() - 2);
        st.moments[base] = Moments{std::move(mt), std::move(vt)};
    }

    st.adam_steps = s.u64();
    st.next_epoch = s.u64();

    std::istringstream rng_is(s.str());
    rng_is >> st.rng;
    if (!rng_is) throw IoError("checkpoint: bad rng state");
    return st;
}

}  // namespace phtk::train
