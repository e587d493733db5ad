#include "phtk/probes.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

#include "phtk/errors.hpp"

namespace phtk::probe {

std::size_t levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    std::iota(prev.begin(), prev.end(), 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.empty())
        throw DataError("pearson: length mismatch or empty");
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0 || syy == 0)
        throw DataError("pearson: zero-variance input");
    return sxy / std::sqrt(sxx * syy);
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t t = i; t <= j; ++t) r[idx[t]] = avg;
        i = j + 1;
    }
    return r;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    return pearson(ranks(x), ranks(y));
}

std::vector<TokenSequence> tokenize_corpus(const std::vector<synth::FrameSequence>& split,
                                           const model::ModelParams& params,
                                           const diffkm::Codebook& codebook) {
    std::vector<TokenSequence> out;
    out.reserve(split.size());
    for (const auto& seq : split) {
        grad::Graph g;
        model::GraphBinding b;
        for (const auto& [name, t] : params.named_tensors())
            b.leaves.emplace_back(name, g.leaf(*t));
        int z = model::encode(g, g.leaf(seq.features), b);
        diffkm::SoftAssignment a;
        diffkm::quantize_infer(g.value(z), codebook, &a);
        TokenSequence ts;
        ts.ids = std::move(a.hard_ids);
        ts.utterance_id = seq.utterance_id;
        ts.factors = &seq.factors;
        out.push_back(std::move(ts));
    }
    return out;
}

double content_uer(const std::vector<TokenSequence>& tokens,
                   const diffkm::Codebook& codebook,
                   const model::AsrHeadParams& head) {
    std::size_t dist_sum = 0, ref_sum = 0;
    for (const auto& ts : tokens) {
        Tensor q(ts.ids.size(), codebook.dim());
        for (std::size_t t = 0; t < ts.ids.size(); ++t)
            for (std::size_t j = 0; j < codebook.dim(); ++j)
                q.at(t, j) = codebook.centroids.at(static_cast<std::size_t>(ts.ids[t]), j);
        auto decoded = model::ctc_greedy_decode(model::asr_logits(q, head));
        dist_sum += levenshtein(decoded, ts.factors->content_labels);
        ref_sum += ts.factors->content_labels.size();
    }
    if (ref_sum == 0) throw DataError("content_uer: empty reference corpus");
    return static_cast<double>(dist_sum) / static_cast<double>(ref_sum);
}

LinearProbe train_probe(const Tensor& x, const std::vector<int>& labels,
                        std::uint64_t seed, std::size_t iters, double lr) {
    (void)seed;  // probe training is full-batch and order-free
    if (x.rows() != labels.size()) throw DataError("train_probe: label count mismatch");
    std::vector<int> classes(labels);
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    if (classes.size() < 2) throw DataError("train_probe: single-class labels");

    std::map<int, std::size_t> to_idx;
    for (std::size_t i = 0; i < classes.size(); ++i) to_idx[classes[i]] = i;
    const std::size_t n = x.rows(), f = x.cols() + 1, c = classes.size();

    LinearProbe p;
    p.class_ids = classes;
    p.w = Tensor(f, c);

    std::vector<double> logits(c), probs(c);
    Tensor gradw(f, c);
    for (std::size_t it = 0; it < iters; ++it) {
        std::fill(gradw.data.begin(), gradw.data.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double mx = -1e300;
            for (std::size_t j = 0; j < c; ++j) {
                double v = p.w.at(x.cols(), j);  // bias row
                for (std::size_t d = 0; d < x.cols(); ++d)
                    v += x.at(i, d) * p.w.at(d, j);
                logits[j] = v;
                mx = std::max(mx, v);
            }
            double sum = 0;
            for (std::size_t j = 0; j < c; ++j) {
                probs[j] = std::exp(logits[j] - mx);
                sum += probs[j];
            }
            std::size_t y = to_idx[labels[i]];
            for (std::size_t j = 0; j < c; ++j) {
                double err = probs[j] / sum - (j == y ? 1.0 : 0.0);
                for (std::size_t d = 0; d < x.cols(); ++d)
                    gradw.at(d, j) += err * x.at(i, d);
                gradw.at(x.cols(), j) += err;
            }
        }
        double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < p.w.size(); ++i)
            p.w.data[i] -= lr * gradw.data[i] * inv_n;
    }
    return p;
}

std::vector<int> LinearProbe::predict(const Tensor& x) const {
    const std::size_t c = w.cols();
    std::vector<int> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        std::size_t best = 0;
        double bv = -1e300;
        for (std::size_t j = 0; j < c; ++j) {
            double v = w.at(x.cols(), j);
            for (std::size_t d = 0; d < x.cols(); ++d) v += x.at(i, d) * w.at(d, j);
            if (v > bv) {
                bv = v;
                best = j;
            }
        }
        out[i] = class_ids[best];
    }
    return out;
}

double probe_accuracy(const LinearProbe& p, const Tensor& x,
                      const std::vector<int>& labels) {
    auto pred = p.predict(x);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (pred[i] == labels[i]) ++hit;
    return labels.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(labels.size());
}

namespace {

// token one-hots (+bias) -> contour value, closed-form ridge via Cholesky
struct Ridge {
    std::vector<double> coef;  // k + 1

    static Ridge fit(const std::vector<TokenSequence>& tokens, std::size_t k,
                     double lambda = 1e-3) {
        const std::size_t f = k + 1;
        std::vector<double> a(f * f, 0.0), b(f, 0.0);
        for (const auto& ts : tokens)
            for (std::size_t t = 0; t < ts.ids.size(); ++t) {
                std::size_t id = static_cast<std::size_t>(ts.ids[t]);
                double y = ts.factors->prosody_contour[t];
                a[id * f + id] += 1.0;
                a[id * f + k] += 1.0;
                a[k * f + id] += 1.0;
                a[k * f + k] += 1.0;
                b[id] += y;
                b[k] += y;
            }
        for (std::size_t i = 0; i < f; ++i) a[i * f + i] += lambda;

        // Cholesky solve
        std::vector<double> l(f * f, 0.0);
        for (std::size_t i = 0; i < f; ++i)
            for (std::size_t j = 0; j <= i; ++j) {
                double s = a[i * f + j];
                for (std::size_t t = 0; t < j; ++t) s -= l[i * f + t] * l[j * f + t];
                if (i == j)
                    l[i * f + i] = std::sqrt(std::max(s, 1e-12));
                else
                    l[i * f + j] = s / l[j * f + j];
            }
        std::vector<double> y(f), x(f);
        for (std::size_t i = 0; i < f; ++i) {
            double s = b[i];
            for (std::size_t t = 0; t < i; ++t) s -= l[i * f + t] * y[t];
            y[i] = s / l[i * f + i];
        }
        for (std::size_t i = f; i-- > 0;) {
            double s = y[i];
            for (std::size_t t = i + 1; t < f; ++t) s -= l[t * f + i] * x[t];
            x[i] = s / l[i * f + i];
        }
        Ridge r;
        r.coef = std::move(x);
        return r;
    }

    double predict(int id, std::size_t k) const {
        return coef[static_cast<std::size_t>(id)] + coef[k];
    }
};

}  // namespace

double prosody_regression(const std::vector<TokenSequence>& train_tokens,
                          const std::vector<TokenSequence>& test_tokens,
                          std::size_t k, bool* degenerate_out) {
    Ridge r = Ridge::fit(train_tokens, k);
    std::vector<double> pred, truth;
    for (const auto& ts : test_tokens)
        for (std::size_t t = 0; t < ts.ids.size(); ++t) {
            pred.push_back(r.predict(ts.ids[t], k));
            truth.push_back(ts.factors->prosody_contour[t]);
        }
    if (degenerate_out) *degenerate_out = false;

    double mt = 0;
    for (double v : truth) mt += v;
    mt /= static_cast<double>(truth.size());
    double vt = 0;
    for (double v : truth) vt += (v - mt) * (v - mt);
    if (vt == 0) throw DataError("prosody_regression: zero-variance target");

    auto [pmin, pmax] = std::minmax_element(pred.begin(), pred.end());
    if (*pmin == *pmax) {
        if (degenerate_out) *degenerate_out = true;
        return 0.0;
    }
    return pearson(pred, truth);
}

namespace {

Tensor histogram_features(const std::vector<TokenSequence>& tokens, std::size_t k) {
    Tensor x(tokens.size(), k);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        for (int id : tokens[i].ids) x.at(i, static_cast<std::size_t>(id)) += 1.0;
        for (std::size_t j = 0; j < k; ++j)
            x.at(i, j) /= static_cast<double>(tokens[i].ids.size());
    }
    return x;
}

struct FrameTable {
    Tensor onehot;           // n x k
    std::vector<int> cls;    // quantile class
    std::vector<double> contour;
};

FrameTable frame_table(const std::vector<TokenSequence>& tokens, std::size_t k,
                       const std::array<double, 3>& quartiles, std::size_t max_frames) {
    std::size_t total = 0;
    for (const auto& ts : tokens) total += ts.ids.size();
    std::size_t stride = std::max<std::size_t>(1, total / std::max<std::size_t>(1, max_frames));

    FrameTable ft;
    std::vector<std::pair<int, double>> rows;
    std::size_t counter = 0;
    for (const auto& ts : tokens)
        for (std::size_t t = 0; t < ts.ids.size(); ++t, ++counter) {
            if (counter % stride) continue;
            rows.emplace_back(ts.ids[t], ts.factors->prosody_contour[t]);
        }
    ft.onehot = Tensor(rows.size(), k);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        ft.onehot.at(i, static_cast<std::size_t>(rows[i].first)) = 1.0;
        double v = rows[i].second;
        int c = v < quartiles[0] ? 0 : v < quartiles[1] ? 1 : v < quartiles[2] ? 2 : 3;
        ft.cls.push_back(c);
        ft.contour.push_back(v);
    }
    return ft;
}

std::array<double, 3> contour_quartiles(const std::vector<TokenSequence>& tokens) {
    std::vector<double> all;
    for (const auto& ts : tokens)
        all.insert(all.end(), ts.factors->prosody_contour.begin(),
                   ts.factors->prosody_contour.end());
    std::sort(all.begin(), all.end());
    auto q = [&](double p) { return all[static_cast<std::size_t>(p * (all.size() - 1))]; };
    return {q(0.25), q(0.5), q(0.75)};
}

}  // namespace

ProbeReport evaluate(const synth::Dataset& ds, const model::ModelParams& params,
                     const diffkm::Codebook& codebook,
                     const model::AsrHeadParams& asr_head, const ProbeOptions& opts) {
    ProbeReport rep;
    const std::size_t k = codebook.k();
    auto train_tokens = tokenize_corpus(ds.train, params, codebook);
    auto test_tokens = tokenize_corpus(ds.test, params, codebook);

    rep.content_uer = content_uer(test_tokens, codebook, asr_head);

    // SID: utterance histograms, even/odd split inside the train corpus so
    // every speaker appears on both sides.
    {
        std::vector<TokenSequence> pa, pb;
        for (std::size_t i = 0; i < train_tokens.size(); ++i)
            (i % 2 ? pb : pa).push_back(train_tokens[i]);
        std::vector<int> ya, yb;
        for (const auto& t : pa) ya.push_back(t.factors->speaker_id);
        for (const auto& t : pb) yb.push_back(t.factors->speaker_id);
        auto p = train_probe(histogram_features(pa, k), ya, opts.seed);
        rep.sid_acc = probe_accuracy(p, histogram_features(pb, k), yb);
        rep.sid_chance = 1.0 / static_cast<double>(p.class_ids.size());
    }

    // ER analog: frame-level 4-quantile contour class, trained on the train
    // corpus and scored on the speaker-disjoint test corpus.
    {
        auto quartiles = contour_quartiles(train_tokens);
        auto tr = frame_table(train_tokens, k, quartiles, opts.max_probe_frames);
        auto te = frame_table(test_tokens, k, quartiles, opts.max_probe_frames);
        auto p = train_probe(tr.onehot, tr.cls, opts.seed);
        rep.er_proxy_acc = probe_accuracy(p, te.onehot, te.cls);
        rep.er_chance = 0.25;
    }

    rep.prosody_corr =
        prosody_regression(train_tokens, test_tokens, k, &rep.prosody_degenerate);
    return rep;
}

SweepResult sweep_alpha(const std::vector<double>& alphas, const synth::GenConfig& gcfg,
                        const model::ModelConfig& mcfg, const train::TrainConfig& tcfg,
                        std::size_t n_utterances, std::size_t n_seeds,
                        std::size_t parallel) {
    for (std::size_t i = 1; i < alphas.size(); ++i)
        if (alphas[i] <= alphas[i - 1])
            throw ConfigError("sweep: alphas must be sorted ascending and distinct");
    for (double a : alphas)
        if (a < 0 || a > 1) throw ConfigError("sweep: alpha out of [0,1]");
    if (n_seeds < 1) throw ConfigError("sweep: n_seeds must be >= 1");

    synth::Dataset ds = synth::gen_dataset(gcfg, n_utterances, {0.8, 0.1, 0.1});
    synth::Generator gen(gcfg);

    SweepResult result;
    result.cells.resize(alphas.size() * n_seeds);
    for (std::size_t ai = 0; ai < alphas.size(); ++ai)
        for (std::size_t si = 0; si < n_seeds; ++si) {
            auto& cell = result.cells[ai * n_seeds + si];
            cell.alpha = alphas[ai];
            cell.seed = tcfg.seed + si;
        }

    auto run_cell = [&](SweepCell& cell) {
        try {
            train::TrainConfig cfg = tcfg;
            cfg.alpha = cell.alpha;
            cfg.seed = cell.seed;
            auto state = train::init_train_state(ds, mcfg, cfg, 0);
            train::train(state, ds, gen, mcfg, cfg);
            ProbeOptions popts;
            popts.seed = cell.seed;
            cell.report = evaluate(ds, state.params, state.codebook, state.params.asr, popts);
            const auto& last = state.history.back();
            cell.l_asr = last.dev_l_asr;
            cell.l_voc = last.dev_l_voc;
            cell.utilization = last.utilization;
            cell.perplexity = last.perplexity;
            cell.ok = true;
        } catch (const std::exception& e) {
            cell.ok = false;
            cell.error = e.what();
        }
    };

    if (parallel <= 1) {
        for (auto& cell : result.cells) run_cell(cell);
    } else {
        std::vector<std::thread> workers;
        std::size_t next = 0;
        std::mutex mu;
        for (std::size_t w = 0; w < parallel; ++w)
            workers.emplace_back([&] {
                for (;;) {
                    std::size_t i;
                    {
                        std::lock_guard<std::mutex> lock(mu);
                        if (next >= result.cells.size()) return;
                        i = next++;
                    }
                    run_cell(result.cells[i]);
                }
            });
        for (auto& t : workers) t.join();
    }

    // per-alpha mean / stddev over successful cells
    std::vector<double> mean_uer, mean_sid, mean_er, mean_pros, axis;
    for (std::size_t ai = 0; ai < alphas.size(); ++ai) {
        std::vector<const SweepCell*> ok_cells;
        for (std::size_t si = 0; si < n_seeds; ++si) {
            const auto& c = result.cells[ai * n_seeds + si];
            if (c.ok) ok_cells.push_back(&c);
        }
        if (ok_cells.empty()) continue;
        SweepSummaryRow row;
        row.alpha = alphas[ai];
        auto acc = [&](auto sel) {
            double m = 0;
            for (auto* c : ok_cells) m += sel(c->report);
            m /= static_cast<double>(ok_cells.size());
            double s = 0;
            for (auto* c : ok_cells) s += (sel(c->report) - m) * (sel(c->report) - m);
            s = ok_cells.size() > 1
                    ? std::sqrt(s / static_cast<double>(ok_cells.size() - 1))
                    : 0.0;
            return std::pair<double, double>(m, s);
        };
        std::tie(row.mean.content_uer, row.stddev.content_uer) =
            acc([](const ProbeReport& r) { return r.content_uer; });
        std::tie(row.mean.er_proxy_acc, row.stddev.er_proxy_acc) =
            acc([](const ProbeReport& r) { return r.er_proxy_acc; });
        std::tie(row.mean.prosody_corr, row.stddev.prosody_corr) =
            acc([](const ProbeReport& r) { return r.prosody_corr; });
        std::tie(row.mean.sid_acc, row.stddev.sid_acc) =
            acc([](const ProbeReport& r) { return r.sid_acc; });
        row.mean.er_chance = ok_cells.front()->report.er_chance;
        row.mean.sid_chance = ok_cells.front()->report.sid_chance;
        result.summary.push_back(row);

        axis.push_back(alphas[ai]);
        mean_uer.push_back(row.mean.content_uer);
        mean_sid.push_back(row.mean.sid_acc);
        mean_er.push_back(row.mean.er_proxy_acc);
        mean_pros.push_back(row.mean.prosody_corr);
    }
    if (axis.size() >= 2) {
        // fully tied metrics carry no ordering signal; report 0 instead of
        // failing the whole sweep
        auto safe = [&](const std::vector<double>& m) {
            auto [lo, hi] = std::minmax_element(m.begin(), m.end());
            return *lo == *hi ? 0.0 : spearman(m, axis);
        };
        result.spearman_uer_alpha = safe(mean_uer);
        result.spearman_sid_alpha = safe(mean_sid);
        result.spearman_er_alpha = safe(mean_er);
        result.spearman_prosody_alpha = safe(mean_pros);
    }
    return result;
}

}  // namespace phtk::probe
