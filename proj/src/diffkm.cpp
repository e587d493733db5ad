#include "phtk/diffkm.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "phtk/errors.hpp"

namespace phtk::diffkm {

double TauSchedule::at(double progress) const {
    progress = std::clamp(progress, 0.0, 1.0);
    if (decay == TauDecay::Constant) return initial;
    return initial * std::pow(final_ / initial, progress);
}

namespace {

double sqdist_rows(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
    double d = 0;
    for (std::size_t c = 0; c < a.cols(); ++c) {
        double diff = a.at(i, c) - b.at(j, c);
        d += diff * diff;
    }
    return d;
}

std::size_t count_distinct(const Tensor& features) {
    std::set<std::vector<double>> seen;
    for (std::size_t i = 0; i < features.rows(); ++i) {
        std::vector<double> row(features.data.begin() + i * features.cols(),
                                features.data.begin() + (i + 1) * features.cols());
        seen.insert(std::move(row));
    }
    return seen.size();
}

}  // namespace

Codebook init_codebook_lloyd(const Tensor& features, std::size_t k,
                             std::uint64_t seed, std::size_t max_iters,
                             std::vector<double>* objective_trace) {
    const std::size_t n = features.rows(), d = features.cols();
    if (k < 1) throw InitError("lloyd: k must be >= 1");
    if (n < k || count_distinct(features) < k)
        throw InitError("lloyd: need at least " + std::to_string(k) +
                        " distinct points, got " +
                        std::to_string(count_distinct(features)));

    std::mt19937_64 rng(seed);
    Tensor centroids(k, d);

    // k-means++ seeding
    std::vector<double> d2(n, 0.0);
    {
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        std::size_t first = pick(rng);
        for (std::size_t c = 0; c < d; ++c) centroids.at(0, c) = features.at(first, c);
        for (std::size_t i = 0; i < n; ++i) d2[i] = sqdist_rows(features, i, centroids, 0);
        for (std::size_t j = 1; j < k; ++j) {
            double total = 0;
            for (double v : d2) total += v;
            std::size_t chosen = 0;
            if (total > 0) {
                std::uniform_real_distribution<double> u(0.0, total);
                double r = u(rng), acc = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    acc += d2[i];
                    if (acc >= r) {
                        chosen = i;
                        break;
                    }
                }
            } else {
                std::uniform_int_distribution<std::size_t> pick2(0, n - 1);
                chosen = pick2(rng);
            }
            for (std::size_t c = 0; c < d; ++c)
                centroids.at(j, c) = features.at(chosen, c);
            for (std::size_t i = 0; i < n; ++i)
                d2[i] = std::min(d2[i], sqdist_rows(features, i, centroids, j));
        }
    }

    // Lloyd iterations to assignment fixpoint
    std::vector<std::size_t> assign(n, 0), prev(n, k);
    for (std::size_t iter = 0; iter < max_iters; ++iter) {
        double objective = 0;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double bd = sqdist_rows(features, i, centroids, 0);
            for (std::size_t j = 1; j < k; ++j) {
                double dd = sqdist_rows(features, i, centroids, j);
                if (dd < bd) {
                    bd = dd;
                    best = j;
                }
            }
            assign[i] = best;
            objective += bd;
        }
        if (objective_trace) objective_trace->push_back(objective);
        if (assign == prev) break;
        prev = assign;

        std::vector<std::size_t> count(k, 0);
        Tensor next(k, d);
        for (std::size_t i = 0; i < n; ++i) {
            ++count[assign[i]];
            for (std::size_t c = 0; c < d; ++c)
                next.at(assign[i], c) += features.at(i, c);
        }
        for (std::size_t j = 0; j < k; ++j) {
            if (count[j] > 0) {
                for (std::size_t c = 0; c < d; ++c)
                    next.at(j, c) /= static_cast<double>(count[j]);
            } else {
                // re-seed the empty cluster with the point farthest from
                // its current centroid
                std::size_t far = 0;
                double fd = -1;
                for (std::size_t i = 0; i < n; ++i) {
                    double dd = sqdist_rows(features, i, centroids, assign[i]);
                    if (dd > fd) {
                        fd = dd;
                        far = i;
                    }
                }
                for (std::size_t c = 0; c < d; ++c)
                    next.at(j, c) = features.at(far, c);
                prev.assign(n, k);  // force another pass
            }
        }
        centroids = next;
    }

    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = a + 1; b < k; ++b)
            if (sqdist_rows(centroids, a, centroids, b) == 0.0)
                throw InitError("lloyd: duplicate centroids after convergence");

    return Codebook{std::move(centroids)};
}

SoftAssignment soft_assign(const Tensor& z, const Codebook& codebook, double tau) {
    if (tau <= 0) throw ConfigError("soft_assign: tau must be positive");
    if (z.cols() != codebook.dim())
        throw DimensionError("soft_assign: feature width " + z.shape_str() +
                             " vs codebook " + codebook.centroids.shape_str());
    const std::size_t t_len = z.rows(), k = codebook.k();
    SoftAssignment out;
    out.weights = Tensor(t_len, k);
    out.hard_ids.resize(t_len);
    std::vector<double> logits(k);
    for (std::size_t t = 0; t < t_len; ++t) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k; ++j) {
            logits[j] = -sqdist_rows(z, t, codebook.centroids, j) / tau;
            mx = std::max(mx, logits[j]);
        }
        double sum = 0;
        std::size_t best = 0;
        for (std::size_t j = 0; j < k; ++j) {
            out.weights.at(t, j) = std::exp(logits[j] - mx);
            sum += out.weights.at(t, j);
            if (logits[j] > logits[best]) best = j;
        }
        for (std::size_t j = 0; j < k; ++j) out.weights.at(t, j) /= sum;
        out.hard_ids[t] = static_cast<int>(best);
    }
    return out;
}

Tensor quantize_infer(const Tensor& z, const Codebook& codebook,
                      SoftAssignment* assignment_out) {
    SoftAssignment a = soft_assign(z, codebook, 1.0);
    Tensor out(z.rows(), codebook.dim());
    for (std::size_t t = 0; t < z.rows(); ++t)
        for (std::size_t c = 0; c < codebook.dim(); ++c)
            out.at(t, c) = codebook.centroids.at(static_cast<std::size_t>(a.hard_ids[t]), c);
    if (assignment_out) *assignment_out = std::move(a);
    return out;
}

QuantizeNodes quantize_train(Graph& g, int z_node, int codebook_node, double tau,
                             AssignmentMode mode) {
    if (tau <= 0) throw ConfigError("quantize: tau must be positive");
    int dist = g.pairwise_sqdist(z_node, codebook_node);
    int logits = g.scale(dist, -1.0 / tau);
    int weights = g.softmax_rows(logits);
    int out = mode == AssignmentMode::SoftMixture
                  ? g.matmul(weights, codebook_node)
                  : g.st_combine(weights, codebook_node);

    QuantizeNodes q;
    q.output = out;
    q.weights = weights;
    const Tensor& w = g.value(weights);
    q.assignment.weights = w;
    q.assignment.hard_ids.resize(w.rows());
    for (std::size_t t = 0; t < w.rows(); ++t) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < w.cols(); ++j)
            if (w.at(t, j) > w.at(t, best)) best = j;
        q.assignment.hard_ids[t] = static_cast<int>(best);
    }
    return q;
}

CodebookStats codebook_stats(const std::vector<std::vector<int>>& id_sequences,
                             std::size_t k) {
    std::vector<std::size_t> counts(k, 0);
    std::size_t total = 0;
    for (const auto& seq : id_sequences)
        for (int id : seq) {
            if (id < 0 || static_cast<std::size_t>(id) >= k)
                throw DataError("codebook_stats: id " + std::to_string(id) +
                                " out of range [0, " + std::to_string(k) + ")");
            ++counts[id];
            ++total;
        }
    CodebookStats s;
    if (total == 0) return s;
    std::size_t used = 0;
    double entropy = 0;
    for (std::size_t j = 0; j < k; ++j) {
        if (counts[j] == 0) continue;
        ++used;
        double p = static_cast<double>(counts[j]) / static_cast<double>(total);
        entropy -= p * std::log(p);
    }
    s.utilization = static_cast<double>(used) / static_cast<double>(k);
    s.perplexity = std::exp(entropy);
    return s;
}

double bitrate(std::size_t vocab_size, double tokens_per_second) {
    if (vocab_size < 2)
        throw ConfigError("bitrate: vocab_size must be >= 2");
    if (tokens_per_second <= 0)
        throw ConfigError("bitrate: tokens_per_second must be positive");
    return tokens_per_second * std::log2(static_cast<double>(vocab_size));
}

}  // namespace phtk::diffkm
