#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "phtk/config.hpp"
#include "phtk/gradcheck.hpp"
#include "phtk/probes.hpp"

namespace fs = std::filesystem;
using namespace phtk;

namespace {

constexpr const char* kToolVersion = "1";

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

LogLevel log_level() {
    const char* env = std::getenv("PHTK_LOG");
    if (!env) return LogLevel::Info;
    std::string v(env);
    if (v == "error") return LogLevel::Error;
    if (v == "debug") return LogLevel::Debug;
    return LogLevel::Info;
}

void log_info(const std::string& msg) {
    if (log_level() >= LogLevel::Info) std::cerr << "[phtk] " << msg << "\n";
}

void log_debug(const std::string& msg) {
    if (log_level() >= LogLevel::Debug) std::cerr << "[phtk:debug] " << msg << "\n";
}

// exit 4: inputs that do not belong together (hash/version mismatch)
struct CompatError : std::runtime_error {
    explicit CompatError(const std::string& m) : std::runtime_error(m) {}
};

std::string hex64(std::uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string stamp(std::uint64_t config_hash) {
    return "# phtk " + std::string(kToolVersion) + " config_hash " + hex64(config_hash) +
           "\n";
}

std::string f6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

config::RunConfig load_run_config(const std::string& path, std::uint64_t seed_override,
                                  bool has_seed) {
    config::RunConfig cfg =
        path.empty() ? config::RunConfig{} : config::load_config(path);
    if (has_seed) {
        cfg.gen.seed = seed_override;
        cfg.train.seed = seed_override;
        cfg.probe.seed = seed_override;
    }
    cfg.validate();
    return cfg;
}

void write_effective_config(const config::RunConfig& cfg, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    config::write_config(cfg, (out_dir / "config.txt").string());
}

struct LoadedDataset {
    synth::Dataset ds;
    std::uint64_t hash = 0;
};

LoadedDataset load_dataset(const fs::path& dir) {
    LoadedDataset out;
    bool first = true;
    for (auto [name, split] : {std::pair{"train.ds", &out.ds.train},
                               std::pair{"dev.ds", &out.ds.dev},
                               std::pair{"test.ds", &out.ds.test}}) {
        std::ifstream f(dir / name);
        if (!f) throw IoError("dataset: cannot open " + (dir / name).string());
        std::uint64_t h = 0;
        *split = synth::read_split(f, &h);
        if (!first && h != out.hash)
            throw CompatError("dataset: split files carry different config hashes");
        out.hash = h;
        first = false;
    }
    return out;
}

int cmd_gen(const config::RunConfig& cfg, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    auto ds = synth::gen_dataset(cfg.gen, cfg.data.n_utterances, cfg.data.split_ratios,
                                 cfg.data.speaker_independent);
    // datasets are stamped with the hash of the sections that determine them,
    // so later training-flag overrides stay compatible
    std::uint64_t h = cfg.data_hash();
    for (auto [name, split] : {std::pair{"train.ds", &ds.train},
                               std::pair{"dev.ds", &ds.dev},
                               std::pair{"test.ds", &ds.test}}) {
        std::ofstream f(out_dir / name, std::ios::trunc);
        if (!f) throw IoError("gen: cannot write " + (out_dir / name).string());
        synth::write_split(f, *split, h);
    }
    write_effective_config(cfg, out_dir);

    std::size_t frames = 0;
    for (const auto* split : {&ds.train, &ds.dev, &ds.test})
        for (const auto& s : *split) frames += s.features.rows();
    std::cout << "utterances " << cfg.data.n_utterances << " (train " << ds.train.size()
              << ", dev " << ds.dev.size() << ", test " << ds.test.size() << ")\n"
              << "speakers " << cfg.gen.s << "\n"
              << "frames " << frames << "\n"
              << "config_hash " << hex64(h) << "\n";
    return 0;
}

void write_metrics_csv(const train::TrainState& st, const fs::path& path) {
    std::ofstream f(path, std::ios::trunc);
    f << stamp(st.config_hash);
    f << "epoch,stage,tau,train_l_asr,train_l_voc,train_l_total,dev_l_asr,dev_l_voc,"
         "dev_l_total,utilization,perplexity\n";
    for (const auto& em : st.history)
        f << em.epoch << ',' << em.stage << ',' << f6(em.tau) << ','
          << f6(em.train_l_asr) << ',' << f6(em.train_l_voc) << ','
          << f6(em.train_l_total) << ',' << f6(em.dev_l_asr) << ',' << f6(em.dev_l_voc)
          << ',' << f6(em.dev_l_total) << ',' << f6(em.utilization) << ','
          << f6(em.perplexity) << "\n";
}

int cmd_train(const config::RunConfig& cfg, const fs::path& data_dir,
              const fs::path& out_dir, const std::string& resume_path) {
    auto loaded = load_dataset(data_dir);
    if (loaded.hash != cfg.data_hash())
        throw CompatError("train: dataset config_hash " + hex64(loaded.hash) +
                          " does not match config " + hex64(cfg.data_hash()));
    synth::Generator gen(cfg.gen);

    train::TrainState st;
    if (resume_path.empty()) {
        st = train::init_train_state(loaded.ds, cfg.model, cfg.train, cfg.hash());
        st.data_hash = cfg.data_hash();
    } else {
        st = train::load_checkpoint(resume_path);
        if (st.config_hash != cfg.hash())
            throw CompatError("train: checkpoint config_hash " + hex64(st.config_hash) +
                              " does not match config " + hex64(cfg.hash()));
        log_info("resuming from epoch " + std::to_string(st.next_epoch));
    }

    log_info("training " + std::to_string(cfg.train.total_epochs()) + " epochs, alpha " +
             std::to_string(cfg.train.alpha));
    train::train(st, loaded.ds, gen, cfg.model, cfg.train);
    for (const auto& em : st.history)
        log_debug("epoch " + std::to_string(em.epoch) + " dev_l_total " +
                  f6(em.dev_l_total));

    fs::create_directories(out_dir);
    train::save_checkpoint(st, (out_dir / "checkpoint.bin").string());
    write_metrics_csv(st, out_dir / "metrics.csv");
    write_effective_config(cfg, out_dir);
    std::cout << "checkpoint " << (out_dir / "checkpoint.bin").string() << "\n"
              << "final_dev_l_total " << f6(st.history.back().dev_l_total) << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const fs::path& data_dir,
             const fs::path& out_dir, std::uint64_t probe_seed) {
    train::TrainState st = train::load_checkpoint(ckpt_path);
    auto loaded = load_dataset(data_dir);
    if (loaded.hash != st.data_hash)
        throw CompatError("eval: dataset config_hash " + hex64(loaded.hash) +
                          " does not match checkpoint " + hex64(st.data_hash));

    probe::ProbeOptions opts;
    opts.seed = probe_seed;
    auto rep = probe::evaluate(loaded.ds, st.params, st.codebook, st.params.asr, opts);

    fs::create_directories(out_dir);
    std::ofstream f(out_dir / "report.csv", std::ios::trunc);
    f << stamp(st.config_hash);
    f << "content_uer,er_proxy_acc,er_chance,prosody_corr,sid_acc,sid_chance\n"
      << f6(rep.content_uer) << ',' << f6(rep.er_proxy_acc) << ',' << f6(rep.er_chance)
      << ',' << f6(rep.prosody_corr) << ',' << f6(rep.sid_acc) << ','
      << f6(rep.sid_chance) << "\n";

    std::cout << "content_uer " << f6(rep.content_uer) << "\n"
              << "er_proxy_acc " << f6(rep.er_proxy_acc) << " (chance "
              << f6(rep.er_chance) << ")\n"
              << "prosody_corr " << f6(rep.prosody_corr) << "\n"
              << "sid_acc " << f6(rep.sid_acc) << " (chance " << f6(rep.sid_chance)
              << ")\n";
    return 0;
}

int cmd_sweep(const config::RunConfig& cfg, const fs::path& out_dir,
              std::size_t parallel) {
    log_info("sweep over " + std::to_string(cfg.sweep.alphas.size()) + " alphas x " +
             std::to_string(cfg.sweep.n_seeds) + " seeds");
    auto result = probe::sweep_alpha(cfg.sweep.alphas, cfg.gen, cfg.model, cfg.train,
                                     cfg.data.n_utterances, cfg.sweep.n_seeds, parallel);
    fs::create_directories(out_dir);
    std::uint64_t h = cfg.hash();

    std::size_t ok = 0;
    {
        std::ofstream f(out_dir / "sweep_cells.csv", std::ios::trunc);
        f << stamp(h);
        f << "alpha,seed,content_uer,er_proxy_acc,prosody_corr,sid_acc,l_asr,l_voc,"
             "utilization,perplexity\n";
        std::ofstream fails(out_dir / "sweep_failures.txt", std::ios::trunc);
        for (const auto& c : result.cells) {
            if (c.ok) {
                ++ok;
                f << f6(c.alpha) << ',' << c.seed << ',' << f6(c.report.content_uer)
                  << ',' << f6(c.report.er_proxy_acc) << ',' << f6(c.report.prosody_corr)
                  << ',' << f6(c.report.sid_acc) << ',' << f6(c.l_asr) << ','
                  << f6(c.l_voc) << ',' << f6(c.utilization) << ',' << f6(c.perplexity)
                  << "\n";
            } else {
                f << f6(c.alpha) << ',' << c.seed << ",nan,nan,nan,nan,nan,nan,nan,nan\n";
                fails << "alpha " << f6(c.alpha) << " seed " << c.seed << ": " << c.error
                      << "\n";
            }
        }
    }
    {
        std::ofstream f(out_dir / "sweep_summary.csv", std::ios::trunc);
        f << stamp(h);
        f << "alpha,content_uer_mean,content_uer_std,er_proxy_acc_mean,"
             "er_proxy_acc_std,prosody_corr_mean,prosody_corr_std,sid_acc_mean,"
             "sid_acc_std\n";
        for (const auto& row : result.summary)
            f << f6(row.alpha) << ',' << f6(row.mean.content_uer) << ','
              << f6(row.stddev.content_uer) << ',' << f6(row.mean.er_proxy_acc) << ','
              << f6(row.stddev.er_proxy_acc) << ',' << f6(row.mean.prosody_corr) << ','
              << f6(row.stddev.prosody_corr) << ',' << f6(row.mean.sid_acc) << ','
              << f6(row.stddev.sid_acc) << "\n";
    }
    {
        std::ofstream f(out_dir / "sweep_spearman.csv", std::ios::trunc);
        f << stamp(h);
        f << "metric,spearman_vs_alpha\n"
          << "content_uer," << f6(result.spearman_uer_alpha) << "\n"
          << "sid_acc," << f6(result.spearman_sid_alpha) << "\n"
          << "er_proxy_acc," << f6(result.spearman_er_alpha) << "\n"
          << "prosody_corr," << f6(result.spearman_prosody_alpha) << "\n";
    }
    {
        // gnuplot data + script mirroring the two ablation panels
        std::ofstream a(out_dir / "fig3a.dat", std::ios::trunc);
        a << "# alpha content_uer_mean content_uer_std sid_acc_mean sid_acc_std "
             "er_proxy_acc_mean er_proxy_acc_std\n";
        std::ofstream b(out_dir / "fig3b.dat", std::ios::trunc);
        b << "# alpha prosody_corr_mean prosody_corr_std\n";
        for (const auto& row : result.summary) {
            a << f6(row.alpha) << ' ' << f6(row.mean.content_uer) << ' '
              << f6(row.stddev.content_uer) << ' ' << f6(row.mean.sid_acc) << ' '
              << f6(row.stddev.sid_acc) << ' ' << f6(row.mean.er_proxy_acc) << ' '
              << f6(row.stddev.er_proxy_acc) << "\n";
            b << f6(row.alpha) << ' ' << f6(row.mean.prosody_corr) << ' '
              << f6(row.stddev.prosody_corr) << "\n";
        }
        std::ofstream g(out_dir / "plot.gp", std::ios::trunc);
        g << "set terminal pngcairo size 900,400\n"
             "set output 'ablation.png'\n"
             "set multiplot layout 1,2\n"
             "set xlabel 'alpha'\n"
             "set key outside\n"
             "plot 'fig3a.dat' using 1:2:3 with yerrorlines title 'content UER', \\\n"
             "     'fig3a.dat' using 1:4:5 with yerrorlines title 'SID acc', \\\n"
             "     'fig3a.dat' using 1:6:7 with yerrorlines title 'ER acc'\n"
             "plot 'fig3b.dat' using 1:2:3 with yerrorlines title 'prosody corr'\n"
             "unset multiplot\n";
    }
    write_effective_config(cfg, out_dir);

    std::cout << "cells " << result.cells.size() << " ok " << ok << "\n"
              << "spearman content_uer " << f6(result.spearman_uer_alpha) << "\n"
              << "spearman sid_acc " << f6(result.spearman_sid_alpha) << "\n"
              << "spearman prosody_corr " << f6(result.spearman_prosody_alpha) << "\n";
    return ok == 0 ? 5 : 0;
}

// --- gradcheck --------------------------------------------------------------

struct OpCheck {
    std::string name;
    grad::GradCheckReport report;
    double tol;
};

OpCheck check_primitive(const std::string& name, const grad::LossBuilder& build,
                        std::vector<grad::Tensor> leaves, double tol = 1e-6) {
    OpCheck c;
    c.name = name;
    c.tol = tol;
    c.report = grad::grad_check(build, std::move(leaves), 1e-5, tol);
    return c;
}

int cmd_gradcheck(const config::RunConfig& cfg) {
    (void)cfg;
    std::mt19937_64 rng(1234);
    auto T = [&](std::size_t r, std::size_t c, double sd = 0.8) {
        return grad::Tensor::randn(r, c, rng, sd);
    };
    auto sq = [](grad::Graph& g, int x) { return g.sum_all(g.square_(x)); };

    std::vector<OpCheck> checks;
    checks.push_back(check_primitive(
        "matmul", [&](grad::Graph& g, const std::vector<int>& v) {
            return sq(g, g.matmul(v[0], v[1]));
        },
        {T(3, 4), T(4, 5)}));
    checks.push_back(check_primitive(
        "add", [&](grad::Graph& g, const std::vector<int>& v) {
            return sq(g, g.add(v[0], v[1]));
        },
        {T(3, 4), T(3, 4)}));
    checks.push_back(check_primitive(
        "sub", [&](grad::Graph& g, const std::vector<int>& v) {
            return sq(g, g.sub(v[0], v[1]));
        },
        {T(3, 4), T(3, 4)}));
    checks.push_back(check_primitive(
        "mul", [&](grad::Graph& g, const std::vector<int>& v) {
            return sq(g, g.mul(v[0], v[1]));
        },
        {T(3, 4), T(3, 4)}));
    checks.push_back(check_primitive(
        "tanh", [&](grad::Graph& g, const std::vector<int>& v) {
            return sq(g, g.tanh_(v[0]));
        },
        {T(3, 4)}));
    {
        // keep relu inputs away from the kink
        grad::Tensor t = T(3, 4);
        for (auto& x : t.data) x += (x >= 0 ? 0.5 : -0.5);
        checks.push_back(check_primitive(
            "relu", [&](grad::Graph& g, const std::vector<int>& v) {
                return sq(g, g.relu_(v[0]));
            },
            {t}));
    }
    checks.push_back(check_primitive(
        "square", [&](grad::Graph& g, const std::vector<int>& v) {
            return g.sum_all(g.square_(v[0]));
        },
        {T(3, 4)}));
    checks.push_back(check_primitive(
        "scale", [&](grad::Graph& g, const std::vector<int>& v) {
            return sq(g, g.scale(v[0], -1.7));
        },
        {T(3, 4)}));
    checks.push_back(check_primitive(
        "add_rowvec", [&](grad::Graph& g, const std::vector<int>& v) {
            return sq(g, g.add_rowvec(v[0], v[1]));
        },
        {T(3, 4), T(1, 4)}));
    checks.push_back(check_primitive(
        "softmax_rows", [&](grad::Graph& g, const std::vector<int>& v) {
            return sq(g, g.softmax_rows(v[0]));
        },
        {T(3, 4)}));
    checks.push_back(check_primitive(
        "log_softmax_rows", [&](grad::Graph& g, const std::vector<int>& v) {
            return sq(g, g.log_softmax_rows(v[0]));
        },
        {T(3, 4)}));
    checks.push_back(check_primitive(
        "logsumexp_rows", [&](grad::Graph& g, const std::vector<int>& v) {
            return sq(g, g.logsumexp_rows(v[0]));
        },
        {T(3, 4)}));
    checks.push_back(check_primitive(
        "sum_all", [&](grad::Graph& g, const std::vector<int>& v) {
            return g.sum_all(v[0]);
        },
        {T(3, 4)}));
    checks.push_back(check_primitive(
        "mean_all", [&](grad::Graph& g, const std::vector<int>& v) {
            return g.mean_all(g.square_(v[0]));
        },
        {T(3, 4)}));
    checks.push_back(check_primitive(
        "pairwise_sqdist", [&](grad::Graph& g, const std::vector<int>& v) {
            return g.mean_all(g.pairwise_sqdist(v[0], v[1]));
        },
        {T(4, 3), T(5, 3)}));
    checks.push_back(check_primitive(
        "concat_cols", [&](grad::Graph& g, const std::vector<int>& v) {
            return sq(g, g.concat_cols(v[0], v[1]));
        },
        {T(3, 2), T(3, 4)}));
    checks.push_back(check_primitive(
        "repeat_rows", [&](grad::Graph& g, const std::vector<int>& v) {
            return sq(g, g.repeat_rows(v[0], 4));
        },
        {T(1, 5)}));
    checks.push_back(check_primitive(
        "ctc", [&](grad::Graph& g, const std::vector<int>& v) {
            return g.ctc(g.log_softmax_rows(v[0]), {0, 1});
        },
        {T(5, 3)}));
    checks.push_back(check_primitive(
        "quantize(soft-mixture)", [&](grad::Graph& g, const std::vector<int>& v) {
            auto q = diffkm::quantize_train(g, v[0], v[1], 0.7,
                                            diffkm::AssignmentMode::SoftMixture);
            return sq(g, q.output);
        },
        {T(4, 3), T(5, 3)}, 1e-5));

    // full Eq.-(2) losses on a tiny model
    synth::GenConfig gcfg;
    gcfg.v_c = 4;
    gcfg.s = 3;
    gcfg.d = 6;
    gcfg.d_s = 3;
    gcfg.len_min = 2;
    gcfg.len_max = 3;
    gcfg.dur_min = 2;
    gcfg.dur_max = 3;
    gcfg.noise_sigma = 0.05;
    gcfg.seed = 5;
    model::ModelConfig mcfg;
    mcfg.d = 6;
    mcfg.h = 8;
    mcfg.d_z = 4;
    mcfg.v_c = 4;
    mcfg.d_s = 3;
    mcfg.k = 5;

    synth::Generator gen(gcfg);
    auto seq = gen.gen_utterance(1, 1);
    const auto& spk = gen.oracle_speaker_embedding(1);
    auto params = model::ModelParams::init(mcfg, 31);
    diffkm::Codebook cb{grad::Tensor::randn(mcfg.k, mcfg.d_z, rng, 0.5)};

    std::vector<grad::Tensor> leaves;
    for (const auto& [name, t] : params.named_tensors()) leaves.push_back(*t);
    leaves.push_back(cb.centroids);
    auto rebind = [&](grad::Graph& g, const std::vector<int>& v) {
        model::GraphBinding b;
        std::size_t i = 0;
        for (const auto& [name, t] : params.named_tensors())
            b.leaves.emplace_back(name, v[i++]);
        b.codebook = v[i];
        b.leaves.emplace_back("codebook", b.codebook);
        return b;
    };
    for (double alpha : {0.0, 0.1, 1.0}) {
        checks.push_back(check_primitive(
            "total_loss(alpha=" + f6(alpha).substr(0, 3) + ",soft-mixture)",
            [&, alpha](grad::Graph& g, const std::vector<int>& v) {
                auto b = rebind(g, v);
                return model::total_loss(g, b, seq, spk, alpha, 0.7,
                                         diffkm::AssignmentMode::SoftMixture, false)
                    .loss_node;
            },
            leaves, 1e-4));
    }

    bool all_pass = true;
    for (const auto& c : checks) {
        bool pass = c.report.passed && c.report.failure.empty();
        all_pass = all_pass && pass;
        std::printf("%-36s max_rel_err %.3e tol %.0e %s\n", c.name.c_str(),
                    c.report.worst(), c.tol, pass ? "PASS" : "FAIL");
        if (!c.report.failure.empty())
            std::printf("  failure: %s\n", c.report.failure.c_str());
    }

    // straight-through: the surrogate backward must equal the soft-mixture
    // matmul backward (the hard forward is not finite-differencable)
    {
        grad::Tensor wl = T(6, 5), m = T(5, 4);
        grad::Graph ga, gb;
        int wla = ga.leaf(wl, true);
        int ma = ga.leaf(m, true);
        ga.backward(ga.sum_all(ga.st_combine(ga.softmax_rows(wla), ma)));
        int wlb = gb.leaf(wl, true);
        int mb = gb.leaf(m, true);
        gb.backward(gb.sum_all(gb.matmul(gb.softmax_rows(wlb), mb)));
        double worst = 0;
        for (std::size_t i = 0; i < ga.gradient(wla).size(); ++i)
            worst = std::max(worst, std::fabs(ga.gradient(wla).data[i] -
                                              gb.gradient(wlb).data[i]));
        for (std::size_t i = 0; i < ga.gradient(ma).size(); ++i)
            worst = std::max(worst, std::fabs(ga.gradient(ma).data[i] -
                                              gb.gradient(mb).data[i]));
        bool pass = worst <= 1e-10;
        all_pass = all_pass && pass;
        std::printf("%-36s max_abs_diff %.3e tol 1e-10 %s\n",
                    "st_combine(surrogate vs matmul)", worst, pass ? "PASS" : "FAIL");
    }
    // full losses in straight-through mode, checked against the soft-mixture
    // analytic gradient at the quantizer input (shared-parameter paths)
    for (double alpha : {0.0, 0.1, 1.0}) {
        grad::Graph g;
        auto b = model::bind_params(g, params, cb, {});
        auto r = model::total_loss(g, b, seq, spk, alpha, 0.7,
                                   diffkm::AssignmentMode::StraightThrough, false);
        g.backward(r.loss_node);
        const auto& gq = g.gradient(r.quantized);
        const auto& gw = g.gradient(r.quantized - 1);  // assignment weights node
        double worst = 0;
        for (std::size_t t = 0; t < gw.rows(); ++t)
            for (std::size_t k = 0; k < gw.cols(); ++k) {
                double expect = 0;
                for (std::size_t c = 0; c < cb.centroids.cols(); ++c)
                    expect += gq.at(t, c) * cb.centroids.at(k, c);
                worst = std::max(worst, std::fabs(gw.at(t, k) - expect));
            }
        bool pass = worst <= 1e-10;
        all_pass = all_pass && pass;
        std::printf("total_loss(alpha=%.1f,straight-through) surrogate_diff %.3e "
                    "tol 1e-10 %s\n",
                    alpha, worst, pass ? "PASS" : "FAIL");
    }

    return all_pass ? 0 : 1;
}

int cmd_bitrate(std::size_t vocab, double rate) {
    std::printf("%.1f\n", diffkm::bitrate(vocab, rate));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"phonological tokenizer toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", data_dir, ckpt_path, resume_path;
    std::uint64_t seed = 0;
    bool has_seed = false;
    double alpha = -1;
    std::size_t parallel = 1;
    std::size_t vocab = 0;
    double rate = 0;

    auto add_common = [&](CLI::App* sub, bool with_out = true) {
        sub->add_option("--config", config_path, "run config file");
        if (with_out) sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed, "override all seeds")
            ->each([&](const std::string&) { has_seed = true; });
        return sub;
    };

    auto* gen_cmd = add_common(app.add_subcommand("gen", "generate a dataset"));
    auto* train_cmd = add_common(app.add_subcommand("train", "two-stage training run"));
    train_cmd->add_option("--data", data_dir, "dataset directory")->required();
    train_cmd->add_option("--alpha", alpha, "override train.alpha");
    train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");
    auto* eval_cmd = add_common(app.add_subcommand("eval", "probe a checkpoint"));
    eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    eval_cmd->add_option("--data", data_dir, "dataset directory")->required();
    auto* sweep_cmd = add_common(app.add_subcommand("sweep", "alpha ablation sweep"));
    sweep_cmd->add_option("--parallel", parallel, "parallel sweep workers");
    auto* gc_cmd = add_common(app.add_subcommand("gradcheck", "finite-difference audit"),
                              false);
    auto* br_cmd = app.add_subcommand("bitrate", "token bitrate in bits/s");
    br_cmd->add_option("vocab", vocab, "vocabulary size")->required();
    br_cmd->add_option("rate", rate, "tokens per second")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (br_cmd->parsed()) return cmd_bitrate(vocab, rate);
        config::RunConfig cfg = load_run_config(config_path, seed, has_seed);
        if (alpha >= 0) cfg.train.alpha = alpha;
        cfg.validate();
        if (gen_cmd->parsed()) return cmd_gen(cfg, out_dir);
        if (train_cmd->parsed()) return cmd_train(cfg, data_dir, out_dir, resume_path);
        if (eval_cmd->parsed())
            return cmd_eval(ckpt_path, data_dir, out_dir, cfg.probe.seed);
        if (sweep_cmd->parsed()) return cmd_sweep(cfg, out_dir, parallel);
        if (gc_cmd->parsed()) return cmd_gradcheck(cfg);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const TrainingError& e) {
        std::cerr << "training error: " << e.what() << "\n";
        return 3;
    } catch (const CompatError& e) {
        std::cerr << "compatibility error: " << e.what() << "\n";
        return 4;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
