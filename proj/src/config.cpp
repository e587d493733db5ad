#include "phtk/config.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "phtk/errors.hpp"

namespace phtk::config {

std::uint64_t fnv1a_hash(const std::string& bytes) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

using KeyMap = std::map<std::string, std::map<std::string, std::string>>;

KeyMap to_keys(const RunConfig& c) {
    KeyMap m;
    auto& g = m["gen"];
    g["v_c"] = std::to_string(c.gen.v_c);
    g["s"] = std::to_string(c.gen.s);
    g["d"] = std::to_string(c.gen.d);
    g["d_s"] = std::to_string(c.gen.d_s);
    g["len_min"] = std::to_string(c.gen.len_min);
    g["len_max"] = std::to_string(c.gen.len_max);
    g["dur_min"] = std::to_string(c.gen.dur_min);
    g["dur_max"] = std::to_string(c.gen.dur_max);
    g["prosody_smoothness"] = fmt(c.gen.prosody_smoothness);
    g["prosody_window"] = std::to_string(c.gen.prosody_window);
    g["noise_sigma"] = fmt(c.gen.noise_sigma);
    g["seed"] = std::to_string(c.gen.seed);

    auto& mo = m["model"];
    mo["h"] = std::to_string(c.model.h);
    mo["d_z"] = std::to_string(c.model.d_z);
    mo["k"] = std::to_string(c.model.k);

    auto& t = m["train"];
    t["alpha"] = fmt(c.train.alpha);
    t["stage1_epochs"] = std::to_string(c.train.stage1_epochs);
    t["stage2_epochs"] = std::to_string(c.train.stage2_epochs);
    t["stage1_lr"] = fmt(c.train.stage1_lr);
    t["stage2_lr"] = fmt(c.train.stage2_lr);
    t["batch_size"] = std::to_string(c.train.batch_size);
    t["seed"] = std::to_string(c.train.seed);
    t["beta1"] = fmt(c.train.adam.beta1);
    t["beta2"] = fmt(c.train.adam.beta2);
    t["eps"] = fmt(c.train.adam.eps);
    t["tau_initial"] = fmt(c.train.tau_schedule.initial);
    t["tau_final"] = fmt(c.train.tau_schedule.final_);
    t["tau_decay"] =
        c.train.tau_schedule.decay == diffkm::TauDecay::Constant ? "constant" : "exponential";
    t["mode"] = c.train.mode == diffkm::AssignmentMode::SoftMixture ? "soft-mixture"
                                                                    : "straight-through";
    t["clip_norm"] = fmt(c.train.clip_norm);

    auto& p = m["probe"];
    p["max_probe_frames"] = std::to_string(c.probe.max_probe_frames);
    p["seed"] = std::to_string(c.probe.seed);

    auto& d = m["data"];
    d["n_utterances"] = std::to_string(c.data.n_utterances);
    d["ratio_train"] = fmt(c.data.split_ratios[0]);
    d["ratio_dev"] = fmt(c.data.split_ratios[1]);
    d["ratio_test"] = fmt(c.data.split_ratios[2]);
    d["speaker_independent"] = c.data.speaker_independent ? "1" : "0";

    auto& sw = m["sweep"];
    std::string alphas;
    for (std::size_t i = 0; i < c.sweep.alphas.size(); ++i)
        alphas += (i ? "," : "") + fmt(c.sweep.alphas[i]);
    sw["alphas"] = alphas;
    sw["n_seeds"] = std::to_string(c.sweep.n_seeds);
    return m;
}

template <typename T>
T parse_num(const std::string& section, const std::string& key, const std::string& v) {
    std::istringstream is(v);
    T out;
    is >> out;
    if (!is || !is.eof())
        throw ConfigError("config: bad value for " + section + "." + key + ": '" + v + "'");
    return out;
}

void apply_key(RunConfig& c, const std::string& section, const std::string& key,
               const std::string& value, int line_no) {
    auto bad_key = [&] {
        throw ConfigError("config: unknown key '" + key + "' in section [" + section +
                          "] at line " + std::to_string(line_no));
    };
    if (section == "gen") {
        if (key == "v_c") c.gen.v_c = parse_num<std::size_t>(section, key, value);
        else if (key == "s") c.gen.s = parse_num<std::size_t>(section, key, value);
        else if (key == "d") c.gen.d = parse_num<std::size_t>(section, key, value);
        else if (key == "d_s") c.gen.d_s = parse_num<std::size_t>(section, key, value);
        else if (key == "len_min") c.gen.len_min = parse_num<std::size_t>(section, key, value);
        else if (key == "len_max") c.gen.len_max = parse_num<std::size_t>(section, key, value);
        else if (key == "dur_min") c.gen.dur_min = parse_num<std::size_t>(section, key, value);
        else if (key == "dur_max") c.gen.dur_max = parse_num<std::size_t>(section, key, value);
        else if (key == "prosody_smoothness") c.gen.prosody_smoothness = parse_num<double>(section, key, value);
        else if (key == "prosody_window") c.gen.prosody_window = parse_num<std::size_t>(section, key, value);
        else if (key == "noise_sigma") c.gen.noise_sigma = parse_num<double>(section, key, value);
        else if (key == "seed") c.gen.seed = parse_num<std::uint64_t>(section, key, value);
        else bad_key();
    } else if (section == "model") {
        if (key == "h") c.model.h = parse_num<std::size_t>(section, key, value);
        else if (key == "d_z") c.model.d_z = parse_num<std::size_t>(section, key, value);
        else if (key == "k") c.model.k = parse_num<std::size_t>(section, key, value);
        else bad_key();
    } else if (section == "train") {
        if (key == "alpha") c.train.alpha = parse_num<double>(section, key, value);
        else if (key == "stage1_epochs") c.train.stage1_epochs = parse_num<std::size_t>(section, key, value);
        else if (key == "stage2_epochs") c.train.stage2_epochs = parse_num<std::size_t>(section, key, value);
        else if (key == "stage1_lr") c.train.stage1_lr = parse_num<double>(section, key, value);
        else if (key == "stage2_lr") c.train.stage2_lr = parse_num<double>(section, key, value);
        else if (key == "batch_size") c.train.batch_size = parse_num<std::size_t>(section, key, value);
        else if (key == "seed") c.train.seed = parse_num<std::uint64_t>(section, key, value);
        else if (key == "beta1") c.train.adam.beta1 = parse_num<double>(section, key, value);
        else if (key == "beta2") c.train.adam.beta2 = parse_num<double>(section, key, value);
        else if (key == "eps") c.train.adam.eps = parse_num<double>(section, key, value);
        else if (key == "tau_initial") c.train.tau_schedule.initial = parse_num<double>(section, key, value);
        else if (key == "tau_final") c.train.tau_schedule.final_ = parse_num<double>(section, key, value);
        else if (key == "tau_decay") {
            if (value == "constant") c.train.tau_schedule.decay = diffkm::TauDecay::Constant;
            else if (value == "exponential") c.train.tau_schedule.decay = diffkm::TauDecay::Exponential;
            else throw ConfigError("config: tau_decay must be constant or exponential (line " + std::to_string(line_no) + ")");
        } else if (key == "mode") {
            if (value == "soft-mixture") c.train.mode = diffkm::AssignmentMode::SoftMixture;
            else if (value == "straight-through") c.train.mode = diffkm::AssignmentMode::StraightThrough;
            else throw ConfigError("config: mode must be soft-mixture or straight-through (line " + std::to_string(line_no) + ")");
        } else if (key == "clip_norm") c.train.clip_norm = parse_num<double>(section, key, value);
        else bad_key();
    } else if (section == "probe") {
        if (key == "max_probe_frames") c.probe.max_probe_frames = parse_num<std::size_t>(section, key, value);
        else if (key == "seed") c.probe.seed = parse_num<std::uint64_t>(section, key, value);
        else bad_key();
    } else if (section == "data") {
        if (key == "n_utterances") c.data.n_utterances = parse_num<std::size_t>(section, key, value);
        else if (key == "ratio_train") c.data.split_ratios[0] = parse_num<double>(section, key, value);
        else if (key == "ratio_dev") c.data.split_ratios[1] = parse_num<double>(section, key, value);
        else if (key == "ratio_test") c.data.split_ratios[2] = parse_num<double>(section, key, value);
        else if (key == "speaker_independent") c.data.speaker_independent = parse_num<int>(section, key, value) != 0;
        else bad_key();
    } else if (section == "sweep") {
        if (key == "alphas") {
            c.sweep.alphas.clear();
            std::istringstream is(value);
            std::string tok;
            while (std::getline(is, tok, ','))
                c.sweep.alphas.push_back(parse_num<double>(section, key, tok));
        } else if (key == "n_seeds") c.sweep.n_seeds = parse_num<std::size_t>(section, key, value);
        else bad_key();
    } else {
        throw ConfigError("config: unknown section [" + section + "] at line " +
                          std::to_string(line_no));
    }
}

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::validate() const {
    gen.validate();
    if (train.alpha < 0 || train.alpha > 1)
        throw ConfigError("config: train.alpha must be in [0,1]");
    if (train.stage1_epochs < 1 || train.stage2_epochs < 1)
        throw ConfigError("config: epochs must be positive");
    if (train.stage1_lr <= 0 || train.stage2_lr <= 0)
        throw ConfigError("config: learning rates must be positive");
    if (train.batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (train.tau_schedule.initial <= 0 || train.tau_schedule.final_ <= 0)
        throw ConfigError("config: tau must stay positive");
    if (train.tau_schedule.final_ > train.tau_schedule.initial)
        throw ConfigError("config: tau_final must be <= tau_initial");
    if (model.k < 1) throw ConfigError("config: model.k must be >= 1");
    double rsum = data.split_ratios[0] + data.split_ratios[1] + data.split_ratios[2];
    if (std::fabs(rsum - 1.0) > 1e-9)
        throw ConfigError("config: split ratios must sum to 1");
}

std::string RunConfig::canonical() const {
    std::ostringstream os;
    os << "schema = 1\n";
    for (const auto& [section, keys] : to_keys(*this)) {
        os << "[" << section << "]\n";
        for (const auto& [k, v] : keys) os << k << " = " << v << "\n";
    }
    return os.str();
}

std::uint64_t RunConfig::hash() const { return fnv1a_hash(canonical()); }

std::uint64_t RunConfig::data_hash() const {
    std::ostringstream os;
    os << "schema = 1\n";
    for (const auto& [section, keys] : to_keys(*this)) {
        if (section != "data" && section != "gen") continue;
        os << "[" << section << "]\n";
        for (const auto& [k, v] : keys) os << k << " = " << v << "\n";
    }
    return fnv1a_hash(os.str());
}

RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line, section;
    int line_no = 0;
    bool saw_schema = false;
    while (std::getline(is, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        if (line.front() == '[' && line.back() == ']') {
            section = line.substr(1, line.size() - 2);
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: expected key = value at line " +
                              std::to_string(line_no));
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (section.empty()) {
            if (key == "schema") {
                if (value != "1")
                    throw ConfigError("config: unsupported schema version " + value);
                saw_schema = true;
                continue;
            }
            throw ConfigError("config: key '" + key + "' before any section at line " +
                              std::to_string(line_no));
        }
        apply_key(cfg, section, key, value, line_no);
    }
    if (!saw_schema) throw ConfigError("config: missing required key 'schema'");
    // the model mirrors the generator's fixed dimensions
    cfg.model.d = cfg.gen.d;
    cfg.model.v_c = cfg.gen.v_c;
    cfg.model.d_s = cfg.gen.d_s;
    cfg.train.k = cfg.model.k;
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse_config(buf.str());
}

void write_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("config: cannot write " + path);
    f << cfg.canonical();
}

}  // namespace phtk::config
