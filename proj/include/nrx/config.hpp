#pragma once

// Line-oriented key=value configuration. '#' starts a comment; unknown keys,
// malformed values, and out-of-range settings are rejected with the key
// named. An empty file yields the default uplink described in the README.

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nrx/model.hpp"
#include "nrx/phy.hpp"
#include "nrx/trainer.hpp"

namespace nrx {

struct SweepConfig {
    std::vector<double> ebn0_db = {-2.0, 0.0, 2.0, 4.0, 6.0};
    std::size_t max_frames = 3200;
    std::size_t target_block_errors = 1000;
    std::string receiver = "classical";  // classical | perfect-csi | dat | rdnla | transformer
    std::string checkpoint;              // required for neural receivers
    std::string output = "sweep.csv";
    std::size_t workers = 1;
    bool coding = true;
    std::size_t decoder_iters = 20;

    void validate() const {
        NRX_REQUIRE(!ebn0_db.empty(), "sweep: ebn0_db list is empty");
        NRX_REQUIRE(target_block_errors >= 1, "sweep: target_block_errors must be >= 1");
        NRX_REQUIRE(max_frames >= 1, "sweep: max_frames must be >= 1");
        NRX_REQUIRE(workers >= 1, "sweep: workers must be >= 1");
        NRX_REQUIRE(receiver == "classical" || receiver == "perfect-csi" || receiver == "dat" ||
                        receiver == "rdnla" || receiver == "transformer",
                    "sweep: unknown receiver '" << receiver << "'");
    }
};

struct TimingConfig {
    std::size_t warmup = 10;
    std::size_t reps = 100;
};

struct ModelConfig {
    std::string arch = "dat";
    DatConfig dat;
    RdnlaConfig rdnla;
};

struct AppConfig {
    LinkConfig link;
    ModelConfig model;
    TrainConfig train;
    SweepConfig sweep;
    TimingConfig timing;
    std::size_t eval_frames = 256;
    std::string metrics = "train_metrics.csv";

    void validate() const {
        link.validate();
        if (model.arch != "dat" && model.arch != "rdnla" && model.arch != "transformer")
            throw std::invalid_argument("arch: unknown architecture '" + model.arch + "'");
        model.dat.validate();
        model.rdnla.validate();
        train.validate();
        sweep.validate();
    }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::size_t to_size(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long x = std::stoll(v, &pos);
        NRX_REQUIRE(pos == v.size() && x >= 0, "");
        return static_cast<std::size_t>(x);
    } catch (...) {
        throw std::invalid_argument(key + ": expected a non-negative integer, got '" + v + "'");
    }
}

inline double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        NRX_REQUIRE(pos == v.size(), "");
        return x;
    } catch (...) {
        throw std::invalid_argument(key + ": expected a number, got '" + v + "'");
    }
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    throw std::invalid_argument(key + ": expected on/off, got '" + v + "'");
}

template <class T>
std::vector<T> to_list(const std::string& key, const std::string& v,
                       T (*conv)(const std::string&, const std::string&)) {
    std::vector<T> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(conv(key, item));
    }
    if (out.empty()) throw std::invalid_argument(key + ": empty list");
    return out;
}

}  // namespace config_detail

// Applies one key=value setting; throws naming the key on any problem.
inline void apply_setting(AppConfig& cfg, const std::string& key, const std::string& value) {
    using namespace config_detail;
    // link
    if (key == "n_sym") cfg.link.n_sym = to_size(key, value);
    else if (key == "n_sc") cfg.link.n_sc = to_size(key, value);
    else if (key == "n_rx") cfg.link.n_rx = to_size(key, value);
    else if (key == "bits_per_symbol") cfg.link.bits_per_symbol = to_size(key, value);
    else if (key == "pilot_symbols") cfg.link.pilot_symbols = to_list<std::size_t>(key, value, to_size);
    else if (key == "code_rate") cfg.link.code_rate = to_double(key, value);
    else if (key == "channel") {
        if (value == "rayleigh") cfg.link.channel.kind = ChannelProfile::Kind::Rayleigh;
        else if (value == "awgn") cfg.link.channel.kind = ChannelProfile::Kind::Awgn;
        else throw std::invalid_argument("channel: expected rayleigh or awgn, got '" + value + "'");
    }
    else if (key == "channel_taps") cfg.link.channel.n_taps = to_size(key, value);
    else if (key == "channel_decay") cfg.link.channel.tap_decay = to_double(key, value);
    else if (key == "seed") {
        cfg.link.seed = to_size(key, value);
        cfg.train.seed = cfg.link.seed;
    }
    // model
    else if (key == "arch") cfg.model.arch = value;
    else if (key == "dat_width") cfg.model.dat.width = to_size(key, value);
    else if (key == "dat_heads") cfg.model.dat.heads = to_size(key, value);
    else if (key == "dat_blocks") cfg.model.dat.blocks = to_size(key, value);
    else if (key == "dat_ffn") cfg.model.dat.ffn_hidden = to_size(key, value);
    else if (key == "dat_dropout") cfg.model.dat.dropout = to_double(key, value);
    else if (key == "rdnla_channels") cfg.model.rdnla.channels = to_size(key, value);
    else if (key == "rdnla_prb_stages") cfg.model.rdnla.prb_stages = to_size(key, value);
    else if (key == "rdnla_dropout") cfg.model.rdnla.dropout = to_double(key, value);
    // train
    else if (key == "batch") cfg.train.batch = to_size(key, value);
    else if (key == "iters") cfg.train.iters = to_size(key, value);
    else if (key == "train_snr_lo") cfg.train.snr_lo_db = to_double(key, value);
    else if (key == "train_snr_hi") cfg.train.snr_hi_db = to_double(key, value);
    else if (key == "lr") cfg.train.lr = to_double(key, value);
    else if (key == "adam_beta1") cfg.train.beta1 = to_double(key, value);
    else if (key == "adam_beta2") cfg.train.beta2 = to_double(key, value);
    else if (key == "adam_eps") cfg.train.adam_eps = to_double(key, value);
    else if (key == "checkpoint_every") cfg.train.checkpoint_every = to_size(key, value);
    else if (key == "checkpoint_out") cfg.train.checkpoint_path = value;
    else if (key == "metrics") cfg.metrics = value;
    else if (key == "train_workers") cfg.train.workers = to_size(key, value);
    // sweep
    else if (key == "ebn0_db") cfg.sweep.ebn0_db = to_list<double>(key, value, to_double);
    else if (key == "max_frames") cfg.sweep.max_frames = to_size(key, value);
    else if (key == "target_block_errors") cfg.sweep.target_block_errors = to_size(key, value);
    else if (key == "receiver") cfg.sweep.receiver = value;
    else if (key == "checkpoint") cfg.sweep.checkpoint = value;
    else if (key == "output") cfg.sweep.output = value;
    else if (key == "workers") cfg.sweep.workers = to_size(key, value);
    else if (key == "coding") cfg.sweep.coding = to_bool(key, value);
    else if (key == "decoder_iters") cfg.sweep.decoder_iters = to_size(key, value);
    // timing / evaluation
    else if (key == "timing_warmup") cfg.timing.warmup = to_size(key, value);
    else if (key == "timing_reps") cfg.timing.reps = to_size(key, value);
    else if (key == "eval_frames") cfg.eval_frames = to_size(key, value);
    else
        throw std::invalid_argument("unknown configuration key '" + key + "'");
}

// Defaults when path is empty; otherwise reads the file. Validation runs in
// both cases.
inline AppConfig parse_config(const std::string& path) {
    AppConfig cfg;
    if (!path.empty()) {
        std::ifstream is(path);
        NRX_REQUIRE(is.good(), "config: cannot open '" << path << "'");
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = config_detail::trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            NRX_REQUIRE(eq != std::string::npos,
                        "config: line " << lineno << " is not key=value: '" << line << "'");
            const std::string key = config_detail::trim(line.substr(0, eq));
            const std::string value = config_detail::trim(line.substr(eq + 1));
            apply_setting(cfg, key, value);
        }
    }
    cfg.validate();
    return cfg;
}

}  // namespace nrx
