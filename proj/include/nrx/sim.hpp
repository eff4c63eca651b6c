#pragma once

// Monte-Carlo BER/BLER sweeps and per-receiver timing. Frames are seeded by
// (seed, SNR point, frame index), so single-worker runs are byte-reproducible
// and multi-worker runs split frames into waves with a fixed reduction order.

#include <iomanip>
#include <ostream>
#include <thread>

#include "nrx/checkpoint.hpp"
#include "nrx/classical.hpp"
#include "nrx/config.hpp"
#include "nrx/ldpc.hpp"
#include "nrx/model.hpp"
#include "nrx/phy.hpp"
#include "nrx/timer.hpp"

namespace nrx {

struct SweepRow {
    double ebn0_db = 0.0;
    std::size_t bits_sent = 0;
    std::size_t bit_errors = 0;
    double ber = 0.0;
    std::size_t blocks_sent = 0;
    std::size_t block_errors = 0;
    double bler = 0.0;
    double seconds = 0.0;
};

inline void write_sweep_csv_header(std::ostream& os) {
    os << "ebn0_db,bits_sent,bit_errors,ber,blocks_sent,block_errors,bler,seconds\n";
}

inline void write_sweep_csv_row(std::ostream& os, const SweepRow& r) {
    os << std::setprecision(10) << r.ebn0_db << ',' << r.bits_sent << ',' << r.bit_errors << ','
       << std::setprecision(12) << r.ber << ',' << r.blocks_sent << ',' << r.block_errors << ','
       << std::setprecision(12) << r.bler << ',' << std::setprecision(6) << r.seconds << '\n';
}

enum class ReceiverKind { Classical, PerfectCsi, Neural };

// One receiver under test; neural receivers share read-only weights.
struct Receiver {
    ReceiverKind kind = ReceiverKind::Classical;
    std::string name = "classical";
    const Model<float>* model = nullptr;
};

inline Receiver make_receiver(const std::string& name, const Model<float>* model) {
    if (name == "classical") return {ReceiverKind::Classical, name, nullptr};
    if (name == "perfect-csi") return {ReceiverKind::PerfectCsi, name, nullptr};
    NRX_REQUIRE(model != nullptr, "receiver '" << name << "' needs a checkpoint");
    NRX_REQUIRE(arch_name(model->arch) == name,
                "checkpoint holds a " << arch_name(model->arch) << " model, receiver '" << name
                                      << "' requested");
    return {ReceiverKind::Neural, name, model};
}

// LLR grid for one received frame under the selected receiver.
inline LlrGrid receive_frame(const Receiver& rx, const ComplexGrid& y, const LinkConfig& link,
                             double n0, const ChannelRealization& ch) {
    switch (rx.kind) {
        case ReceiverKind::Classical:
            return classical_receive(y, link, n0);
        case ReceiverKind::PerfectCsi:
            return classical_receive(y, link, n0, true, &ch);
        default: {
            Tape<float> g;
            g.set_recording(false);
            Rng drng(0);
            auto x = preprocess_input<float>(y, n0);
            auto out = model_forward(g, *rx.model, x, false, drng);
            LlrGrid llr(link.n_sym, link.n_sc, link.bits_per_symbol);
            for (std::size_t i = 0; i < out.numel(); ++i)
                llr.v[i] = static_cast<double>(out.value()[i]);
            return llr;
        }
    }
}

struct FrameOutcome {
    std::size_t bits = 0;
    std::size_t bit_errors = 0;
    bool block_error = false;
};

// Simulates one frame end to end: encode (optional), modulate, fade, add
// noise, receive, decode (optional), count.
inline FrameOutcome simulate_frame(const Receiver& rx, const LinkConfig& link,
                                   const LdpcCode* code, double ebn0_db, bool coding,
                                   std::size_t decoder_iters, std::uint64_t frame_seed) {
    Rng rng(frame_seed);
    const double rate = coding ? link.code_rate : 1.0;
    const double n0 = ebn0_db_to_n0(ebn0_db, rate, link.bits_per_symbol);

    std::vector<std::uint8_t> payload;  // bits carried by the frame's data REs
    std::vector<std::uint8_t> msg;
    if (coding) {
        msg.resize(code->k);
        for (auto& b : msg) b = static_cast<std::uint8_t>(rng.bit());
        payload = encode(*code, msg);
    } else {
        payload.resize(link.coded_bits_per_frame());
        for (auto& b : payload) b = static_cast<std::uint8_t>(rng.bit());
    }
    auto tx = build_tx_grid(map_bits_to_qam(payload, link.bits_per_symbol), link);
    auto ch = gen_channel(link, rng, n0);
    auto y = apply_channel(tx, ch, rng);
    auto llr = receive_frame(rx, y, link, n0, ch);

    FrameOutcome out;
    if (coding) {
        std::vector<double> cllr(link.coded_bits_per_frame());
        std::size_t i = 0;
        for (const auto& [k, s] : data_positions(link))
            for (std::size_t b = 0; b < link.bits_per_symbol; ++b)
                cllr[i++] = llr.at(k, s, b);
        auto res = decode_bp(*code, cllr, decoder_iters);
        out.bits = code->k;
        for (std::size_t j = 0; j < code->k; ++j) out.bit_errors += res.bits[j] != msg[j];
    } else {
        std::size_t i = 0;
        for (const auto& [k, s] : data_positions(link))
            for (std::size_t b = 0; b < link.bits_per_symbol; ++b) {
                out.bit_errors += (llr.at(k, s, b) > 0.0) != (payload[i] == 1);
                ++i;
            }
        out.bits = link.coded_bits_per_frame();
    }
    out.block_error = out.bit_errors > 0;
    return out;
}

// One SNR point: frames run until the block-error target or the frame cap,
// whichever comes first. Workers process frames in waves with results
// accumulated in frame order.
inline SweepRow run_point(const Receiver& rx, const LinkConfig& link, const LdpcCode* code,
                          const SweepConfig& cfg, double ebn0_db, std::uint64_t point_seed) {
    Timer timer;
    SweepRow row;
    row.ebn0_db = ebn0_db;
    const std::size_t w_count = std::max<std::size_t>(1, cfg.workers);
    std::size_t frame = 0;
    while (frame < cfg.max_frames && row.block_errors < cfg.target_block_errors) {
        const std::size_t wave = std::min(w_count, cfg.max_frames - frame);
        std::vector<FrameOutcome> outcomes(wave);
        if (wave == 1) {
            outcomes[0] = simulate_frame(rx, link, code, ebn0_db, cfg.coding,
                                         cfg.decoder_iters, derive_seed(point_seed, frame));
        } else {
            std::vector<std::thread> threads;
            for (std::size_t w = 0; w < wave; ++w)
                threads.emplace_back([&, w] {
                    outcomes[w] = simulate_frame(rx, link, code, ebn0_db, cfg.coding,
                                                 cfg.decoder_iters,
                                                 derive_seed(point_seed, frame + w));
                });
            for (auto& t : threads) t.join();
        }
        for (const auto& oc : outcomes) {
            row.bits_sent += oc.bits;
            row.bit_errors += oc.bit_errors;
            row.blocks_sent += 1;
            row.block_errors += oc.block_error;
        }
        frame += wave;
    }
    row.ber = static_cast<double>(row.bit_errors) / static_cast<double>(row.bits_sent);
    row.bler = static_cast<double>(row.block_errors) / static_cast<double>(row.blocks_sent);
    row.seconds = timer.seconds();
    return row;
}

// Full sweep in SNR-list order. The code is built once per link geometry.
inline std::vector<SweepRow> run_sweep(const Receiver& rx, const LinkConfig& link,
                                       const SweepConfig& cfg, std::ostream* csv = nullptr) {
    cfg.validate();
    LdpcCode code;
    if (cfg.coding) code = build_code(link.coded_bits_per_frame(), link.code_rate, link.seed);
    if (csv) write_sweep_csv_header(*csv);
    std::vector<SweepRow> rows;
    for (std::size_t pt = 0; pt < cfg.ebn0_db.size(); ++pt) {
        const std::uint64_t point_seed = derive_seed(derive_seed(link.seed, 0x5EED), pt);
        rows.push_back(run_point(rx, link, cfg.coding ? &code : nullptr, cfg, cfg.ebn0_db[pt],
                                 point_seed));
        if (csv) {
            write_sweep_csv_row(*csv, rows.back());
            csv->flush();
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// timing

struct TimingRow {
    std::string receiver;
    double mean_ms = 0.0;
    double std_ms = 0.0;
};

// Mean/stddev wall time per resource grid over identical frames for every
// receiver; warmup iterations excluded.
inline std::vector<TimingRow> run_timing(const std::vector<Receiver>& receivers,
                                         const LinkConfig& link, const TimingConfig& cfg,
                                         double ebn0_db = 2.0) {
    const double n0 = ebn0_db_to_n0(ebn0_db, link.code_rate, link.bits_per_symbol);
    Rng rng(derive_seed(link.seed, 0x71));
    std::vector<std::uint8_t> bits(link.coded_bits_per_frame());
    for (auto& b : bits) b = static_cast<std::uint8_t>(rng.bit());
    auto tx = build_tx_grid(map_bits_to_qam(bits, link.bits_per_symbol), link);
    auto ch = gen_channel(link, rng, n0);
    auto y = apply_channel(tx, ch, rng);

    std::vector<TimingRow> rows;
    for (const auto& rx : receivers) {
        for (std::size_t i = 0; i < cfg.warmup; ++i) receive_frame(rx, y, link, n0, ch);
        std::vector<double> ms(cfg.reps);
        for (std::size_t i = 0; i < cfg.reps; ++i) {
            Timer t;
            receive_frame(rx, y, link, n0, ch);
            ms[i] = t.seconds() * 1e3;
        }
        TimingRow row;
        row.receiver = rx.name;
        for (double v : ms) row.mean_ms += v;
        row.mean_ms /= static_cast<double>(cfg.reps);
        for (double v : ms) row.std_ms += (v - row.mean_ms) * (v - row.mean_ms);
        row.std_ms = std::sqrt(row.std_ms / static_cast<double>(cfg.reps));
        rows.push_back(row);
    }
    return rows;
}

}  // namespace nrx
