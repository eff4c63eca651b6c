#pragma once

// OFDM link primitives: resource grids, Gray QAM mapping, pilots, the
// frequency-domain fading channel, AWGN, and Eb/N0 bookkeeping.

#include <cmath>
#include <complex>
#include <cstdint>
#include <utility>
#include <vector>

#include "nrx/rng.hpp"
#include "nrx/tensor.hpp"  // NRX_REQUIRE

namespace nrx {

using cplx = std::complex<double>;

struct ChannelProfile {
    enum class Kind { Rayleigh, Awgn };
    Kind kind = Kind::Rayleigh;
    std::size_t n_taps = 8;   // L, exponential power-delay profile
    double tap_decay = 1.0;   // p_l proportional to exp(-decay * l / L)
};

struct LinkConfig {
    std::size_t n_sym = 14;
    std::size_t n_sc = 76;
    std::size_t n_rx = 2;
    std::size_t bits_per_symbol = 2;           // 2=QPSK, 4=16QAM, 6=64QAM
    std::vector<std::size_t> pilot_symbols = {2, 11};
    double code_rate = 0.5;
    ChannelProfile channel;
    std::uint64_t seed = 1;

    void validate() const {
        NRX_REQUIRE(n_sym > 0 && n_sc > 0 && n_rx > 0, "link: dimensions must be positive");
        NRX_REQUIRE(bits_per_symbol == 2 || bits_per_symbol == 4 || bits_per_symbol == 6,
                    "link: bits_per_symbol " << bits_per_symbol << " not in {2,4,6}");
        NRX_REQUIRE(code_rate > 0.0 && code_rate < 1.0,
                    "link: code_rate " << code_rate << " outside (0,1)");
        NRX_REQUIRE(!pilot_symbols.empty(), "link: need at least one pilot symbol");
        for (auto p : pilot_symbols)
            NRX_REQUIRE(p < n_sym, "link: pilot symbol " << p << " outside [0," << n_sym << ")");
        for (std::size_t i = 1; i < pilot_symbols.size(); ++i)
            NRX_REQUIRE(pilot_symbols[i - 1] < pilot_symbols[i],
                        "link: pilot symbols must be strictly increasing");
        NRX_REQUIRE(channel.n_taps >= 1, "link: channel needs at least one tap");
    }

    bool is_pilot_symbol(std::size_t k) const {
        for (auto p : pilot_symbols)
            if (p == k) return true;
        return false;
    }

    std::size_t data_symbol_count() const { return n_sym - pilot_symbols.size(); }
    std::size_t data_re_count() const { return data_symbol_count() * n_sc; }
    std::size_t coded_bits_per_frame() const { return data_re_count() * bits_per_symbol; }
};

// (k, s) positions of data-carrying resource elements, k-major. Every module
// that serializes bits or LLRs uses this order.
inline std::vector<std::pair<std::size_t, std::size_t>> data_positions(const LinkConfig& cfg) {
    std::vector<std::pair<std::size_t, std::size_t>> pos;
    pos.reserve(cfg.data_re_count());
    for (std::size_t k = 0; k < cfg.n_sym; ++k) {
        if (cfg.is_pilot_symbol(k)) continue;
        for (std::size_t s = 0; s < cfg.n_sc; ++s) pos.emplace_back(k, s);
    }
    return pos;
}

// Complex resource grid over (symbols x subcarriers x rx antennas); transmit
// grids use n_rx = 1.
struct ComplexGrid {
    std::size_t n_sym = 0, n_sc = 0, n_rx = 0;
    std::vector<cplx> v;

    ComplexGrid() = default;
    ComplexGrid(std::size_t sym, std::size_t sc, std::size_t rx)
        : n_sym(sym), n_sc(sc), n_rx(rx), v(sym * sc * rx) {}

    std::size_t idx(std::size_t k, std::size_t s, std::size_t a = 0) const {
        return (k * n_sc + s) * n_rx + a;
    }
    cplx& at(std::size_t k, std::size_t s, std::size_t a = 0) { return v[idx(k, s, a)]; }
    const cplx& at(std::size_t k, std::size_t s, std::size_t a = 0) const {
        return v[idx(k, s, a)];
    }
};

// Real LLR grid, log P(b=1)/P(b=0), (symbols x subcarriers x bits).
struct LlrGrid {
    std::size_t n_sym = 0, n_sc = 0, bits = 0;
    std::vector<double> v;

    LlrGrid() = default;
    LlrGrid(std::size_t sym, std::size_t sc, std::size_t b)
        : n_sym(sym), n_sc(sc), bits(b), v(sym * sc * b, 0.0) {}

    double& at(std::size_t k, std::size_t s, std::size_t b) {
        return v[(k * n_sc + s) * bits + b];
    }
    double at(std::size_t k, std::size_t s, std::size_t b) const {
        return v[(k * n_sc + s) * bits + b];
    }
};

// ---------------------------------------------------------------------------
// Gray QAM

namespace detail {

inline std::uint32_t gray_decode(std::uint32_t gr) {
    std::uint32_t v = gr;
    for (std::uint32_t sh = 1; sh < 16; sh <<= 1) v ^= v >> sh;
    return v;
}

// Amplitude of one axis from its Gray-labelled bits, bit 0 mapping to the
// positive extreme. m bits per axis, levels {±1, ±3, ...} before scaling.
inline double gray_pam(std::uint32_t gray_bits, std::size_t m) {
    const std::uint32_t v = gray_decode(gray_bits);
    return static_cast<double>((1u << m) - 1) - 2.0 * static_cast<double>(v);
}

inline double qam_axis_norm(std::size_t m) {
    // E{amp_I^2 + amp_Q^2} = 2 (4^m - 1) / 3 before normalization.
    return std::sqrt(2.0 * (std::pow(4.0, static_cast<double>(m)) - 1.0) / 3.0);
}

}  // namespace detail

// Constellation in bit-label order: index = bits read MSB-first. The first
// half of each bit group drives the in-phase axis.
inline std::vector<cplx> qam_constellation(std::size_t bits_per_symbol) {
    NRX_REQUIRE(bits_per_symbol % 2 == 0 && bits_per_symbol >= 2 && bits_per_symbol <= 6,
                "qam: bits_per_symbol " << bits_per_symbol << " unsupported");
    const std::size_t m = bits_per_symbol / 2;
    const double norm = detail::qam_axis_norm(m);
    std::vector<cplx> pts(1u << bits_per_symbol);
    for (std::uint32_t label = 0; label < pts.size(); ++label) {
        const std::uint32_t ibits = label >> m;
        const std::uint32_t qbits = label & ((1u << m) - 1);
        pts[label] = cplx(detail::gray_pam(ibits, m), detail::gray_pam(qbits, m)) / norm;
    }
    return pts;
}

inline std::vector<cplx> map_bits_to_qam(const std::vector<std::uint8_t>& bits,
                                         std::size_t bits_per_symbol) {
    NRX_REQUIRE(bits.size() % bits_per_symbol == 0,
                "map_bits_to_qam: " << bits.size() << " bits not divisible by "
                                    << bits_per_symbol);
    const auto pts = qam_constellation(bits_per_symbol);
    std::vector<cplx> out(bits.size() / bits_per_symbol);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t label = 0;
        for (std::size_t b = 0; b < bits_per_symbol; ++b)
            label = (label << 1) | (bits[i * bits_per_symbol + b] & 1u);
        out[i] = pts[label];
    }
    return out;
}

// ---------------------------------------------------------------------------
// pilots

// Pilot sequences are part of the link definition, not of any run's random
// stream: a fixed seed keeps them identical across training and evaluation.
inline constexpr std::uint64_t kPilotSeed = 0x70696c6f74736571ULL;

// Unit-modulus QPSK pilot for pilot slot p (in pilot_symbols order), subcarrier s.
inline ComplexGrid pilot_grid(const LinkConfig& cfg) {
    Rng rng(derive_seed(kPilotSeed, cfg.n_sc));
    ComplexGrid xp(cfg.pilot_symbols.size(), cfg.n_sc, 1);
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    for (auto& val : xp.v) {
        const double re = rng.bit() ? inv_sqrt2 : -inv_sqrt2;
        const double im = rng.bit() ? inv_sqrt2 : -inv_sqrt2;
        val = cplx(re, im);
    }
    return xp;
}

inline ComplexGrid build_tx_grid(const std::vector<cplx>& data_symbols, const LinkConfig& cfg) {
    NRX_REQUIRE(data_symbols.size() == cfg.data_re_count(),
                "build_tx_grid: got " << data_symbols.size() << " data symbols, expected "
                                      << cfg.data_re_count());
    ComplexGrid x(cfg.n_sym, cfg.n_sc, 1);
    const ComplexGrid xp = pilot_grid(cfg);
    for (std::size_t p = 0; p < cfg.pilot_symbols.size(); ++p)
        for (std::size_t s = 0; s < cfg.n_sc; ++s)
            x.at(cfg.pilot_symbols[p], s) = xp.at(p, s);
    std::size_t i = 0;
    for (const auto& [k, s] : data_positions(cfg)) x.at(k, s) = data_symbols[i++];
    return x;
}

// ---------------------------------------------------------------------------
// channel

struct ChannelRealization {
    ComplexGrid h;    // gains, (n_sym x n_sc x n_rx)
    double n0 = 0.0;  // total complex noise variance per RE
};

// Block fading over the frame, frequency selective through an L-tap
// exponential-PDP Rayleigh response per antenna; E|H|^2 = 1.
inline ChannelRealization gen_channel(const LinkConfig& cfg, Rng& rng, double n0 = 0.0) {
    NRX_REQUIRE(n0 >= 0.0, "gen_channel: negative noise variance " << n0);
    ChannelRealization ch;
    ch.n0 = n0;
    ch.h = ComplexGrid(cfg.n_sym, cfg.n_sc, cfg.n_rx);
    if (cfg.channel.kind == ChannelProfile::Kind::Awgn) {
        for (auto& v : ch.h.v) v = cplx(1.0, 0.0);
        return ch;
    }
    const std::size_t L = cfg.channel.n_taps;
    std::vector<double> pdp(L);
    double psum = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
        pdp[l] = std::exp(-cfg.channel.tap_decay * static_cast<double>(l) /
                          static_cast<double>(L));
        psum += pdp[l];
    }
    for (auto& p : pdp) p /= psum;

    for (std::size_t a = 0; a < cfg.n_rx; ++a) {
        std::vector<cplx> taps(L);
        for (std::size_t l = 0; l < L; ++l) taps[l] = rng.cnormal(pdp[l]);
        for (std::size_t s = 0; s < cfg.n_sc; ++s) {
            cplx hs = 0.0;
            for (std::size_t l = 0; l < L; ++l) {
                const double ph = -2.0 * M_PI * static_cast<double>(l * s) /
                                  static_cast<double>(cfg.n_sc);
                hs += taps[l] * cplx(std::cos(ph), std::sin(ph));
            }
            for (std::size_t k = 0; k < cfg.n_sym; ++k) ch.h.at(k, s, a) = hs;
        }
    }
    return ch;
}

// Y = H .* X + N per antenna.
inline ComplexGrid apply_channel(const ComplexGrid& x, const ChannelRealization& ch, Rng& rng) {
    NRX_REQUIRE(x.n_sym == ch.h.n_sym && x.n_sc == ch.h.n_sc && x.n_rx == 1,
                "apply_channel: grid " << x.n_sym << "x" << x.n_sc << "x" << x.n_rx
                                       << " does not match channel " << ch.h.n_sym << "x"
                                       << ch.h.n_sc << "x" << ch.h.n_rx);
    NRX_REQUIRE(ch.n0 >= 0.0, "apply_channel: negative noise variance");
    ComplexGrid y(x.n_sym, x.n_sc, ch.h.n_rx);
    for (std::size_t k = 0; k < x.n_sym; ++k)
        for (std::size_t s = 0; s < x.n_sc; ++s)
            for (std::size_t a = 0; a < ch.h.n_rx; ++a) {
                cplx n = ch.n0 > 0.0 ? rng.cnormal(ch.n0) : cplx(0.0, 0.0);
                y.at(k, s, a) = ch.h.at(k, s, a) * x.at(k, s) + n;
            }
    return y;
}

// N0 = Es / (10^(dB/10) * R * bits_per_symbol), Es = 1; pass code_rate = 1
// for uncoded operation. Pilot overhead is excluded from energy accounting.
inline double ebn0_db_to_n0(double ebn0_db, double code_rate, std::size_t bits_per_symbol) {
    NRX_REQUIRE(code_rate > 0.0 && code_rate <= 1.0, "ebn0: bad code rate " << code_rate);
    NRX_REQUIRE(bits_per_symbol > 0, "ebn0: bits_per_symbol must be positive");
    return 1.0 / (std::pow(10.0, ebn0_db / 10.0) * code_rate *
                  static_cast<double>(bits_per_symbol));
}

}  // namespace nrx
