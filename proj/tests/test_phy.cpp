#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>

#include "nrx/phy.hpp"

using namespace nrx;
using Catch::Approx;

namespace {
std::size_t hamming(std::uint32_t a, std::uint32_t b) {
    return static_cast<std::size_t>(__builtin_popcount(a ^ b));
}
}  // namespace

TEST_CASE("QPSK Gray mapping convention") {
    const double r = 1.0 / std::sqrt(2.0);
    auto s00 = map_bits_to_qam({0, 0}, 2);
    REQUIRE(s00[0].real() == Approx(r));
    REQUIRE(s00[0].imag() == Approx(r));
    auto s11 = map_bits_to_qam({1, 1}, 2);
    REQUIRE(s11[0].real() == Approx(-r));
    REQUIRE(s11[0].imag() == Approx(-r));
    // first bit drives the in-phase axis
    auto s10 = map_bits_to_qam({1, 0}, 2);
    REQUIRE(s10[0].real() == Approx(-r));
    REQUIRE(s10[0].imag() == Approx(r));
    REQUIRE_THROWS_AS(map_bits_to_qam({0, 1, 0}, 2), std::invalid_argument);
}

TEST_CASE("constellations have unit mean energy (exhaustive)") {
    for (std::size_t bps : {2u, 4u, 6u}) {
        auto pts = qam_constellation(bps);
        double e = 0.0;
        for (auto p : pts) e += std::norm(p);
        e /= static_cast<double>(pts.size());
        REQUIRE(e == Approx(1.0).margin(1e-9));
    }
}

TEST_CASE("Gray property: lattice neighbours differ in exactly one bit") {
    for (std::size_t bps : {2u, 4u}) {
        auto pts = qam_constellation(bps);
        const std::size_t m = bps / 2;
        const double step = 2.0 / nrx::detail::qam_axis_norm(m);
        for (std::uint32_t a = 0; a < pts.size(); ++a)
            for (std::uint32_t b = 0; b < pts.size(); ++b) {
                if (a == b) continue;
                const cplx d = pts[a] - pts[b];
                const bool i_neighbour =
                    std::abs(std::abs(d.real()) - step) < 1e-9 && std::abs(d.imag()) < 1e-9;
                const bool q_neighbour =
                    std::abs(std::abs(d.imag()) - step) < 1e-9 && std::abs(d.real()) < 1e-9;
                if (i_neighbour || q_neighbour) REQUIRE(hamming(a, b) == 1);
            }
    }
}

TEST_CASE("build_tx_grid") {
    SECTION("pilot-only frame has exactly n_pilot*n_sc nonzero REs") {
        LinkConfig cfg;
        cfg.n_sym = 2;
        cfg.pilot_symbols = {0, 1};
        cfg.validate();
        auto x = build_tx_grid({}, cfg);
        std::size_t nonzero = 0;
        for (auto v : x.v) nonzero += std::abs(v) > 0.0;
        REQUIRE(nonzero == 2 * cfg.n_sc);
    }
    SECTION("default frame carries 12x76 data REs") {
        LinkConfig cfg;
        cfg.validate();
        REQUIRE(cfg.data_re_count() == 12 * 76);
        REQUIRE(cfg.coded_bits_per_frame() == 1824);
    }
    SECTION("pilot extraction round-trips") {
        LinkConfig cfg;
        std::vector<cplx> data(cfg.data_re_count(), cplx(0.3, -0.4));
        auto x = build_tx_grid(data, cfg);
        auto xp = pilot_grid(cfg);
        for (std::size_t p = 0; p < cfg.pilot_symbols.size(); ++p)
            for (std::size_t s = 0; s < cfg.n_sc; ++s)
                REQUIRE(x.at(cfg.pilot_symbols[p], s) == xp.at(p, s));
    }
    SECTION("data count mismatch rejected") {
        LinkConfig cfg;
        REQUIRE_THROWS_AS(build_tx_grid(std::vector<cplx>(5), cfg), std::invalid_argument);
    }
    SECTION("QPSK data REs have unit energy exactly") {
        LinkConfig cfg;
        Rng rng(3);
        std::vector<std::uint8_t> bits(cfg.coded_bits_per_frame());
        for (auto& b : bits) b = static_cast<std::uint8_t>(rng.bit());
        auto x = build_tx_grid(map_bits_to_qam(bits, 2), cfg);
        double esum = 0.0;
        for (const auto& [k, s] : data_positions(cfg)) esum += std::norm(x.at(k, s));
        REQUIRE(esum / static_cast<double>(cfg.data_re_count()) == Approx(1.0).margin(1e-6));
    }
}

TEST_CASE("gen_channel") {
    LinkConfig cfg;
    SECTION("single tap is flat in frequency") {
        cfg.channel.n_taps = 1;
        Rng rng(7);
        auto ch = gen_channel(cfg, rng);
        for (std::size_t a = 0; a < cfg.n_rx; ++a) {
            const double mag0 = std::abs(ch.h.at(0, 0, a));
            for (std::size_t s = 0; s < cfg.n_sc; ++s)
                REQUIRE(std::abs(ch.h.at(0, s, a)) == Approx(mag0).margin(1e-12));
        }
    }
    SECTION("block fading: constant over symbols") {
        Rng rng(8);
        auto ch = gen_channel(cfg, rng);
        for (std::size_t k = 1; k < cfg.n_sym; ++k)
            REQUIRE(ch.h.at(k, 5, 1) == ch.h.at(0, 5, 1));
    }
    SECTION("ensemble mean of |H|^2 is one") {
        cfg.n_sym = 1;
        Rng rng(9);
        double acc = 0.0;
        std::size_t cnt = 0;
        for (int it = 0; it < 20000; ++it) {
            auto ch = gen_channel(cfg, rng);
            for (auto v : ch.h.v) {
                acc += std::norm(v);
                ++cnt;
            }
        }
        REQUIRE(acc / static_cast<double>(cnt) == Approx(1.0).margin(0.01));
    }
    SECTION("adjacent-subcarrier correlation decreases with more taps") {
        cfg.n_sym = 1;
        cfg.n_rx = 1;
        auto corr = [&cfg](std::size_t taps, std::uint64_t seed) {
            LinkConfig c = cfg;
            c.channel.n_taps = taps;
            Rng rng(seed);
            cplx acc = 0.0;
            double p = 0.0;
            for (int it = 0; it < 4000; ++it) {
                auto ch = gen_channel(c, rng);
                for (std::size_t s = 0; s + 1 < c.n_sc; ++s) {
                    acc += ch.h.at(0, s) * std::conj(ch.h.at(0, s + 1));
                    p += std::norm(ch.h.at(0, s));
                }
            }
            return std::abs(acc) / p;
        };
        const double c1 = corr(1, 11), c8 = corr(8, 12), c32 = corr(32, 13);
        REQUIRE(c1 == Approx(1.0).margin(1e-6));
        REQUIRE(c8 < c1 - 0.005);
        REQUIRE(c32 < c8 - 0.05);
    }
}

TEST_CASE("apply_channel") {
    LinkConfig cfg;
    Rng rng(5);
    std::vector<std::uint8_t> bits(cfg.coded_bits_per_frame());
    for (auto& b : bits) b = static_cast<std::uint8_t>(rng.bit());
    auto x = build_tx_grid(map_bits_to_qam(bits, 2), cfg);

    SECTION("identity channel with zero noise returns x on every antenna") {
        cfg.channel.kind = ChannelProfile::Kind::Awgn;
        Rng r2(1);
        auto ch = gen_channel(cfg, r2, 0.0);
        auto y = apply_channel(x, ch, r2);
        for (std::size_t k = 0; k < cfg.n_sym; ++k)
            for (std::size_t s = 0; s < cfg.n_sc; ++s)
                for (std::size_t a = 0; a < cfg.n_rx; ++a)
                    REQUIRE(std::abs(y.at(k, s, a) - x.at(k, s)) < 1e-15);
    }
    SECTION("zero input gives noise of the requested variance") {
        const double n0 = 0.37;
        ComplexGrid zero(cfg.n_sym, cfg.n_sc, 1);
        Rng r2(2);
        double acc = 0.0;
        std::size_t cnt = 0;
        for (int rep = 0; rep < 50; ++rep) {
            auto ch = gen_channel(cfg, r2, n0);
            auto y = apply_channel(zero, ch, r2);
            for (auto v : y.v) {
                acc += std::norm(v);
                ++cnt;
            }
        }
        REQUIRE(cnt >= 100000);
        REQUIRE(acc / static_cast<double>(cnt) == Approx(n0).epsilon(0.02));
    }
    SECTION("deterministic given the seed") {
        Rng ra(99), rb(99);
        auto cha = gen_channel(cfg, ra, 0.1);
        auto ya = apply_channel(x, cha, ra);
        auto chb = gen_channel(cfg, rb, 0.1);
        auto yb = apply_channel(x, chb, rb);
        REQUIRE(ya.v == yb.v);
    }
}

TEST_CASE("ebn0_db_to_n0") {
    REQUIRE(ebn0_db_to_n0(0.0, 0.5, 2) == Approx(1.0));
    REQUIRE(ebn0_db_to_n0(10.0, 0.5, 2) == Approx(0.1));
    const double a = ebn0_db_to_n0(1.0, 0.5, 2);
    const double b = ebn0_db_to_n0(1.0 + 10.0 * std::log10(2.0), 0.5, 2);
    REQUIRE(b == Approx(a / 2.0).epsilon(1e-12));
    // uncoded accounting via rate 1
    REQUIRE(ebn0_db_to_n0(0.0, 1.0, 2) == Approx(0.5));
}
