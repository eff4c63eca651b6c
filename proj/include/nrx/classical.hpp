#pragma once

// Conventional baseline receiver: LS channel estimation at pilot symbols,
// linear interpolation along time, per-RE SIMO LMMSE combining with bias
// compensation, and exact LLR demapping.

#include <cmath>
#include <complex>
#include <limits>
#include <vector>

#include "nrx/phy.hpp"

namespace nrx {

struct PilotEstimates {
    std::vector<std::size_t> symbols;  // pilot symbol indices, ascending
    ComplexGrid est;                   // (n_pilot x n_sc x n_rx)
};

struct ChannelEstimate {
    ComplexGrid h_hat;                 // (n_sym x n_sc x n_rx)
    std::vector<std::uint8_t> measured;  // per symbol: 1 = pilot-measured
};

struct EqualizedGrid {
    std::size_t n_sym = 0, n_sc = 0;
    std::vector<cplx> x_hat;
    std::vector<double> sigma2_eff;  // +inf marks an erasure

    std::size_t idx(std::size_t k, std::size_t s) const { return k * n_sc + s; }
};

// Elementwise LS estimate at pilot positions: H_p = Y_p / X_p per antenna.
inline PilotEstimates ls_estimate(const ComplexGrid& y, const ComplexGrid& x_p,
                                  const LinkConfig& cfg) {
    NRX_REQUIRE(x_p.n_sym == cfg.pilot_symbols.size() && x_p.n_sc == cfg.n_sc,
                "ls_estimate: pilot grid is " << x_p.n_sym << "x" << x_p.n_sc << ", expected "
                                              << cfg.pilot_symbols.size() << "x" << cfg.n_sc);
    PilotEstimates pe;
    pe.symbols = cfg.pilot_symbols;
    pe.est = ComplexGrid(cfg.pilot_symbols.size(), cfg.n_sc, y.n_rx);
    for (std::size_t p = 0; p < pe.symbols.size(); ++p)
        for (std::size_t s = 0; s < cfg.n_sc; ++s) {
            const cplx xp = x_p.at(p, s);
            NRX_REQUIRE(std::abs(xp) > 0.0,
                        "ls_estimate: zero pilot symbol at slot " << p << ", subcarrier " << s);
            for (std::size_t a = 0; a < y.n_rx; ++a)
                pe.est.at(p, s, a) = y.at(pe.symbols[p], s, a) / xp;
        }
    return pe;
}

// Linear interpolation along the time axis per (subcarrier, antenna);
// constant extrapolation outside the pilot span.
inline ChannelEstimate interpolate_estimate(const PilotEstimates& pe, const LinkConfig& cfg) {
    NRX_REQUIRE(!pe.symbols.empty(), "interpolate_estimate: no pilot symbols");
    ChannelEstimate ce;
    ce.h_hat = ComplexGrid(cfg.n_sym, cfg.n_sc, pe.est.n_rx);
    ce.measured.assign(cfg.n_sym, 0);
    for (auto p : pe.symbols) ce.measured[p] = 1;

    for (std::size_t k = 0; k < cfg.n_sym; ++k) {
        // bracketing pilot slots for symbol k
        std::size_t lo = 0, hi = pe.symbols.size() - 1;
        while (lo + 1 < pe.symbols.size() && pe.symbols[lo + 1] <= k) ++lo;
        hi = lo;
        if (pe.symbols[lo] < k) {
            if (lo + 1 < pe.symbols.size())
                hi = lo + 1;
        }
        double t = 0.0;
        if (hi != lo) {
            t = (static_cast<double>(k) - static_cast<double>(pe.symbols[lo])) /
                (static_cast<double>(pe.symbols[hi]) - static_cast<double>(pe.symbols[lo]));
        } else if (k < pe.symbols.front()) {
            lo = hi = 0;
        }
        for (std::size_t s = 0; s < cfg.n_sc; ++s)
            for (std::size_t a = 0; a < pe.est.n_rx; ++a) {
                const cplx a0 = pe.est.at(lo, s, a);
                const cplx a1 = pe.est.at(hi, s, a);
                ce.h_hat.at(k, s, a) = a0 + (a1 - a0) * t;
            }
    }
    return ce;
}

// Perfect-CSI bypass: wrap the true channel as an estimate.
inline ChannelEstimate perfect_csi(const ChannelRealization& ch) {
    ChannelEstimate ce;
    ce.h_hat = ch.h;
    ce.measured.assign(ch.h.n_sym, 1);
    return ce;
}

// Single-stream SIMO specialization of the LMMSE combiner: the matrix
// inverse collapses to the scalar w = h^H / (|h|^2 + N0/Es).
inline std::vector<cplx> lmmse_weights(const std::vector<cplx>& h, double n0, double es = 1.0) {
    double h2 = 0.0;
    for (const auto& v : h) h2 += std::norm(v);
    std::vector<cplx> w(h.size());
    const double denom = h2 + n0 / es;
    for (std::size_t a = 0; a < h.size(); ++a)
        w[a] = denom > 0.0 ? std::conj(h[a]) / denom : cplx(0.0, 0.0);
    return w;
}

// Per-RE combining, bias-compensated (divided by w.h) so the demapper sees a
// unit-gain channel; sigma2_eff = N0 |w|^2 / |w.h|^2 = N0 / |h|^2. An
// all-zero estimate marks the RE as an erasure (infinite variance, LLR 0).
inline EqualizedGrid lmmse_equalize(const ComplexGrid& y, const ChannelEstimate& est, double n0,
                                    double es = 1.0) {
    NRX_REQUIRE(y.n_sym == est.h_hat.n_sym && y.n_sc == est.h_hat.n_sc &&
                    y.n_rx == est.h_hat.n_rx,
                "lmmse_equalize: estimate does not cover the grid");
    NRX_REQUIRE(n0 >= 0.0, "lmmse_equalize: negative N0");
    EqualizedGrid eq;
    eq.n_sym = y.n_sym;
    eq.n_sc = y.n_sc;
    eq.x_hat.assign(y.n_sym * y.n_sc, cplx(0.0, 0.0));
    eq.sigma2_eff.assign(y.n_sym * y.n_sc, 0.0);
    std::vector<cplx> h(y.n_rx);
    for (std::size_t k = 0; k < y.n_sym; ++k)
        for (std::size_t s = 0; s < y.n_sc; ++s) {
            for (std::size_t a = 0; a < y.n_rx; ++a) h[a] = est.h_hat.at(k, s, a);
            const std::size_t i = eq.idx(k, s);
            const auto w = lmmse_weights(h, n0, es);
            cplx z = 0.0, gain = 0.0;
            double w2 = 0.0;
            for (std::size_t a = 0; a < y.n_rx; ++a) {
                z += w[a] * y.at(k, s, a);
                gain += w[a] * h[a];
                w2 += std::norm(w[a]);
            }
            if (std::abs(gain) <= 0.0) {
                eq.x_hat[i] = 0.0;
                eq.sigma2_eff[i] = std::numeric_limits<double>::infinity();
                continue;
            }
            eq.x_hat[i] = z / gain;
            eq.sigma2_eff[i] = n0 * w2 / std::norm(gain);
        }
    return eq;
}

// Exact LLR (log-sum-exp over constellation subsets) with complex Gaussian
// likelihoods of total variance sigma2_eff; sign convention log P(1)/P(0),
// clipped to +/- llr_clip. max_log switches to the max-log approximation.
inline constexpr double kLlrClip = 20.0;

inline LlrGrid demap_llr(const EqualizedGrid& eq, std::size_t bits_per_symbol,
                         bool max_log = false, double llr_clip = kLlrClip) {
    const auto pts = qam_constellation(bits_per_symbol);
    LlrGrid out(eq.n_sym, eq.n_sc, bits_per_symbol);
    std::vector<double> metric(pts.size());
    for (std::size_t k = 0; k < eq.n_sym; ++k)
        for (std::size_t s = 0; s < eq.n_sc; ++s) {
            const std::size_t i = eq.idx(k, s);
            if (!std::isfinite(eq.sigma2_eff[i])) continue;  // erasure: LLR 0
            // a vanishing variance saturates at the clip instead of dividing by 0
            const double s2 = std::max(eq.sigma2_eff[i], 1e-12);
            const cplx xh = eq.x_hat[i];
            for (std::size_t c = 0; c < pts.size(); ++c)
                metric[c] = -std::norm(xh - pts[c]) / s2;
            for (std::size_t b = 0; b < bits_per_symbol; ++b) {
                // bit b of the label, MSB-first
                const std::uint32_t bitmask = 1u << (bits_per_symbol - 1 - b);
                double m1 = -std::numeric_limits<double>::infinity();
                double m0 = m1;
                double e1 = 0.0, e0 = 0.0;
                for (std::size_t c = 0; c < pts.size(); ++c) {
                    if (c & bitmask)
                        m1 = std::max(m1, metric[c]);
                    else
                        m0 = std::max(m0, metric[c]);
                }
                double llr;
                if (max_log) {
                    llr = m1 - m0;
                } else {
                    for (std::size_t c = 0; c < pts.size(); ++c) {
                        if (c & bitmask)
                            e1 += std::exp(metric[c] - m1);
                        else
                            e0 += std::exp(metric[c] - m0);
                    }
                    llr = (m1 + std::log(e1)) - (m0 + std::log(e0));
                }
                out.at(k, s, b) = std::clamp(llr, -llr_clip, llr_clip);
            }
        }
    return out;
}

// Full conventional receive chain on one frame.
inline LlrGrid classical_receive(const ComplexGrid& y, const LinkConfig& cfg, double n0,
                                 bool use_perfect_csi = false,
                                 const ChannelRealization* truth = nullptr) {
    ChannelEstimate est;
    if (use_perfect_csi) {
        NRX_REQUIRE(truth != nullptr, "classical_receive: perfect CSI needs the realization");
        est = perfect_csi(*truth);
    } else {
        est = interpolate_estimate(ls_estimate(y, pilot_grid(cfg), cfg), cfg);
    }
    return demap_llr(lmmse_equalize(y, est, n0), cfg.bits_per_symbol);
}

}  // namespace nrx
