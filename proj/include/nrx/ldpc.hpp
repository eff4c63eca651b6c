#pragma once

// Rate-1/2 (3,6)-regular LDPC: seeded Gallager-style construction with
// 4-cycle reduction and full-row-rank enforcement, systematic encoding via
// GF(2) elimination, and normalized min-sum belief-propagation decoding.
//
// Module boundaries speak LLRs as log P(1)/P(0); the decoder's internal
// sign convention is encapsulated here.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "nrx/rng.hpp"
#include "nrx/tensor.hpp"  // NRX_REQUIRE

namespace nrx {

struct LdpcCode {
    std::size_t n = 0;  // code length
    std::size_t m = 0;  // parity checks
    std::size_t k = 0;  // message length (n - m when full rank)
    std::vector<std::vector<std::uint32_t>> row_cols;   // sparse H, per check
    std::vector<std::size_t> free_cols;                 // systematic positions
    std::vector<std::size_t> pivot_cols;                // parity positions
    std::vector<std::vector<std::uint64_t>> enc_masks;  // per pivot row, bits over free cols
};

struct DecodeResult {
    std::vector<std::uint8_t> bits;      // length k, message estimate
    std::vector<std::uint8_t> codeword;  // length n, hard decisions
    bool converged = false;
    std::size_t iterations = 0;
};

namespace ldpc_detail {

using BitRow = std::vector<std::uint64_t>;

inline std::size_t words_for(std::size_t bits) { return (bits + 63) / 64; }

inline void set_bit(BitRow& r, std::size_t i) { r[i >> 6] |= 1ULL << (i & 63); }
inline bool get_bit(const BitRow& r, std::size_t i) { return (r[i >> 6] >> (i & 63)) & 1ULL; }

// Reduced row echelon form over GF(2). Returns pivot columns; rows are
// modified in place. Rank = number of pivots.
inline std::vector<std::size_t> rref(std::vector<BitRow>& rows, std::size_t n) {
    std::vector<std::size_t> pivots;
    std::size_t r = 0;
    for (std::size_t c = 0; c < n && r < rows.size(); ++c) {
        std::size_t sel = r;
        while (sel < rows.size() && !get_bit(rows[sel], c)) ++sel;
        if (sel == rows.size()) continue;
        std::swap(rows[r], rows[sel]);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (i != r && get_bit(rows[i], c))
                for (std::size_t w = 0; w < rows[i].size(); ++w) rows[i][w] ^= rows[r][w];
        }
        pivots.push_back(c);
        ++r;
    }
    return pivots;
}

// One construction attempt: column-by-column placement of 3 distinct rows,
// redrawing a bounded number of times when a new column would close a
// 4-cycle with an earlier one. Returns false when the residual row
// capacities cannot host a column.
inline bool try_build(std::size_t n, std::size_t m, Rng& rng,
                      std::vector<std::vector<std::uint32_t>>& row_cols) {
    const std::size_t dv = 3, dc = 6;
    std::vector<std::size_t> cap(m, dc);
    std::vector<std::uint64_t> pair_used(words_for(m * m), 0);
    auto pair_bit = [m](std::size_t a, std::size_t b) {
        return std::min(a, b) * m + std::max(a, b);
    };
    row_cols.assign(m, {});
    std::vector<std::uint32_t> avail;
    for (std::size_t c = 0; c < n; ++c) {
        avail.clear();
        for (std::uint32_t r = 0; r < m; ++r)
            if (cap[r] > 0) avail.push_back(r);
        if (avail.size() < dv) return false;
        std::uint32_t pick[3] = {0, 0, 0};
        bool clean = false;
        for (int attempt = 0; attempt < 40 && !clean; ++attempt) {
            // capacity-weighted draw of 3 distinct rows
            for (std::size_t i = 0; i < dv;) {
                const std::uint32_t r = avail[rng.uint(avail.size())];
                if (rng.uint(dc) >= cap[r]) continue;  // weight by remaining capacity
                bool dup = false;
                for (std::size_t j = 0; j < i; ++j) dup = dup || (pick[j] == r);
                if (dup) continue;
                pick[i++] = r;
            }
            clean = true;
            for (std::size_t a = 0; a < dv && clean; ++a)
                for (std::size_t b = a + 1; b < dv && clean; ++b)
                    if (get_bit(pair_used, pair_bit(pick[a], pick[b]))) clean = false;
        }
        for (std::size_t a = 0; a < dv; ++a) {
            cap[pick[a]] -= 1;
            row_cols[pick[a]].push_back(static_cast<std::uint32_t>(c));
            for (std::size_t b = a + 1; b < dv; ++b)
                set_bit(pair_used, pair_bit(pick[a], pick[b]));
        }
    }
    return true;
}

}  // namespace ldpc_detail

// Deterministic per seed. Throws after bounded retries if no full-rank
// (3,6)-regular matrix is found.
inline LdpcCode build_code(std::size_t n, double rate, std::uint64_t seed) {
    NRX_REQUIRE(rate == 0.5, "build_code: only rate 1/2 is supported, got " << rate);
    NRX_REQUIRE(n >= 16 && n % 2 == 0, "build_code: n must be even and >= 16, got " << n);
    const std::size_t m = n / 2;

    for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
        Rng rng(derive_seed(seed, attempt));
        LdpcCode code;
        code.n = n;
        code.m = m;
        if (!ldpc_detail::try_build(n, m, rng, code.row_cols)) continue;

        std::vector<ldpc_detail::BitRow> rows(m,
                                              ldpc_detail::BitRow(ldpc_detail::words_for(n), 0));
        for (std::size_t r = 0; r < m; ++r)
            for (auto c : code.row_cols[r]) ldpc_detail::set_bit(rows[r], c);
        auto pivots = ldpc_detail::rref(rows, n);
        if (pivots.size() < m) continue;  // rank deficient: resample

        code.pivot_cols = pivots;
        std::vector<std::uint8_t> is_pivot(n, 0);
        for (auto p : pivots) is_pivot[p] = 1;
        for (std::size_t c = 0; c < n; ++c)
            if (!is_pivot[c]) code.free_cols.push_back(c);
        code.k = code.free_cols.size();

        code.enc_masks.assign(m, ldpc_detail::BitRow(ldpc_detail::words_for(code.k), 0));
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t j = 0; j < code.k; ++j)
                if (ldpc_detail::get_bit(rows[r], code.free_cols[j]))
                    ldpc_detail::set_bit(code.enc_masks[r], j);
        return code;
    }
    throw std::runtime_error("build_code: no full-rank construction found");
}

// Systematic encoding: message bits appear verbatim at free_cols.
inline std::vector<std::uint8_t> encode(const LdpcCode& code,
                                        const std::vector<std::uint8_t>& msg) {
    NRX_REQUIRE(msg.size() == code.k,
                "encode: message length " << msg.size() << " != k " << code.k);
    ldpc_detail::BitRow mbits(ldpc_detail::words_for(code.k), 0);
    for (std::size_t j = 0; j < code.k; ++j)
        if (msg[j] & 1) ldpc_detail::set_bit(mbits, j);
    std::vector<std::uint8_t> cw(code.n, 0);
    for (std::size_t j = 0; j < code.k; ++j) cw[code.free_cols[j]] = msg[j] & 1;
    for (std::size_t r = 0; r < code.m; ++r) {
        std::uint64_t acc = 0;
        for (std::size_t w = 0; w < mbits.size(); ++w) acc ^= code.enc_masks[r][w] & mbits[w];
        cw[code.pivot_cols[r]] = static_cast<std::uint8_t>(__builtin_popcountll(acc) & 1);
    }
    return cw;
}

inline bool parity_ok(const LdpcCode& code, const std::vector<std::uint8_t>& cw) {
    for (const auto& cols : code.row_cols) {
        std::uint8_t x = 0;
        for (auto c : cols) x ^= cw[c] & 1;
        if (x) return false;
    }
    return true;
}

// Normalized min-sum with a serial (layered) schedule, early exit once the
// hard decision satisfies every check with strictly signed totals. llrs are
// log P(1)/P(0). An all-zero total carries no information, so ties never
// count as convergence.
inline DecodeResult decode_bp(const LdpcCode& code, const std::vector<double>& llrs,
                              std::size_t max_iters = 20, double norm = 0.75) {
    NRX_REQUIRE(llrs.size() == code.n,
                "decode_bp: got " << llrs.size() << " LLRs for code length " << code.n);
    for (double v : llrs) NRX_REQUIRE(std::isfinite(v), "decode_bp: non-finite LLR");

    // internal convention: positive favours bit 0
    std::vector<double> ch(code.n);
    for (std::size_t i = 0; i < code.n; ++i) ch[i] = -llrs[i];

    std::size_t n_edges = 0;
    for (const auto& cols : code.row_cols) n_edges += cols.size();
    std::vector<double> r_msg(n_edges, 0.0);
    std::vector<double> total = ch;
    std::vector<std::uint8_t> hard(code.n, 0);

    DecodeResult res;
    for (std::size_t iter = 1; iter <= max_iters; ++iter) {
        std::size_t e0 = 0;
        for (const auto& cols : code.row_cols) {
            const std::size_t deg = cols.size();
            double min1 = std::numeric_limits<double>::infinity(), min2 = min1;
            std::size_t argmin = 0;
            int sgn_prod = 1;
            for (std::size_t j = 0; j < deg; ++j) {
                const double q = total[cols[j]] - r_msg[e0 + j];
                const double aq = std::abs(q);
                if (q < 0.0) sgn_prod = -sgn_prod;
                if (aq < min1) {
                    min2 = min1;
                    min1 = aq;
                    argmin = j;
                } else if (aq < min2) {
                    min2 = aq;
                }
            }
            for (std::size_t j = 0; j < deg; ++j) {
                const double q = total[cols[j]] - r_msg[e0 + j];
                const int sg = sgn_prod * (q < 0.0 ? -1 : 1);
                const double mag = (j == argmin) ? min2 : min1;
                const double nr = norm * static_cast<double>(sg) * mag;
                total[cols[j]] += nr - r_msg[e0 + j];
                r_msg[e0 + j] = nr;
            }
            e0 += deg;
        }
        bool strict = true;
        for (std::size_t i = 0; i < code.n; ++i) {
            hard[i] = total[i] < 0.0 ? 1 : 0;
            strict = strict && total[i] != 0.0;
        }
        res.iterations = iter;
        if (strict && parity_ok(code, hard)) {
            res.converged = true;
            break;
        }
    }
    res.codeword = hard;
    res.bits.resize(code.k);
    for (std::size_t j = 0; j < code.k; ++j) res.bits[j] = hard[code.free_cols[j]];
    return res;
}

// ---------------------------------------------------------------------------
// alist interchange (1-based indices, zero padding to the max degree)

inline std::string export_alist(const LdpcCode& code) {
    std::vector<std::vector<std::uint32_t>> col_rows(code.n);
    for (std::size_t r = 0; r < code.m; ++r)
        for (auto c : code.row_cols[r]) col_rows[c].push_back(static_cast<std::uint32_t>(r));
    std::size_t dc = 0, dv = 0;
    for (const auto& v : code.row_cols) dc = std::max(dc, v.size());
    for (const auto& v : col_rows) dv = std::max(dv, v.size());

    std::ostringstream os;
    os << code.n << " " << code.m << "\n" << dv << " " << dc << "\n";
    for (std::size_t c = 0; c < code.n; ++c) os << col_rows[c].size() << (c + 1 < code.n ? " " : "\n");
    for (std::size_t r = 0; r < code.m; ++r)
        os << code.row_cols[r].size() << (r + 1 < code.m ? " " : "\n");
    for (std::size_t c = 0; c < code.n; ++c) {
        for (std::size_t j = 0; j < dv; ++j)
            os << (j < col_rows[c].size() ? col_rows[c][j] + 1 : 0) << (j + 1 < dv ? " " : "\n");
    }
    for (std::size_t r = 0; r < code.m; ++r) {
        for (std::size_t j = 0; j < dc; ++j)
            os << (j < code.row_cols[r].size() ? code.row_cols[r][j] + 1 : 0)
               << (j + 1 < dc ? " " : "\n");
    }
    return os.str();
}

// Rebuilds the sparse matrix and re-derives the systematic encoder.
inline LdpcCode import_alist(const std::string& text) {
    std::istringstream is(text);
    std::size_t n = 0, m = 0, dv = 0, dc = 0;
    NRX_REQUIRE(static_cast<bool>(is >> n >> m >> dv >> dc), "alist: truncated header");
    std::vector<std::size_t> colw(n), roww(m);
    for (auto& w : colw) NRX_REQUIRE(static_cast<bool>(is >> w), "alist: truncated column weights");
    for (auto& w : roww) NRX_REQUIRE(static_cast<bool>(is >> w), "alist: truncated row weights");
    LdpcCode code;
    code.n = n;
    code.m = m;
    code.row_cols.assign(m, {});
    for (std::size_t c = 0; c < n; ++c)
        for (std::size_t j = 0; j < dv; ++j) {
            long v = 0;
            NRX_REQUIRE(static_cast<bool>(is >> v), "alist: truncated column lists");
            NRX_REQUIRE(v >= 0 && static_cast<std::size_t>(v) <= m, "alist: row index " << v
                                                                        << " out of range");
            // column lists are authoritative; row lists are re-read for format
            if (v > 0) code.row_cols[static_cast<std::size_t>(v - 1)].push_back(
                static_cast<std::uint32_t>(c));
        }
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < dc; ++j) {
            long v = 0;
            NRX_REQUIRE(static_cast<bool>(is >> v), "alist: truncated row lists");
        }
    for (std::size_t r = 0; r < m; ++r)
        std::sort(code.row_cols[r].begin(), code.row_cols[r].end());

    std::vector<ldpc_detail::BitRow> rows(m, ldpc_detail::BitRow(ldpc_detail::words_for(n), 0));
    for (std::size_t r = 0; r < m; ++r)
        for (auto c : code.row_cols[r]) ldpc_detail::set_bit(rows[r], c);
    auto pivots = ldpc_detail::rref(rows, n);
    NRX_REQUIRE(pivots.size() == m, "alist: matrix is rank deficient");
    code.pivot_cols = pivots;
    std::vector<std::uint8_t> is_pivot(n, 0);
    for (auto p : pivots) is_pivot[p] = 1;
    for (std::size_t c = 0; c < n; ++c)
        if (!is_pivot[c]) code.free_cols.push_back(c);
    code.k = code.free_cols.size();
    code.enc_masks.assign(m, ldpc_detail::BitRow(ldpc_detail::words_for(code.k), 0));
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < code.k; ++j)
            if (ldpc_detail::get_bit(rows[r], code.free_cols[j]))
                ldpc_detail::set_bit(code.enc_masks[r], j);
    return code;
}

}  // namespace nrx
