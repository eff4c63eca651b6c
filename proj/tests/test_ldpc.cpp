#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "nrx/ldpc.hpp"
#include "nrx/rng.hpp"

using namespace nrx;
using Catch::Approx;

namespace {

std::vector<std::uint8_t> random_msg(const LdpcCode& code, Rng& rng) {
    std::vector<std::uint8_t> msg(code.k);
    for (auto& b : msg) b = static_cast<std::uint8_t>(rng.bit());
    return msg;
}

// BPSK over AWGN, log P(1)/P(0) convention.
std::vector<double> awgn_llrs(const std::vector<std::uint8_t>& cw, double ebn0_db, double rate,
                              Rng& rng) {
    const double n0 = 1.0 / (std::pow(10.0, ebn0_db / 10.0) * rate);
    std::vector<double> llr(cw.size());
    for (std::size_t i = 0; i < cw.size(); ++i) {
        const double s = cw[i] ? -1.0 : 1.0;
        const double y = s + rng.normal(0.0, std::sqrt(n0 / 2.0));
        llr[i] = -4.0 * y / n0;
    }
    return llr;
}

}  // namespace

TEST_CASE("build_code structure") {
    auto code = build_code(1824, 0.5, 7);
    SECTION("dimensions") {
        REQUIRE(code.n == 1824);
        REQUIRE(code.m == 912);
        REQUIRE(code.k == 912);
    }
    SECTION("regular degrees: every row weight 6, every column weight 3") {
        std::vector<std::size_t> colw(code.n, 0);
        for (const auto& cols : code.row_cols) {
            REQUIRE(cols.size() == 6);
            for (auto c : cols) colw[c]++;
        }
        for (auto w : colw) REQUIRE(w == 3);
    }
    SECTION("same seed reproduces the matrix, another seed differs") {
        auto again = build_code(1824, 0.5, 7);
        REQUIRE(again.row_cols == code.row_cols);
        auto other = build_code(1824, 0.5, 8);
        REQUIRE(other.row_cols != code.row_cols);
    }
    SECTION("contract errors") {
        REQUIRE_THROWS_AS(build_code(15, 0.5, 1), std::invalid_argument);
        REQUIRE_THROWS_AS(build_code(1824, 0.4, 1), std::invalid_argument);
    }
}

TEST_CASE("encode") {
    auto code = build_code(120, 0.5, 3);
    Rng rng(9);
    SECTION("all-zero message encodes to the all-zero codeword") {
        auto cw = encode(code, std::vector<std::uint8_t>(code.k, 0));
        for (auto b : cw) REQUIRE(b == 0);
    }
    SECTION("codewords satisfy every parity check and add to codewords") {
        auto c1 = encode(code, random_msg(code, rng));
        auto c2 = encode(code, random_msg(code, rng));
        REQUIRE(parity_ok(code, c1));
        REQUIRE(parity_ok(code, c2));
        std::vector<std::uint8_t> sum(code.n);
        for (std::size_t i = 0; i < code.n; ++i) sum[i] = c1[i] ^ c2[i];
        REQUIRE(parity_ok(code, sum));
    }
    SECTION("systematic positions carry the message verbatim") {
        auto msg = random_msg(code, rng);
        auto cw = encode(code, msg);
        for (std::size_t j = 0; j < code.k; ++j) REQUIRE(cw[code.free_cols[j]] == msg[j]);
    }
    SECTION("length mismatch rejected") {
        REQUIRE_THROWS_AS(encode(code, std::vector<std::uint8_t>(code.k + 1, 0)),
                          std::invalid_argument);
    }
}

TEST_CASE("decode_bp") {
    SECTION("noiseless +-20 LLRs converge in one iteration and recover exactly") {
        auto code = build_code(1824, 0.5, 7);
        Rng rng(11);
        auto msg = random_msg(code, rng);
        auto cw = encode(code, msg);
        std::vector<double> llr(code.n);
        for (std::size_t i = 0; i < code.n; ++i) llr[i] = cw[i] ? 20.0 : -20.0;
        auto res = decode_bp(code, llr);
        REQUIRE(res.converged);
        REQUIRE(res.iterations == 1);
        REQUIRE(res.bits == msg);
    }
    SECTION("single weakly flipped bit on a toy n=20 code is corrected") {
        auto code = build_code(20, 0.5, 5);
        // all-zero codeword; bit 4 claims to be one with low confidence
        std::vector<double> llr(code.n, -10.0);
        llr[4] = 2.0;
        auto res = decode_bp(code, llr);
        REQUIRE(res.converged);
        for (auto b : res.bits) REQUIRE(b == 0);
    }
    SECTION("all-zero LLRs never converge") {
        auto code = build_code(64, 0.5, 2);
        auto res = decode_bp(code, std::vector<double>(code.n, 0.0), 20);
        REQUIRE_FALSE(res.converged);
        REQUIRE(res.iterations == 20);
    }
    SECTION("converged output always satisfies the parity checks") {
        auto code = build_code(256, 0.5, 4);
        Rng rng(13);
        std::size_t converged_seen = 0;
        for (int f = 0; f < 60; ++f) {
            auto cw = encode(code, random_msg(code, rng));
            auto llr = awgn_llrs(cw, 1.0 + 0.05 * f, 0.5, rng);
            auto res = decode_bp(code, llr);
            if (res.converged) {
                ++converged_seen;
                REQUIRE(parity_ok(code, res.codeword));
            }
        }
        REQUIRE(converged_seen > 10);
    }
    SECTION("non-finite LLR rejected") {
        auto code = build_code(64, 0.5, 2);
        std::vector<double> llr(code.n, 0.5);
        llr[3] = std::numeric_limits<double>::infinity();
        REQUIRE_THROWS_AS(decode_bp(code, llr), std::invalid_argument);
    }
}

TEST_CASE("pure min-sum hard decisions are invariant under positive LLR scaling") {
    auto code = build_code(256, 0.5, 6);
    Rng rng(17);
    for (int f = 0; f < 20; ++f) {
        auto cw = encode(code, random_msg(code, rng));
        auto llr = awgn_llrs(cw, 1.5, 0.5, rng);
        std::vector<double> scaled(llr);
        for (auto& v : scaled) v *= 3.7;
        auto a = decode_bp(code, llr, 20, 1.0);
        auto b = decode_bp(code, scaled, 20, 1.0);
        REQUIRE(a.bits == b.bits);
        REQUIRE(a.converged == b.converged);
    }
    // the normalized variant is exercised at lambda = 1 (determinism)
    auto cw = encode(code, random_msg(code, rng));
    auto llr = awgn_llrs(cw, 1.5, 0.5, rng);
    auto a = decode_bp(code, llr, 20, 0.75);
    auto b = decode_bp(code, llr, 20, 0.75);
    REQUIRE(a.bits == b.bits);
    REQUIRE(a.iterations == b.iterations);
}

TEST_CASE("BLER is monotone non-increasing in the iteration budget") {
    auto code = build_code(1824, 0.5, 7);
    const double ebn0 = 1.6;
    std::size_t errs[3] = {0, 0, 0};
    const std::size_t caps[3] = {5, 10, 20};
    Rng rng(19);
    for (int f = 0; f < 500; ++f) {
        auto msg = random_msg(code, rng);
        auto cw = encode(code, msg);
        auto llr = awgn_llrs(cw, ebn0, 0.5, rng);
        for (int c = 0; c < 3; ++c) {
            auto res = decode_bp(code, llr, caps[c]);
            errs[c] += (res.bits != msg);
        }
    }
    INFO("block errors at 5/10/20 iterations: " << errs[0] << "/" << errs[1] << "/" << errs[2]);
    REQUIRE(errs[1] <= errs[0] + 2);
    REQUIRE(errs[2] <= errs[1] + 2);
    REQUIRE(errs[0] > 0);  // operating point is informative
}

TEST_CASE("alist export/import round-trips") {
    auto code = build_code(120, 0.5, 23);
    auto text = export_alist(code);
    auto back = import_alist(text);
    REQUIRE(back.n == code.n);
    REQUIRE(back.m == code.m);
    REQUIRE(back.k == code.k);
    REQUIRE(back.row_cols == code.row_cols);
    // decoding agrees on a noisy word
    Rng rng(29);
    auto msg = random_msg(code, rng);
    auto cw = encode(code, msg);
    auto llr = awgn_llrs(cw, 3.0, 0.5, rng);
    auto a = decode_bp(code, llr);
    auto b = decode_bp(back, llr);
    REQUIRE(a.bits == b.bits);
    REQUIRE_THROWS_AS(import_alist("3 2"), std::invalid_argument);
}
