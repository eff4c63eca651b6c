#pragma once

// The two neural LLR estimators and the plain-transformer baseline.
//
// DAT: tokens = resource elements, embedded to a model width, then encoder
// blocks of multi-head self-attention followed by a dual attention mechanism
// (channel-wise and token-wise score maps produced by dense layers), an FFN
// tail, and a dense head emitting one logit per coded bit.
//
// RDNLA: a convolutional stem, parallel residual blocks built from residual
// dense blocks, dual non-local attention (spatial and channel branches over
// 1x1-conv embeddings), a global skip from the stem, and a conv head.

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "nrx/phy.hpp"
#include "nrx/rng.hpp"
#include "nrx/tensor.hpp"

namespace nrx {

// ---------------------------------------------------------------------------
// configs and input preprocessing

struct DatConfig {
    std::size_t width = 128;      // N_D
    std::size_t heads = 8;        // h, must divide width
    std::size_t blocks = 2;       // DAE blocks
    std::size_t ffn_hidden = 256;
    double dropout = 0.0;

    void validate() const {
        NRX_REQUIRE(width > 0 && heads > 0 && width % heads == 0,
                    "dat: width " << width << " not divisible by heads " << heads);
        NRX_REQUIRE(blocks >= 1, "dat: need at least one block");
    }
};

struct RdnlaConfig {
    std::size_t channels = 64;   // C (growth rate); embeddings use C/2
    std::size_t prb_stages = 2;  // attention blocks sit between PRB stages
    double dropout = 0.1;

    void validate() const {
        NRX_REQUIRE(channels >= 2 && channels % 2 == 0,
                    "rdnla: channels " << channels << " must be even");
        NRX_REQUIRE(prb_stages >= 1, "rdnla: need at least one PRB stage");
    }
};

// (n_sym, n_sc, 2*n_rx+1): per-antenna real and imaginary planes plus a
// broadcast log10(N0) plane.
template <class T>
Tensor<T> preprocess_input(const ComplexGrid& y, double n0) {
    NRX_REQUIRE(n0 > 0.0, "preprocess_input: N0 must be positive, got " << n0);
    const std::size_t f = 2 * y.n_rx + 1;
    Tensor<T> x = Tensor<T>::zeros({y.n_sym, y.n_sc, f});
    const T noise_plane = static_cast<T>(std::log10(n0));
    auto& v = x.value();
    std::size_t i = 0;
    for (std::size_t k = 0; k < y.n_sym; ++k)
        for (std::size_t s = 0; s < y.n_sc; ++s) {
            for (std::size_t a = 0; a < y.n_rx; ++a)
                v[i + a] = static_cast<T>(y.at(k, s, a).real());
            for (std::size_t a = 0; a < y.n_rx; ++a)
                v[i + y.n_rx + a] = static_cast<T>(y.at(k, s, a).imag());
            v[i + 2 * y.n_rx] = noise_plane;
            i += f;
        }
    return x;
}

// ---------------------------------------------------------------------------
// parameter bundles

template <class T>
struct DenseLayer {
    Tensor<T> w, b;
};

template <class T>
struct NormLayer {
    Tensor<T> gain, shift;
};

template <class T>
struct ConvLayer {
    Tensor<T> k, b;
};

template <class T>
struct Params {
    std::vector<std::pair<std::string, Tensor<T>>> named;

    Tensor<T> add(const std::string& name, Tensor<T> t) {
        t.set_requires_grad();
        named.emplace_back(name, t);
        return t;
    }
    DenseLayer<T> dense_glorot(const std::string& name, std::size_t in, std::size_t out,
                               Rng& rng) {
        DenseLayer<T> l;
        l.w = Tensor<T>::zeros({in, out});
        fill_glorot_uniform(l.w, in, out, rng);
        l.w = add(name + ".w", l.w);
        l.b = add(name + ".b", Tensor<T>::zeros({out}));
        return l;
    }
    NormLayer<T> norm(const std::string& name, std::size_t d) {
        NormLayer<T> l;
        l.gain = add(name + ".gain", Tensor<T>::full({d}, T(1)));
        l.shift = add(name + ".shift", Tensor<T>::zeros({d}));
        return l;
    }
    ConvLayer<T> conv_he(const std::string& name, std::size_t kh, std::size_t kw,
                         std::size_t cin, std::size_t cout, Rng& rng) {
        ConvLayer<T> l;
        l.k = Tensor<T>::zeros({kh, kw, cin, cout});
        fill_he_uniform(l.k, kh * kw * cin, rng);
        l.k = add(name + ".k", l.k);
        l.b = add(name + ".b", Tensor<T>::zeros({cout}));
        return l;
    }
    Tensor<T> prelu_alpha(const std::string& name, std::size_t channels) {
        return add(name + ".alpha", Tensor<T>::full({channels}, T(0.25)));
    }
};

// Collects softmax attention maps for inspection in tests.
template <class T>
struct AttnProbe {
    std::vector<Tensor<T>> maps;
};

// ---------------------------------------------------------------------------
// DAT

template <class T>
struct DatBlock {
    DenseLayer<T> qkv;       // D -> 3D joint projection
    DenseLayer<T> out_proj;  // W^O
    NormLayer<T> ln_mhsa;
    DenseLayer<T> dam_dense;  // width-D dense feeding both attention branches
    Tensor<T> dam_alpha;
    DenseLayer<T> dam_chan;  // N_T -> D, scores over channel pairs
    DenseLayer<T> dam_spat;  // D -> N_T, scores over token pairs
    NormLayer<T> ln_dam;
    DenseLayer<T> ffn1;
    Tensor<T> ffn_alpha;
    DenseLayer<T> ffn2;
    NormLayer<T> ln_ffn;
    DenseLayer<T> fc;  // block output projection
};

template <class T>
struct DatModel {
    LinkConfig link;
    DatConfig cfg;
    bool use_dam = true;  // false: plain transformer encoder baseline
    DenseLayer<T> embed;
    std::vector<DatBlock<T>> dat_blocks;
    DenseLayer<T> head;
    Params<T> reg;

    std::size_t tokens() const { return link.n_sym * link.n_sc; }
    std::size_t features() const { return 2 * link.n_rx + 1; }
};

template <class T>
DatModel<T> make_dat(const LinkConfig& link, const DatConfig& cfg, Rng& rng,
                     bool use_dam = true) {
    link.validate();
    cfg.validate();
    DatModel<T> m;
    m.link = link;
    m.cfg = cfg;
    m.use_dam = use_dam;
    const std::size_t d = cfg.width, nt = m.tokens();
    m.embed = m.reg.dense_glorot("embed", m.features(), d, rng);
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        const std::string p = "blk" + std::to_string(b) + ".";
        DatBlock<T> blk;
        blk.qkv = m.reg.dense_glorot(p + "qkv", d, 3 * d, rng);
        blk.out_proj = m.reg.dense_glorot(p + "out_proj", d, d, rng);
        blk.ln_mhsa = m.reg.norm(p + "ln_mhsa", d);
        if (use_dam) {
            blk.dam_dense = m.reg.dense_glorot(p + "dam.dense", d, d, rng);
            blk.dam_alpha = m.reg.prelu_alpha(p + "dam", d);
            blk.dam_chan = m.reg.dense_glorot(p + "dam.chan", nt, d, rng);
            blk.dam_spat = m.reg.dense_glorot(p + "dam.spat", d, nt, rng);
            blk.ln_dam = m.reg.norm(p + "ln_dam", d);
        }
        blk.ffn1 = m.reg.dense_glorot(p + "ffn1", d, cfg.ffn_hidden, rng);
        blk.ffn_alpha = m.reg.prelu_alpha(p + "ffn", cfg.ffn_hidden);
        blk.ffn2 = m.reg.dense_glorot(p + "ffn2", cfg.ffn_hidden, d, rng);
        blk.ln_ffn = m.reg.norm(p + "ln_ffn", d);
        blk.fc = m.reg.dense_glorot(p + "fc", d, d, rng);
        m.dat_blocks.push_back(std::move(blk));
    }
    m.head = m.reg.dense_glorot("head", d, link.bits_per_symbol, rng);
    return m;
}

// Scaled-dot-product multi-head self-attention with joint QKV projection.
template <class T>
Tensor<T> mhsa(Tape<T>& g, const Tensor<T>& z, const DenseLayer<T>& qkv,
               const DenseLayer<T>& out_proj, std::size_t heads,
               AttnProbe<T>* probe = nullptr) {
    const std::size_t d = z.extent(1);
    NRX_REQUIRE(d % heads == 0, "mhsa: width " << d << " not divisible by " << heads);
    const std::size_t dk = d / heads;
    const T inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));

    Tensor<T> qkv_out = dense(g, z, qkv.w, qkv.b);  // (N_T, 3D)
    Tensor<T> q = slice_cols(g, qkv_out, 0, d);
    Tensor<T> kk = slice_cols(g, qkv_out, d, 2 * d);
    Tensor<T> v = slice_cols(g, qkv_out, 2 * d, 3 * d);

    std::vector<Tensor<T>> head_outs;
    head_outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor<T> qi = slice_cols(g, q, h * dk, (h + 1) * dk);
        Tensor<T> ki = slice_cols(g, kk, h * dk, (h + 1) * dk);
        Tensor<T> vi = slice_cols(g, v, h * dk, (h + 1) * dk);
        // folding the 1/sqrt(dk) into K avoids an N_T x N_T temporary
        Tensor<T> scores = matmul(g, qi, transpose(g, scale(g, ki, inv_sqrt_dk)));
        Tensor<T> attn = softmax(g, scores, 1);
        if (probe) probe->maps.push_back(attn);
        head_outs.push_back(matmul(g, attn, vi));
    }
    Tensor<T> cat = concat_cols(g, head_outs);
    return dense(g, cat, out_proj.w, out_proj.b);
}

// Dual attention: a width-D dense layer with PReLU feeds a channel branch
// (N_D x N_D scores over U'^T) and a spatial branch (N_T x N_T scores over
// U'); their aggregates C and S join the residual before layer norm.
template <class T>
Tensor<T> dam(Tape<T>& g, const Tensor<T>& u, const DatBlock<T>& blk,
              AttnProbe<T>* probe = nullptr) {
    Tensor<T> u2 = prelu(g, dense(g, u, blk.dam_dense.w, blk.dam_dense.b), blk.dam_alpha);

    Tensor<T> ut = transpose(g, u2);  // (D, N_T)
    Tensor<T> a_c = softmax(g, dense(g, ut, blk.dam_chan.w, blk.dam_chan.b), 1);
    if (probe) probe->maps.push_back(a_c);
    Tensor<T> c = transpose(g, matmul(g, a_c, ut));  // (N_T, D)

    Tensor<T> a_s = softmax(g, dense(g, u2, blk.dam_spat.w, blk.dam_spat.b), 1);
    if (probe) probe->maps.push_back(a_s);
    Tensor<T> s = matmul(g, a_s, u2);  // (N_T, D)

    return layer_norm(g, add(g, add(g, u, c), s), blk.ln_dam.gain, blk.ln_dam.shift);
}

template <class T>
Tensor<T> dae_block(Tape<T>& g, const Tensor<T>& z, const DatBlock<T>& blk, bool use_dam,
                    std::size_t heads, double dropout_rate, bool training, Rng& rng,
                    AttnProbe<T>* probe = nullptr) {
    Tensor<T> attn = mhsa(g, z, blk.qkv, blk.out_proj, heads, probe);
    attn = dropout(g, attn, dropout_rate, training, rng);
    Tensor<T> u = layer_norm(g, add(g, z, attn), blk.ln_mhsa.gain, blk.ln_mhsa.shift);
    Tensor<T> v = use_dam ? dam(g, u, blk, probe) : u;
    Tensor<T> f = dense(g, v, blk.ffn1.w, blk.ffn1.b);
    f = prelu(g, f, blk.ffn_alpha);
    f = dense(g, f, blk.ffn2.w, blk.ffn2.b);
    f = dropout(g, f, dropout_rate, training, rng);
    Tensor<T> w = layer_norm(g, add(g, v, f), blk.ln_ffn.gain, blk.ln_ffn.shift);
    return dense(g, w, blk.fc.w, blk.fc.b);
}

template <class T>
Tensor<T> dat_forward(Tape<T>& g, const DatModel<T>& m, const Tensor<T>& x, bool training,
                      Rng& rng, AttnProbe<T>* probe = nullptr) {
    NRX_REQUIRE(x.rank() == 3 && x.extent(0) == m.link.n_sym && x.extent(1) == m.link.n_sc &&
                    x.extent(2) == m.features(),
                "dat_forward: input " << shape_str(x.shape()) << " does not match link "
                                      << m.link.n_sym << "x" << m.link.n_sc << "x"
                                      << m.features());
    Tensor<T> z = reshape(g, x, {m.tokens(), m.features()});
    z = dense(g, z, m.embed.w, m.embed.b);
    for (const auto& blk : m.dat_blocks)
        z = dae_block(g, z, blk, m.use_dam, m.cfg.heads, m.cfg.dropout, training, rng, probe);
    Tensor<T> logits = dense(g, z, m.head.w, m.head.b);
    return reshape(g, logits, {m.link.n_sym, m.link.n_sc, m.link.bits_per_symbol});
}

// ---------------------------------------------------------------------------
// RDNLA

template <class T>
struct RdbParams {
    ConvLayer<T> c1, c2;
    Tensor<T> a1, a2;
};

template <class T>
struct PrbParams {
    std::array<RdbParams<T>, 2> arm1, arm2;
    ConvLayer<T> fuse;
};

template <class T>
struct DnlaParams {
    ConvLayer<T> theta, phi, gmap;       // 1x1 embeddings to C' = C/2
    ConvLayer<T> restore_s, restore_c;   // 1x1 back to C
};

template <class T>
struct RdnlaModel {
    LinkConfig link;
    RdnlaConfig cfg;
    ConvLayer<T> stem;
    Tensor<T> stem_alpha;
    std::vector<PrbParams<T>> prbs;
    std::vector<DnlaParams<T>> dnlas;  // between consecutive PRB stages
    ConvLayer<T> head;
    Params<T> reg;
};

template <class T>
RdnlaModel<T> make_rdnla(const LinkConfig& link, const RdnlaConfig& cfg, Rng& rng) {
    link.validate();
    cfg.validate();
    RdnlaModel<T> m;
    m.link = link;
    m.cfg = cfg;
    const std::size_t c = cfg.channels, ce = c / 2, f = 2 * link.n_rx + 1;
    m.stem = m.reg.conv_he("stem", 3, 3, f, c, rng);
    m.stem_alpha = m.reg.prelu_alpha("stem", c);
    auto make_rdb = [&](const std::string& p) {
        RdbParams<T> r;
        r.c1 = m.reg.conv_he(p + ".c1", 3, 3, c, c, rng);
        r.a1 = m.reg.prelu_alpha(p + ".p1", c);
        r.c2 = m.reg.conv_he(p + ".c2", 3, 3, c, c, rng);
        r.a2 = m.reg.prelu_alpha(p + ".p2", c);
        return r;
    };
    for (std::size_t i = 0; i < cfg.prb_stages; ++i) {
        const std::string p = "prb" + std::to_string(i);
        PrbParams<T> prb;
        prb.arm1 = {make_rdb(p + ".arm1.rdb0"), make_rdb(p + ".arm1.rdb1")};
        prb.arm2 = {make_rdb(p + ".arm2.rdb0"), make_rdb(p + ".arm2.rdb1")};
        prb.fuse = m.reg.conv_he(p + ".fuse", 3, 3, c, c, rng);
        m.prbs.push_back(std::move(prb));
        if (i + 1 < cfg.prb_stages) {
            const std::string q = "dnla" + std::to_string(i);
            DnlaParams<T> d;
            d.theta = m.reg.conv_he(q + ".theta", 1, 1, c, ce, rng);
            d.phi = m.reg.conv_he(q + ".phi", 1, 1, c, ce, rng);
            d.gmap = m.reg.conv_he(q + ".g", 1, 1, c, ce, rng);
            d.restore_s = m.reg.conv_he(q + ".restore_s", 1, 1, ce, c, rng);
            d.restore_c = m.reg.conv_he(q + ".restore_c", 1, 1, ce, c, rng);
            m.dnlas.push_back(std::move(d));
        }
    }
    m.head = m.reg.conv_he("head", 3, 3, c, link.bits_per_symbol, rng);
    return m;
}

// Residual dense block: two conv+PReLU layers, input skip, dropout.
template <class T>
Tensor<T> rdb(Tape<T>& g, const Tensor<T>& f, const RdbParams<T>& p, double dropout_rate,
              bool training, Rng& rng) {
    Tensor<T> t = prelu(g, conv2d(g, f, p.c1.k, p.c1.b), p.a1);
    t = prelu(g, conv2d(g, t, p.c2.k, p.c2.b), p.a2);
    return dropout(g, add(g, f, t), dropout_rate, training, rng);
}

// Parallel residual block: two arms of stacked RDBs, each skip-connected
// from the block input, summed and fused by one convolution.
template <class T>
Tensor<T> prb(Tape<T>& g, const Tensor<T>& f0, const PrbParams<T>& p, double dropout_rate,
              bool training, Rng& rng) {
    Tensor<T> a1 = rdb(g, rdb(g, f0, p.arm1[0], dropout_rate, training, rng), p.arm1[1],
                       dropout_rate, training, rng);
    a1 = add(g, a1, f0);
    Tensor<T> a2 = rdb(g, rdb(g, f0, p.arm2[0], dropout_rate, training, rng), p.arm2[1],
                       dropout_rate, training, rng);
    a2 = add(g, a2, f0);
    return conv2d(g, add(g, a1, a2), p.fuse.k, p.fuse.b);
}

// Dual non-local attention: 1x1 embeddings Theta/Phi/G at half width, a
// token-by-token spatial score map and a channel-by-channel score map, both
// aggregated over G and restored to C by 1x1 convolutions, residual output
// X + S(X) + C(X).
template <class T>
Tensor<T> dnla(Tape<T>& g, const Tensor<T>& x, const DnlaParams<T>& p,
               AttnProbe<T>* probe = nullptr) {
    NRX_REQUIRE(x.rank() == 3 && x.extent(2) % 2 == 0,
                "dnla: channel count " << x.extent(2) << " must be even");
    const std::size_t h = x.extent(0), w = x.extent(1);
    const std::size_t nt = h * w, ce = p.theta.k.extent(3);

    Tensor<T> th = reshape(g, conv2d(g, x, p.theta.k, p.theta.b), {nt, ce});
    Tensor<T> ph = reshape(g, conv2d(g, x, p.phi.k, p.phi.b), {nt, ce});
    Tensor<T> gg = reshape(g, conv2d(g, x, p.gmap.k, p.gmap.b), {nt, ce});

    // spatial branch: scores over token pairs
    Tensor<T> a_s = softmax(g, matmul(g, th, transpose(g, ph)), 1);
    if (probe) probe->maps.push_back(a_s);
    Tensor<T> z_s = reshape(g, matmul(g, a_s, gg), {h, w, ce});
    Tensor<T> s_out = conv2d(g, z_s, p.restore_s.k, p.restore_s.b);

    // channel branch: scores over embedding-channel pairs
    Tensor<T> a_c = softmax(g, matmul(g, transpose(g, th), ph), 1);
    if (probe) probe->maps.push_back(a_c);
    Tensor<T> z_c = matmul(g, a_c, transpose(g, gg));           // (C', N_T)
    Tensor<T> z_ct = reshape(g, transpose(g, z_c), {h, w, ce});  // token-major restore path
    Tensor<T> c_out = conv2d(g, z_ct, p.restore_c.k, p.restore_c.b);

    return add(g, add(g, x, s_out), c_out);
}

template <class T>
Tensor<T> rdnla_forward(Tape<T>& g, const RdnlaModel<T>& m, const Tensor<T>& x, bool training,
                        Rng& rng, AttnProbe<T>* probe = nullptr) {
    NRX_REQUIRE(x.rank() == 3 && x.extent(0) == m.link.n_sym && x.extent(1) == m.link.n_sc &&
                    x.extent(2) == 2 * m.link.n_rx + 1,
                "rdnla_forward: input " << shape_str(x.shape()) << " does not match link");
    Tensor<T> f0 = prelu(g, conv2d(g, x, m.stem.k, m.stem.b), m.stem_alpha);
    Tensor<T> f = f0;
    for (std::size_t i = 0; i < m.prbs.size(); ++i) {
        f = prb(g, f, m.prbs[i], m.cfg.dropout, training, rng);
        if (i < m.dnlas.size()) f = dnla(g, f, m.dnlas[i], probe);
    }
    return conv2d(g, add(g, f, f0), m.head.k, m.head.b);
}

// ---------------------------------------------------------------------------
// receiver-model wrapper

enum class Arch { Dat, Rdnla, Transformer };

inline std::string arch_name(Arch a) {
    switch (a) {
        case Arch::Dat: return "dat";
        case Arch::Rdnla: return "rdnla";
        default: return "transformer";
    }
}

inline Arch arch_from_name(const std::string& s) {
    if (s == "dat") return Arch::Dat;
    if (s == "rdnla") return Arch::Rdnla;
    if (s == "transformer") return Arch::Transformer;
    throw std::invalid_argument("unknown architecture '" + s + "'");
}

template <class T>
struct Model {
    Arch arch = Arch::Dat;
    DatModel<T> dat;      // used for Dat and Transformer
    RdnlaModel<T> rdnla;  // used for Rdnla

    Params<T>& reg() { return arch == Arch::Rdnla ? rdnla.reg : dat.reg; }
    const Params<T>& reg() const { return arch == Arch::Rdnla ? rdnla.reg : dat.reg; }
    const LinkConfig& link() const { return arch == Arch::Rdnla ? rdnla.link : dat.link; }

    std::vector<Tensor<T>> params() const {
        std::vector<Tensor<T>> out;
        for (const auto& [name, t] : reg().named) out.push_back(t);
        return out;
    }
    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : reg().named) n += t.numel();
        return n;
    }
};

template <class T>
Model<T> make_model(Arch arch, const LinkConfig& link, const DatConfig& dat_cfg,
                    const RdnlaConfig& rdnla_cfg, Rng& rng) {
    Model<T> m;
    m.arch = arch;
    if (arch == Arch::Rdnla)
        m.rdnla = make_rdnla<T>(link, rdnla_cfg, rng);
    else
        m.dat = make_dat<T>(link, dat_cfg, rng, arch == Arch::Dat);
    return m;
}

template <class T>
Tensor<T> model_forward(Tape<T>& g, const Model<T>& m, const Tensor<T>& x, bool training,
                        Rng& rng, AttnProbe<T>* probe = nullptr) {
    if (m.arch == Arch::Rdnla) return rdnla_forward(g, m.rdnla, x, training, rng, probe);
    return dat_forward(g, m.dat, x, training, rng, probe);
}

}  // namespace nrx
