#pragma once

// Versioned checkpoint container: a JSON header carrying the model and link
// configuration, followed by (name, shape, raw little-endian float32) records
// for every parameter and, optionally, the Adam moment buffers. Loading
// validates every record shape against the freshly instantiated model.

#include <cstdint>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "nrx/model.hpp"

namespace nrx {

namespace ckpt_detail {

inline constexpr char kMagic[4] = {'N', 'R', 'X', 'C'};
inline constexpr std::uint32_t kVersion = 1;

inline nlohmann::json link_to_json(const LinkConfig& c) {
    return {{"n_sym", c.n_sym},
            {"n_sc", c.n_sc},
            {"n_rx", c.n_rx},
            {"bits_per_symbol", c.bits_per_symbol},
            {"pilot_symbols", c.pilot_symbols},
            {"code_rate", c.code_rate},
            {"channel",
             {{"kind", c.channel.kind == ChannelProfile::Kind::Awgn ? "awgn" : "rayleigh"},
              {"n_taps", c.channel.n_taps},
              {"tap_decay", c.channel.tap_decay}}},
            {"seed", c.seed}};
}

inline LinkConfig link_from_json(const nlohmann::json& j) {
    LinkConfig c;
    c.n_sym = j.at("n_sym").get<std::size_t>();
    c.n_sc = j.at("n_sc").get<std::size_t>();
    c.n_rx = j.at("n_rx").get<std::size_t>();
    c.bits_per_symbol = j.at("bits_per_symbol").get<std::size_t>();
    c.pilot_symbols = j.at("pilot_symbols").get<std::vector<std::size_t>>();
    c.code_rate = j.at("code_rate").get<double>();
    const auto& ch = j.at("channel");
    c.channel.kind = ch.at("kind").get<std::string>() == "awgn" ? ChannelProfile::Kind::Awgn
                                                                : ChannelProfile::Kind::Rayleigh;
    c.channel.n_taps = ch.at("n_taps").get<std::size_t>();
    c.channel.tap_decay = ch.at("tap_decay").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
}

template <class S>
void write_pod(std::ofstream& os, const S& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(S));
}

template <class S>
S read_pod(std::ifstream& is) {
    S v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(S));
    NRX_REQUIRE(static_cast<bool>(is), "checkpoint: truncated file");
    return v;
}

template <class Container>
void write_record(std::ofstream& os, const std::string& name, const Shape& shape,
                  const Container& data) {
    write_pod(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(os, static_cast<std::uint8_t>(shape.size()));
    for (auto d : shape) write_pod(os, static_cast<std::uint64_t>(d));
    for (const auto v : data) write_pod(os, static_cast<float>(v));
}

struct RawRecord {
    Shape shape;
    std::vector<float> data;
};

}  // namespace ckpt_detail

template <class T>
void save_checkpoint(const std::string& path, const Model<T>& m,
                     const AdamState<T>* opt = nullptr) {
    using nlohmann::json;
    json header;
    header["arch"] = arch_name(m.arch);
    header["link"] = ckpt_detail::link_to_json(m.link());
    if (m.arch == Arch::Rdnla) {
        header["rdnla"] = {{"channels", m.rdnla.cfg.channels},
                           {"prb_stages", m.rdnla.cfg.prb_stages},
                           {"dropout", m.rdnla.cfg.dropout}};
    } else {
        header["dat"] = {{"width", m.dat.cfg.width},
                         {"heads", m.dat.cfg.heads},
                         {"blocks", m.dat.cfg.blocks},
                         {"ffn_hidden", m.dat.cfg.ffn_hidden},
                         {"dropout", m.dat.cfg.dropout}};
    }
    if (opt) {
        header["adam"] = {{"step", opt->step},
                          {"lr", opt->lr},
                          {"beta1", opt->beta1},
                          {"beta2", opt->beta2},
                          {"eps", opt->eps}};
    }
    const std::string htext = header.dump();

    std::ofstream os(path, std::ios::binary);
    NRX_REQUIRE(os.good(), "checkpoint: cannot open '" << path << "' for writing");
    os.write(ckpt_detail::kMagic, 4);
    ckpt_detail::write_pod(os, ckpt_detail::kVersion);
    ckpt_detail::write_pod(os, static_cast<std::uint64_t>(htext.size()));
    os.write(htext.data(), static_cast<std::streamsize>(htext.size()));

    const auto& named = m.reg().named;
    std::uint32_t n_records = static_cast<std::uint32_t>(named.size());
    if (opt) n_records += 2 * static_cast<std::uint32_t>(named.size());
    ckpt_detail::write_pod(os, n_records);
    for (const auto& [name, t] : named)
        ckpt_detail::write_record(os, name, t.shape(), t.value());
    if (opt) {
        for (std::size_t p = 0; p < named.size(); ++p) {
            ckpt_detail::write_record(os, "optim.m." + named[p].first, named[p].second.shape(),
                                      opt->m[p]);
            ckpt_detail::write_record(os, "optim.v." + named[p].first, named[p].second.shape(),
                                      opt->v[p]);
        }
    }
    NRX_REQUIRE(os.good(), "checkpoint: write to '" << path << "' failed");
}

// Instantiates the model described by the header, then fills every parameter,
// validating shapes. When opt is given, Adam moments and the step counter are
// restored too (they must be present in the file).
template <class T>
Model<T> load_checkpoint(const std::string& path, AdamState<T>* opt = nullptr) {
    using nlohmann::json;
    std::ifstream is(path, std::ios::binary);
    NRX_REQUIRE(is.good(), "checkpoint: cannot open '" << path << "'");
    char magic[4];
    is.read(magic, 4);
    NRX_REQUIRE(is.good() && std::equal(magic, magic + 4, ckpt_detail::kMagic),
                "checkpoint: '" << path << "' is not a checkpoint file");
    const auto version = ckpt_detail::read_pod<std::uint32_t>(is);
    NRX_REQUIRE(version == ckpt_detail::kVersion,
                "checkpoint: unsupported version " << version);
    const auto hlen = ckpt_detail::read_pod<std::uint64_t>(is);
    std::string htext(hlen, '\0');
    is.read(htext.data(), static_cast<std::streamsize>(hlen));
    NRX_REQUIRE(static_cast<bool>(is), "checkpoint: truncated header");
    const json header = json::parse(htext);

    const Arch arch = arch_from_name(header.at("arch").get<std::string>());
    const LinkConfig link = ckpt_detail::link_from_json(header.at("link"));
    DatConfig dat_cfg;
    RdnlaConfig rdnla_cfg;
    if (arch == Arch::Rdnla) {
        const auto& j = header.at("rdnla");
        rdnla_cfg.channels = j.at("channels").get<std::size_t>();
        rdnla_cfg.prb_stages = j.at("prb_stages").get<std::size_t>();
        rdnla_cfg.dropout = j.at("dropout").get<double>();
    } else {
        const auto& j = header.at("dat");
        dat_cfg.width = j.at("width").get<std::size_t>();
        dat_cfg.heads = j.at("heads").get<std::size_t>();
        dat_cfg.blocks = j.at("blocks").get<std::size_t>();
        dat_cfg.ffn_hidden = j.at("ffn_hidden").get<std::size_t>();
        dat_cfg.dropout = j.at("dropout").get<double>();
    }
    Rng init_rng(0);
    Model<T> m = make_model<T>(arch, link, dat_cfg, rdnla_cfg, init_rng);

    const auto n_records = ckpt_detail::read_pod<std::uint32_t>(is);
    std::vector<std::pair<std::string, ckpt_detail::RawRecord>> records;
    records.reserve(n_records);
    for (std::uint32_t r = 0; r < n_records; ++r) {
        const auto nlen = ckpt_detail::read_pod<std::uint16_t>(is);
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        const auto rank = ckpt_detail::read_pod<std::uint8_t>(is);
        ckpt_detail::RawRecord rec;
        std::size_t numel = 1;
        for (std::uint8_t d = 0; d < rank; ++d) {
            rec.shape.push_back(static_cast<std::size_t>(
                ckpt_detail::read_pod<std::uint64_t>(is)));
            numel *= rec.shape.back();
        }
        rec.data.resize(numel);
        is.read(reinterpret_cast<char*>(rec.data.data()),
                static_cast<std::streamsize>(numel * sizeof(float)));
        NRX_REQUIRE(static_cast<bool>(is), "checkpoint: truncated record '" << name << "'");
        records.emplace_back(std::move(name), std::move(rec));
    }

    auto find = [&records](const std::string& name) -> ckpt_detail::RawRecord* {
        for (auto& [n, rec] : records)
            if (n == name) return &rec;
        return nullptr;
    };
    for (auto& [name, t] : m.reg().named) {
        auto* rec = find(name);
        NRX_REQUIRE(rec != nullptr, "checkpoint: missing parameter '" << name << "'");
        NRX_REQUIRE(rec->shape == t.shape(), "checkpoint: parameter '"
                                                 << name << "' has shape "
                                                 << shape_str(rec->shape) << ", model expects "
                                                 << shape_str(t.shape()));
        for (std::size_t i = 0; i < t.numel(); ++i)
            t.value()[i] = static_cast<T>(rec->data[i]);
    }
    if (opt) {
        NRX_REQUIRE(header.contains("adam"), "checkpoint: '" << path
                                                             << "' has no optimizer state");
        const auto& j = header.at("adam");
        opt->step = j.at("step").get<std::uint64_t>();
        opt->lr = j.at("lr").get<double>();
        opt->beta1 = j.at("beta1").get<double>();
        opt->beta2 = j.at("beta2").get<double>();
        opt->eps = j.at("eps").get<double>();
        opt->m.clear();
        opt->v.clear();
        for (auto& [name, t] : m.reg().named) {
            auto* rm = find("optim.m." + name);
            auto* rv = find("optim.v." + name);
            NRX_REQUIRE(rm && rv, "checkpoint: missing optimizer buffers for '" << name << "'");
            opt->m.emplace_back(rm->data.begin(), rm->data.end());
            opt->v.emplace_back(rv->data.begin(), rv->data.end());
        }
    }
    return m;
}

}  // namespace nrx
