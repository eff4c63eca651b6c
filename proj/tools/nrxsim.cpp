// nrxsim: link-level OFDM uplink simulator with neural receivers.
// Subcommands: simulate, train, evaluate, timing, gradcheck, export-alist.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "nrx/config.hpp"
#include "nrx/gradcheck.hpp"
#include "nrx/sim.hpp"
#include "nrx/trainer.hpp"

namespace {

using namespace nrx;

// every config key doubles as a CLI flag (flag overrides file)
const std::vector<std::string> kConfigKeys = {
    "n_sym", "n_sc", "n_rx", "bits_per_symbol", "pilot_symbols", "code_rate", "channel",
    "channel_taps", "channel_decay", "seed", "arch", "dat_width", "dat_heads", "dat_blocks",
    "dat_ffn", "dat_dropout", "rdnla_channels", "rdnla_prb_stages", "rdnla_dropout", "batch",
    "iters", "train_snr_lo", "train_snr_hi", "lr", "adam_beta1", "adam_beta2", "adam_eps",
    "checkpoint_every", "checkpoint_out", "metrics", "train_workers", "ebn0_db", "max_frames",
    "target_block_errors", "receiver", "checkpoint", "output", "workers", "coding",
    "decoder_iters", "timing_warmup", "timing_reps", "eval_frames"};

struct KeyOverrides {
    std::vector<std::pair<std::string, std::string>> kv;
    std::map<std::string, std::string> storage;

    void add_flags(CLI::App* cmd) {
        for (const auto& key : kConfigKeys) {
            storage[key] = {};
            std::string flag = "--" + key;
            for (auto& c : flag)
                if (c == '_') c = '-';
            cmd->add_option(flag, storage[key])->group("Config overrides");
        }
    }
    AppConfig resolve(CLI::App* cmd, const std::string& config_path) {
        AppConfig cfg = parse_config(config_path);
        for (const auto& key : kConfigKeys) {
            std::string flag = "--" + key;
            for (auto& c : flag)
                if (c == '_') c = '-';
            if (cmd->count(flag)) apply_setting(cfg, key, storage[key]);
        }
        cfg.validate();
        return cfg;
    }
};

Model<float> build_model(const AppConfig& cfg, Rng& rng) {
    return make_model<float>(arch_from_name(cfg.model.arch), cfg.link, cfg.model.dat,
                             cfg.model.rdnla, rng);
}

int cmd_simulate(const AppConfig& cfg) {
    Model<float> model;
    const Model<float>* model_ptr = nullptr;
    if (cfg.sweep.receiver != "classical" && cfg.sweep.receiver != "perfect-csi") {
        NRX_REQUIRE(!cfg.sweep.checkpoint.empty(),
                    "simulate: receiver '" << cfg.sweep.receiver << "' needs --checkpoint");
        model = load_checkpoint<float>(cfg.sweep.checkpoint);
        const LinkConfig& ml = model.link();
        NRX_REQUIRE(ml.n_sym == cfg.link.n_sym && ml.n_sc == cfg.link.n_sc &&
                        ml.n_rx == cfg.link.n_rx &&
                        ml.bits_per_symbol == cfg.link.bits_per_symbol,
                    "simulate: checkpoint was trained for a "
                        << ml.n_sym << "x" << ml.n_sc << "x" << ml.n_rx
                        << " link, configuration asks for " << cfg.link.n_sym << "x"
                        << cfg.link.n_sc << "x" << cfg.link.n_rx);
        model_ptr = &model;
    }
    Receiver rx = make_receiver(cfg.sweep.receiver, model_ptr);
    std::ofstream csv(cfg.sweep.output);
    NRX_REQUIRE(csv.good(), "simulate: cannot open output '" << cfg.sweep.output << "'");
    std::cout << "receiver " << rx.name << ", " << cfg.sweep.ebn0_db.size()
              << " SNR points -> " << cfg.sweep.output << "\n";
    auto rows = run_sweep(rx, cfg.link, cfg.sweep, &csv);
    for (const auto& r : rows)
        std::printf("  %+6.2f dB  ber %.3e (%zu/%zu)  bler %.3e (%zu/%zu)  %.1fs\n", r.ebn0_db,
                    r.ber, r.bit_errors, r.bits_sent, r.bler, r.block_errors, r.blocks_sent,
                    r.seconds);
    return 0;
}

int cmd_train(const AppConfig& cfg, bool resume) {
    auto code = build_code(cfg.link.coded_bits_per_frame(), cfg.link.code_rate, cfg.link.seed);
    Model<float> model;
    AdamState<float> opt;
    bool resumed = false;
    if (resume) {
        model = load_checkpoint<float>(cfg.train.checkpoint_path, &opt);
        resumed = true;
        std::cout << "resuming " << arch_name(model.arch) << " from "
                  << cfg.train.checkpoint_path << " at iteration " << opt.step << "\n";
    } else {
        Rng rng(cfg.link.seed);
        model = build_model(cfg, rng);
        std::cout << "training " << cfg.model.arch << " (" << model.param_count()
                  << " parameters), batch " << cfg.train.batch << ", iterations "
                  << cfg.train.iters << "\n";
    }
    Trainer<float> trainer(model, code, cfg.train);
    if (resumed) trainer.opt() = opt;
    std::ofstream metrics(cfg.metrics, resumed ? std::ios::app : std::ios::out);
    NRX_REQUIRE(metrics.good(), "train: cannot open metrics file '" << cfg.metrics << "'");
    Timer total;
    auto records = trainer.run(&metrics);
    double recent = 0.0;
    const std::size_t tail = std::min<std::size_t>(records.size(), 50);
    for (std::size_t i = records.size() - tail; i < records.size(); ++i)
        recent += records[i].loss / static_cast<double>(tail);
    std::cout << "done: " << records.size() << " iterations in " << total.seconds()
              << "s, mean loss over last " << tail << ": " << recent << "\n";
    if (!cfg.train.checkpoint_path.empty())
        std::cout << "checkpoint written to " << cfg.train.checkpoint_path << "\n";
    return 0;
}

int cmd_evaluate(const AppConfig& cfg) {
    NRX_REQUIRE(!cfg.sweep.checkpoint.empty(), "evaluate: needs --checkpoint");
    auto model = load_checkpoint<float>(cfg.sweep.checkpoint);
    auto code = build_code(model.link().coded_bits_per_frame(), model.link().code_rate,
                           model.link().seed);
    auto eval = evaluate_model(model, code, cfg.eval_frames, cfg.train.snr_lo_db,
                               cfg.train.snr_hi_db, derive_seed(cfg.link.seed, 0xE7A1));
    std::printf("%s over %zu held-out frames, Eb/N0 in [%g, %g] dB:\n",
                arch_name(model.arch).c_str(), cfg.eval_frames, cfg.train.snr_lo_db,
                cfg.train.snr_hi_db);
    std::printf("  bce      %.6f  (ln 2 = %.6f)\n", eval.bce, std::log(2.0));
    std::printf("  raw ber  %.6f  over %zu bits\n", eval.hard_ber, eval.bits);
    return 0;
}

int cmd_timing(const AppConfig& cfg, const std::vector<std::string>& checkpoints) {
    std::vector<Model<float>> models;
    std::vector<Receiver> receivers;
    receivers.push_back(make_receiver("classical", nullptr));
    models.reserve(checkpoints.size() + (cfg.sweep.checkpoint.empty() ? 0 : 1));
    auto add_ckpt = [&](const std::string& path) {
        models.push_back(load_checkpoint<float>(path));
        receivers.push_back(make_receiver(arch_name(models.back().arch), &models.back()));
    };
    for (const auto& p : checkpoints) add_ckpt(p);
    if (checkpoints.empty() && !cfg.sweep.checkpoint.empty()) add_ckpt(cfg.sweep.checkpoint);
    auto rows = run_timing(receivers, cfg.link, cfg.timing);
    std::printf("%-14s %12s %10s   (%zu reps, %zu warmup)\n", "receiver", "mean ms/RG",
                "std ms", cfg.timing.reps, cfg.timing.warmup);
    for (const auto& r : rows)
        std::printf("%-14s %12.4f %10.4f\n", r.receiver.c_str(), r.mean_ms, r.std_ms);
    return 0;
}

// finite-difference verification of every op and both architectures (64-bit)
int cmd_gradcheck() {
    using T = double;
    bool ok = true;
    Rng rng(8);

    auto check_op = [&](const std::string& name, auto op, std::vector<Tensor<T>> inputs,
                        double tol) {
        for (auto& t : inputs) t.set_requires_grad();
        Tensor<T> probe;
        {
            Tape<T> g;
            g.set_recording(false);
            probe = op(g, inputs);
        }
        Rng rw(99);
        Tensor<T> r = random_tensor<T>(probe.shape(), rw);
        auto loss_fn = [&]() {
            Tape<T> g;
            g.set_recording(false);
            return sum(g, mul(g, op(g, inputs), r)).item();
        };
        for (auto& t : inputs) t.zero_grad();
        Tape<T> g;
        auto loss = sum(g, mul(g, op(g, inputs), r));
        g.backward(loss);
        auto picks = all_picks(inputs);
        auto rep = fd_check(loss_fn, inputs, picks, 1e-5);
        std::printf("  %-12s rel err %.3e over %zu elements : %s\n", name.c_str(), rep.max_rel,
                    rep.checked, rep.pass(tol) ? "ok" : "FAIL");
        ok = ok && rep.pass(tol);
    };
    using V = std::vector<Tensor<T>>;
    std::cout << "op gradients vs central differences (tolerance 1e-4):\n";
    check_op("matmul", [](Tape<T>& g, const V& in) { return matmul(g, in[0], in[1]); },
             {random_tensor<T>({4, 5}, rng), random_tensor<T>({5, 3}, rng)}, 1e-4);
    check_op("dense", [](Tape<T>& g, const V& in) { return dense(g, in[0], in[1], in[2]); },
             {random_tensor<T>({2, 3, 4}, rng), random_tensor<T>({4, 5}, rng),
              random_tensor<T>({5}, rng)},
             1e-4);
    check_op("conv2d", [](Tape<T>& g, const V& in) { return conv2d(g, in[0], in[1], in[2]); },
             {random_tensor<T>({5, 4, 2}, rng), random_tensor<T>({3, 3, 2, 3}, rng),
              random_tensor<T>({3}, rng)},
             1e-4);
    check_op("softmax", [](Tape<T>& g, const V& in) { return softmax(g, in[0], 1); },
             {random_tensor<T>({4, 6}, rng)}, 1e-4);
    check_op("layer_norm",
             [](Tape<T>& g, const V& in) { return layer_norm(g, in[0], in[1], in[2]); },
             {random_tensor<T>({4, 6}, rng), random_tensor<T>({6}, rng, 0.5, 1.5),
              random_tensor<T>({6}, rng)},
             1e-4);
    check_op("prelu", [](Tape<T>& g, const V& in) { return prelu(g, in[0], in[1]); },
             {random_tensor<T>({5, 3}, rng), random_tensor<T>({3}, rng, 0.1, 0.5)}, 1e-4);
    check_op("dropout",
             [](Tape<T>& g, const V& in) {
                 Rng dr(7);
                 return dropout(g, in[0], 0.4, true, dr);
             },
             {random_tensor<T>({6, 5}, rng)}, 1e-4);
    check_op("elementwise",
             [](Tape<T>& g, const V& in) {
                 return softplus(g, scale(g, mul(g, sub(g, add(g, in[0], in[1]), in[1]), in[0]),
                                          T(1.3)));
             },
             {random_tensor<T>({3, 4}, rng), random_tensor<T>({3, 4}, rng)}, 1e-4);
    check_op("structural",
             [](Tape<T>& g, const V& in) {
                 auto tr = transpose(g, in[0]);
                 auto s1 = slice_cols(g, tr, 0, 2);
                 auto s2 = slice_cols(g, tr, 2, 4);
                 auto cc = concat_cols(g, std::vector<Tensor<T>>{s2, s1});
                 return reshape(g, cc, {4, 6});
             },
             {random_tensor<T>({4, 6}, rng)}, 1e-4);
    check_op("reduction",
             [](Tape<T>& g, const V& in) {
                 auto m = mean(g, in[0]);
                 auto s = sum(g, in[0]);
                 return add(g, m, s);
             },
             {random_tensor<T>({7}, rng)}, 1e-4);

    std::cout << "end-to-end BCE gradients on the 4x6 toy grid (tolerance 1e-3):\n";
    LinkConfig link;
    link.n_sym = 4;
    link.n_sc = 6;
    link.pilot_symbols = {1, 3};
    auto code = build_code(link.coded_bits_per_frame(), 0.5, 3);
    DatConfig dc;
    dc.width = 16;
    dc.heads = 2;
    dc.blocks = 2;
    dc.ffn_hidden = 32;
    dc.dropout = 0.0;
    RdnlaConfig rc;
    rc.channels = 8;
    rc.prb_stages = 2;
    rc.dropout = 0.1;
    for (Arch arch : {Arch::Dat, Arch::Rdnla, Arch::Transformer}) {
        Rng mr(67);
        auto model = make_model<T>(arch, link, dc, rc, mr);
        auto frame = gen_frame<T>(link, code, 1.0, 12345);
        auto loss_fn = [&]() {
            Tape<T> g;
            g.set_recording(false);
            Rng drng(frame.dropout_seed);
            auto out = model_forward(g, model, frame.x, true, drng);
            return bce_loss(g, out, frame.bits, frame.mask).item();
        };
        auto params = model.params();
        for (auto& p : params) p.zero_grad();
        {
            Tape<T> g;
            Rng drng(frame.dropout_seed);
            auto out = model_forward(g, model, frame.x, true, drng);
            auto loss = bce_loss(g, out, frame.bits, frame.mask);
            g.backward(loss);
        }
        Rng pick_rng(71);
        auto picks = sample_picks(params, 0.01, pick_rng);
        auto rep = fd_check(loss_fn, params, picks, 1e-5, 1e-3);
        std::printf("  %-12s rel err %.3e over %zu sampled parameters : %s\n",
                    arch_name(arch).c_str(), rep.max_rel, rep.checked,
                    rep.pass(1e-3) ? "ok" : "FAIL");
        ok = ok && rep.pass(1e-3);
    }
    std::cout << (ok ? "gradcheck passed\n" : "gradcheck FAILED\n");
    return ok ? 0 : 1;
}

int cmd_export_alist(const AppConfig& cfg, std::size_t n_override,
                     const std::string& out_path) {
    const std::size_t n = n_override ? n_override : cfg.link.coded_bits_per_frame();
    auto code = build_code(n, cfg.link.code_rate, cfg.link.seed);
    const std::string text = export_alist(code);
    if (out_path.empty()) {
        std::cout << text;
    } else {
        std::ofstream os(out_path);
        NRX_REQUIRE(os.good(), "export-alist: cannot open '" << out_path << "'");
        os << text;
        std::cout << "wrote (" << code.n << "," << code.k << ") parity-check matrix to "
                  << out_path << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"nrxsim: OFDM uplink link simulator with neural receivers"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("-c,--config", config_path, "configuration file (key=value lines)")
        ->check(CLI::ExistingFile);

    auto* sim = app.add_subcommand("simulate", "Monte-Carlo BER/BLER sweep");
    auto* train = app.add_subcommand("train", "train a neural receiver");
    bool resume = false;
    train->add_flag("--resume", resume, "continue from checkpoint_out");
    auto* eval = app.add_subcommand("evaluate", "held-out BCE / raw BER of a checkpoint");
    auto* timing = app.add_subcommand("timing", "per-receiver inference time per resource grid");
    std::vector<std::string> timing_ckpts;
    timing->add_option("--model-checkpoint", timing_ckpts,
                       "checkpoint(s) to time next to the classical receiver");
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    auto* alist = app.add_subcommand("export-alist", "write the LDPC matrix in alist format");
    std::size_t alist_n = 0;
    std::string alist_out;
    alist->add_option("--n", alist_n, "code length (default: coded bits per frame)");
    alist->add_option("--file", alist_out, "output path (default: stdout)");

    std::map<CLI::App*, KeyOverrides> overrides;
    for (auto* cmd : {sim, train, eval, timing, alist}) overrides[cmd].add_flags(cmd);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gradcheck->parsed()) return cmd_gradcheck();
        for (auto* cmd : {sim, train, eval, timing, alist}) {
            if (!cmd->parsed()) continue;
            AppConfig cfg = overrides[cmd].resolve(cmd, config_path);
            if (cmd == sim) return cmd_simulate(cfg);
            if (cmd == train) return cmd_train(cfg, resume);
            if (cmd == eval) return cmd_evaluate(cfg);
            if (cmd == timing) return cmd_timing(cfg, timing_ckpts);
            if (cmd == alist) return cmd_export_alist(cfg, alist_n, alist_out);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
