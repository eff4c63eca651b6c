#pragma once

// End-to-end training: fresh random frames per iteration (bits -> LDPC ->
// QAM -> grid -> channel -> noise), masked BCE between predicted LLRs and
// the transmitted coded bits, Adam updates, metrics CSV and checkpoints.
//
// Every random draw is derived from (seed, iteration, frame), so a resumed
// run or a re-run reproduces the same trace; multi-worker batches shard
// frames and reduce gradients in a fixed order.

#include <fstream>
#include <iomanip>
#include <thread>

#include "nrx/checkpoint.hpp"
#include "nrx/ldpc.hpp"
#include "nrx/model.hpp"
#include "nrx/phy.hpp"
#include "nrx/timer.hpp"

namespace nrx {

struct TrainConfig {
    std::size_t batch = 128;
    std::size_t iters = 20000;
    double snr_lo_db = -3.0;
    double snr_hi_db = 3.0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 1;
    std::size_t checkpoint_every = 1000;
    std::string checkpoint_path;  // empty: no checkpoints
    std::size_t workers = 1;

    void validate() const {
        NRX_REQUIRE(batch >= 1, "train: batch must be >= 1");
        NRX_REQUIRE(iters >= 1, "train: iters must be >= 1");
        NRX_REQUIRE(snr_hi_db >= snr_lo_db, "train: empty SNR range ["
                                                << snr_lo_db << "," << snr_hi_db << "]");
        NRX_REQUIRE(workers >= 1, "train: workers must be >= 1");
    }
};

struct TrainRecord {
    std::size_t iteration = 0;  // 1-based
    double loss = 0.0;
    double ebn0_db = 0.0;
    double seconds = 0.0;
};

// Per-iteration training SNR, uniform over the configured range.
inline double sampled_snr(const TrainConfig& cfg, std::size_t iter) {
    Rng rng(derive_seed(derive_seed(cfg.seed, 0xEB), iter));
    return rng.uniform(cfg.snr_lo_db, cfg.snr_hi_db);
}

// Masked binary cross entropy in the stable logit form:
// mean over mask of [softplus(L) - B .* L]; bits and mask are constants.
template <class T>
Tensor<T> bce_loss(Tape<T>& g, const Tensor<T>& llrs, const Tensor<T>& bits,
                   const Tensor<T>& mask) {
    NRX_REQUIRE(llrs.shape() == bits.shape() && llrs.shape() == mask.shape(),
                "bce_loss: shape mismatch " << shape_str(llrs.shape()) << " vs "
                                            << shape_str(bits.shape()) << " vs "
                                            << shape_str(mask.shape()));
    T count = T(0);
    for (const T v : mask.value()) count += v;
    NRX_REQUIRE(count > T(0), "bce_loss: empty mask");
    Tensor<T> e = sub(g, softplus(g, llrs), mul(g, llrs, bits));
    return scale(g, sum(g, mul(g, e, mask)), T(1) / count);
}

// One simulated frame ready for training.
template <class T>
struct FrameSample {
    Tensor<T> x;     // network input
    Tensor<T> bits;  // coded bits on the grid, 0 at pilot symbols
    Tensor<T> mask;  // 1 at data REs
    std::uint64_t dropout_seed = 0;
    double n0 = 0.0;
};

template <class T>
FrameSample<T> gen_frame(const LinkConfig& link, const LdpcCode& code, double ebn0_db,
                         std::uint64_t frame_seed) {
    Rng rng(frame_seed);
    std::vector<std::uint8_t> msg(code.k);
    for (auto& b : msg) b = static_cast<std::uint8_t>(rng.bit());
    const auto cw = encode(code, msg);
    const double n0 = ebn0_db_to_n0(ebn0_db, link.code_rate, link.bits_per_symbol);
    auto tx = build_tx_grid(map_bits_to_qam(cw, link.bits_per_symbol), link);
    auto ch = gen_channel(link, rng, n0);
    auto y = apply_channel(tx, ch, rng);

    FrameSample<T> f;
    f.x = preprocess_input<T>(y, n0);
    f.n0 = n0;
    f.dropout_seed = derive_seed(frame_seed, 0xD0);
    f.bits = Tensor<T>::zeros({link.n_sym, link.n_sc, link.bits_per_symbol});
    f.mask = Tensor<T>::zeros({link.n_sym, link.n_sc, link.bits_per_symbol});
    std::size_t i = 0;
    for (const auto& [k, s] : data_positions(link))
        for (std::size_t b = 0; b < link.bits_per_symbol; ++b) {
            const std::size_t at = (k * link.n_sc + s) * link.bits_per_symbol + b;
            f.bits.value()[at] = static_cast<T>(cw[i++]);
            f.mask.value()[at] = T(1);
        }
    return f;
}

// Forward + masked BCE + backward with the 1/batch factor folded into the
// loss; returns the frame's unscaled loss.
template <class T>
double frame_fwd_bwd(Model<T>& model, const FrameSample<T>& frame, std::size_t batch) {
    Tape<T> g;
    Rng drng(frame.dropout_seed);
    Tensor<T> out = model_forward(g, model, frame.x, true, drng);
    Tensor<T> lf = bce_loss(g, out, frame.bits, frame.mask);
    Tensor<T> scaled = scale(g, lf, T(1) / static_cast<T>(batch));
    g.backward(scaled);
    return static_cast<double>(lf.item());
}

template <class T>
class Trainer {
  public:
    Trainer(Model<T>& model, const LdpcCode& code, TrainConfig cfg)
        : model_(&model), code_(&code), cfg_(cfg) {
        cfg_.validate();
        auto params = model.params();
        opt_.lr = cfg.lr;
        opt_.beta1 = cfg.beta1;
        opt_.beta2 = cfg.beta2;
        opt_.eps = cfg.adam_eps;
        opt_.init(params);
        if (cfg_.workers > 1) {
            Rng dummy(0);
            for (std::size_t w = 0; w < cfg_.workers; ++w) {
                if (model.arch == Arch::Rdnla)
                    clones_.push_back(make_model<T>(model.arch, model.rdnla.link,
                                                    DatConfig{}, model.rdnla.cfg, dummy));
                else
                    clones_.push_back(make_model<T>(model.arch, model.dat.link, model.dat.cfg,
                                                    RdnlaConfig{}, dummy));
            }
        }
    }

    AdamState<T>& opt() { return opt_; }

    // iter is 0-based; the emitted record is 1-based.
    TrainRecord step(std::size_t iter) {
        Timer timer;
        const double ebn0 = sampled_snr(cfg_, iter);
        const std::uint64_t base = derive_seed(cfg_.seed, 0xF0);

        auto params = model_->params();
        for (auto& p : params) p.zero_grad();

        double loss = 0.0;
        const std::size_t b = cfg_.batch;
        if (cfg_.workers == 1) {
            for (std::size_t f = 0; f < b; ++f) {
                auto frame = gen_frame<T>(model_->link(), *code_, ebn0,
                                          derive_seed(base, iter * b + f));
                loss += frame_fwd_bwd(*model_, frame, b) / static_cast<double>(b);
            }
        } else {
            const std::size_t w_count = std::min(cfg_.workers, b);
            std::vector<double> wloss(w_count, 0.0);
            std::vector<std::thread> threads;
            for (std::size_t w = 0; w < w_count; ++w) {
                // refresh clone parameter values from the master
                auto cp = clones_[w].params();
                for (std::size_t p = 0; p < params.size(); ++p) {
                    cp[p].value() = params[p].value();
                    cp[p].zero_grad();
                }
                threads.emplace_back([this, w, w_count, b, ebn0, base, iter, &wloss] {
                    const std::size_t lo = w * b / w_count, hi = (w + 1) * b / w_count;
                    for (std::size_t f = lo; f < hi; ++f) {
                        auto frame = gen_frame<T>(model_->link(), *code_, ebn0,
                                                  derive_seed(base, iter * b + f));
                        wloss[w] += frame_fwd_bwd(clones_[w], frame, b) /
                                    static_cast<double>(b);
                    }
                });
            }
            for (auto& t : threads) t.join();
            // reduce in worker order for a deterministic sum
            for (std::size_t w = 0; w < w_count; ++w) {
                loss += wloss[w];
                auto cp = clones_[w].params();
                for (std::size_t p = 0; p < params.size(); ++p) {
                    auto& dst = params[p].grad();
                    const auto& src = cp[p].grad();
                    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
                }
            }
        }
        NRX_REQUIRE(std::isfinite(loss),
                    "train_step: non-finite loss " << loss << " at iteration " << iter + 1);
        adam_step(params, opt_);

        TrainRecord rec;
        rec.iteration = iter + 1;
        rec.loss = loss;
        rec.ebn0_db = ebn0;
        rec.seconds = timer.seconds();
        return rec;
    }

    // Runs from the optimizer's current step to cfg.iters; appends one CSV row
    // per iteration when a metrics stream is given.
    std::vector<TrainRecord> run(std::ostream* metrics = nullptr) {
        std::vector<TrainRecord> records;
        if (metrics && opt_.step == 0) *metrics << "iteration,loss,ebn0_db,seconds\n";
        for (std::size_t iter = opt_.step; iter < cfg_.iters; ++iter) {
            TrainRecord rec = step(iter);
            records.push_back(rec);
            if (metrics) {
                *metrics << rec.iteration << ',' << std::setprecision(17) << rec.loss << ','
                         << rec.ebn0_db << ',' << std::setprecision(6) << rec.seconds << '\n';
                metrics->flush();
            }
            const bool last = iter + 1 == cfg_.iters;
            if (!cfg_.checkpoint_path.empty() &&
                (last || (cfg_.checkpoint_every > 0 && rec.iteration % cfg_.checkpoint_every == 0)))
                save_checkpoint(cfg_.checkpoint_path, *model_, &opt_);
        }
        return records;
    }

  private:
    Model<T>* model_;
    const LdpcCode* code_;
    TrainConfig cfg_;
    AdamState<T> opt_;
    std::vector<Model<T>> clones_;
};

// Held-out evaluation on fresh frames: mean masked BCE and the hard-decision
// BER of the raw LLRs.
struct EvalResult {
    double bce = 0.0;
    double hard_ber = 0.0;
    std::size_t bits = 0;
};

template <class T>
EvalResult evaluate_model(Model<T>& model, const LdpcCode& code, std::size_t n_frames,
                          double snr_lo_db, double snr_hi_db, std::uint64_t eval_seed) {
    const LinkConfig& link = model.link();
    Rng snr_rng(derive_seed(eval_seed, 0x11));
    EvalResult r;
    double bce_acc = 0.0;
    std::size_t errs = 0, bits = 0;
    for (std::size_t f = 0; f < n_frames; ++f) {
        const double ebn0 = snr_rng.uniform(snr_lo_db, snr_hi_db);
        auto frame = gen_frame<T>(link, code, ebn0, derive_seed(eval_seed, 0x1000 + f));
        Tape<T> g;
        g.set_recording(false);
        Rng drng(frame.dropout_seed);
        Tensor<T> out = model_forward(g, model, frame.x, false, drng);
        Tensor<T> lf = bce_loss(g, out, frame.bits, frame.mask);
        bce_acc += static_cast<double>(lf.item());
        for (std::size_t i = 0; i < out.numel(); ++i) {
            if (frame.mask.value()[i] == T(0)) continue;
            const bool hat = out.value()[i] > T(0);
            const bool tx = frame.bits.value()[i] > T(0.5);
            errs += hat != tx;
            ++bits;
        }
    }
    r.bce = bce_acc / static_cast<double>(n_frames);
    r.hard_ber = static_cast<double>(errs) / static_cast<double>(bits);
    r.bits = bits;
    return r;
}

}  // namespace nrx
