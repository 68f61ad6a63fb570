#pragma once

#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cdsr/checkpoint.hpp"
#include "cdsr/config.hpp"
#include "cdsr/contrastive.hpp"
#include "cdsr/model.hpp"
#include "cdsr/sampler.hpp"

namespace cdsr {

template <typename S>
struct StepMetrics {
    std::int64_t step = 0;
    double l_cl = 0.0;
    double l_1 = 0.0;
    double total = 0.0;
    double lr = 0.0;
};

/// Full training state: the query tower (encoder + CSC + SR network), the
/// momentum key tower (encoder + CSC only), the negative queue, the optimizer
/// clock, and the master RNG. Non-copyable; parameter references point into
/// the module tree.
template <typename S>
class Trainer {
public:
    explicit Trainer(const TrainConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
        cfg_.validate();
        Rng init_rng(Rng::derive_seed(cfg.seed, 0xC0DE));
        model_.init(init_rng, cfg_.lpe_config(), cfg_.sr_config(), cfg_.codebook_length,
                    cfg_.use_CSC, cfg_.use_LPE_P, cfg_.use_LPE_L);
        // The key tower mirrors the embedding pipeline; weights start equal.
        Rng key_rng(Rng::derive_seed(cfg.seed, 0xBEEF));
        key_encoder_.init(key_rng, cfg_.lpe_config(), cfg_.use_LPE_P, cfg_.use_LPE_L);
        key_csc_.init(key_rng, cfg_.codebook_length, cfg_.embed_dim, key_encoder_.cat_width(),
                      cfg_.use_CSC);
        auto q = model_.embedding_refs();
        auto k = key_refs();
        copy_params(q, k);
        queue_ = NegativeQueue<S>(cfg_.queue_size, cfg_.embed_dim);
    }

    Trainer(const Trainer&) = delete;
    Trainer& operator=(const Trainer&) = delete;

    const TrainConfig& config() const { return cfg_; }
    CdsrModel<S>& model() { return model_; }
    NegativeQueue<S>& queue() { return queue_; }
    std::int64_t step() const { return step_; }
    int current_epoch() const { return static_cast<int>(step_ / cfg_.iters_per_epoch); }
    double current_lr() const {
        return lr_schedule(current_epoch(), cfg_.lr0, cfg_.lr_halving_period);
    }

    ParamRefs<S> key_refs() {
        ParamRefs<S> r;
        key_encoder_.visit(r, "encoder");
        key_csc_.visit(r, "csc");
        return r;
    }

    /// Key-tower embedding (no gradients, batch statistics, frozen buffers).
    Var<S> key_embed(Ctx<S>& kctx, Var<S> lr) {
        return key_csc_.compress(kctx, key_encoder_.forward_cat(kctx, lr));
    }

    /// One optimization step on a prepared batch. Both patches pass through
    /// their towers, InfoNCE (once the queue is warm) plus L1 drive the
    /// update, the key tower takes a momentum step, and the new keys are
    /// enqueued.
    StepMetrics<S> train_step(const std::vector<PatchPair>& batch) {
        return step_impl(batch, /*train_sr=*/true);
    }

    /// Contrastive-only phase: the SR network neither runs nor updates.
    StepMetrics<S> pretrain_step(const std::vector<PatchPair>& batch) {
        return step_impl(batch, /*train_sr=*/false);
    }

    std::vector<PatchPair> next_batch() {
        return build_batch(*hr_pool_, cfg_.batch_size, cfg_.scale, cfg_.strategy(),
                           Rng::derive_seed(cfg_.seed, 0xBA7C, static_cast<std::uint64_t>(step_)),
                           cfg_.lr_patch, cfg_.noise_max, cfg_.kernel_size);
    }

    void set_pool(std::shared_ptr<const std::vector<ImagePlane>> pool) { hr_pool_ = std::move(pool); }
    const std::vector<ImagePlane>& pool() const { return *hr_pool_; }

    /// Embedding of LR images through the query tower in eval mode.
    Tensor<S> embed_eval(const Tensor<S>& lr_batch) {
        Tape<S> tape;
        Ctx<S> ctx(tape);
        ctx.training = false;
        ctx.grad_enabled = false;
        Var<S> e = model_.embed(ctx, tape.constant(lr_batch));
        return tape.value(e);
    }

    /// SR output image for one LR input (eval mode, clamped).
    ImagePlane super_resolve(const ImagePlane& lr) {
        Tape<S> tape;
        Ctx<S> ctx(tape);
        ctx.training = false;
        ctx.grad_enabled = false;
        Var<S> out = model_.super_resolve(ctx, tape.constant(lr.to_tensor<S>()));
        ImagePlane img = ImagePlane::from_tensor(tape.value(out), 0, ColorSpace::RGB);
        img.clamp01();
        return img;
    }

    // -- checkpointing --------------------------------------------------

    void save_checkpoint(const std::string& path) {
        Archive a;
        a.put_string("config", cfg_.serialize());
        a.put_i64("step", step_);
        a.put_i64("adam_step", adam_step_);
        a.put_string("rng", rng_.serialize());
        auto save_refs = [&a](ParamRefs<S> refs, const std::string& ns, bool with_adam) {
            for (auto& [name, p] : refs.params) {
                a.put_tensor(ns + name, p->value);
                if (with_adam) {
                    a.put_tensor(ns + name + ".adam_m", p->adam_m);
                    a.put_tensor(ns + name + ".adam_v", p->adam_v);
                }
            }
            for (auto& [name, t] : refs.buffers) a.put_tensor(ns + name + ".buffer", *t);
        };
        save_refs(model_.param_refs(), "q/", true);
        save_refs(key_refs(), "k/", false);
        Tensor<S> qbuf(queue_.capacity(), queue_.dim(), 1, 1);
        qbuf.as_matrix(queue_.capacity(), queue_.dim()) = queue_.raw_buffer();
        a.put_tensor("queue/buffer", qbuf);
        a.put_i64("queue/head", queue_.head());
        a.put_i64("queue/fill", queue_.fill());
        a.save(path);
    }

    static std::unique_ptr<Trainer> load_checkpoint(const std::string& path) {
        Archive a = Archive::load(path);
        TrainConfig cfg = parse_config_text(a.get_string("config"));
        auto tr = std::make_unique<Trainer>(cfg);
        tr->step_ = a.get_i64("step");
        tr->adam_step_ = a.get_i64("adam_step");
        tr->rng_.deserialize(a.get_string("rng"));
        auto load_refs = [&a](ParamRefs<S> refs, const std::string& ns, bool with_adam) {
            for (auto& [name, p] : refs.params) {
                p->value = a.get_tensor<S>(ns + name);
                if (with_adam) {
                    p->adam_m = a.get_tensor<S>(ns + name + ".adam_m");
                    p->adam_v = a.get_tensor<S>(ns + name + ".adam_v");
                }
            }
            for (auto& [name, t] : refs.buffers) *t = a.get_tensor<S>(ns + name + ".buffer");
        };
        load_refs(tr->model_.param_refs(), "q/", true);
        load_refs(tr->key_refs(), "k/", false);
        Tensor<S> qbuf = a.get_tensor<S>("queue/buffer");
        tr->queue_.raw_buffer() = qbuf.as_matrix(qbuf.n(), qbuf.c());
        tr->queue_.restore(a.get_i64("queue/head"), a.get_i64("queue/fill"));
        return tr;
    }

private:
    StepMetrics<S> step_impl(const std::vector<PatchPair>& batch, bool train_sr) {
        CDSR_REQUIRE(static_cast<int>(batch.size()) == cfg_.batch_size,
                     "train_step: batch size does not match the configuration");
        const int B = cfg_.batch_size;
        const int lrp = cfg_.lr_patch;
        const int hrp = cfg_.lr_patch * cfg_.scale;

        Tensor<S> anchors(B, 3, lrp, lrp), positives(B, 3, lrp, lrp), hr(B, 3, hrp, hrp);
        for (int i = 0; i < B; ++i) {
            pack_into(batch[i].p0, anchors, i);
            pack_into(batch[i].p1, positives, i);
            pack_into(batch[i].hr0, hr, i);
        }

        Tape<S> tape;
        Ctx<S> ctx(tape);
        ctx.training = true;
        ctx.grad_enabled = true;

        Var<S> lr_anchor = tape.constant(std::move(anchors));
        Var<S> e_a = model_.embed(ctx, lr_anchor);
        Var<S> anchors_n = l2_normalize_rows(tape, e_a);

        Ctx<S> kctx(tape);
        kctx.training = true;
        kctx.grad_enabled = false;
        kctx.update_running = false;
        Var<S> keys_n = l2_normalize_rows(tape, key_embed(kctx, tape.constant(std::move(positives))));

        // Loss assembly; the contrastive term waits for queue warm-up.
        const bool cl_active = queue_.fill() >= B;
        Var<S> l_cl = cl_active
                          ? info_nce_loss(tape, anchors_n, keys_n, queue_,
                                          static_cast<S>(cfg_.tau),
                                          cfg_.include_positive_in_denominator)
                          : tape.constant(Tensor<S>::scalar(S(0)));
        Var<S> total = l_cl;
        double l1_value = 0.0;
        if (train_sr) {
            Var<S> sr = model_.srnet.forward(ctx, lr_anchor, e_a);
            Var<S> l1 = l1_loss(tape, sr, tape.constant(std::move(hr)));
            l1_value = static_cast<double>(tape.value(l1).data[0]);
            total = add(tape, l_cl, l1);
        }

        StepMetrics<S> m;
        m.step = step_;
        m.l_cl = static_cast<double>(tape.value(l_cl).data[0]);
        m.l_1 = l1_value;
        m.total = static_cast<double>(tape.value(total).data[0]);
        m.lr = current_lr();
        if (!std::isfinite(m.total))
            throw std::runtime_error("train_step: non-finite loss at step " +
                                     std::to_string(step_) + " (l_cl=" + std::to_string(m.l_cl) +
                                     ", l_1=" + std::to_string(m.l_1) + ")");

        ParamRefs<S> updatable = train_sr ? model_.param_refs() : model_.embedding_refs();
        zero_grads(updatable);
        tape.backward(total);
        ctx.collect_grads();

        AdamConfig ac;
        ac.lr = m.lr;
        ac.beta1 = cfg_.adam_beta1;
        ac.beta2 = cfg_.adam_beta2;
        adam_step(updatable, ac, ++adam_step_);

        auto q = model_.embedding_refs();
        auto k = key_refs();
        momentum_update(q, k, static_cast<S>(cfg_.momentum));

        const auto& keys_val = tape.value(keys_n);
        queue_.enqueue(MatX<S>(keys_val.as_matrix(B, cfg_.embed_dim)));

        ++step_;
        return m;
    }

    static void pack_into(const ImagePlane& img, Tensor<S>& dst, int n) {
        CDSR_REQUIRE(img.channels() == static_cast<int>(dst.c()) && img.height() == dst.h() &&
                         img.width() == dst.w(),
                     "batch image does not match the expected patch size");
        for (int c = 0; c < img.channels(); ++c) {
            S* out = dst.plane(n, c);
            const auto& p = img.planes[c];
            for (Eigen::Index y = 0; y < p.rows(); ++y)
                for (Eigen::Index x = 0; x < p.cols(); ++x)
                    out[y * p.cols() + x] = static_cast<S>(p(y, x));
        }
    }

    TrainConfig cfg_;
    CdsrModel<S> model_;
    LpeEncoder<S> key_encoder_;
    CscModule<S> key_csc_;
    NegativeQueue<S> queue_;
    std::shared_ptr<const std::vector<ImagePlane>> hr_pool_;
    std::int64_t step_ = 0;
    std::int64_t adam_step_ = 0;
    Rng rng_;
};

/// Run `epochs * iters_per_epoch` steps (after an optional contrastive
/// pretraining phase), appending metrics CSV rows and checkpointing into
/// out_dir. Returns the last metrics row.
template <typename S>
StepMetrics<S> run_training(Trainer<S>& trainer, const std::string& out_dir,
                            int checkpoint_every_epochs = 25,
                            const std::function<void(const StepMetrics<S>&)>& on_step = nullptr) {
    const TrainConfig& cfg = trainer.config();
    std::string metrics_path = out_dir + "/metrics.csv";
    std::ofstream metrics(metrics_path, std::ios::app);
    if (!metrics) throw std::runtime_error("cannot open metrics log: " + metrics_path);
    if (metrics.tellp() == 0) metrics << "step,l_cl,l_1,total,lr\n";
    metrics.precision(10);

    StepMetrics<S> last;
    const std::int64_t pretrain_steps =
        static_cast<std::int64_t>(cfg.pretrain_encoder_epochs) * cfg.iters_per_epoch;
    const std::int64_t total_steps =
        static_cast<std::int64_t>(cfg.epochs) * cfg.iters_per_epoch + pretrain_steps;
    while (trainer.step() < total_steps) {
        auto batch = trainer.next_batch();
        last = trainer.step() < pretrain_steps ? trainer.pretrain_step(batch)
                                               : trainer.train_step(batch);
        metrics << last.step << ',' << last.l_cl << ',' << last.l_1 << ',' << last.total << ','
                << last.lr << '\n';
        if (on_step) on_step(last);
        const std::int64_t done = trainer.step();
        if (done % (static_cast<std::int64_t>(checkpoint_every_epochs) * cfg.iters_per_epoch) ==
                0 ||
            done == total_steps) {
            metrics.flush();
            trainer.save_checkpoint(out_dir + "/checkpoint.ckpt");
        }
    }
    trainer.save_checkpoint(out_dir + "/checkpoint.ckpt");
    return last;
}

}  // namespace cdsr
