#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdsr/nn.hpp"

namespace cdsr {

enum class FusionMode { DQA, AdaIN, DynConv };

inline const char* to_string(FusionMode m) {
    switch (m) {
        case FusionMode::DQA: return "DQA";
        case FusionMode::AdaIN: return "AdaIN";
        case FusionMode::DynConv: return "DynConv";
    }
    return "?";
}

inline FusionMode fusion_from_string(const std::string& s) {
    if (s == "DQA" || s == "dqa") return FusionMode::DQA;
    if (s == "AdaIN" || s == "adain") return FusionMode::AdaIN;
    if (s == "DynConv" || s == "dynconv") return FusionMode::DynConv;
    throw ParameterError("unknown fusion mode: " + s);
}

struct SRNetConfig {
    int num_blocks = 10;
    int trunk_channels = 64;
    int growth_channels = 16;   // dense-block growth width
    int dyn_kernel_size = 3;    // odd
    FusionMode fusion = FusionMode::DQA;
    int scale = 2;              // in {2,3,4}
    int embed_dim = 256;        // width of E_a
    int filter_hidden = 1024;   // hidden width of the dynamic-filter generator
    int ca_hidden = 128;        // hidden width of the channel-attention MLP
    double residual_scale = 0.2;
    double slope = 0.2;

    void validate() const {
        CDSR_REQUIRE(dyn_kernel_size % 2 == 1, "dyn_kernel_size must be odd");
        CDSR_REQUIRE(scale == 2 || scale == 3 || scale == 4, "scale must be in {2,3,4}");
        CDSR_REQUIRE(num_blocks >= 0 && trunk_channels > 0 && growth_channels > 0,
                     "invalid SR network dimensions");
    }
};

// ---------------------------------------------------------------------------
// RRDB trunk
// ---------------------------------------------------------------------------

/// 5-conv dense block with local residual: y = x + rs * c5([x,c1..c4]).
template <typename S>
struct DenseBlock {
    std::vector<ConvLayer<S>> convs;  // 5
    S residual_scale, slope;

    void init(Rng& rng, int nf, int gc, double rs, double slp) {
        residual_scale = static_cast<S>(rs);
        slope = static_cast<S>(slp);
        convs.resize(5);
        for (int i = 0; i < 4; ++i)
            convs[i].init(rng, gc, nf + i * gc, 3, Conv2dOpts{1, 1, PadMode::Zero}, 0.1);
        convs[4].init(rng, nf, nf + 4 * gc, 3, Conv2dOpts{1, 1, PadMode::Zero}, 0.1);
    }

    Var<S> forward(Ctx<S>& ctx, Var<S> x) {
        std::vector<Var<S>> feats{x};
        for (int i = 0; i < 4; ++i) {
            Var<S> c = convs[i].forward_multi(ctx, feats);
            feats.push_back(leaky_relu(ctx.tape, c, slope));
        }
        Var<S> c5 = convs[4].forward_multi(ctx, feats);
        return axpy(ctx.tape, x, c5, residual_scale);
    }

    void visit(ParamRefs<S>& r, const std::string& prefix) {
        for (int i = 0; i < 5; ++i) convs[i].visit(r, prefix + ".conv" + std::to_string(i));
    }
};

/// Residual-in-residual dense block: y = x + rs * DB3(DB2(DB1(x))).
template <typename S>
struct Rrdb {
    DenseBlock<S> db[3];
    S residual_scale;

    void init(Rng& rng, int nf, int gc, double rs, double slope) {
        residual_scale = static_cast<S>(rs);
        for (auto& d : db) d.init(rng, nf, gc, rs, slope);
    }

    Var<S> forward(Ctx<S>& ctx, Var<S> x) {
        Var<S> f = db[0].forward(ctx, x);
        f = db[1].forward(ctx, f);
        f = db[2].forward(ctx, f);
        return axpy(ctx.tape, x, f, residual_scale);
    }

    void visit(ParamRefs<S>& r, const std::string& prefix) {
        for (int i = 0; i < 3; ++i) db[i].visit(r, prefix + ".db" + std::to_string(i));
    }
};

// ---------------------------------------------------------------------------
// Embedding fusion blocks
// ---------------------------------------------------------------------------

/// Domain query attention. The spatial average of the block feature forms the
/// query tokens; keys and values are linear projections of E_a; each token is
/// a single channel entry and the key count sets the softmax width. The
/// attended vector E_d drives a depthwise dynamic filter and a sigmoid channel
/// gate.
template <typename S>
struct DqaFusion {
    SRNetConfig cfg;
    LinearLayer<S> q_proj, k_proj, v_proj;
    Mlp2<S> filter_gen;
    Mlp2<S> ca_mlp;

    void init(Rng& rng, const SRNetConfig& c) {
        cfg = c;
        const int nf = c.trunk_channels;
        q_proj.init(rng, nf, nf);
        k_proj.init(rng, nf, c.embed_dim);
        v_proj.init(rng, nf, c.embed_dim);
        filter_gen.init(rng, nf * c.dyn_kernel_size * c.dyn_kernel_size, c.filter_hidden, nf);
        ca_mlp.init(rng, nf, c.ca_hidden, nf);
        seed_identity_filter();
        // Start the gate mostly open; a 0.5 gate stacked over many blocks
        // would squash the trunk at init.
        ca_mlp.fc2.w.value.data.setZero();
        ca_mlp.fc2.b.value.data.setConstant(S(3));
    }

    /// Bias the generator toward a delta filter so each block starts as a
    /// near-identity and the trunk trains stably from step one.
    void seed_identity_filter() {
        const int k = cfg.dyn_kernel_size;
        filter_gen.fc2.w.value.data.setZero();
        auto& b = filter_gen.fc2.b.value;
        b.data.setZero();
        for (int c = 0; c < cfg.trunk_channels; ++c) b.data[c * k * k + (k * k) / 2] = S(1);
    }

    Var<S> attend(Ctx<S>& ctx, Var<S> f, Var<S> e_a) {
        Var<S> favg = global_avg_pool(ctx.tape, f);
        Var<S> q = q_proj.forward(ctx, favg);
        Var<S> k = k_proj.forward(ctx, e_a);
        Var<S> v = v_proj.forward(ctx, e_a);
        const S att_scale = S(1) / std::sqrt(static_cast<S>(cfg.trunk_channels));
        return rowwise_attention(ctx.tape, q, k, v, att_scale);
    }

    Var<S> dynamic_filter(Ctx<S>& ctx, Var<S> f, Var<S> e_d) {
        Var<S> filters = filter_gen.forward(ctx, e_d);
        return dynamic_depthwise_conv(ctx.tape, f, filters, cfg.dyn_kernel_size);
    }

    Var<S> channel_attention(Ctx<S>& ctx, Var<S> f, Var<S> e_d) {
        Var<S> coeff = sigmoid(ctx.tape, ca_mlp.forward(ctx, e_d));
        return channel_scale(ctx.tape, f, coeff);
    }

    Var<S> forward(Ctx<S>& ctx, Var<S> f, Var<S> e_a) {
        Var<S> e_d = attend(ctx, f, e_a);
        Var<S> filtered = dynamic_filter(ctx, f, e_d);
        return channel_attention(ctx, filtered, e_d);
    }

    void visit(ParamRefs<S>& r, const std::string& prefix) {
        q_proj.visit(r, prefix + ".q_proj");
        k_proj.visit(r, prefix + ".k_proj");
        v_proj.visit(r, prefix + ".v_proj");
        filter_gen.visit(r, prefix + ".filter_gen");
        ca_mlp.visit(r, prefix + ".ca_mlp");
    }
};

/// AdaIN-style fusion: F~ = beta(E_a) * F + gamma(E_a), broadcast spatially.
template <typename S>
struct AdainFusion {
    Mlp2<S> beta_mlp, gamma_mlp;

    void init(Rng& rng, const SRNetConfig& c) {
        const int nf = c.trunk_channels;
        beta_mlp.init(rng, nf, nf, c.embed_dim);
        gamma_mlp.init(rng, nf, nf, c.embed_dim);
        // Start at beta=1, gamma=0 (identity).
        beta_mlp.fc2.w.value.data.setZero();
        beta_mlp.fc2.b.value.data.setOnes();
        gamma_mlp.fc2.w.value.data.setZero();
        gamma_mlp.fc2.b.value.data.setZero();
    }

    Var<S> forward(Ctx<S>& ctx, Var<S> f, Var<S> e_a) {
        Var<S> beta = beta_mlp.forward(ctx, e_a);
        Var<S> gamma = gamma_mlp.forward(ctx, e_a);
        return channel_bias(ctx.tape, channel_scale(ctx.tape, f, beta), gamma);
    }

    void visit(ParamRefs<S>& r, const std::string& prefix) {
        beta_mlp.visit(r, prefix + ".beta_mlp");
        gamma_mlp.visit(r, prefix + ".gamma_mlp");
    }
};

/// Plain dynamic convolution: depthwise filters generated from E_a directly,
/// no attention, no channel gate.
template <typename S>
struct DynConvFusion {
    SRNetConfig cfg;
    Mlp2<S> filter_gen;

    void init(Rng& rng, const SRNetConfig& c) {
        cfg = c;
        const int k = c.dyn_kernel_size;
        filter_gen.init(rng, c.trunk_channels * k * k, c.filter_hidden, c.embed_dim);
        filter_gen.fc2.w.value.data.setZero();
        auto& b = filter_gen.fc2.b.value;
        b.data.setZero();
        for (int ch = 0; ch < c.trunk_channels; ++ch) b.data[ch * k * k + (k * k) / 2] = S(1);
    }

    Var<S> forward(Ctx<S>& ctx, Var<S> f, Var<S> e_a) {
        Var<S> filters = filter_gen.forward(ctx, e_a);
        return dynamic_depthwise_conv(ctx.tape, f, filters, cfg.dyn_kernel_size);
    }

    void visit(ParamRefs<S>& r, const std::string& prefix) {
        filter_gen.visit(r, prefix + ".filter_gen");
    }
};

template <typename S>
struct FusionBlock {
    FusionMode mode = FusionMode::DQA;
    DqaFusion<S> dqa;
    AdainFusion<S> adain;
    DynConvFusion<S> dynconv;

    void init(Rng& rng, const SRNetConfig& c) {
        mode = c.fusion;
        switch (mode) {
            case FusionMode::DQA: dqa.init(rng, c); break;
            case FusionMode::AdaIN: adain.init(rng, c); break;
            case FusionMode::DynConv: dynconv.init(rng, c); break;
        }
    }

    Var<S> forward(Ctx<S>& ctx, Var<S> f, Var<S> e_a) {
        switch (mode) {
            case FusionMode::DQA: return dqa.forward(ctx, f, e_a);
            case FusionMode::AdaIN: return adain.forward(ctx, f, e_a);
            case FusionMode::DynConv: return dynconv.forward(ctx, f, e_a);
        }
        throw StateError("invalid fusion mode");
    }

    void visit(ParamRefs<S>& r, const std::string& prefix) {
        switch (mode) {
            case FusionMode::DQA: dqa.visit(r, prefix + ".dqa"); break;
            case FusionMode::AdaIN: adain.visit(r, prefix + ".adain"); break;
            case FusionMode::DynConv: dynconv.visit(r, prefix + ".dynconv"); break;
        }
    }
};

// ---------------------------------------------------------------------------
// SR network
// ---------------------------------------------------------------------------

/// Shallow conv -> num_blocks x (RRDB + fusion) -> trunk conv + global
/// residual -> pixel-shuffle upsampler -> HR conv head.
template <typename S>
struct SrNetwork {
    SRNetConfig cfg;
    ConvLayer<S> conv_first;
    std::vector<Rrdb<S>> blocks;
    std::vector<FusionBlock<S>> fusions;
    ConvLayer<S> trunk_conv;
    std::vector<ConvLayer<S>> up_convs;  // one per pixel-shuffle stage
    ConvLayer<S> conv_hr, conv_last;

    void init(Rng& rng, const SRNetConfig& c) {
        c.validate();
        cfg = c;
        const int nf = c.trunk_channels;
        conv_first.init(rng, nf, 3, 3, Conv2dOpts{1, 1, PadMode::Zero});
        blocks.resize(c.num_blocks);
        fusions.resize(c.num_blocks);
        for (int i = 0; i < c.num_blocks; ++i) {
            blocks[i].init(rng, nf, c.growth_channels, c.residual_scale, c.slope);
            fusions[i].init(rng, c);
        }
        trunk_conv.init(rng, nf, nf, 3, Conv2dOpts{1, 1, PadMode::Zero});
        const auto stages = upsample_stages();
        up_convs.resize(stages.size());
        for (size_t i = 0; i < stages.size(); ++i)
            up_convs[i].init(rng, nf * stages[i] * stages[i], nf, 3,
                             Conv2dOpts{1, 1, PadMode::Zero});
        conv_hr.init(rng, nf, nf, 3, Conv2dOpts{1, 1, PadMode::Zero});
        conv_last.init(rng, 3, nf, 3, Conv2dOpts{1, 1, PadMode::Zero});
    }

    std::vector<int> upsample_stages() const {
        if (cfg.scale == 2) return {2};
        if (cfg.scale == 3) return {3};
        return {2, 2};
    }

    /// lr [N,3,H,W], e_a [N,embed_dim]  ->  [N,3,H*s,W*s] (unclamped).
    Var<S> forward(Ctx<S>& ctx, Var<S> lr, Var<S> e_a) {
        const auto& ve = ctx.tape.value(e_a);
        CDSR_REQUIRE(ve.size() / ve.n() == cfg.embed_dim, "sr_forward: embedding width mismatch");
        Var<S> shallow = conv_first.forward(ctx, lr);
        Var<S> f = shallow;
        for (int i = 0; i < cfg.num_blocks; ++i) {
            f = blocks[i].forward(ctx, f);
            f = fusions[i].forward(ctx, f, e_a);
        }
        f = trunk_conv.forward(ctx, f);
        f = add(ctx.tape, f, shallow);
        size_t stage = 0;
        for (int r : upsample_stages()) {
            f = up_convs[stage++].forward(ctx, f);
            f = pixel_shuffle(ctx.tape, f, r);
            f = leaky_relu(ctx.tape, f, static_cast<S>(cfg.slope));
        }
        f = leaky_relu(ctx.tape, conv_hr.forward(ctx, f), static_cast<S>(cfg.slope));
        return conv_last.forward(ctx, f);
    }

    void visit(ParamRefs<S>& r, const std::string& prefix) {
        conv_first.visit(r, prefix + ".conv_first");
        for (int i = 0; i < cfg.num_blocks; ++i) {
            blocks[i].visit(r, prefix + ".rrdb" + std::to_string(i));
            fusions[i].visit(r, prefix + ".fusion" + std::to_string(i));
        }
        trunk_conv.visit(r, prefix + ".trunk_conv");
        for (size_t i = 0; i < up_convs.size(); ++i)
            up_convs[i].visit(r, prefix + ".up" + std::to_string(i));
        conv_hr.visit(r, prefix + ".conv_hr");
        conv_last.visit(r, prefix + ".conv_last");
    }
};

}  // namespace cdsr
