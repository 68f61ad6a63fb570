#pragma once

#include "cdsr/csc.hpp"
#include "cdsr/encoder.hpp"
#include "cdsr/sr_network.hpp"

namespace cdsr {

/// The full inference pipeline: LPE encoder -> CSC -> conditioned SR trunk.
/// Ablation flags remove modules at construction time; with the patch or pixel
/// branch off the CSC query MLP input width shrinks accordingly.
template <typename S>
struct CdsrModel {
    LpeConfig lpe_cfg;
    SRNetConfig sr_cfg;
    int codebook_len = 1024;
    bool use_csc = true;

    LpeEncoder<S> encoder;
    CscModule<S> csc;
    SrNetwork<S> srnet;

    void init(Rng& rng, const LpeConfig& lc, const SRNetConfig& sc, int codebook_length,
              bool with_csc, bool with_patch, bool with_pixel) {
        lpe_cfg = lc;
        sr_cfg = sc;
        codebook_len = codebook_length;
        use_csc = with_csc;
        CDSR_REQUIRE(sc.embed_dim == lc.embed_dim, "embedding widths must agree");
        encoder.init(rng, lc, with_patch, with_pixel);
        csc.init(rng, codebook_length, lc.embed_dim, encoder.cat_width(), with_csc);
        srnet.init(rng, sc);
    }

    /// LR batch -> E_a [N, C].
    Var<S> embed(Ctx<S>& ctx, Var<S> lr) {
        return csc.compress(ctx, encoder.forward_cat(ctx, lr));
    }

    /// Full SR pass (unclamped output; clamp at image export).
    Var<S> super_resolve(Ctx<S>& ctx, Var<S> lr) {
        return srnet.forward(ctx, lr, embed(ctx, lr));
    }

    /// Every trainable tensor of the inference tower.
    ParamRefs<S> param_refs() {
        ParamRefs<S> r;
        encoder.visit(r, "encoder");
        csc.visit(r, "csc");
        srnet.visit(r, "srnet");
        return r;
    }

    /// Encoder + CSC only (the contrastive tower that gets a momentum copy).
    ParamRefs<S> embedding_refs() {
        ParamRefs<S> r;
        encoder.visit(r, "encoder");
        csc.visit(r, "csc");
        return r;
    }
};

// ---------------------------------------------------------------------------
// Complexity accounting
// ---------------------------------------------------------------------------

struct ModelStats {
    double flops = 0.0;        // one forward pass, multiply-accumulate = 2 flops
    std::int64_t params = 0;   // trainable parameters of the inference tower
};

namespace detail {

inline double conv_flops(double cin, double cout, double k, double oh, double ow) {
    return (2.0 * cin * k * k + 1.0) * cout * oh * ow;  // +1 for the bias add
}
inline double linear_flops(double in, double out) { return 2.0 * in * out + out; }
inline double mlp2_flops(double in, double hidden, double out) {
    return linear_flops(in, hidden) + hidden /*lrelu*/ + linear_flops(hidden, out);
}

}  // namespace detail

/// Deterministic parameter/flop counts for one forward pass of the inference
/// tower on an H x W RGB input. Conventions: one multiply-accumulate is two
/// flops, bias and activation cost one flop per element, softmax four per
/// logit, pixel shuffle is free.
template <typename S>
ModelStats model_stats(CdsrModel<S>& model, int H, int W) {
    using detail::conv_flops;
    using detail::linear_flops;
    using detail::mlp2_flops;

    ModelStats st;
    st.params = model.param_refs().param_count();

    const LpeConfig& lc = model.lpe_cfg;
    const SRNetConfig& sc = model.sr_cfg;
    const double C = lc.embed_dim;
    double fl = 0.0;

    if (model.encoder.use_patch) {
        const double oh = double(H) / lc.patch_size, ow = double(W) / lc.patch_size;
        const double pc = lc.patch_channels;
        fl += conv_flops(3, pc, lc.patch_size, oh, ow);
        for (int i = 0; i < lc.depth_patch; ++i)
            fl += conv_flops(pc, pc, 3, oh, ow) + 2.0 * pc * oh * ow /*bn*/ + pc * oh * ow;
        fl += pc * oh * ow + pc;  // spatial average
        fl += linear_flops(pc, C);
    }
    if (model.encoder.use_pixel) {
        const double xc = lc.pixel_channels;
        for (int i = 0; i < lc.depth_pixel; ++i) {
            fl += conv_flops(i == 0 ? 3 : xc, xc, 3, H, W);
            if (i + 1 < lc.depth_pixel) fl += 2.0 * xc * H * W + xc * H * W;
        }
        fl += xc * H * W + xc;
        fl += linear_flops(xc, C);
    }

    // CSC
    const double catw = model.encoder.cat_width();
    fl += mlp2_flops(catw, C, C);
    if (model.use_csc) {
        const double L = model.codebook_len;
        fl += L * mlp2_flops(C, C, C);        // key MLP over every codebook row
        fl += 2.0 * C * L;                    // Q K^T
        fl += 4.0 * L;                        // softmax
        fl += 2.0 * L * C;                    // weights * Cb
    }

    // SR trunk at LR resolution
    const double nf = sc.trunk_channels, gc = sc.growth_channels, k = sc.dyn_kernel_size;
    fl += conv_flops(3, nf, 3, H, W);
    double block = 0.0;
    for (int d = 0; d < 3; ++d) {
        for (int i = 0; i < 4; ++i)
            block += conv_flops(nf + i * gc, gc, 3, H, W) + gc * H * W /*lrelu*/;
        block += conv_flops(nf + 4 * gc, nf, 3, H, W);
        block += 2.0 * nf * H * W;  // residual blend
    }
    block += 2.0 * nf * H * W;
    double fusion = 0.0;
    switch (sc.fusion) {
        case FusionMode::DQA:
            fusion += nf * H * W + nf;                       // spatial average
            fusion += linear_flops(nf, nf);                  // Q
            fusion += 2.0 * linear_flops(C, nf);             // K, V
            fusion += 8.0 * nf * nf;                         // attention
            fusion += mlp2_flops(nf, sc.filter_hidden, nf * k * k);
            fusion += 2.0 * nf * k * k * H * W;              // dynamic depthwise conv
            fusion += mlp2_flops(nf, sc.ca_hidden, nf) + 4.0 * nf;
            fusion += nf * H * W;                            // channel gate
            break;
        case FusionMode::AdaIN:
            fusion += 2.0 * mlp2_flops(C, nf, nf);
            fusion += 2.0 * nf * H * W;
            break;
        case FusionMode::DynConv:
            fusion += mlp2_flops(C, sc.filter_hidden, nf * k * k);
            fusion += 2.0 * nf * k * k * H * W;
            break;
    }
    fl += sc.num_blocks * (block + fusion);
    fl += conv_flops(nf, nf, 3, H, W) + nf * H * W;  // trunk conv + global residual

    double h = H, w = W;
    for (int r : model.srnet.upsample_stages()) {
        fl += conv_flops(nf, nf * r * r, 3, h, w);
        h *= r;
        w *= r;
        fl += nf * h * w;  // lrelu after shuffle
    }
    fl += conv_flops(nf, nf, 3, h, w) + nf * h * w;
    fl += conv_flops(nf, 3, 3, h, w);

    st.flops = fl;
    return st;
}

}  // namespace cdsr
