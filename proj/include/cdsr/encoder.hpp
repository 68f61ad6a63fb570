#pragma once

#include <vector>

#include "cdsr/nn.hpp"

namespace cdsr {

/// Architecture knobs for the two-branch encoder. The patch branch trades the
/// first convolution for a patch-embedding projection; the pixel branch keeps
/// a fixed moderate receptive field (depth_pixel 3x3 layers).
struct LpeConfig {
    int embed_dim = 256;     // C, length of E_p / E_l
    int patch_size = 8;      // P
    int patch_channels = 64;
    int pixel_channels = 64;
    int depth_patch = 4;     // conv stages after the patch embedding
    int depth_pixel = 5;     // receptive field = 2*depth_pixel + 1
    double slope = 0.2;      // leaky-rectifier slope (1.0 makes activations linear)

    int pixel_receptive_field() const { return 2 * depth_pixel + 1; }
};

/// Content-aware branch: patch embedding, conv stages with batch norm,
/// spatial average, linear head to the embedding width.
template <typename S>
struct PatchSubnet {
    LpeConfig cfg;
    ConvLayer<S> embed;
    std::vector<ConvLayer<S>> convs;
    std::vector<BatchNormLayer<S>> bns;
    LinearLayer<S> head;

    void init(Rng& rng, const LpeConfig& c) {
        cfg = c;
        embed.init(rng, c.patch_channels, 3, c.patch_size,
                   Conv2dOpts{c.patch_size, 0, PadMode::Zero});
        convs.resize(c.depth_patch);
        bns.resize(c.depth_patch);
        for (int i = 0; i < c.depth_patch; ++i) {
            convs[i].init(rng, c.patch_channels, c.patch_channels, 3,
                          Conv2dOpts{1, 1, PadMode::Reflect});
            bns[i].init(c.patch_channels);
        }
        head.init(rng, c.embed_dim, c.patch_channels);
    }

    /// x [N,3,H,W] with P | H and P | W  ->  E_p [N, embed_dim].
    Var<S> forward(Ctx<S>& ctx, Var<S> x) {
        const auto& v = ctx.tape.value(x);
        CDSR_REQUIRE(v.h() % cfg.patch_size == 0 && v.w() % cfg.patch_size == 0,
                     "patch subnet: input sides must be divisible by the patch size");
        Var<S> f = embed.forward(ctx, x);
        for (size_t i = 0; i < convs.size(); ++i) {
            f = convs[i].forward(ctx, f);
            f = bns[i].forward(ctx, f);
            f = leaky_relu(ctx.tape, f, static_cast<S>(cfg.slope));
        }
        return head.forward(ctx, global_avg_pool(ctx.tape, f));
    }

    void visit(ParamRefs<S>& r, const std::string& prefix) {
        embed.visit(r, prefix + ".embed");
        for (size_t i = 0; i < convs.size(); ++i) {
            convs[i].visit(r, prefix + ".conv" + std::to_string(i));
            bns[i].visit(r, prefix + ".bn" + std::to_string(i));
        }
        head.visit(r, prefix + ".head");
    }
};

/// Local degradation branch: stacked 3x3 convolutions (reflect padded, batch
/// normed except the last), spatial average, linear head.
template <typename S>
struct PixelSubnet {
    LpeConfig cfg;
    std::vector<ConvLayer<S>> convs;
    std::vector<BatchNormLayer<S>> bns;
    LinearLayer<S> head;

    void init(Rng& rng, const LpeConfig& c) {
        cfg = c;
        convs.resize(c.depth_pixel);
        bns.resize(c.depth_pixel - 1);
        for (int i = 0; i < c.depth_pixel; ++i) {
            const int cin = i == 0 ? 3 : c.pixel_channels;
            convs[i].init(rng, c.pixel_channels, cin, 3, Conv2dOpts{1, 1, PadMode::Reflect});
            if (i + 1 < c.depth_pixel) bns[i].init(c.pixel_channels);
        }
        head.init(rng, c.embed_dim, c.pixel_channels);
    }

    /// x [N,3,H,W], H and W at least the receptive field  ->  E_l [N, embed_dim].
    Var<S> forward(Ctx<S>& ctx, Var<S> x) {
        const auto& v = ctx.tape.value(x);
        CDSR_REQUIRE(v.h() >= cfg.pixel_receptive_field() && v.w() >= cfg.pixel_receptive_field(),
                     "pixel subnet: input smaller than the receptive field");
        Var<S> f = x;
        for (size_t i = 0; i < convs.size(); ++i) {
            f = convs[i].forward(ctx, f);
            if (i + 1 < convs.size()) {
                f = bns[i].forward(ctx, f);
                f = leaky_relu(ctx.tape, f, static_cast<S>(cfg.slope));
            }
        }
        return head.forward(ctx, global_avg_pool(ctx.tape, f));
    }

    void visit(ParamRefs<S>& r, const std::string& prefix) {
        for (size_t i = 0; i < convs.size(); ++i) {
            convs[i].visit(r, prefix + ".conv" + std::to_string(i));
            if (i < bns.size()) bns[i].visit(r, prefix + ".bn" + std::to_string(i));
        }
        head.visit(r, prefix + ".head");
    }
};

/// Lightweight Patch-based Encoder: either branch can be ablated away; the
/// surviving embeddings are concatenated by the caller.
template <typename S>
struct LpeEncoder {
    LpeConfig cfg;
    bool use_patch = true;
    bool use_pixel = true;
    PatchSubnet<S> patch;
    PixelSubnet<S> pixel;

    void init(Rng& rng, const LpeConfig& c, bool with_patch = true, bool with_pixel = true) {
        cfg = c;
        use_patch = with_patch;
        use_pixel = with_pixel;
        CDSR_REQUIRE(use_patch || use_pixel, "encoder needs at least one branch");
        if (use_patch) patch.init(rng, c);
        if (use_pixel) pixel.init(rng, c);
    }

    /// Concatenated branch output: [N, 2C], or [N, C] when one branch is off.
    Var<S> forward_cat(Ctx<S>& ctx, Var<S> x) {
        if (use_patch && use_pixel) {
            Var<S> ep = patch.forward(ctx, x);
            Var<S> el = pixel.forward(ctx, x);
            return concat_cols(ctx.tape, ep, el);
        }
        return use_patch ? patch.forward(ctx, x) : pixel.forward(ctx, x);
    }

    int cat_width() const { return (use_patch && use_pixel) ? 2 * cfg.embed_dim : cfg.embed_dim; }

    void visit(ParamRefs<S>& r, const std::string& prefix) {
        if (use_patch) patch.visit(r, prefix + ".patch");
        if (use_pixel) pixel.visit(r, prefix + ".pixel");
    }
};

}  // namespace cdsr
