#pragma once

#include "cdsr/nn.hpp"

namespace cdsr {

/// Codebook-based space compression: the concatenated branch embedding
/// queries a learnable L x C codebook through softmax attention,
///   Q = mlp_q(E_cat),  K = mlp_k(Cb),  E_a = softmax(Q K^T) Cb,
/// so E_a always lies in the convex hull of the codebook rows. With the
/// module disabled the query MLP output is used as E_a directly.
template <typename S>
struct CscModule {
    int codebook_len = 1024;
    int embed_dim = 256;
    bool use_codebook = true;

    Param<S> codebook;  // [L, C]
    Mlp2<S> query_mlp;  // in: cat width, hidden C, out C
    Mlp2<S> key_mlp;    // row-wise C -> C

    void init(Rng& rng, int L, int C, int cat_width, bool with_codebook) {
        codebook_len = L;
        embed_dim = C;
        use_codebook = with_codebook;
        query_mlp.init(rng, C, C, cat_width);
        if (use_codebook) {
            key_mlp.init(rng, C, C, C);
            codebook.setup(L, C);
            fill_normal(rng, codebook.value, 1.0 / std::sqrt(static_cast<double>(C)));
        }
    }

    /// E_cat [N, cat_width] -> E_a [N, C].
    Var<S> compress(Ctx<S>& ctx, Var<S> e_cat) {
        Var<S> q = query_mlp.forward(ctx, e_cat);
        if (!use_codebook) return q;
        Var<S> cb = ctx.use(codebook);
        Var<S> k = key_mlp.forward(ctx, cb);                  // [L, C] row-wise
        Var<S> logits = matmul_nt(ctx.tape, q, k);            // [N, L], unscaled
        Var<S> w = softmax_rows(ctx.tape, logits);
        return matmul_nn(ctx.tape, w, cb);                    // [N, C]
    }

    /// Attention weights only (diagnostics / tests).
    Var<S> attention_weights(Ctx<S>& ctx, Var<S> e_cat) {
        CDSR_REQUIRE_STATE(use_codebook, "attention weights need the codebook enabled");
        Var<S> q = query_mlp.forward(ctx, e_cat);
        Var<S> k = key_mlp.forward(ctx, ctx.use(codebook));
        return softmax_rows(ctx.tape, matmul_nt(ctx.tape, q, k));
    }

    void visit(ParamRefs<S>& r, const std::string& prefix) {
        query_mlp.visit(r, prefix + ".query_mlp");
        if (use_codebook) {
            key_mlp.visit(r, prefix + ".key_mlp");
            r.add(prefix + ".codebook", codebook);
        }
    }
};

}  // namespace cdsr
