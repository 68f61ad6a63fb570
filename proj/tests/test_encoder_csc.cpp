#include <doctest.h>

#include "cdsr/csc.hpp"
#include "cdsr/encoder.hpp"
#include "test_support.hpp"

using namespace cdsr;
using namespace cdsr::testing;

namespace {

TensorD random_batch(Rng& rng, Eigen::Index n, Eigen::Index c, Eigen::Index h, Eigen::Index w) {
    TensorD t(n, c, h, w);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = rng.uniform();
    return t;
}

VecX<double> coeffs(Rng& rng, Eigen::Index n) {
    VecX<double> c(n);
    for (Eigen::Index i = 0; i < n; ++i) c[i] = rng.normal();
    return c;
}

}  // namespace

TEST_CASE("patch subnet: spec shapes on a 48x48 input") {
    Rng rng(1);
    LpeConfig cfg;  // defaults: C=256, P=8
    PatchSubnet<double> net;
    net.init(rng, cfg);

    // The embedding projection turns 48x48 into a 6x6 patch grid.
    TensorD x = random_batch(rng, 1, 3, 48, 48);
    {
        Tape<double> tape;
        Ctx<double> ctx(tape);
        Var<double> fp = net.embed.forward(ctx, tape.constant(x));
        CHECK(tape.value(fp).h() == 6);
        CHECK(tape.value(fp).w() == 6);
        CHECK(tape.value(fp).c() == cfg.patch_channels);
    }
    Tape<double> tape;
    Ctx<double> ctx(tape);
    ctx.training = true;
    Var<double> ep = net.forward(ctx, tape.constant(x));
    CHECK(tape.value(ep).n() == 1);
    CHECK(tape.value(ep).size() == 256);

    TensorD bad = random_batch(rng, 1, 3, 20, 20);
    CHECK_THROWS_AS(net.forward(ctx, tape.constant(bad)), ParameterError);
}

TEST_CASE("zero input with zero biases maps to the zero vector") {
    Rng rng(2);
    LpeConfig cfg;
    cfg.embed_dim = 16;
    cfg.patch_channels = 8;
    cfg.pixel_channels = 8;
    PatchSubnet<double> pnet;
    pnet.init(rng, cfg);
    PixelSubnet<double> lnet;
    lnet.init(rng, cfg);
    // Biases and batch-norm shifts start at zero by construction.
    TensorD zeros = TensorD::zeros(2, 3, 16, 16);
    for (bool training : {true, false}) {
        Tape<double> tape;
        Ctx<double> ctx(tape);
        ctx.training = training;
        ctx.update_running = false;
        Var<double> ep = pnet.forward(ctx, tape.constant(zeros));
        Var<double> el = lnet.forward(ctx, tape.constant(zeros));
        CHECK(tape.value(ep).data.cwiseAbs().maxCoeff() == 0.0);
        CHECK(tape.value(el).data.cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("pixel subnet: output width, receptive-field precondition") {
    Rng rng(3);
    LpeConfig cfg;
    PixelSubnet<double> net;
    net.init(rng, cfg);
    TensorD x = random_batch(rng, 1, 3, 48, 48);
    Tape<double> tape;
    Ctx<double> ctx(tape);
    ctx.training = true;
    Var<double> el = net.forward(ctx, tape.constant(x));
    CHECK(tape.value(el).size() == 256);

    TensorD small = random_batch(rng, 1, 3, 10, 10);  // below the 11x11 field
    CHECK_THROWS_AS(net.forward(ctx, tape.constant(small)), ParameterError);
}

TEST_CASE("pixel subnet: constant inputs give the closed-form embedding") {
    Rng rng(4);
    LpeConfig cfg;
    cfg.embed_dim = 6;
    cfg.pixel_channels = 4;
    cfg.slope = 1.0;  // linear activations for the closed-form check
    PixelSubnet<double> net;
    net.init(rng, cfg);

    TensorD a = TensorD::zeros(1, 3, 16, 16);
    a.data.setConstant(0.37);
    // Reflect padding keeps convolutions of constants exactly constant, so the
    // embedding equals the head applied to per-layer weight sums.
    Tape<double> tape;
    Ctx<double> ctx(tape);
    ctx.training = false;  // running stats are the identity at init
    Var<double> el = net.forward(ctx, tape.constant(a));

    const double bn_eval_scale = 1.0 / std::sqrt(1.0 + 1e-5);  // identity stats, eps
    std::vector<double> cur(3, 0.37);
    for (size_t li = 0; li < net.convs.size(); ++li) {
        const auto& w = net.convs[li].w.value;
        std::vector<double> next(w.n());
        for (Eigen::Index co = 0; co < w.n(); ++co) {
            double acc = 0.0;
            for (Eigen::Index ci = 0; ci < w.c(); ++ci)
                for (Eigen::Index t = 0; t < 9; ++t) acc += w.plane(co, ci)[t] * cur[ci];
            next[co] = li + 1 < net.convs.size() ? acc * bn_eval_scale : acc;
        }
        cur = next;
    }
    const auto& head_w = net.head.w.value;
    for (Eigen::Index o = 0; o < head_w.n(); ++o) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < head_w.c(); ++i) acc += head_w.at(o, i, 0, 0) * cur[i];
        CHECK(tape.value(el).data[o] == doctest::Approx(acc).epsilon(1e-9));
    }
}

TEST_CASE("encoder branch gradients match finite differences") {
    Rng rng(5);
    LpeConfig cfg;
    cfg.embed_dim = 6;
    cfg.patch_channels = 4;
    cfg.pixel_channels = 4;
    cfg.depth_patch = 2;
    cfg.depth_pixel = 3;

    PatchSubnet<double> pnet;
    pnet.init(rng, cfg);
    TensorD x = random_batch(rng, 2, 3, 16, 16);
    VecX<double> cp = coeffs(rng, 12);
    ParamRefs<double> prefs;
    pnet.visit(prefs, "p");
    std::vector<Param<double>*> params;
    for (auto& [n, p] : prefs.params) params.push_back(p);
    double err = module_gradcheck(
        params, &x,
        [&](Ctx<double>& ctx, Var<double> in) {
            return weighted_sum(ctx.tape, pnet.forward(ctx, in), cp);
        },
        rng, 6, 1e-4);
    CHECK(err < 1e-4);

    PixelSubnet<double> lnet;
    lnet.init(rng, cfg);
    ParamRefs<double> lrefs;
    lnet.visit(lrefs, "l");
    params.clear();
    for (auto& [n, p] : lrefs.params) params.push_back(p);
    err = module_gradcheck(
        params, &x,
        [&](Ctx<double>& ctx, Var<double> in) {
            return weighted_sum(ctx.tape, lnet.forward(ctx, in), cp);
        },
        rng, 6, 1e-4);
    CHECK(err < 1e-4);
}

TEST_CASE("momentum update endpoints and arithmetic") {
    Rng rng(6);
    LpeConfig cfg;
    cfg.embed_dim = 4;
    cfg.patch_channels = 2;
    cfg.pixel_channels = 2;
    cfg.depth_patch = 1;
    cfg.depth_pixel = 2;
    LpeEncoder<double> q, k;
    q.init(rng, cfg);
    k.init(rng, cfg);

    ParamRefs<double> qr, kr;
    q.visit(qr, "e");
    k.visit(kr, "e");

    // m = 0: key becomes the query exactly.
    momentum_update(qr, kr, 0.0);
    for (std::size_t i = 0; i < qr.params.size(); ++i)
        CHECK((qr.params[i].second->value.data - kr.params[i].second->value.data)
                  .cwiseAbs()
                  .maxCoeff() == 0.0);

    // Fixed point: with key == query, any m leaves it unchanged.
    auto snapshot = kr.params[0].second->value.data;
    momentum_update(qr, kr, 1.0 - 1e-6);
    CHECK((kr.params[0].second->value.data - snapshot).cwiseAbs().maxCoeff() < 1e-9);

    // Scalar arithmetic: k=0, q=1, m=0.999 -> 0.001.
    qr.params[0].second->value.data.setOnes();
    kr.params[0].second->value.data.setZero();
    momentum_update(qr, kr, 0.999);
    CHECK(kr.params[0].second->value.data[0] == doctest::Approx(0.001).epsilon(1e-9));

    CHECK_THROWS_AS(momentum_update(qr, kr, 1.5), ParameterError);
}

TEST_CASE("csc: softmax weights are a convex combination") {
    Rng rng(7);
    CscModule<double> csc;
    csc.init(rng, 16, 8, 16, true);
    TensorD e = random_batch(rng, 3, 16, 1, 1);

    Tape<double> tape;
    Ctx<double> ctx(tape);
    Var<double> w = csc.attention_weights(ctx, tape.constant(e));
    auto wm = tape.value(w).as_matrix(3, 16);
    for (int i = 0; i < 3; ++i) {
        CHECK(std::abs(wm.row(i).sum() - 1.0) < 1e-7);
        CHECK(wm.row(i).minCoeff() >= 0.0);
    }

    // E_a stays inside the codebook's coordinate-wise bounds.
    Var<double> ea = csc.compress(ctx, tape.constant(e));
    const double bound = csc.codebook.value.data.cwiseAbs().maxCoeff();
    CHECK(tape.value(ea).data.cwiseAbs().maxCoeff() <= bound + 1e-12);
}

TEST_CASE("csc: identical codebook rows collapse to that row") {
    Rng rng(8);
    CscModule<double> csc;
    csc.init(rng, 5, 4, 8, true);
    VecX<double> row(4);
    row << 0.3, -1.2, 0.5, 2.0;
    for (int l = 0; l < 5; ++l) csc.codebook.value.as_matrix(5, 4).row(l) = row.transpose();
    TensorD e = random_batch(rng, 2, 8, 1, 1);
    Tape<double> tape;
    Ctx<double> ctx(tape);
    Var<double> ea = csc.compress(ctx, tape.constant(e));
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 4; ++c)
            CHECK(tape.value(ea).at(n, c, 0, 0) == doctest::Approx(row[c]).epsilon(1e-12));
}

TEST_CASE("csc: tiny instance matches the hand-computed attention") {
    // L=3, C=2. Both MLPs are forced to the identity so the whole pipeline
    // reduces to softmax(q Cb^T) Cb with q > 0 (the leaky rectifier passes
    // positive values untouched).
    Rng rng(9);
    CscModule<double> csc;
    csc.init(rng, 3, 2, 2, true);

    auto force_identity = [](Mlp2<double>& mlp, int dim) {
        mlp.fc1.w.value.data.setZero();
        mlp.fc2.w.value.data.setZero();
        for (int i = 0; i < dim; ++i) {
            mlp.fc1.w.value.at(i, i, 0, 0) = 1.0;
            mlp.fc2.w.value.at(i, i, 0, 0) = 1.0;
        }
        mlp.fc1.b.value.data.setZero();
        mlp.fc2.b.value.data.setZero();
    };
    force_identity(csc.query_mlp, 2);
    force_identity(csc.key_mlp, 2);
    csc.codebook.value.as_matrix(3, 2) << 0.5, 0.25, 1.0, 0.75, 0.25, 1.5;

    TensorD e(1, 2, 1, 1);
    e.data << 0.6, 0.8;

    Tape<double> tape;
    Ctx<double> ctx(tape);
    Var<double> ea = csc.compress(ctx, tape.constant(e));

    Eigen::Matrix<double, 3, 2> cb;
    cb << 0.5, 0.25, 1.0, 0.75, 0.25, 1.5;
    Eigen::Vector2d q(0.6, 0.8);
    Eigen::Vector3d logits = cb * q;
    Eigen::Vector3d ex = (logits.array() - logits.maxCoeff()).exp();
    Eigen::Vector3d w = ex / ex.sum();
    Eigen::Vector2d expected = cb.transpose() * w;
    CHECK(std::abs(tape.value(ea).data[0] - expected[0]) < 1e-9);
    CHECK(std::abs(tape.value(ea).data[1] - expected[1]) < 1e-9);

    // Shifting every logit by a constant leaves the result unchanged.
    Eigen::Vector3d ex2 = (logits.array() + 7.5 - (logits.maxCoeff() + 7.5)).exp();
    Eigen::Vector3d w2 = ex2 / ex2.sum();
    Eigen::Vector2d shifted = cb.transpose() * w2;
    CHECK(std::abs(shifted[0] - expected[0]) < 1e-9);
    CHECK(std::abs(shifted[1] - expected[1]) < 1e-9);
}

TEST_CASE("csc gradients, with and without the codebook") {
    Rng rng(10);
    for (bool with_cb : {true, false}) {
        CscModule<double> csc;
        csc.init(rng, 6, 4, 8, with_cb);
        ParamRefs<double> refs;
        csc.visit(refs, "csc");
        randomize_params(refs, rng, 0.4);
        TensorD e(2, 8, 1, 1);
        for (Eigen::Index i = 0; i < e.size(); ++i) e.data[i] = rng.normal() * 0.5;
        VecX<double> c = coeffs(rng, 8);
        std::vector<Param<double>*> params;
        for (auto& [n, p] : refs.params) params.push_back(p);
        const double err = module_gradcheck(
            params, &e,
            [&](Ctx<double>& ctx, Var<double> in) {
                return weighted_sum(ctx.tape, csc.compress(ctx, in), c);
            },
            rng, 6, 1e-4);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("csc dimension checks") {
    Rng rng(11);
    CscModule<double> csc;
    csc.init(rng, 6, 4, 8, true);
    TensorD wrong(2, 5, 1, 1);
    wrong.data.setOnes();
    Tape<double> tape;
    Ctx<double> ctx(tape);
    CHECK_THROWS_AS(csc.compress(ctx, tape.constant(wrong)), ParameterError);
}
