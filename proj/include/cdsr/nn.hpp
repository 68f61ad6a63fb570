#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "cdsr/autodiff.hpp"
#include "cdsr/rng.hpp"
#include "cdsr/tensor.hpp"

namespace cdsr {

/// Trainable tensor with its gradient accumulator and Adam moments.
template <typename S>
struct Param {
    Tensor<S> value;
    Tensor<S> grad;
    Tensor<S> adam_m, adam_v;

    void setup(Eigen::Index n, Eigen::Index c = 1, Eigen::Index h = 1, Eigen::Index w = 1) {
        value.resize(n, c, h, w);
        grad = Tensor<S>::zeros(n, c, h, w);
        adam_m = Tensor<S>::zeros(n, c, h, w);
        adam_v = Tensor<S>::zeros(n, c, h, w);
    }
};

/// Named references to every tensor of a module tree. `params` take gradients
/// and optimizer updates; `buffers` (batch-norm running stats) are carried
/// state only. Both participate in checkpoints and momentum copies.
template <typename S>
struct ParamRefs {
    std::vector<std::pair<std::string, Param<S>*>> params;
    std::vector<std::pair<std::string, Tensor<S>*>> buffers;

    void add(const std::string& name, Param<S>& p) { params.emplace_back(name, &p); }
    void add_buffer(const std::string& name, Tensor<S>& t) { buffers.emplace_back(name, &t); }

    Eigen::Index param_count() const {
        Eigen::Index n = 0;
        for (const auto& [name, p] : params) n += p->value.size();
        return n;
    }
};

/// Forward-pass context: the tape, train/eval switch, and the leaf binding
/// list used to route tape gradients back into Param::grad after backward.
template <typename S>
struct Ctx {
    Tape<S>& tape;
    bool training = false;
    bool grad_enabled = false;
    bool update_running = true;

    std::vector<std::pair<Var<S>, Param<S>*>> bindings;

    explicit Ctx(Tape<S>& t) : tape(t) {}

    Var<S> use(Param<S>& p) {
        Var<S> v = tape.leaf(p.value, grad_enabled);
        if (grad_enabled) bindings.emplace_back(v, &p);
        return v;
    }

    /// Move tape-side gradients into the bound parameters.
    void collect_grads() {
        for (auto& [var, p] : bindings)
            if (tape.has_grad(var)) p->grad.data += tape.grad(var).data;
    }
};

// ---------------------------------------------------------------------------
// Initializers
// ---------------------------------------------------------------------------

template <typename S>
void fill_normal(Rng& rng, Tensor<S>& t, double stddev, double mean = 0.0) {
    for (Eigen::Index i = 0; i < t.size(); ++i)
        t.data[i] = static_cast<S>(rng.normal(mean, stddev));
}

/// Kaiming-normal for leaky-rectified fan-in.
template <typename S>
void init_kaiming(Rng& rng, Param<S>& p, Eigen::Index fan_in, double slope = 0.2,
                  double gain_scale = 1.0) {
    const double gain = std::sqrt(2.0 / (1.0 + slope * slope));
    fill_normal(rng, p.value, gain_scale * gain / std::sqrt(static_cast<double>(fan_in)));
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <typename S>
struct ConvLayer {
    Param<S> w, b;
    Conv2dOpts opts;

    void init(Rng& rng, Eigen::Index c_out, Eigen::Index c_in, int k, Conv2dOpts o = {},
              double gain_scale = 1.0) {
        opts = o;
        w.setup(c_out, c_in, k, k);
        b.setup(c_out);
        init_kaiming(rng, w, c_in * k * k, 0.2, gain_scale);
        b.value.data.setZero();
    }

    Var<S> forward(Ctx<S>& ctx, Var<S> x) {
        return conv2d(ctx.tape, x, ctx.use(w), ctx.use(b), opts);
    }
    Var<S> forward_multi(Ctx<S>& ctx, const std::vector<Var<S>>& xs) {
        return conv2d_multi(ctx.tape, xs, ctx.use(w), ctx.use(b), opts);
    }

    void visit(ParamRefs<S>& r, const std::string& prefix) {
        r.add(prefix + ".w", w);
        r.add(prefix + ".b", b);
    }
};

template <typename S>
struct LinearLayer {
    Param<S> w, b;

    void init(Rng& rng, Eigen::Index out, Eigen::Index in, double gain_scale = 1.0) {
        w.setup(out, in);
        b.setup(out);
        init_kaiming(rng, w, in, 0.2, gain_scale);
        b.value.data.setZero();
    }

    Var<S> forward(Ctx<S>& ctx, Var<S> x) {
        return linear(ctx.tape, x, ctx.use(w), ctx.use(b));
    }

    void visit(ParamRefs<S>& r, const std::string& prefix) {
        r.add(prefix + ".w", w);
        r.add(prefix + ".b", b);
    }
};

template <typename S>
struct BatchNormLayer {
    Param<S> gamma, beta;
    Tensor<S> running_mean, running_var;

    void init(Eigen::Index c) {
        gamma.setup(c);
        gamma.value.data.setOnes();
        beta.setup(c);
        beta.value.data.setZero();
        running_mean = Tensor<S>::zeros(c, 1);
        running_var = Tensor<S>::zeros(c, 1);
        running_var.data.setOnes();
    }

    Var<S> forward(Ctx<S>& ctx, Var<S> x) {
        return batch_norm(ctx.tape, x, ctx.use(gamma), ctx.use(beta), running_mean, running_var,
                          ctx.training, S(0.1), static_cast<S>(1e-5), ctx.update_running);
    }

    void visit(ParamRefs<S>& r, const std::string& prefix) {
        r.add(prefix + ".gamma", gamma);
        r.add(prefix + ".beta", beta);
        r.add_buffer(prefix + ".running_mean", running_mean);
        r.add_buffer(prefix + ".running_var", running_var);
    }
};

/// Two-layer perceptron with a leaky-rectified hidden layer.
template <typename S>
struct Mlp2 {
    LinearLayer<S> fc1, fc2;
    S slope = static_cast<S>(0.2);

    void init(Rng& rng, Eigen::Index out, Eigen::Index hidden, Eigen::Index in) {
        fc1.init(rng, hidden, in);
        fc2.init(rng, out, hidden);
    }

    Var<S> forward(Ctx<S>& ctx, Var<S> x) {
        return fc2.forward(ctx, leaky_relu(ctx.tape, fc1.forward(ctx, x), slope));
    }

    void visit(ParamRefs<S>& r, const std::string& prefix) {
        fc1.visit(r, prefix + ".fc1");
        fc2.visit(r, prefix + ".fc2");
    }
};

// ---------------------------------------------------------------------------
// Optimizer and momentum copy
// ---------------------------------------------------------------------------

template <typename S>
void zero_grads(ParamRefs<S>& refs) {
    for (auto& [name, p] : refs.params) p->grad.data.setZero();
}

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One Adam update over every parameter; `step` is 1-based.
template <typename S>
void adam_step(ParamRefs<S>& refs, const AdamConfig& cfg, std::int64_t step) {
    const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
    const S corr1 = static_cast<S>(1.0 - std::pow(cfg.beta1, static_cast<double>(step)));
    const S corr2 = static_cast<S>(1.0 - std::pow(cfg.beta2, static_cast<double>(step)));
    const S lr = static_cast<S>(cfg.lr), eps = static_cast<S>(cfg.eps);
    for (auto& [name, p] : refs.params) {
        auto& m = p->adam_m.data;
        auto& v = p->adam_v.data;
        const auto& g = p->grad.data;
        m = b1 * m + (S(1) - b1) * g;
        v = (b2 * v.array() + (S(1) - b2) * g.array().square()).matrix();
        p->value.data.array() -=
            lr * (m.array() / corr1) / ((v.array() / corr2).sqrt() + eps);
    }
}

/// theta_k <- m * theta_k + (1 - m) * theta_q, element-wise over parameters
/// and buffers. Shapes (and visit order) must match.
template <typename S>
void momentum_update(ParamRefs<S>& query, ParamRefs<S>& key, S m) {
    CDSR_REQUIRE(m >= S(0) && m < S(1), "momentum coefficient must be in [0,1)");
    CDSR_REQUIRE(query.params.size() == key.params.size() &&
                     query.buffers.size() == key.buffers.size(),
                 "momentum_update: mismatched module trees");
    for (std::size_t i = 0; i < query.params.size(); ++i) {
        auto& q = query.params[i].second->value;
        auto& k = key.params[i].second->value;
        CDSR_REQUIRE(q.shape == k.shape, "momentum_update: shape mismatch at " +
                                             query.params[i].first);
        k.data = m * k.data + (S(1) - m) * q.data;
    }
    for (std::size_t i = 0; i < query.buffers.size(); ++i) {
        auto& q = *query.buffers[i].second;
        auto& k = *key.buffers[i].second;
        CDSR_REQUIRE(q.shape == k.shape, "momentum_update: buffer shape mismatch at " +
                                             query.buffers[i].first);
        k.data = m * k.data + (S(1) - m) * q.data;
    }
}

/// Hard copy query -> key (used at init so both towers start identical).
template <typename S>
void copy_params(ParamRefs<S>& from, ParamRefs<S>& to) {
    CDSR_REQUIRE(from.params.size() == to.params.size() &&
                     from.buffers.size() == to.buffers.size(),
                 "copy_params: mismatched module trees");
    for (std::size_t i = 0; i < from.params.size(); ++i)
        to.params[i].second->value = from.params[i].second->value;
    for (std::size_t i = 0; i < from.buffers.size(); ++i)
        *to.buffers[i].second = *from.buffers[i].second;
}

}  // namespace cdsr
