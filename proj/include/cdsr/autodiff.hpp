#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include "cdsr/common.hpp"
#include "cdsr/tensor.hpp"

namespace cdsr {

// ---------------------------------------------------------------------------
// Reverse-mode tape
// ---------------------------------------------------------------------------

template <typename S>
struct Var {
    std::int32_t idx = -1;
    bool valid() const { return idx >= 0; }
};

/// Dynamic computation graph. Ops append nodes holding the forward value and
/// a closure that scatters the node's output gradient to its inputs. One tape
/// per training step; values live until clear().
template <typename S>
class Tape {
public:
    struct Node {
        Tensor<S> value;
        Tensor<S> grad;  // allocated lazily during backward
        bool requires_grad = false;
        std::function<void(Tape&, std::int32_t)> backward;  // null for leaves
    };

    Var<S> leaf(Tensor<S> v, bool requires_grad) {
        nodes_.push_back(Node{std::move(v), {}, requires_grad, nullptr});
        return Var<S>{static_cast<std::int32_t>(nodes_.size() - 1)};
    }

    Var<S> constant(Tensor<S> v) { return leaf(std::move(v), false); }

    Var<S> make_node(Tensor<S> v, bool requires_grad,
                     std::function<void(Tape&, std::int32_t)> back) {
        nodes_.push_back(Node{std::move(v), {}, requires_grad,
                              requires_grad ? std::move(back) : nullptr});
        return Var<S>{static_cast<std::int32_t>(nodes_.size() - 1)};
    }

    const Tensor<S>& value(Var<S> v) const { return nodes_[v.idx].value; }
    Tensor<S>& value(Var<S> v) { return nodes_[v.idx].value; }

    bool requires_grad(Var<S> v) const { return v.valid() && nodes_[v.idx].requires_grad; }

    /// Gradient accumulator for a node, zero-initialized on first touch.
    Tensor<S>& grad_ref(std::int32_t idx) {
        Node& n = nodes_[idx];
        if (n.grad.size() == 0) {
            const auto& s = n.value.shape;
            n.grad = Tensor<S>::zeros(s[0], s[1], s[2], s[3]);
        }
        return n.grad;
    }
    Tensor<S>& grad_ref(Var<S> v) { return grad_ref(v.idx); }

    bool has_grad(Var<S> v) const { return nodes_[v.idx].grad.size() != 0; }
    const Tensor<S>& grad(Var<S> v) const { return nodes_[v.idx].grad; }

    /// Reverse sweep from a scalar output.
    void backward(Var<S> out) {
        CDSR_REQUIRE(value(out).size() == 1, "backward requires a scalar output");
        grad_ref(out).data[0] = S(1);
        for (std::int32_t i = out.idx; i >= 0; --i) {
            Node& n = nodes_[i];
            if (!n.backward || n.grad.size() == 0) continue;
            n.backward(*this, i);
        }
    }

    void clear() { nodes_.clear(); }
    std::size_t size() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
};

namespace detail {

template <typename S>
bool any_requires(const Tape<S>& t, std::initializer_list<Var<S>> vs) {
    for (auto v : vs)
        if (t.requires_grad(v)) return true;
    return false;
}

// Mirror index into [0, n) reflecting about the edge samples (same convention
// as the degradation pipeline).
inline Eigen::Index reflect_index(Eigen::Index i, Eigen::Index n) {
    if (n == 1) return 0;
    const Eigen::Index period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and shape ops
// ---------------------------------------------------------------------------

template <typename S>
Var<S> add(Tape<S>& t, Var<S> a, Var<S> b) {
    CDSR_REQUIRE(t.value(a).same_shape(t.value(b)), "add: shape mismatch");
    Tensor<S> out = t.value(a);
    out.data += t.value(b).data;
    return t.make_node(std::move(out), detail::any_requires(t, {a, b}),
                       [a, b](Tape<S>& tp, std::int32_t self) {
                           const Tensor<S>& g = tp.grad_ref(self);
                           if (tp.requires_grad(a)) tp.grad_ref(a).data += g.data;
                           if (tp.requires_grad(b)) tp.grad_ref(b).data += g.data;
                       });
}

/// a + alpha * b, fused (residual blending).
template <typename S>
Var<S> axpy(Tape<S>& t, Var<S> a, Var<S> b, S alpha) {
    CDSR_REQUIRE(t.value(a).same_shape(t.value(b)), "axpy: shape mismatch");
    Tensor<S> out = t.value(a);
    out.data += alpha * t.value(b).data;
    return t.make_node(std::move(out), detail::any_requires(t, {a, b}),
                       [a, b, alpha](Tape<S>& tp, std::int32_t self) {
                           const Tensor<S>& g = tp.grad_ref(self);
                           if (tp.requires_grad(a)) tp.grad_ref(a).data += g.data;
                           if (tp.requires_grad(b)) tp.grad_ref(b).data += alpha * g.data;
                       });
}

template <typename S>
Var<S> sub(Tape<S>& t, Var<S> a, Var<S> b) {
    return axpy(t, a, b, S(-1));
}

template <typename S>
Var<S> scale(Tape<S>& t, Var<S> a, S alpha) {
    Tensor<S> out = t.value(a);
    out.data *= alpha;
    return t.make_node(std::move(out), detail::any_requires(t, {a}),
                       [a, alpha](Tape<S>& tp, std::int32_t self) {
                           tp.grad_ref(a).data += alpha * tp.grad_ref(self).data;
                       });
}

template <typename S>
Var<S> mul(Tape<S>& t, Var<S> a, Var<S> b) {
    CDSR_REQUIRE(t.value(a).same_shape(t.value(b)), "mul: shape mismatch");
    Tensor<S> out = t.value(a);
    out.data.array() *= t.value(b).data.array();
    return t.make_node(std::move(out), detail::any_requires(t, {a, b}),
                       [a, b](Tape<S>& tp, std::int32_t self) {
                           const Tensor<S>& g = tp.grad_ref(self);
                           if (tp.requires_grad(a))
                               tp.grad_ref(a).data.array() += g.data.array() * tp.value(b).data.array();
                           if (tp.requires_grad(b))
                               tp.grad_ref(b).data.array() += g.data.array() * tp.value(a).data.array();
                       });
}

template <typename S>
Var<S> leaky_relu(Tape<S>& t, Var<S> a, S slope) {
    Tensor<S> out = t.value(a);
    out.data = out.data.array().max(out.data.array() * slope).matrix();
    return t.make_node(std::move(out), detail::any_requires(t, {a}),
                       [a, slope](Tape<S>& tp, std::int32_t self) {
                           const Tensor<S>& g = tp.grad_ref(self);
                           const Tensor<S>& x = tp.value(a);
                           Tensor<S>& ga = tp.grad_ref(a);
                           ga.data.array() += (x.data.array() > S(0))
                                                  .select(g.data.array(), slope * g.data.array());
                       });
}

template <typename S>
Var<S> sigmoid(Tape<S>& t, Var<S> a) {
    Tensor<S> out = t.value(a);
    out.data = (S(1) / (S(1) + (-out.data.array()).exp())).matrix();
    return t.make_node(std::move(out), detail::any_requires(t, {a}),
                       [a](Tape<S>& tp, std::int32_t self) {
                           const Tensor<S>& g = tp.grad_ref(self);
                           const Tensor<S>& y = tp.value(Var<S>{self});
                           tp.grad_ref(a).data.array() +=
                               g.data.array() * y.data.array() * (S(1) - y.data.array());
                       });
}

/// Clamp to [0,1]; subgradient passes inside the closed interval.
template <typename S>
Var<S> clamp01(Tape<S>& t, Var<S> a) {
    Tensor<S> out = t.value(a);
    out.data = out.data.array().max(S(0)).min(S(1)).matrix();
    return t.make_node(std::move(out), detail::any_requires(t, {a}),
                       [a](Tape<S>& tp, std::int32_t self) {
                           const Tensor<S>& g = tp.grad_ref(self);
                           const Tensor<S>& x = tp.value(a);
                           Tensor<S>& ga = tp.grad_ref(a);
                           for (Eigen::Index i = 0; i < x.size(); ++i)
                               if (x.data[i] >= S(0) && x.data[i] <= S(1)) ga.data[i] += g.data[i];
                       });
}

/// Column concatenation of row-vector batches: [N,F1] ++ [N,F2] -> [N,F1+F2].
template <typename S>
Var<S> concat_cols(Tape<S>& t, Var<S> a, Var<S> b) {
    const Tensor<S>& va = t.value(a);
    const Tensor<S>& vb = t.value(b);
    CDSR_REQUIRE(va.n() == vb.n() && va.h() == 1 && va.w() == 1 && vb.h() == 1 && vb.w() == 1,
                 "concat_cols expects [N,F] inputs");
    Tensor<S> out(va.n(), va.c() + vb.c(), 1, 1);
    out.rows() << va.rows(), vb.rows();
    return t.make_node(std::move(out), detail::any_requires(t, {a, b}),
                       [a, b](Tape<S>& tp, std::int32_t self) {
                           const Tensor<S>& g = tp.grad_ref(self);
                           const Eigen::Index f1 = tp.value(a).c(), f2 = tp.value(b).c();
                           auto gm = g.as_matrix(g.n(), f1 + f2);
                           if (tp.requires_grad(a)) tp.grad_ref(a).rows() += gm.leftCols(f1);
                           if (tp.requires_grad(b)) tp.grad_ref(b).rows() += gm.rightCols(f2);
                       });
}

/// Spatial mean: [N,C,H,W] -> [N,C].
template <typename S>
Var<S> global_avg_pool(Tape<S>& t, Var<S> x) {
    const Tensor<S>& v = t.value(x);
    const Eigen::Index hw = v.h() * v.w();
    Tensor<S> out(v.n(), v.c(), 1, 1);
    out.data = v.as_matrix(v.n() * v.c(), hw).rowwise().mean();
    return t.make_node(std::move(out), detail::any_requires(t, {x}),
                       [x, hw](Tape<S>& tp, std::int32_t self) {
                           const Tensor<S>& g = tp.grad_ref(self);
                           Tensor<S>& gx = tp.grad_ref(x);
                           auto gm = gx.as_matrix(g.n() * g.c(), hw);
                           gm.colwise() += g.data * (S(1) / static_cast<S>(hw));
                       });
}

/// [N, C*r*r, H, W] -> [N, C, H*r, W*r], source channel c*r*r + dy*r + dx.
template <typename S>
Var<S> pixel_shuffle(Tape<S>& t, Var<S> x, int r) {
    const Tensor<S>& v = t.value(x);
    CDSR_REQUIRE(v.c() % (r * r) == 0, "pixel_shuffle: channels not divisible by r^2");
    const Eigen::Index N = v.n(), C = v.c() / (r * r), H = v.h(), W = v.w();
    Tensor<S> out(N, C, H * r, W * r);
    for (Eigen::Index n = 0; n < N; ++n)
        for (Eigen::Index c = 0; c < C; ++c)
            for (int dy = 0; dy < r; ++dy)
                for (int dx = 0; dx < r; ++dx) {
                    const S* src = v.plane(n, c * r * r + dy * r + dx);
                    S* dst = out.plane(n, c);
                    for (Eigen::Index y = 0; y < H; ++y)
                        for (Eigen::Index xx = 0; xx < W; ++xx)
                            dst[(y * r + dy) * (W * r) + (xx * r + dx)] = src[y * W + xx];
                }
    return t.make_node(std::move(out), detail::any_requires(t, {x}),
                       [x, r, N, C, H, W](Tape<S>& tp, std::int32_t self) {
                           const Tensor<S>& g = tp.grad_ref(self);
                           Tensor<S>& gx = tp.grad_ref(x);
                           for (Eigen::Index n = 0; n < N; ++n)
                               for (Eigen::Index c = 0; c < C; ++c)
                                   for (int dy = 0; dy < r; ++dy)
                                       for (int dx = 0; dx < r; ++dx) {
                                           S* dst = gx.plane(n, c * r * r + dy * r + dx);
                                           const S* src = g.plane(n, c);
                                           for (Eigen::Index y = 0; y < H; ++y)
                                               for (Eigen::Index xx = 0; xx < W; ++xx)
                                                   dst[y * W + xx] +=
                                                       src[(y * r + dy) * (W * r) + (xx * r + dx)];
                                       }
                       });
}

/// Per-(sample,channel) scaling: y[n,c,:,:] = x[n,c,:,:] * s[n,c].
template <typename S>
Var<S> channel_scale(Tape<S>& t, Var<S> x, Var<S> s) {
    const Tensor<S>& vx = t.value(x);
    const Tensor<S>& vs = t.value(s);
    CDSR_REQUIRE(vs.n() == vx.n() && vs.c() == vx.c() && vs.h() == 1 && vs.w() == 1,
                 "channel_scale: coefficient shape must be [N,C]");
    const Eigen::Index hw = vx.h() * vx.w();
    Tensor<S> out = vx;
    out.as_matrix(vx.n() * vx.c(), hw).array().colwise() *= vs.data.array();
    return t.make_node(std::move(out), detail::any_requires(t, {x, s}),
                       [x, s, hw](Tape<S>& tp, std::int32_t self) {
                           const Tensor<S>& g = tp.grad_ref(self);
                           const Tensor<S>& vx = tp.value(x);
                           const Tensor<S>& vs = tp.value(s);
                           auto gm = g.as_matrix(vx.n() * vx.c(), hw);
                           if (tp.requires_grad(x)) {
                               auto gxm = tp.grad_ref(x).as_matrix(vx.n() * vx.c(), hw);
                               gxm.array() += gm.array().colwise() * vs.data.array();
                           }
                           if (tp.requires_grad(s)) {
                               auto xm = vx.as_matrix(vx.n() * vx.c(), hw);
                               tp.grad_ref(s).data.array() += (gm.array() * xm.array()).rowwise().sum();
                           }
                       });
}

/// Per-(sample,channel) bias: y[n,c,:,:] = x[n,c,:,:] + b[n,c].
template <typename S>
Var<S> channel_bias(Tape<S>& t, Var<S> x, Var<S> b) {
    const Tensor<S>& vx = t.value(x);
    const Tensor<S>& vb = t.value(b);
    CDSR_REQUIRE(vb.n() == vx.n() && vb.c() == vx.c() && vb.h() == 1 && vb.w() == 1,
                 "channel_bias: bias shape must be [N,C]");
    const Eigen::Index hw = vx.h() * vx.w();
    Tensor<S> out = vx;
    out.as_matrix(vx.n() * vx.c(), hw).colwise() += vb.data;
    return t.make_node(std::move(out), detail::any_requires(t, {x, b}),
                       [x, b, hw](Tape<S>& tp, std::int32_t self) {
                           const Tensor<S>& g = tp.grad_ref(self);
                           auto gm = g.as_matrix(g.n() * g.c(), hw);
                           if (tp.requires_grad(x)) tp.grad_ref(x).data += g.data;
                           if (tp.requires_grad(b)) tp.grad_ref(b).data += gm.rowwise().sum();
                       });
}

// ---------------------------------------------------------------------------
// Dense linear algebra
// ---------------------------------------------------------------------------

/// y = x W^T + b with x [N,F], W [O,F], b [O] (b may be invalid for none).
template <typename S>
Var<S> linear(Tape<S>& t, Var<S> x, Var<S> w, Var<S> b) {
    const Tensor<S>& vx = t.value(x);
    const Tensor<S>& vw = t.value(w);
    const Eigen::Index N = vx.n(), F = vx.size() / vx.n(), O = vw.n();
    CDSR_REQUIRE(vw.size() == O * F, "linear: weight shape mismatch");
    CDSR_REQUIRE(!b.valid() || t.value(b).size() == O, "linear: bias shape mismatch");
    Tensor<S> out(N, O, 1, 1);
    out.as_matrix(N, O).noalias() = vx.as_matrix(N, F) * vw.as_matrix(O, F).transpose();
    if (b.valid()) out.as_matrix(N, O).rowwise() += t.value(b).data.transpose();
    return t.make_node(std::move(out), detail::any_requires(t, {x, w, b}),
                       [x, w, b, N, F, O](Tape<S>& tp, std::int32_t self) {
                           const auto g = tp.grad_ref(self).as_matrix(N, O);
                           if (tp.requires_grad(x))
                               tp.grad_ref(x).as_matrix(N, F).noalias() +=
                                   g * tp.value(w).as_matrix(O, F);
                           if (tp.requires_grad(w))
                               tp.grad_ref(w).as_matrix(O, F).noalias() +=
                                   g.transpose() * tp.value(x).as_matrix(N, F);
                           if (b.valid() && tp.requires_grad(b))
                               tp.grad_ref(b).data += g.colwise().sum().transpose();
                       });
}

/// C = A * B^T with A [N,K], B [M,K] -> [N,M].
template <typename S>
Var<S> matmul_nt(Tape<S>& t, Var<S> a, Var<S> b) {
    const Tensor<S>& va = t.value(a);
    const Tensor<S>& vb = t.value(b);
    const Eigen::Index N = va.n(), K = va.size() / va.n(), M = vb.n();
    CDSR_REQUIRE(vb.size() / vb.n() == K, "matmul_nt: inner dimension mismatch");
    Tensor<S> out(N, M, 1, 1);
    out.as_matrix(N, M).noalias() = va.as_matrix(N, K) * vb.as_matrix(M, K).transpose();
    return t.make_node(std::move(out), detail::any_requires(t, {a, b}),
                       [a, b, N, K, M](Tape<S>& tp, std::int32_t self) {
                           const auto g = tp.grad_ref(self).as_matrix(N, M);
                           if (tp.requires_grad(a))
                               tp.grad_ref(a).as_matrix(N, K).noalias() +=
                                   g * tp.value(b).as_matrix(M, K);
                           if (tp.requires_grad(b))
                               tp.grad_ref(b).as_matrix(M, K).noalias() +=
                                   g.transpose() * tp.value(a).as_matrix(N, K);
                       });
}

/// C = A * B with A [N,K], B [K,M] -> [N,M].
template <typename S>
Var<S> matmul_nn(Tape<S>& t, Var<S> a, Var<S> b) {
    const Tensor<S>& va = t.value(a);
    const Tensor<S>& vb = t.value(b);
    const Eigen::Index N = va.n(), K = va.size() / va.n(), M = vb.size() / vb.n();
    CDSR_REQUIRE(vb.n() == K, "matmul_nn: inner dimension mismatch");
    Tensor<S> out(N, M, 1, 1);
    out.as_matrix(N, M).noalias() = va.as_matrix(N, K) * vb.as_matrix(K, M);
    return t.make_node(std::move(out), detail::any_requires(t, {a, b}),
                       [a, b, N, K, M](Tape<S>& tp, std::int32_t self) {
                           const auto g = tp.grad_ref(self).as_matrix(N, M);
                           if (tp.requires_grad(a))
                               tp.grad_ref(a).as_matrix(N, K).noalias() +=
                                   g * tp.value(b).as_matrix(K, M).transpose();
                           if (tp.requires_grad(b))
                               tp.grad_ref(b).as_matrix(K, M).noalias() +=
                                   tp.value(a).as_matrix(N, K).transpose() * g;
                       });
}

/// Row-wise softmax on [N,L].
template <typename S>
Var<S> softmax_rows(Tape<S>& t, Var<S> x) {
    const Tensor<S>& v = t.value(x);
    const Eigen::Index N = v.n(), L = v.size() / v.n();
    Tensor<S> out(N, L, 1, 1);
    auto xm = v.as_matrix(N, L);
    auto ym = out.as_matrix(N, L);
    for (Eigen::Index i = 0; i < N; ++i) {
        const S m = xm.row(i).maxCoeff();
        ym.row(i) = (xm.row(i).array() - m).exp();
        ym.row(i) /= ym.row(i).sum();
    }
    return t.make_node(std::move(out), detail::any_requires(t, {x}),
                       [x, N, L](Tape<S>& tp, std::int32_t self) {
                           const auto g = tp.grad_ref(self).as_matrix(N, L);
                           const auto y = tp.value(Var<S>{self}).as_matrix(N, L);
                           auto gx = tp.grad_ref(x).as_matrix(N, L);
                           for (Eigen::Index i = 0; i < N; ++i) {
                               const S dot = g.row(i).dot(y.row(i));
                               gx.row(i).array() +=
                                   (g.row(i).array() - dot) * y.row(i).array();
                           }
                       });
}

/// Row-wise L2 normalization of [N,F]; rows with norm below eps are scaled by
/// 1/eps (keeps the op total).
template <typename S>
Var<S> l2_normalize_rows(Tape<S>& t, Var<S> x) {
    const Tensor<S>& v = t.value(x);
    const Eigen::Index N = v.n(), F = v.size() / v.n();
    const S eps = static_cast<S>(1e-12);
    Tensor<S> out(N, F, 1, 1);
    auto xm = v.as_matrix(N, F);
    auto ym = out.as_matrix(N, F);
    for (Eigen::Index i = 0; i < N; ++i) {
        const S r = std::max(xm.row(i).norm(), eps);
        ym.row(i) = xm.row(i) / r;
    }
    return t.make_node(std::move(out), detail::any_requires(t, {x}),
                       [x, N, F, eps](Tape<S>& tp, std::int32_t self) {
                           const auto g = tp.grad_ref(self).as_matrix(N, F);
                           const auto xm = tp.value(x).as_matrix(N, F);
                           auto gx = tp.grad_ref(x).as_matrix(N, F);
                           for (Eigen::Index i = 0; i < N; ++i) {
                               const S r = std::max(xm.row(i).norm(), eps);
                               const S dot = g.row(i).dot(xm.row(i));
                               gx.row(i) += g.row(i) / r - xm.row(i) * (dot / (r * r * r));
                           }
                       });
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

enum class PadMode { Zero, Reflect };

struct Conv2dOpts {
    int stride = 1;
    int pad = 0;
    PadMode pad_mode = PadMode::Zero;
};

namespace detail {

/// Gather the im2col matrix for one sample spanning several channel-stacked
/// inputs. col is (sum_ci * kh * kw) x (oh * ow), row-major so each (row, oy)
/// span over ox is contiguous. Stride-1 interiors are bulk copies; only the
/// pad-wide borders take the per-element padding path.
template <typename S>
void im2col(const std::vector<const Tensor<S>*>& xs, Eigen::Index n, int kh, int kw,
            const Conv2dOpts& o, Eigen::Index oh, Eigen::Index ow, RowMajorMat<S>& col) {
    const Eigen::Index H = xs[0]->h(), W = xs[0]->w();
    Eigen::Index row0 = 0;
    for (const Tensor<S>* x : xs) {
        for (Eigen::Index ci = 0; ci < x->c(); ++ci) {
            const S* src = x->plane(n, ci);
            for (int dy = 0; dy < kh; ++dy) {
                for (int dx = 0; dx < kw; ++dx) {
                    S* crow = col.data() + (row0 + (ci * kh + dy) * kw + dx) * col.cols();
                    for (Eigen::Index oy = 0; oy < oh; ++oy) {
                        const Eigen::Index iy = oy * o.stride + dy - o.pad;
                        S* cdst = crow + oy * ow;
                        const bool y_in = iy >= 0 && iy < H;
                        if (!y_in && o.pad_mode == PadMode::Zero) {
                            std::fill(cdst, cdst + ow, S(0));
                            continue;
                        }
                        const S* srow = src + (y_in ? iy : reflect_index(iy, H)) * W;
                        if (o.stride == 1) {
                            // ix = ox + dx - pad is in range for ox in [lo, hi).
                            const Eigen::Index lo = std::max<Eigen::Index>(0, o.pad - dx);
                            const Eigen::Index hi =
                                std::min<Eigen::Index>(ow, W + o.pad - dx);
                            for (Eigen::Index ox = 0; ox < std::min(lo, ow); ++ox)
                                cdst[ox] = o.pad_mode == PadMode::Zero
                                               ? S(0)
                                               : srow[reflect_index(ox + dx - o.pad, W)];
                            if (hi > lo)
                                std::copy(srow + (lo + dx - o.pad), srow + (hi + dx - o.pad),
                                          cdst + lo);
                            for (Eigen::Index ox = std::max(hi, Eigen::Index(0)); ox < ow; ++ox)
                                cdst[ox] = o.pad_mode == PadMode::Zero
                                               ? S(0)
                                               : srow[reflect_index(ox + dx - o.pad, W)];
                        } else {
                            for (Eigen::Index ox = 0; ox < ow; ++ox) {
                                const Eigen::Index ix = ox * o.stride + dx - o.pad;
                                if (ix >= 0 && ix < W) cdst[ox] = srow[ix];
                                else
                                    cdst[ox] = o.pad_mode == PadMode::Zero
                                                   ? S(0)
                                                   : srow[reflect_index(ix, W)];
                            }
                        }
                    }
                }
            }
        }
        row0 += x->c() * kh * kw;
    }
}

/// Scatter-add the column-space gradient back onto the stacked inputs,
/// mirroring im2col's index mapping (vectorized interior for stride 1).
template <typename S>
void col2im_add(const RowMajorMat<S>& dcol, std::vector<Tensor<S>*> gxs, Eigen::Index n, int kh,
                int kw, const Conv2dOpts& o, Eigen::Index oh, Eigen::Index ow) {
    const Eigen::Index H = gxs[0] ? gxs[0]->h() : 0;
    const Eigen::Index W = gxs[0] ? gxs[0]->w() : 0;
    Eigen::Index row0 = 0;
    for (Tensor<S>* gx : gxs) {
        if (gx) {
            const Eigen::Index gh = gx->h(), gw = gx->w();
            for (Eigen::Index ci = 0; ci < gx->c(); ++ci) {
                S* dst = gx->plane(n, ci);
                for (int dy = 0; dy < kh; ++dy) {
                    for (int dx = 0; dx < kw; ++dx) {
                        const S* crow =
                            dcol.data() + (row0 + (ci * kh + dy) * kw + dx) * dcol.cols();
                        for (Eigen::Index oy = 0; oy < oh; ++oy) {
                            const Eigen::Index iy = oy * o.stride + dy - o.pad;
                            const bool y_in = iy >= 0 && iy < gh;
                            if (!y_in && o.pad_mode == PadMode::Zero) continue;
                            S* drow = dst + (y_in ? iy : reflect_index(iy, gh)) * gw;
                            const S* csrc = crow + oy * ow;
                            if (o.stride == 1) {
                                const Eigen::Index lo = std::max<Eigen::Index>(0, o.pad - dx);
                                const Eigen::Index hi =
                                    std::min<Eigen::Index>(ow, gw + o.pad - dx);
                                if (o.pad_mode == PadMode::Reflect)
                                    for (Eigen::Index ox = 0; ox < std::min(lo, ow); ++ox)
                                        drow[reflect_index(ox + dx - o.pad, gw)] += csrc[ox];
                                if (hi > lo) {
                                    Eigen::Map<VecX<S>> d(drow + (lo + dx - o.pad), hi - lo);
                                    Eigen::Map<const VecX<S>> s(csrc + lo, hi - lo);
                                    d += s;
                                }
                                if (o.pad_mode == PadMode::Reflect)
                                    for (Eigen::Index ox = std::max(hi, Eigen::Index(0)); ox < ow;
                                         ++ox)
                                        drow[reflect_index(ox + dx - o.pad, gw)] += csrc[ox];
                            } else {
                                for (Eigen::Index ox = 0; ox < ow; ++ox) {
                                    const Eigen::Index ix = ox * o.stride + dx - o.pad;
                                    if (ix >= 0 && ix < gw) drow[ix] += csrc[ox];
                                    else if (o.pad_mode == PadMode::Reflect)
                                        drow[reflect_index(ix, gw)] += csrc[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        row0 += (gx ? gx->c() : 0) * kh * kw;
    }
    (void)H;
    (void)W;
}

}  // namespace detail

/// 2-D convolution via im2col + GEMM. `inputs` are channel-concatenated
/// virtually (dense blocks never materialize their concats). Weight is
/// [Cout, Cin_total, kh, kw]; bias [Cout] or invalid.
template <typename S>
Var<S> conv2d_multi(Tape<S>& t, const std::vector<Var<S>>& inputs, Var<S> w, Var<S> b,
                    const Conv2dOpts& opts) {
    CDSR_REQUIRE(!inputs.empty(), "conv2d: no inputs");
    const Tensor<S>& vw = t.value(w);
    const Eigen::Index Cout = vw.n(), Cin = vw.c();
    const int kh = static_cast<int>(vw.h()), kw = static_cast<int>(vw.w());
    std::vector<const Tensor<S>*> xs;
    Eigen::Index cin_total = 0;
    for (auto in : inputs) {
        xs.push_back(&t.value(in));
        cin_total += xs.back()->c();
        CDSR_REQUIRE(xs.back()->h() == xs[0]->h() && xs.back()->w() == xs[0]->w() &&
                         xs.back()->n() == xs[0]->n(),
                     "conv2d: stacked inputs must share N,H,W");
    }
    CDSR_REQUIRE(cin_total == Cin, "conv2d: weight channel mismatch");
    CDSR_REQUIRE(!b.valid() || t.value(b).size() == Cout, "conv2d: bias shape mismatch");
    const Eigen::Index N = xs[0]->n(), H = xs[0]->h(), W = xs[0]->w();
    const Eigen::Index oh = (H + 2 * opts.pad - kh) / opts.stride + 1;
    const Eigen::Index ow = (W + 2 * opts.pad - kw) / opts.stride + 1;
    CDSR_REQUIRE(oh >= 1 && ow >= 1, "conv2d: input smaller than kernel");

    Tensor<S> out(N, Cout, oh, ow);
    const auto wm = vw.as_matrix(Cout, Cin * kh * kw);
    RowMajorMat<S> col(Cin * kh * kw, oh * ow);
    for (Eigen::Index n = 0; n < N; ++n) {
        detail::im2col(xs, n, kh, kw, opts, oh, ow, col);
        Eigen::Map<RowMajorMat<S>> om(out.slab(n), Cout, oh * ow);
        om.noalias() = wm * col;
        if (b.valid()) om.colwise() += t.value(b).data;
    }

    std::vector<Var<S>> all = inputs;
    bool req = detail::any_requires(t, {w, b});
    for (auto in : inputs) req = req || t.requires_grad(in);
    return t.make_node(
        std::move(out), req,
        [inputs, w, b, opts, kh, kw, N, oh, ow, Cout, Cin](Tape<S>& tp, std::int32_t self) {
            const Tensor<S>& g = tp.grad_ref(self);
            std::vector<const Tensor<S>*> xs;
            std::vector<Tensor<S>*> gxs;
            bool any_x = false;
            for (auto in : inputs) {
                xs.push_back(&tp.value(in));
                if (tp.requires_grad(in)) {
                    gxs.push_back(&tp.grad_ref(in));
                    any_x = true;
                } else {
                    gxs.push_back(nullptr);
                }
            }
            const bool need_w = tp.requires_grad(w);
            const auto wm = tp.value(w).as_matrix(Cout, Cin * kh * kw);
            RowMajorMat<S> col(Cin * kh * kw, oh * ow);
            RowMajorMat<S> dcol;
            if (any_x) dcol.resize(Cin * kh * kw, oh * ow);
            for (Eigen::Index n = 0; n < N; ++n) {
                Eigen::Map<const RowMajorMat<S>> gm(g.slab(n), Cout, oh * ow);
                if (need_w) {
                    detail::im2col(xs, n, kh, kw, opts, oh, ow, col);
                    tp.grad_ref(w).as_matrix(Cout, Cin * kh * kw).noalias() +=
                        gm * col.transpose();
                }
                if (any_x) {
                    dcol.noalias() = wm.transpose() * gm;
                    detail::col2im_add(dcol, gxs, n, kh, kw, opts, oh, ow);
                }
            }
            if (b.valid() && tp.requires_grad(b)) {
                auto gmat = g.as_matrix(N * Cout, oh * ow);
                VecX<S> rows = gmat.rowwise().sum();
                for (Eigen::Index n = 0; n < N; ++n)
                    tp.grad_ref(b).data += rows.segment(n * Cout, Cout);
            }
        });
}

template <typename S>
Var<S> conv2d(Tape<S>& t, Var<S> x, Var<S> w, Var<S> b, const Conv2dOpts& opts) {
    return conv2d_multi(t, std::vector<Var<S>>{x}, w, b, opts);
}

/// Depthwise convolution whose k x k filter per (sample, channel) comes from a
/// generator: x [N,C,H,W], f [N, C*k*k]. Reflective padding, stride 1; output
/// keeps the spatial size. Gradients flow to both the feature map and the
/// filters.
template <typename S>
Var<S> dynamic_depthwise_conv(Tape<S>& t, Var<S> x, Var<S> f, int k) {
    const Tensor<S>& vx = t.value(x);
    const Tensor<S>& vf = t.value(f);
    CDSR_REQUIRE(k % 2 == 1, "dynamic filter size must be odd");
    CDSR_REQUIRE(vf.n() == vx.n() && vf.size() / vf.n() == vx.c() * k * k,
                 "dynamic_depthwise_conv: filter tensor must be [N, C*k*k]");
    const Eigen::Index N = vx.n(), C = vx.c(), H = vx.h(), W = vx.w();
    const int half = k / 2;
    // Reflected source indices, hoisted out of the tap loops.
    std::vector<Eigen::Index> ylut(H + 2 * half), xlut(W + 2 * half);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(ylut.size()); ++i)
        ylut[i] = detail::reflect_index(i - half, H);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(xlut.size()); ++i)
        xlut[i] = detail::reflect_index(i - half, W);
    Tensor<S> out(N, C, H, W);
    for (Eigen::Index n = 0; n < N; ++n)
        for (Eigen::Index c = 0; c < C; ++c) {
            const S* src = vx.plane(n, c);
            const S* fil = vf.slab(n) + c * k * k;
            S* dst = out.plane(n, c);
            for (Eigen::Index y = 0; y < H; ++y)
                for (Eigen::Index xx = 0; xx < W; ++xx) {
                    S acc = S(0);
                    for (int dy = 0; dy < k; ++dy) {
                        const S* srow = src + ylut[y + dy] * W;
                        for (int dx = 0; dx < k; ++dx)
                            acc += fil[dy * k + dx] * srow[xlut[xx + dx]];
                    }
                    dst[y * W + xx] = acc;
                }
        }
    return t.make_node(
        std::move(out), detail::any_requires(t, {x, f}),
        [x, f, k, N, C, H, W, half](Tape<S>& tp, std::int32_t self) {
            const Tensor<S>& g = tp.grad_ref(self);
            const Tensor<S>& vx = tp.value(x);
            const Tensor<S>& vf = tp.value(f);
            const bool need_x = tp.requires_grad(x), need_f = tp.requires_grad(f);
            std::vector<Eigen::Index> ylut(H + 2 * half), xlut(W + 2 * half);
            for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(ylut.size()); ++i)
                ylut[i] = detail::reflect_index(i - half, H);
            for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(xlut.size()); ++i)
                xlut[i] = detail::reflect_index(i - half, W);
            for (Eigen::Index n = 0; n < N; ++n)
                for (Eigen::Index c = 0; c < C; ++c) {
                    const S* src = vx.plane(n, c);
                    const S* fil = vf.slab(n) + c * k * k;
                    const S* gout = g.plane(n, c);
                    S* gx = need_x ? tp.grad_ref(x).plane(n, c) : nullptr;
                    S* gf = need_f ? tp.grad_ref(f).slab(n) + c * k * k : nullptr;
                    for (Eigen::Index y = 0; y < H; ++y)
                        for (Eigen::Index xx = 0; xx < W; ++xx) {
                            const S go = gout[y * W + xx];
                            for (int dy = 0; dy < k; ++dy) {
                                const Eigen::Index row = ylut[y + dy] * W;
                                for (int dx = 0; dx < k; ++dx) {
                                    const Eigen::Index si = row + xlut[xx + dx];
                                    if (gx) gx[si] += go * fil[dy * k + dx];
                                    if (gf) gf[dy * k + dx] += go * src[si];
                                }
                            }
                        }
                }
        });
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

/// Per-channel batch norm over (N,H,W). In training mode the batch statistics
/// are used and running stats (plain tensors owned by the caller) are updated
/// in place; in eval mode the running stats are used.
template <typename S>
Var<S> batch_norm(Tape<S>& t, Var<S> x, Var<S> gamma, Var<S> beta, Tensor<S>& running_mean,
                  Tensor<S>& running_var, bool training, S momentum = S(0.1),
                  S eps = static_cast<S>(1e-5), bool update_running = true) {
    const Tensor<S>& vx = t.value(x);
    const Eigen::Index N = vx.n(), C = vx.c(), H = vx.h(), W = vx.w();
    const Eigen::Index M = N * H * W;
    CDSR_REQUIRE(t.value(gamma).size() == C && t.value(beta).size() == C,
                 "batch_norm: affine parameter size mismatch");
    CDSR_REQUIRE(running_mean.size() == C && running_var.size() == C,
                 "batch_norm: running stat size mismatch");

    VecX<S> mean(C), var(C);
    if (training) {
        for (Eigen::Index c = 0; c < C; ++c) {
            S sum = S(0), sq = S(0);
            for (Eigen::Index n = 0; n < N; ++n) {
                Eigen::Map<const VecX<S>> p(vx.plane(n, c), H * W);
                sum += p.sum();
                sq += p.squaredNorm();
            }
            mean[c] = sum / static_cast<S>(M);
            var[c] = sq / static_cast<S>(M) - mean[c] * mean[c];
            if (var[c] < S(0)) var[c] = S(0);
        }
        if (update_running) {
            const S unbias = M > 1 ? static_cast<S>(M) / static_cast<S>(M - 1) : S(1);
            running_mean.data = (S(1) - momentum) * running_mean.data + momentum * mean;
            running_var.data = (S(1) - momentum) * running_var.data + momentum * (unbias * var);
        }
    } else {
        mean = running_mean.data;
        var = running_var.data;
    }

    Tensor<S> out(N, C, H, W);
    VecX<S> inv_std = (var.array() + eps).rsqrt();
    const VecX<S>& gam = t.value(gamma).data;
    const VecX<S>& bet = t.value(beta).data;
    for (Eigen::Index n = 0; n < N; ++n)
        for (Eigen::Index c = 0; c < C; ++c) {
            Eigen::Map<const VecX<S>> p(vx.plane(n, c), H * W);
            Eigen::Map<VecX<S>> q(out.plane(n, c), H * W);
            const S a = gam[c] * inv_std[c];
            q = (a * p.array() + (bet[c] - a * mean[c])).matrix();
        }

    return t.make_node(
        std::move(out), detail::any_requires(t, {x, gamma, beta}),
        [x, gamma, beta, mean, var, eps, training, N, C, H, W, M](Tape<S>& tp,
                                                                  std::int32_t self) {
            const Tensor<S>& g = tp.grad_ref(self);
            const Tensor<S>& vx = tp.value(x);
            const VecX<S>& gam = tp.value(gamma).data;
            VecX<S> inv_std = (var.array() + eps).rsqrt();
            const Eigen::Index HW = H * W;
            for (Eigen::Index c = 0; c < C; ++c) {
                // Accumulate the three per-channel reductions.
                S sum_dy = S(0), sum_dy_xhat = S(0);
                for (Eigen::Index n = 0; n < N; ++n) {
                    Eigen::Map<const VecX<S>> gp(g.plane(n, c), HW);
                    Eigen::Map<const VecX<S>> xp(vx.plane(n, c), HW);
                    sum_dy += gp.sum();
                    sum_dy_xhat += (gp.array() * (xp.array() - mean[c])).sum() * inv_std[c];
                }
                if (tp.requires_grad(gamma)) tp.grad_ref(gamma).data[c] += sum_dy_xhat;
                if (tp.requires_grad(beta)) tp.grad_ref(beta).data[c] += sum_dy;
                if (tp.requires_grad(x)) {
                    const S a = gam[c] * inv_std[c];
                    for (Eigen::Index n = 0; n < N; ++n) {
                        Eigen::Map<const VecX<S>> gp(g.plane(n, c), HW);
                        Eigen::Map<const VecX<S>> xp(vx.plane(n, c), HW);
                        Eigen::Map<VecX<S>> gx(tp.grad_ref(x).plane(n, c), HW);
                        if (training) {
                            const S inv_m = S(1) / static_cast<S>(M);
                            gx.array() +=
                                a * (gp.array() - inv_m * sum_dy -
                                     inv_m * ((xp.array() - mean[c]) * inv_std[c]) * sum_dy_xhat);
                        } else {
                            gx.array() += a * gp.array();
                        }
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Attention and losses
// ---------------------------------------------------------------------------

/// Channel-token attention shared by each fusion block: every entry of the
/// query vector attends over the entries of the key vector. q [N,Dq], k
/// [N,Dk], v [N,Dk] -> out [N,Dq] with out[n] = softmax(q[n] k[n]^T * scale) v[n].
template <typename S>
Var<S> rowwise_attention(Tape<S>& t, Var<S> q, Var<S> k, Var<S> v, S scale_factor) {
    const Tensor<S>& vq = t.value(q);
    const Tensor<S>& vk = t.value(k);
    const Tensor<S>& vv = t.value(v);
    const Eigen::Index N = vq.n(), Dq = vq.size() / vq.n(), Dk = vk.size() / vk.n();
    CDSR_REQUIRE(vk.n() == N && vv.n() == N, "rowwise_attention: batch mismatch");
    CDSR_REQUIRE(vv.size() / N == Dk, "rowwise_attention: key/value length mismatch");

    // Keep the softmax weights for the backward pass (flat, one Dq x Dk
    // row-major block per sample).
    auto weights = std::make_shared<VecX<S>>(N * Dq * Dk);
    Tensor<S> out(N, Dq, 1, 1);
    for (Eigen::Index n = 0; n < N; ++n) {
        Eigen::Map<const VecX<S>> qr(vq.slab(n), Dq);
        Eigen::Map<const VecX<S>> kr(vk.slab(n), Dk);
        Eigen::Map<const VecX<S>> vr(vv.slab(n), Dk);
        Eigen::Map<RowMajorMat<S>> wmat(weights->data() + n * Dq * Dk, Dq, Dk);
        for (Eigen::Index i = 0; i < Dq; ++i) {
            Eigen::Array<S, Eigen::Dynamic, 1> logits = (qr[i] * scale_factor) * kr.array();
            const S m = logits.maxCoeff();
            Eigen::Array<S, Eigen::Dynamic, 1> e = (logits - m).exp();
            wmat.row(i) = (e / e.sum()).matrix().transpose();
        }
        Eigen::Map<VecX<S>> outr(out.slab(n), Dq);
        outr.noalias() = wmat * vr;
    }
    return t.make_node(
        std::move(out), detail::any_requires(t, {q, k, v}),
        [q, k, v, scale_factor, weights, N, Dq, Dk](Tape<S>& tp, std::int32_t self) {
            const Tensor<S>& g = tp.grad_ref(self);
            const Tensor<S>& vq = tp.value(q);
            const Tensor<S>& vk = tp.value(k);
            const Tensor<S>& vv = tp.value(v);
            for (Eigen::Index n = 0; n < N; ++n) {
                Eigen::Map<const VecX<S>> gr(g.slab(n), Dq);
                Eigen::Map<const VecX<S>> qr(vq.slab(n), Dq);
                Eigen::Map<const VecX<S>> kr(vk.slab(n), Dk);
                Eigen::Map<const VecX<S>> vr(vv.slab(n), Dk);
                Eigen::Map<const RowMajorMat<S>> wmat(weights->data() + n * Dq * Dk, Dq, Dk);
                // dW = g v^T, then softmax backward row-wise to dlogits.
                RowMajorMat<S> dlog(Dq, Dk);
                for (Eigen::Index i = 0; i < Dq; ++i) {
                    VecX<S> dwrow = gr[i] * vr;
                    const S dot = dwrow.dot(wmat.row(i).transpose());
                    dlog.row(i) =
                        ((dwrow.array() - dot) * wmat.row(i).transpose().array()).transpose();
                }
                if (tp.requires_grad(v)) {
                    Eigen::Map<VecX<S>> gv(tp.grad_ref(v).slab(n), Dk);
                    gv.noalias() += wmat.transpose() * gr;
                }
                if (tp.requires_grad(q)) {
                    Eigen::Map<VecX<S>> gq(tp.grad_ref(q).slab(n), Dq);
                    gq.noalias() += scale_factor * (dlog * kr);
                }
                if (tp.requires_grad(k)) {
                    Eigen::Map<VecX<S>> gk(tp.grad_ref(k).slab(n), Dk);
                    gk.noalias() += scale_factor * (dlog.transpose() * qr);
                }
            }
        });
}

/// InfoNCE over a fixed negative queue, summed over the batch:
///   L = sum_i -log( exp(a_i.p_i / tau) / Z_i ),
/// where Z_i sums exp(a_i.q_j / tau) over the queue (plus the positive term
/// iff include_positive). The queue receives no gradient.
template <typename S>
Var<S> info_nce(Tape<S>& t, Var<S> anchors, Var<S> positives, const MatX<S>& queue, S tau,
                bool include_positive) {
    CDSR_REQUIRE(tau > S(0), "info_nce: tau must be positive");
    CDSR_REQUIRE_STATE(queue.rows() >= 1, "info_nce: negative queue is empty");
    const Tensor<S>& va = t.value(anchors);
    const Tensor<S>& vp = t.value(positives);
    const Eigen::Index B = va.n(), C = va.size() / va.n(), Q = queue.rows();
    CDSR_REQUIRE(vp.n() == B && vp.size() / B == C && queue.cols() == C,
                 "info_nce: dimension mismatch");

    auto am = va.as_matrix(B, C);
    auto pm = vp.as_matrix(B, C);
    // logits against the queue, plus the positive logit per row
    auto neg_logits = std::make_shared<MatX<S>>(B, Q);
    neg_logits->noalias() = am * queue.transpose() / tau;
    auto pos_logits = std::make_shared<VecX<S>>(B);
    for (Eigen::Index i = 0; i < B; ++i) (*pos_logits)[i] = am.row(i).dot(pm.row(i)) / tau;

    S loss = S(0);
    auto softmax_neg = std::make_shared<MatX<S>>(B, Q);   // exp(neg - m) / Z
    auto softmax_pos = std::make_shared<VecX<S>>(B);      // exp(pos - m) / Z or 0
    for (Eigen::Index i = 0; i < B; ++i) {
        S m = neg_logits->row(i).maxCoeff();
        if (include_positive) m = std::max(m, (*pos_logits)[i]);
        Eigen::Array<S, 1, Eigen::Dynamic> e = (neg_logits->row(i).array() - m).exp();
        S z = e.sum();
        S ep = S(0);
        if (include_positive) {
            ep = std::exp((*pos_logits)[i] - m);
            z += ep;
        }
        softmax_neg->row(i) = (e / z).matrix();
        (*softmax_pos)[i] = include_positive ? ep / z : S(0);
        loss += -((*pos_logits)[i] - (m + std::log(z)));
    }

    return t.make_node(
        Tensor<S>::scalar(loss), detail::any_requires(t, {anchors, positives}),
        [anchors, positives, queue, tau, include_positive, softmax_neg, softmax_pos, B, C,
         Q](Tape<S>& tp, std::int32_t self) {
            const S g0 = tp.grad_ref(self).data[0];
            auto am = tp.value(anchors).as_matrix(B, C);
            auto pm = tp.value(positives).as_matrix(B, C);
            const S inv_tau = S(1) / tau;
            for (Eigen::Index i = 0; i < B; ++i) {
                const S dpos = g0 * inv_tau * ((*softmax_pos)[i] - S(1));
                if (tp.requires_grad(anchors)) {
                    auto ga = tp.grad_ref(anchors).as_matrix(B, C);
                    ga.row(i) += dpos * pm.row(i);
                    ga.row(i).noalias() += (g0 * inv_tau) * (softmax_neg->row(i) * queue);
                }
                if (tp.requires_grad(positives)) {
                    auto gp = tp.grad_ref(positives).as_matrix(B, C);
                    gp.row(i) += dpos * am.row(i);
                }
            }
            (void)Q;
        });
}

/// Mean absolute error between two same-shaped tensors (scalar output).
template <typename S>
Var<S> l1_loss(Tape<S>& t, Var<S> a, Var<S> b) {
    CDSR_REQUIRE(t.value(a).same_shape(t.value(b)), "l1_loss: shape mismatch");
    const Tensor<S>& va = t.value(a);
    const Tensor<S>& vb = t.value(b);
    const S inv_n = S(1) / static_cast<S>(va.size());
    const S loss = (va.data - vb.data).template lpNorm<1>() * inv_n;
    return t.make_node(Tensor<S>::scalar(loss), detail::any_requires(t, {a, b}),
                       [a, b, inv_n](Tape<S>& tp, std::int32_t self) {
                           const S g0 = tp.grad_ref(self).data[0];
                           const Tensor<S>& va = tp.value(a);
                           const Tensor<S>& vb = tp.value(b);
                           for (Eigen::Index i = 0; i < va.size(); ++i) {
                               const S d = va.data[i] - vb.data[i];
                               const S s = d > S(0) ? S(1) : (d < S(0) ? S(-1) : S(0));
                               if (tp.requires_grad(a)) tp.grad_ref(a).data[i] += g0 * inv_n * s;
                               if (tp.requires_grad(b)) tp.grad_ref(b).data[i] -= g0 * inv_n * s;
                           }
                       });
}

/// Sum of all entries (scalar), handy for building test losses.
template <typename S>
Var<S> sum_all(Tape<S>& t, Var<S> a) {
    const S s = t.value(a).data.sum();
    return t.make_node(Tensor<S>::scalar(s), detail::any_requires(t, {a}),
                       [a](Tape<S>& tp, std::int32_t self) {
                           tp.grad_ref(a).data.array() += tp.grad_ref(self).data[0];
                       });
}

/// Weighted sum of all entries against fixed coefficients (test probes).
template <typename S>
Var<S> weighted_sum(Tape<S>& t, Var<S> a, const VecX<S>& coeffs) {
    CDSR_REQUIRE(t.value(a).size() == coeffs.size(), "weighted_sum: size mismatch");
    const S s = t.value(a).data.dot(coeffs);
    return t.make_node(Tensor<S>::scalar(s), detail::any_requires(t, {a}),
                       [a, coeffs](Tape<S>& tp, std::int32_t self) {
                           tp.grad_ref(a).data += tp.grad_ref(self).data[0] * coeffs;
                       });
}

}  // namespace cdsr
