#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <initializer_list>

#include "cdsr/common.hpp"

namespace cdsr {

template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using RowMajorMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense NCHW tensor over a flat Eigen vector.
///
/// Rank-deficient shapes use trailing ones: a batch of row vectors is
/// (n, f, 1, 1), a scalar is (1, 1, 1, 1). Layout is n-major then channel,
/// row, column, so `slab(n)` and `plane(n, c)` are contiguous.
template <typename S>
struct Tensor {
    std::array<Eigen::Index, 4> shape{0, 0, 0, 0};
    VecX<S> data;

    Tensor() = default;
    Tensor(Eigen::Index n, Eigen::Index c, Eigen::Index h, Eigen::Index w) { resize(n, c, h, w); }

    static Tensor zeros(Eigen::Index n, Eigen::Index c, Eigen::Index h = 1, Eigen::Index w = 1) {
        Tensor t(n, c, h, w);
        t.data.setZero();
        return t;
    }

    static Tensor scalar(S v) {
        Tensor t(1, 1, 1, 1);
        t.data[0] = v;
        return t;
    }

    void resize(Eigen::Index n, Eigen::Index c, Eigen::Index h, Eigen::Index w) {
        shape = {n, c, h, w};
        data.resize(n * c * h * w);
    }

    Eigen::Index size() const { return data.size(); }
    Eigen::Index n() const { return shape[0]; }
    Eigen::Index c() const { return shape[1]; }
    Eigen::Index h() const { return shape[2]; }
    Eigen::Index w() const { return shape[3]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    S& at(Eigen::Index n, Eigen::Index c, Eigen::Index y, Eigen::Index x) {
        return data[((n * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
    S at(Eigen::Index n, Eigen::Index c, Eigen::Index y, Eigen::Index x) const {
        return data[((n * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }

    S* slab(Eigen::Index n) { return data.data() + n * shape[1] * shape[2] * shape[3]; }
    const S* slab(Eigen::Index n) const { return data.data() + n * shape[1] * shape[2] * shape[3]; }

    S* plane(Eigen::Index n, Eigen::Index c) {
        return data.data() + (n * shape[1] + c) * shape[2] * shape[3];
    }
    const S* plane(Eigen::Index n, Eigen::Index c) const {
        return data.data() + (n * shape[1] + c) * shape[2] * shape[3];
    }

    /// View the whole tensor as a row-major (rows, cols) matrix.
    auto as_matrix(Eigen::Index rows, Eigen::Index cols) {
        return Eigen::Map<RowMajorMat<S>>(data.data(), rows, cols);
    }
    auto as_matrix(Eigen::Index rows, Eigen::Index cols) const {
        return Eigen::Map<const RowMajorMat<S>>(data.data(), rows, cols);
    }

    /// Rows view: one row per sample, columns = c*h*w.
    auto rows() { return as_matrix(shape[0], shape[1] * shape[2] * shape[3]); }
    auto rows() const { return as_matrix(shape[0], shape[1] * shape[2] * shape[3]); }

    template <typename T>
    Tensor<T> cast() const {
        Tensor<T> out(shape[0], shape[1], shape[2], shape[3]);
        out.data = data.template cast<T>();
        return out;
    }

    bool all_finite() const { return data.allFinite(); }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace cdsr
