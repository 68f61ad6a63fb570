#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "cdsr/autodiff.hpp"
#include "cdsr/common.hpp"
#include "cdsr/tensor.hpp"

namespace cdsr {

/// FIFO ring of unit-norm embeddings serving as contrastive negatives.
template <typename S>
class NegativeQueue {
public:
    NegativeQueue() = default;
    NegativeQueue(Eigen::Index capacity, Eigen::Index dim)
        : buffer_(MatX<S>::Zero(capacity, dim)) {}

    Eigen::Index capacity() const { return buffer_.rows(); }
    Eigen::Index dim() const { return buffer_.cols(); }
    Eigen::Index fill() const { return fill_; }
    Eigen::Index head() const { return head_; }

    /// Append unit-norm rows; when full the oldest entries are evicted.
    void enqueue(const MatX<S>& rows) {
        CDSR_REQUIRE(rows.cols() == buffer_.cols(), "enqueue: dimension mismatch");
        for (Eigen::Index i = 0; i < rows.rows(); ++i) {
            const S norm = rows.row(i).norm();
            CDSR_REQUIRE(std::abs(norm - S(1)) < static_cast<S>(1e-6),
                         "enqueue: embeddings must be unit norm");
            buffer_.row(head_) = rows.row(i);
            head_ = (head_ + 1) % capacity();
            if (fill_ < capacity()) ++fill_;
        }
    }

    /// Snapshot in FIFO order (oldest first), `fill` rows.
    MatX<S> contents() const {
        MatX<S> out(fill_, dim());
        const Eigen::Index start = fill_ < capacity() ? 0 : head_;
        for (Eigen::Index i = 0; i < fill_; ++i)
            out.row(i) = buffer_.row((start + i) % capacity());
        return out;
    }

    const MatX<S>& raw_buffer() const { return buffer_; }
    MatX<S>& raw_buffer() { return buffer_; }
    void restore(Eigen::Index head, Eigen::Index fill) {
        CDSR_REQUIRE(head >= 0 && head < capacity() && fill >= 0 && fill <= capacity(),
                     "queue restore out of range");
        head_ = head;
        fill_ = fill;
    }

private:
    MatX<S> buffer_;
    Eigen::Index head_ = 0;
    Eigen::Index fill_ = 0;
};

/// InfoNCE against the queue (sum over the batch). Anchors/positives must be
/// unit-norm rows; the queue snapshot is treated as a constant.
template <typename S>
Var<S> info_nce_loss(Tape<S>& tape, Var<S> anchors, Var<S> positives,
                     const NegativeQueue<S>& queue, S tau, bool include_positive) {
    CDSR_REQUIRE_STATE(queue.fill() >= 1, "info_nce: queue is empty");
    return info_nce(tape, anchors, positives, MatX<S>(queue.contents()), tau, include_positive);
}

/// L = L_cl + L_1, both terms unweighted.
template <typename S>
Var<S> total_loss(Tape<S>& tape, Var<S> l_cl, Var<S> sr, Var<S> hr) {
    return add(tape, l_cl, l1_loss(tape, sr, hr));
}

}  // namespace cdsr
