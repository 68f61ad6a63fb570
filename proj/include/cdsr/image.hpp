#pragma once

#include <Eigen/Dense>
#include <vector>

#include "cdsr/common.hpp"
#include "cdsr/tensor.hpp"

namespace cdsr {

enum class ColorSpace { RGB, Y };

/// Floating-point image, channel-planar, values nominally in [0, 1].
struct ImagePlane {
    std::vector<Eigen::ArrayXXd> planes;  // each H x W
    ColorSpace color_space = ColorSpace::RGB;

    ImagePlane() = default;
    ImagePlane(Eigen::Index h, Eigen::Index w, int channels, ColorSpace cs = ColorSpace::RGB)
        : color_space(cs) {
        planes.assign(channels, Eigen::ArrayXXd::Zero(h, w));
    }

    Eigen::Index height() const { return planes.empty() ? 0 : planes[0].rows(); }
    Eigen::Index width() const { return planes.empty() ? 0 : planes[0].cols(); }
    int channels() const { return static_cast<int>(planes.size()); }

    void clamp01() {
        for (auto& p : planes) p = p.cwiseMax(0.0).cwiseMin(1.0);
    }

    ImagePlane crop(Eigen::Index top, Eigen::Index left, Eigen::Index h, Eigen::Index w) const {
        CDSR_REQUIRE(top >= 0 && left >= 0 && top + h <= height() && left + w <= width(),
                     "crop window out of bounds");
        ImagePlane out(h, w, channels(), color_space);
        for (int c = 0; c < channels(); ++c) out.planes[c] = planes[c].block(top, left, h, w);
        return out;
    }

    /// Pack into an NCHW tensor slab of batch size 1.
    template <typename S>
    Tensor<S> to_tensor() const {
        Tensor<S> t(1, channels(), height(), width());
        for (int c = 0; c < channels(); ++c) {
            const auto& p = planes[c];
            S* dst = t.plane(0, c);
            for (Eigen::Index y = 0; y < p.rows(); ++y)
                for (Eigen::Index x = 0; x < p.cols(); ++x) dst[y * p.cols() + x] = static_cast<S>(p(y, x));
        }
        return t;
    }

    template <typename S>
    static ImagePlane from_tensor(const Tensor<S>& t, Eigen::Index n, ColorSpace cs = ColorSpace::RGB) {
        ImagePlane img(t.h(), t.w(), static_cast<int>(t.c()), cs);
        for (Eigen::Index c = 0; c < t.c(); ++c) {
            const S* src = t.plane(n, c);
            auto& p = img.planes[c];
            for (Eigen::Index y = 0; y < t.h(); ++y)
                for (Eigen::Index x = 0; x < t.w(); ++x) p(y, x) = static_cast<double>(src[y * t.w() + x]);
        }
        return img;
    }
};

/// Cubic-convolution (Keys, a = -0.5) upscale by an integer factor, edge
/// pixels replicated. The reference no-learning baseline for eval.
ImagePlane bicubic_upscale(const ImagePlane& img, int scale);

/// Mean absolute difference across all channels (same shape required).
double mean_abs_diff(const ImagePlane& a, const ImagePlane& b);

}  // namespace cdsr
