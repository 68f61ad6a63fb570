#include "cdsr/image.hpp"

#include <cmath>

namespace cdsr {

namespace {

// Keys cubic convolution weight, a = -0.5.
inline double cubic_weight(double t) {
    const double a = -0.5;
    t = std::abs(t);
    if (t <= 1.0) return (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0;
    if (t < 2.0) return a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a;
    return 0.0;
}

inline Eigen::Index clamp_index(Eigen::Index i, Eigen::Index n) {
    return i < 0 ? 0 : (i >= n ? n - 1 : i);
}

}  // namespace

ImagePlane bicubic_upscale(const ImagePlane& img, int scale) {
    CDSR_REQUIRE(scale >= 1, "scale must be >= 1");
    const Eigen::Index H = img.height(), W = img.width();
    const Eigen::Index OH = H * scale, OW = W * scale;
    ImagePlane out(OH, OW, img.channels(), img.color_space);

    // Separable: horizontal pass then vertical pass.
    for (int c = 0; c < img.channels(); ++c) {
        Eigen::ArrayXXd tmp(H, OW);
        for (Eigen::Index ox = 0; ox < OW; ++ox) {
            const double sx = (ox + 0.5) / scale - 0.5;
            const Eigen::Index x0 = static_cast<Eigen::Index>(std::floor(sx)) - 1;
            double wsum = 0.0, w[4];
            for (int i = 0; i < 4; ++i) {
                w[i] = cubic_weight(sx - (x0 + i));
                wsum += w[i];
            }
            for (Eigen::Index y = 0; y < H; ++y) {
                double acc = 0.0;
                for (int i = 0; i < 4; ++i) acc += w[i] * img.planes[c](y, clamp_index(x0 + i, W));
                tmp(y, ox) = acc / wsum;
            }
        }
        for (Eigen::Index oy = 0; oy < OH; ++oy) {
            const double sy = (oy + 0.5) / scale - 0.5;
            const Eigen::Index y0 = static_cast<Eigen::Index>(std::floor(sy)) - 1;
            double wsum = 0.0, w[4];
            for (int i = 0; i < 4; ++i) {
                w[i] = cubic_weight(sy - (y0 + i));
                wsum += w[i];
            }
            for (Eigen::Index ox = 0; ox < OW; ++ox) {
                double acc = 0.0;
                for (int i = 0; i < 4; ++i) acc += w[i] * tmp(clamp_index(y0 + i, H), ox);
                out.planes[c](oy, ox) = acc / wsum;
            }
        }
    }
    out.clamp01();
    return out;
}

double mean_abs_diff(const ImagePlane& a, const ImagePlane& b) {
    CDSR_REQUIRE(a.channels() == b.channels() && a.height() == b.height() && a.width() == b.width(),
                 "mean_abs_diff requires matching shapes");
    double acc = 0.0;
    for (int c = 0; c < a.channels(); ++c) acc += (a.planes[c] - b.planes[c]).abs().sum();
    return acc / (static_cast<double>(a.channels()) * a.height() * a.width());
}

}  // namespace cdsr
