#include "cdsr/degradation.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "cdsr/common.hpp"

namespace cdsr {

BlurKernel make_aniso_gaussian_kernel(double sigma1, double sigma2, double theta, int size) {
    CDSR_REQUIRE(sigma1 > 0.0 && sigma2 > 0.0, "kernel sigmas must be positive");
    CDSR_REQUIRE(size >= 3 && size % 2 == 1, "kernel size must be odd and >= 3");

    // Inverse covariance of R(theta) diag(s1^2, s2^2) R(theta)^T.
    const double c = std::cos(theta), s = std::sin(theta);
    const double inv1 = 1.0 / (sigma1 * sigma1);
    const double inv2 = 1.0 / (sigma2 * sigma2);
    const double a = c * c * inv1 + s * s * inv2;
    const double b = s * c * (inv1 - inv2);
    const double d = s * s * inv1 + c * c * inv2;

    BlurKernel k;
    k.sigma1 = sigma1;
    k.sigma2 = sigma2;
    k.theta = theta;
    k.values.resize(size, size);
    const int half = size / 2;
    double sum = 0.0;
    for (int y = -half; y <= half; ++y) {
        for (int x = -half; x <= half; ++x) {
            const double q = a * x * x + 2.0 * b * x * y + d * y * y;
            const double v = std::exp(-0.5 * q);
            k.values(y + half, x + half) = v;
            sum += v;
        }
    }
    k.values /= sum;
    return k;
}

BlurKernel make_delta_kernel(int size) {
    CDSR_REQUIRE(size >= 1 && size % 2 == 1, "kernel size must be odd");
    BlurKernel k;
    k.sigma1 = k.sigma2 = 0.0;
    k.theta = 0.0;
    k.values = Eigen::MatrixXd::Zero(size, size);
    k.values(size / 2, size / 2) = 1.0;
    return k;
}

DegradationSpec sample_degradation(std::uint64_t rng_seed, int scale, double noise_max,
                                   int kernel_size) {
    CDSR_REQUIRE(scale == 2 || scale == 3 || scale == 4, "scale must be in {2,3,4}");
    CDSR_REQUIRE(noise_max >= 0.0, "noise_max must be >= 0");
    Rng rng(rng_seed);
    const double lo = 0.175 * scale, hi = 2.5 * scale;
    const double s1 = rng.uniform(lo, hi);
    const double s2 = rng.uniform(lo, hi);
    const double theta = rng.uniform(0.0, M_PI);
    const double noise = noise_max > 0.0 ? rng.uniform(0.0, noise_max) : 0.0;
    DegradationSpec spec;
    spec.kernel = make_aniso_gaussian_kernel(s1, s2, theta, kernel_size);
    spec.scale = scale;
    spec.noise_level = noise;
    return spec;
}

namespace {

// Mirror index into [0, n), reflecting about the edge samples (no border
// repeat): -1 -> 1, n -> n-2.
inline Eigen::Index reflect_index(Eigen::Index i, Eigen::Index n) {
    if (n == 1) return 0;
    const Eigen::Index period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

}  // namespace

ImagePlane blur_downsample(const ImagePlane& hr, const BlurKernel& kernel, int scale) {
    CDSR_REQUIRE(scale >= 1, "scale must be >= 1");
    CDSR_REQUIRE(hr.height() % scale == 0 && hr.width() % scale == 0,
                 "HR dimensions must be divisible by the scale factor");
    const Eigen::Index H = hr.height(), W = hr.width();
    const int k = kernel.size();
    const int half = k / 2;
    // Row-major kernel copy so each tap row is a contiguous dot product.
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> kern = kernel.values;
    ImagePlane lr(H / scale, W / scale, hr.channels(), hr.color_space);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> padded(H + 2 * half,
                                                                                  W + 2 * half);
    for (int c = 0; c < hr.channels(); ++c) {
        const auto& src = hr.planes[c];
        for (Eigen::Index y = 0; y < padded.rows(); ++y) {
            const Eigen::Index sy = reflect_index(y - half, H);
            for (Eigen::Index x = 0; x < padded.cols(); ++x)
                padded(y, x) = src(sy, reflect_index(x - half, W));
        }
        auto& dst = lr.planes[c];
        for (Eigen::Index oy = 0; oy < lr.height(); ++oy) {
            const Eigen::Index cy = oy * scale;
            for (Eigen::Index ox = 0; ox < lr.width(); ++ox) {
                const Eigen::Index cx = ox * scale;
                double acc = 0.0;
                for (int dy = 0; dy < k; ++dy) {
                    Eigen::Map<const Eigen::VectorXd> prow(&padded(cy + dy, cx), k);
                    Eigen::Map<const Eigen::VectorXd> krow(kern.data() + dy * k, k);
                    acc += krow.dot(prow);
                }
                dst(oy, ox) = acc;
            }
        }
    }
    return lr;
}

ImagePlane degrade(const ImagePlane& hr, const DegradationSpec& spec, std::uint64_t rng_seed) {
    CDSR_REQUIRE(hr.color_space == ColorSpace::RGB, "degrade expects an RGB image");
    ImagePlane lr = blur_downsample(hr, spec.kernel, spec.scale);
    if (spec.noise_level > 0.0) {
        Rng rng(rng_seed);
        const double sigma = spec.noise_level / 255.0;
        for (auto& p : lr.planes)
            for (Eigen::Index y = 0; y < p.rows(); ++y)
                for (Eigen::Index x = 0; x < p.cols(); ++x) p(y, x) += sigma * rng.normal();
    }
    lr.clamp01();
    return lr;
}

void write_kernel_text(const std::string& path, const BlurKernel& kernel) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open kernel file for writing: " + path);
    out.precision(17);
    for (Eigen::Index y = 0; y < kernel.values.rows(); ++y) {
        for (Eigen::Index x = 0; x < kernel.values.cols(); ++x) {
            if (x) out << ' ';
            out << kernel.values(y, x);
        }
        out << '\n';
    }
}

BlurKernel read_kernel_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open kernel file: " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::vector<double> row;
        double v;
        while (ls >> v) row.push_back(v);
        rows.push_back(std::move(row));
    }
    CDSR_REQUIRE(!rows.empty(), "kernel file is empty: " + path);
    BlurKernel k;
    k.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (size_t y = 0; y < rows.size(); ++y) {
        CDSR_REQUIRE(rows[y].size() == rows[0].size(), "ragged kernel file: " + path);
        for (size_t x = 0; x < rows[y].size(); ++x) k.values(y, x) = rows[y][x];
    }
    return k;
}

}  // namespace cdsr
