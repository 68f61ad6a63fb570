#include <doctest.h>

#include <Eigen/Dense>
#include <cstdio>

#include "cdsr/degradation.hpp"
#include "test_support.hpp"

using namespace cdsr;

namespace {

// Independent oracle: evaluate the bivariate Gaussian through the explicit
// covariance matrix and Eigen's 2x2 inverse, then normalize.
Eigen::MatrixXd oracle_kernel(double s1, double s2, double theta, int size) {
    Eigen::Matrix2d rot;
    rot << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
    Eigen::Matrix2d cov = rot * Eigen::Vector2d(s1 * s1, s2 * s2).asDiagonal() * rot.transpose();
    Eigen::Matrix2d inv = cov.inverse();
    const int half = size / 2;
    Eigen::MatrixXd k(size, size);
    for (int y = -half; y <= half; ++y)
        for (int x = -half; x <= half; ++x) {
            Eigen::Vector2d p(x, y);
            k(y + half, x + half) = std::exp(-0.5 * p.dot(inv * p));
        }
    return k / k.sum();
}

// Independent oracle for blur+subsample: materialize a mirror-padded copy,
// then valid-mode correlation and stride subsampling.
ImagePlane oracle_blur_downsample(const ImagePlane& hr, const Eigen::MatrixXd& k, int scale) {
    const int half = static_cast<int>(k.rows()) / 2;
    const Eigen::Index H = hr.height(), W = hr.width();
    ImagePlane out(H / scale, W / scale, hr.channels(), hr.color_space);
    for (int c = 0; c < hr.channels(); ++c) {
        Eigen::ArrayXXd padded(H + 2 * half, W + 2 * half);
        for (Eigen::Index y = 0; y < padded.rows(); ++y)
            for (Eigen::Index x = 0; x < padded.cols(); ++x) {
                Eigen::Index sy = std::abs(y - half);
                if (sy >= H) sy = 2 * (H - 1) - sy;
                Eigen::Index sx = std::abs(x - half);
                if (sx >= W) sx = 2 * (W - 1) - sx;
                padded(y, x) = hr.planes[c](sy, sx);
            }
        for (Eigen::Index oy = 0; oy < out.height(); ++oy)
            for (Eigen::Index ox = 0; ox < out.width(); ++ox) {
                double acc = 0.0;
                for (Eigen::Index wy = 0; wy < k.rows(); ++wy)
                    for (Eigen::Index wx = 0; wx < k.cols(); ++wx)
                        acc += k(wy, wx) * padded(oy * scale + wy, ox * scale + wx);
                out.planes[c](oy, ox) = acc;
            }
    }
    return out;
}

double max_abs_diff(const ImagePlane& a, const ImagePlane& b) {
    double m = 0.0;
    for (int c = 0; c < a.channels(); ++c)
        m = std::max(m, (a.planes[c] - b.planes[c]).abs().maxCoeff());
    return m;
}

}  // namespace

TEST_CASE("isotropic kernel matches the direct grid evaluation") {
    const BlurKernel k = make_aniso_gaussian_kernel(1.0, 1.0, 0.0, 21);
    // exp(-(x^2+y^2)/2) over the grid, normalized; compare the center entry
    // and the full matrix.
    Eigen::MatrixXd ref(21, 21);
    for (int y = -10; y <= 10; ++y)
        for (int x = -10; x <= 10; ++x)
            ref(y + 10, x + 10) = std::exp(-(x * x + y * y) / 2.0);
    ref /= ref.sum();
    CHECK(std::abs(k.values(10, 10) - ref(10, 10)) < 1e-9);
    CHECK((k.values - ref).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("random kernels match the covariance-matrix oracle") {
    Rng rng(17);
    for (int t = 0; t < 20; ++t) {
        const double s1 = rng.uniform(0.35, 10.0);
        const double s2 = rng.uniform(0.35, 10.0);
        const double theta = rng.uniform(0.0, M_PI);
        const BlurKernel k = make_aniso_gaussian_kernel(s1, s2, theta, 21);
        const Eigen::MatrixXd ref = oracle_kernel(s1, s2, theta, 21);
        CHECK((k.values - ref).cwiseAbs().maxCoeff() < 1e-9);
        CHECK(std::abs(k.values.sum() - 1.0) < 1e-9);
        CHECK(k.values.minCoeff() >= 0.0);
        // 180-degree rotational symmetry of the grid.
        Eigen::MatrixXd rotated = k.values.reverse();
        CHECK((k.values - rotated).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("isotropic kernels ignore the rotation angle") {
    const BlurKernel a = make_aniso_gaussian_kernel(2.0, 2.0, 0.0, 21);
    const BlurKernel b = make_aniso_gaussian_kernel(2.0, 2.0, M_PI / 3.0, 21);
    CHECK((a.values - b.values).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("kernel parameter validation") {
    CHECK_THROWS_AS(make_aniso_gaussian_kernel(0.0, 1.0, 0.0, 21), ParameterError);
    CHECK_THROWS_AS(make_aniso_gaussian_kernel(1.0, -1.0, 0.0, 21), ParameterError);
    CHECK_THROWS_AS(make_aniso_gaussian_kernel(1.0, 1.0, 0.0, 20), ParameterError);
}

TEST_CASE("sampled degradations stay inside the stated ranges") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull, 99ull}) {
        const DegradationSpec s4 = sample_degradation(seed, 4, 0.0);
        CHECK(s4.kernel.sigma1 >= 0.7);
        CHECK(s4.kernel.sigma1 <= 10.0);
        CHECK(s4.kernel.sigma2 >= 0.7);
        CHECK(s4.kernel.sigma2 <= 10.0);
        CHECK(s4.kernel.theta >= 0.0);
        CHECK(s4.kernel.theta < M_PI);
        CHECK(s4.noise_level == 0.0);

        const DegradationSpec s2 = sample_degradation(seed, 2, 0.0);
        CHECK(s2.kernel.sigma1 >= 0.35);
        CHECK(s2.kernel.sigma1 <= 5.0);
    }
    CHECK_THROWS_AS(sample_degradation(1, 5, 0.0), ParameterError);

    const DegradationSpec a = sample_degradation(1234, 4, 15.0);
    const DegradationSpec b = sample_degradation(1234, 4, 15.0);
    CHECK(a.kernel.sigma1 == b.kernel.sigma1);
    CHECK(a.kernel.theta == b.kernel.theta);
    CHECK(a.noise_level == b.noise_level);
    CHECK(a.noise_level <= 15.0);
}

TEST_CASE("delta kernel degrades to pure subsampling") {
    const ImagePlane hr = testing::make_test_image(32, 48, 5);
    DegradationSpec spec;
    spec.kernel = make_delta_kernel(21);
    spec.scale = 2;
    spec.noise_level = 0.0;
    const ImagePlane lr = degrade(hr, spec, 0);
    double max_err = 0.0;
    for (int c = 0; c < 3; ++c)
        for (Eigen::Index y = 0; y < lr.height(); ++y)
            for (Eigen::Index x = 0; x < lr.width(); ++x)
                max_err = std::max(max_err,
                                   std::abs(lr.planes[c](y, x) - hr.planes[c](2 * y, 2 * x)));
    CHECK(max_err == 0.0);  // exact: delta taps contribute 0.0 * v
}

TEST_CASE("constant image stays constant under any kernel") {
    ImagePlane hr(24, 24, 3, ColorSpace::RGB);
    for (auto& p : hr.planes) p.setConstant(0.37);
    DegradationSpec spec;
    spec.kernel = make_aniso_gaussian_kernel(2.3, 0.9, 0.7, 21);
    spec.scale = 3;
    spec.noise_level = 0.0;
    const ImagePlane lr = degrade(hr, spec, 0);
    for (const auto& p : lr.planes) {
        CHECK(std::abs(p.maxCoeff() - 0.37) < 1e-12);
        CHECK(std::abs(p.minCoeff() - 0.37) < 1e-12);
    }
}

TEST_CASE("blur+subsample matches the padded-image oracle") {
    Rng rng(7);
    const ImagePlane hr = testing::make_test_image(64, 64, 11);
    for (int t = 0; t < 10; ++t) {
        const DegradationSpec spec = sample_degradation(rng.next_u64(), 2, 0.0);
        const ImagePlane mine = blur_downsample(hr, spec.kernel, 2);
        const ImagePlane ref = oracle_blur_downsample(hr, spec.kernel.values, 2);
        CHECK(max_abs_diff(mine, ref) < 1e-6);
    }
}

TEST_CASE("degradation is linear in the image before clamping") {
    const ImagePlane i1 = testing::make_test_image(32, 32, 1);
    const ImagePlane i2 = testing::make_test_image(32, 32, 2);
    const BlurKernel k = make_aniso_gaussian_kernel(1.4, 2.6, 1.0, 21);
    const double a = 0.6, b = 0.3;
    ImagePlane mix(32, 32, 3, ColorSpace::RGB);
    for (int c = 0; c < 3; ++c) mix.planes[c] = a * i1.planes[c] + b * i2.planes[c];
    const ImagePlane lhs = blur_downsample(mix, k, 2);
    const ImagePlane d1 = blur_downsample(i1, k, 2);
    const ImagePlane d2 = blur_downsample(i2, k, 2);
    for (int c = 0; c < 3; ++c) {
        const Eigen::ArrayXXd rhs = a * d1.planes[c] + b * d2.planes[c];
        CHECK((lhs.planes[c] - rhs).abs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("noise realization is seed-deterministic and dimension checked") {
    const ImagePlane hr = testing::make_test_image(32, 32, 3);
    DegradationSpec spec = sample_degradation(5, 2, 15.0);
    const ImagePlane a = degrade(hr, spec, 42);
    const ImagePlane b = degrade(hr, spec, 42);
    CHECK(max_abs_diff(a, b) == 0.0);
    const ImagePlane c = degrade(hr, spec, 43);
    CHECK(max_abs_diff(a, c) > 0.0);

    const ImagePlane odd = testing::make_test_image(33, 32, 4);
    CHECK_THROWS_AS(degrade(odd, spec, 0), ParameterError);
}

TEST_CASE("kernel text round trip") {
    const BlurKernel k = make_aniso_gaussian_kernel(1.7, 3.1, 0.4, 21);
    const std::string path = "kernel_roundtrip_test.txt";
    write_kernel_text(path, k);
    const BlurKernel back = read_kernel_text(path);
    CHECK((k.values - back.values).cwiseAbs().maxCoeff() < 1e-15);
    std::remove(path.c_str());
}
