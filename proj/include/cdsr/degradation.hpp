#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>

#include "cdsr/image.hpp"
#include "cdsr/rng.hpp"

namespace cdsr {

/// Discretized 2-D anisotropic Gaussian blur kernel on a k x k grid.
///
/// Entries are non-negative and sum to one; for sigma1 == sigma2 the kernel
/// is rotation invariant.
struct BlurKernel {
    Eigen::MatrixXd values;  // k x k, unit sum
    double sigma1 = 0.0;
    double sigma2 = 0.0;
    double theta = 0.0;  // radians in [0, pi)

    int size() const { return static_cast<int>(values.rows()); }
};

/// Everything needed to synthesize one LR image from an HR image.
struct DegradationSpec {
    BlurKernel kernel;
    int scale = 2;               // in {2, 3, 4}
    double noise_level = 0.0;    // std-dev on the 0-255 intensity scale
};

/// Evaluate the bivariate Gaussian with covariance R(theta) diag(s1^2, s2^2)
/// R(theta)^T at integer offsets from the center cell, then normalize to unit
/// sum.
BlurKernel make_aniso_gaussian_kernel(double sigma1, double sigma2, double theta, int size = 21);

/// Kernel with 1 at the center cell and 0 elsewhere (blur is the identity).
BlurKernel make_delta_kernel(int size = 21);

/// Draw a degradation with sigma1, sigma2 ~ U(0.175*s, 2.5*s), theta ~ U(0, pi)
/// and noise ~ U(0, noise_max). Deterministic under a fixed seed.
DegradationSpec sample_degradation(std::uint64_t rng_seed, int scale, double noise_max,
                                   int kernel_size = 21);

/// Classical degradation: blur with reflective padding, subsample by stride
/// `scale`, add white Gaussian noise of std noise_level/255, clamp to [0,1].
ImagePlane degrade(const ImagePlane& hr, const DegradationSpec& spec, std::uint64_t rng_seed);

/// Blur + stride subsampling only (no noise, no clamping). Exposed separately
/// so linearity is testable before the clamp.
ImagePlane blur_downsample(const ImagePlane& hr, const BlurKernel& kernel, int scale);

/// Plain-text export, row-major, one kernel row per line.
void write_kernel_text(const std::string& path, const BlurKernel& kernel);
BlurKernel read_kernel_text(const std::string& path);

}  // namespace cdsr
