#pragma once

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <string>
#include <vector>

#include "cdsr/degradation.hpp"
#include "cdsr/image.hpp"

namespace cdsr {

/// The 9-kernel benchmark protocol: the ordered (sigma1, sigma2) pairs from a
/// per-scale triple, theta = 0 for isotropic pairs and pi/4 otherwise.
struct BenchmarkSpec {
    int scale = 2;
    std::vector<std::array<double, 3>> kernels;  // (sigma1, sigma2, theta), exactly 9
    double noise_level = 0.0;

    static BenchmarkSpec standard(int scale, double noise_level = 0.0);
    void validate() const;
};

/// Per-image and aggregate fidelity, one bucket per kernel.
struct EvalReport {
    struct KernelResult {
        std::array<double, 3> kernel{0, 0, 0};
        std::vector<std::string> images;
        std::vector<double> psnr;
        std::vector<double> ssim;
        double mean_psnr = 0.0;
        double mean_ssim = 0.0;
    };
    std::vector<KernelResult> per_kernel;
    double overall_psnr = 0.0;
    double overall_ssim = 0.0;

    void finalize();
    void write_csv(const std::string& path) const;
    void write_json(const std::string& path) const;
};

/// BT.601 luma on the 8-bit convention, mapped back to [0,1]:
/// Y = (16 + 65.481 R + 128.553 G + 24.966 B) / 255.
ImagePlane rgb_to_y(const ImagePlane& img);

/// 10 log10(1 / MSE) on [0,1] Y planes after cropping border pixels per side;
/// identical inputs report the 100 dB cap.
double psnr(const ImagePlane& a, const ImagePlane& b, int border_crop);

/// Mean local SSIM, 11x11 Gaussian window sigma 1.5, K1 = 0.01, K2 = 0.03,
/// dynamic range 1, valid-window averaging.
double ssim(const ImagePlane& a, const ImagePlane& b);

/// Embedding under test: maps an LR realization to a vector. The true
/// degradation index is supplied for oracle embedders used in tests; real
/// encoders must ignore it.
using LabeledEmbedFn = std::function<Eigen::VectorXd(const ImagePlane& lr, int true_class)>;
using EmbedFn = std::function<Eigen::VectorXd(const ImagePlane& lr)>;

/// Degradation-classification accuracy: each pool image is degraded by every
/// spec; half the pool (seeded shuffle) forms per-class cosine cluster
/// centers, the rest is classified by nearest center. Ties resolve to the
/// lowest class index.
double classification_accuracy(const LabeledEmbedFn& embed, const std::vector<ImagePlane>& pool,
                               const std::vector<DegradationSpec>& degradations,
                               std::uint64_t rng_seed, int workers = 1);

/// The ten sigma1 = sigma2 = 1..10, theta = 0 specs of the accuracy protocol.
std::vector<DegradationSpec> accuracy_protocol_degradations(int scale = 4, int kernel_size = 21);

/// Degrade every PNG under hr_dir by each benchmark kernel into
/// out_dir/k<i>/, write kernel text files and the manifest
/// (`image_path,sigma1,sigma2,theta,noise_seed` lines). Returns the manifest
/// path.
std::string build_benchmark(const std::string& hr_dir, const BenchmarkSpec& spec,
                            const std::string& out_dir, std::uint64_t seed);

/// A super-resolver under evaluation: LR image -> SR image.
using SrFn = std::function<ImagePlane(const ImagePlane& lr)>;

/// Run a model over a built benchmark directory against the HR originals.
EvalReport evaluate_benchmark(const SrFn& sr, const std::string& manifest_path,
                              const std::string& hr_dir, int scale, int border_crop = -1);

/// Mean Y-PSNR versus isotropic kernel width over a test set.
std::vector<std::pair<double, double>> psnr_sweep(const SrFn& sr,
                                                  const std::vector<ImagePlane>& test_hr,
                                                  const std::vector<double>& sigmas, int scale,
                                                  std::uint64_t seed, int kernel_size = 21,
                                                  int workers = 1);

void write_sweep_csv(const std::string& path,
                     const std::vector<std::pair<double, double>>& curve);

/// CSV rows `label,v0,...,v{C-1}` for external projection tools.
void export_embeddings(const EmbedFn& embed, const std::vector<ImagePlane>& lr_images,
                       const std::vector<int>& labels, const std::string& path);

}  // namespace cdsr
