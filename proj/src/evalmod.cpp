#include "cdsr/evalmod.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "cdsr/image_io.hpp"
#include "cdsr/rng.hpp"
#include "cdsr/threading.hpp"

namespace fs = std::filesystem;

namespace cdsr {

BenchmarkSpec BenchmarkSpec::standard(int scale, double noise_level) {
    CDSR_REQUIRE(scale == 2 || scale == 3 || scale == 4, "scale must be in {2,3,4}");
    std::array<double, 3> triple{};
    if (scale == 2) triple = {1, 3, 5};
    if (scale == 3) triple = {1, 4, 7};
    if (scale == 4) triple = {1, 5, 9};
    BenchmarkSpec spec;
    spec.scale = scale;
    spec.noise_level = noise_level;
    for (double s1 : triple)
        for (double s2 : triple)
            spec.kernels.push_back({s1, s2, s1 == s2 ? 0.0 : M_PI / 4.0});
    return spec;
}

void BenchmarkSpec::validate() const {
    CDSR_REQUIRE(kernels.size() == 9, "benchmark spec requires exactly 9 kernels");
    CDSR_REQUIRE(noise_level >= 0.0, "benchmark noise must be >= 0");
}

ImagePlane rgb_to_y(const ImagePlane& img) {
    CDSR_REQUIRE(img.color_space == ColorSpace::RGB && img.channels() == 3,
                 "rgb_to_y expects a 3-channel RGB image");
    ImagePlane out(img.height(), img.width(), 1, ColorSpace::Y);
    out.planes[0] =
        (16.0 + 65.481 * img.planes[0] + 128.553 * img.planes[1] + 24.966 * img.planes[2]) / 255.0;
    return out;
}

double psnr(const ImagePlane& a, const ImagePlane& b, int border_crop) {
    CDSR_REQUIRE(a.channels() == 1 && b.channels() == 1, "psnr expects Y-channel images");
    CDSR_REQUIRE(a.height() == b.height() && a.width() == b.width(), "psnr: shape mismatch");
    CDSR_REQUIRE(border_crop >= 0, "psnr: border crop must be >= 0");
    const Eigen::Index h = a.height() - 2 * border_crop;
    const Eigen::Index w = a.width() - 2 * border_crop;
    CDSR_REQUIRE(h > 0 && w > 0, "psnr: crop leaves no pixels");
    const auto da = a.planes[0].block(border_crop, border_crop, h, w);
    const auto db = b.planes[0].block(border_crop, border_crop, h, w);
    const double mse = (da - db).square().sum() / static_cast<double>(h * w);
    if (mse <= 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

namespace {

Eigen::MatrixXd gaussian_window(int size, double sigma) {
    Eigen::MatrixXd w(size, size);
    const int half = size / 2;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double dy = y - half, dx = x - half;
            w(y, x) = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        }
    return w / w.sum();
}

// Valid-mode correlation with the window.
Eigen::ArrayXXd filter_valid(const Eigen::ArrayXXd& img, const Eigen::MatrixXd& win) {
    const Eigen::Index oh = img.rows() - win.rows() + 1;
    const Eigen::Index ow = img.cols() - win.cols() + 1;
    Eigen::ArrayXXd out(oh, ow);
    for (Eigen::Index y = 0; y < oh; ++y)
        for (Eigen::Index x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (Eigen::Index wy = 0; wy < win.rows(); ++wy)
                for (Eigen::Index wx = 0; wx < win.cols(); ++wx)
                    acc += win(wy, wx) * img(y + wy, x + wx);
            out(y, x) = acc;
        }
    return out;
}

}  // namespace

double ssim(const ImagePlane& a, const ImagePlane& b) {
    CDSR_REQUIRE(a.channels() == 1 && b.channels() == 1, "ssim expects Y-channel images");
    CDSR_REQUIRE(a.height() == b.height() && a.width() == b.width(), "ssim: shape mismatch");
    const int win_size = 11;
    CDSR_REQUIRE(a.height() >= win_size && a.width() >= win_size,
                 "ssim: image smaller than the 11x11 window");
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;  // dynamic range 1
    const Eigen::MatrixXd win = gaussian_window(win_size, 1.5);

    const auto& x = a.planes[0];
    const auto& y = b.planes[0];
    const Eigen::ArrayXXd mu_x = filter_valid(x, win);
    const Eigen::ArrayXXd mu_y = filter_valid(y, win);
    const Eigen::ArrayXXd sxx = filter_valid(x * x, win) - mu_x * mu_x;
    const Eigen::ArrayXXd syy = filter_valid(y * y, win) - mu_y * mu_y;
    const Eigen::ArrayXXd sxy = filter_valid(x * y, win) - mu_x * mu_y;

    const Eigen::ArrayXXd num = (2.0 * mu_x * mu_y + c1) * (2.0 * sxy + c2);
    const Eigen::ArrayXXd den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2);
    return (num / den).mean();
}

std::vector<DegradationSpec> accuracy_protocol_degradations(int scale, int kernel_size) {
    std::vector<DegradationSpec> specs;
    for (int j = 1; j <= 10; ++j) {
        DegradationSpec s;
        s.kernel = make_aniso_gaussian_kernel(j, j, 0.0, kernel_size);
        s.scale = scale;
        s.noise_level = 0.0;
        specs.push_back(std::move(s));
    }
    return specs;
}

double classification_accuracy(const LabeledEmbedFn& embed, const std::vector<ImagePlane>& pool,
                               const std::vector<DegradationSpec>& degradations,
                               std::uint64_t rng_seed, int workers) {
    const int n = static_cast<int>(pool.size());
    const int k = static_cast<int>(degradations.size());
    CDSR_REQUIRE(n >= 2, "classification_accuracy: pool needs at least two images");
    CDSR_REQUIRE(k >= 2, "classification_accuracy: need at least two degradations");

    // Embed every (image, degradation) realization; per-slot writes keep the
    // result independent of the worker count.
    std::vector<std::vector<Eigen::VectorXd>> emb(n, std::vector<Eigen::VectorXd>(k));
    parallel_for(static_cast<std::size_t>(n) * k, workers, [&](std::size_t flat) {
        const int i = static_cast<int>(flat / k);
        const int j = static_cast<int>(flat % k);
        const ImagePlane lr = degrade(pool[i], degradations[j], Rng::derive_seed(rng_seed, i, j));
        emb[i][j] = embed(lr, j);
    });

    // Seeded split: first half forms the cluster centers.
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(rng_seed);
    for (int i = n - 1; i > 0; --i)
        std::swap(order[i], order[rng.uniform_index(static_cast<std::uint64_t>(i) + 1)]);
    const int half = n / 2;

    std::vector<Eigen::VectorXd> centers(k);
    for (int j = 0; j < k; ++j) {
        Eigen::VectorXd c = Eigen::VectorXd::Zero(emb[0][0].size());
        for (int t = 0; t < half; ++t) c += emb[order[t]][j];
        centers[j] = c / half;
    }

    const auto cosine = [](const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
        const double nu = u.norm(), nv = v.norm();
        if (nu == 0.0 || nv == 0.0) return 0.0;
        return u.dot(v) / (nu * nv);
    };

    int correct = 0, total = 0;
    for (int t = half; t < n; ++t)
        for (int j = 0; j < k; ++j) {
            int best = 0;
            double best_sim = cosine(emb[order[t]][j], centers[0]);
            for (int c = 1; c < k; ++c) {
                const double s = cosine(emb[order[t]][j], centers[c]);
                if (s > best_sim) {  // strict: ties keep the lowest index
                    best_sim = s;
                    best = c;
                }
            }
            correct += best == j ? 1 : 0;
            ++total;
        }
    return static_cast<double>(correct) / total;
}

namespace {

std::vector<std::string> list_pngs(const std::string& dir) {
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path().string());
    std::sort(out.begin(), out.end());
    CDSR_REQUIRE(!out.empty(), "no PNG images under " + dir);
    return out;
}

}  // namespace

std::string build_benchmark(const std::string& hr_dir, const BenchmarkSpec& spec,
                            const std::string& out_dir, std::uint64_t seed) {
    spec.validate();
    const auto hr_paths = list_pngs(hr_dir);
    fs::create_directories(out_dir);
    fs::create_directories(fs::path(out_dir) / "kernels");

    std::ofstream manifest(fs::path(out_dir) / "manifest.txt");
    if (!manifest) throw std::runtime_error("cannot write benchmark manifest");

    for (std::size_t ki = 0; ki < spec.kernels.size(); ++ki) {
        const auto [s1, s2, theta] = spec.kernels[ki];
        DegradationSpec dspec;
        dspec.kernel = make_aniso_gaussian_kernel(s1, s2, theta);
        dspec.scale = spec.scale;
        dspec.noise_level = spec.noise_level;
        const std::string kdir = "k" + std::to_string(ki + 1);
        fs::create_directories(fs::path(out_dir) / kdir);
        write_kernel_text((fs::path(out_dir) / "kernels" / (kdir + ".txt")).string(),
                          dspec.kernel);
        for (const auto& hp : hr_paths) {
            ImagePlane hr = read_png(hp);
            // Trim to a multiple of the scale so the degradation is defined.
            const Eigen::Index h = hr.height() - hr.height() % spec.scale;
            const Eigen::Index w = hr.width() - hr.width() % spec.scale;
            hr = hr.crop(0, 0, h, w);
            const std::uint64_t noise_seed = Rng::derive_seed(seed, ki, std::hash<std::string>{}(hp));
            const ImagePlane lr = degrade(hr, dspec, noise_seed);
            const std::string rel = kdir + "/" + fs::path(hp).filename().string();
            write_png((fs::path(out_dir) / rel).string(), lr);
            manifest << rel << ',' << s1 << ',' << s2 << ',' << theta << ',' << noise_seed << '\n';
        }
    }
    return (fs::path(out_dir) / "manifest.txt").string();
}

void EvalReport::finalize() {
    double psum = 0.0, ssum = 0.0;
    std::size_t count = 0;
    for (auto& k : per_kernel) {
        k.mean_psnr = k.psnr.empty()
                          ? 0.0
                          : std::accumulate(k.psnr.begin(), k.psnr.end(), 0.0) / k.psnr.size();
        k.mean_ssim = k.ssim.empty()
                          ? 0.0
                          : std::accumulate(k.ssim.begin(), k.ssim.end(), 0.0) / k.ssim.size();
        psum += std::accumulate(k.psnr.begin(), k.psnr.end(), 0.0);
        ssum += std::accumulate(k.ssim.begin(), k.ssim.end(), 0.0);
        count += k.psnr.size();
    }
    overall_psnr = count ? psum / count : 0.0;
    overall_ssim = count ? ssum / count : 0.0;
}

void EvalReport::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report CSV: " + path);
    out << "kernel,sigma1,sigma2,theta,image,psnr,ssim\n";
    out.precision(10);
    for (std::size_t ki = 0; ki < per_kernel.size(); ++ki) {
        const auto& k = per_kernel[ki];
        for (std::size_t i = 0; i < k.images.size(); ++i)
            out << ki + 1 << ',' << k.kernel[0] << ',' << k.kernel[1] << ',' << k.kernel[2] << ','
                << k.images[i] << ',' << k.psnr[i] << ',' << k.ssim[i] << '\n';
        out << ki + 1 << ',' << k.kernel[0] << ',' << k.kernel[1] << ',' << k.kernel[2]
            << ",MEAN," << k.mean_psnr << ',' << k.mean_ssim << '\n';
    }
    out << "overall,,,,MEAN," << overall_psnr << ',' << overall_ssim << '\n';
}

void EvalReport::write_json(const std::string& path) const {
    nlohmann::json j;
    j["overall"] = {{"psnr", overall_psnr}, {"ssim", overall_ssim}};
    j["kernels"] = nlohmann::json::array();
    for (const auto& k : per_kernel) {
        nlohmann::json jk;
        jk["sigma1"] = k.kernel[0];
        jk["sigma2"] = k.kernel[1];
        jk["theta"] = k.kernel[2];
        jk["mean_psnr"] = k.mean_psnr;
        jk["mean_ssim"] = k.mean_ssim;
        jk["images"] = nlohmann::json::array();
        for (std::size_t i = 0; i < k.images.size(); ++i)
            jk["images"].push_back(
                {{"image", k.images[i]}, {"psnr", k.psnr[i]}, {"ssim", k.ssim[i]}});
        j["kernels"].push_back(std::move(jk));
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report JSON: " + path);
    out << j.dump(2) << '\n';
}

EvalReport evaluate_benchmark(const SrFn& sr, const std::string& manifest_path,
                              const std::string& hr_dir, int scale, int border_crop) {
    if (border_crop < 0) border_crop = scale;
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("cannot open manifest: " + manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();

    EvalReport report;
    std::map<std::string, std::size_t> kernel_index;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string rel, s1, s2, theta, noise_seed;
        std::getline(ls, rel, ',');
        std::getline(ls, s1, ',');
        std::getline(ls, s2, ',');
        std::getline(ls, theta, ',');
        std::getline(ls, noise_seed, ',');

        const std::string kdir = fs::path(rel).parent_path().string();
        auto [it, inserted] = kernel_index.try_emplace(kdir, report.per_kernel.size());
        if (inserted) {
            report.per_kernel.emplace_back();
            report.per_kernel.back().kernel = {std::stod(s1), std::stod(s2), std::stod(theta)};
        }
        auto& bucket = report.per_kernel[it->second];

        const ImagePlane lr = read_png((base / rel).string());
        ImagePlane hr = read_png((fs::path(hr_dir) / fs::path(rel).filename()).string());
        hr = hr.crop(0, 0, hr.height() - hr.height() % scale, hr.width() - hr.width() % scale);

        const ImagePlane out = sr(lr);
        CDSR_REQUIRE(out.height() == hr.height() && out.width() == hr.width(),
                     "model output does not match HR size for " + rel);
        const ImagePlane ya = rgb_to_y(out);
        const ImagePlane yb = rgb_to_y(hr);
        bucket.images.push_back(fs::path(rel).filename().string());
        bucket.psnr.push_back(psnr(ya, yb, border_crop));
        bucket.ssim.push_back(ssim(ya, yb));
    }
    report.finalize();
    return report;
}

std::vector<std::pair<double, double>> psnr_sweep(const SrFn& sr,
                                                  const std::vector<ImagePlane>& test_hr,
                                                  const std::vector<double>& sigmas, int scale,
                                                  std::uint64_t seed, int kernel_size,
                                                  int workers) {
    std::vector<std::pair<double, double>> curve(sigmas.size());
    parallel_for(sigmas.size(), workers, [&](std::size_t si) {
        DegradationSpec spec;
        spec.kernel = make_aniso_gaussian_kernel(sigmas[si], sigmas[si], 0.0, kernel_size);
        spec.scale = scale;
        spec.noise_level = 0.0;
        double acc = 0.0;
        for (std::size_t i = 0; i < test_hr.size(); ++i) {
            ImagePlane hr = test_hr[i];
            hr = hr.crop(0, 0, hr.height() - hr.height() % scale,
                         hr.width() - hr.width() % scale);
            const ImagePlane lr = degrade(hr, spec, Rng::derive_seed(seed, si, i));
            const ImagePlane out = sr(lr);
            acc += psnr(rgb_to_y(out), rgb_to_y(hr), scale);
        }
        curve[si] = {sigmas[si], test_hr.empty() ? 0.0 : acc / test_hr.size()};
    });
    return curve;
}

void write_sweep_csv(const std::string& path,
                     const std::vector<std::pair<double, double>>& curve) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write sweep CSV: " + path);
    out << "sigma,psnr\n";
    out.precision(10);
    for (const auto& [s, p] : curve) out << s << ',' << p << '\n';
}

void export_embeddings(const EmbedFn& embed, const std::vector<ImagePlane>& lr_images,
                       const std::vector<int>& labels, const std::string& path) {
    CDSR_REQUIRE(lr_images.size() == labels.size(),
                 "export_embeddings: image/label count mismatch");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write embedding CSV: " + path);
    out.precision(9);
    for (std::size_t i = 0; i < lr_images.size(); ++i) {
        const Eigen::VectorXd e = embed(lr_images[i]);
        out << labels[i];
        for (Eigen::Index j = 0; j < e.size(); ++j) out << ',' << e[j];
        out << '\n';
    }
}

}  // namespace cdsr
