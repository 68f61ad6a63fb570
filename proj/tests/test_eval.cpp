#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cdsr/evalmod.hpp"
#include "cdsr/image_io.hpp"
#include "test_support.hpp"

using namespace cdsr;
using cdsr::testing::make_test_image;
namespace fs = std::filesystem;

TEST_CASE("rgb_to_y endpoints and linearity") {
    ImagePlane white(2, 2, 3, ColorSpace::RGB);
    for (auto& p : white.planes) p.setOnes();
    CHECK(rgb_to_y(white).planes[0](0, 0) == doctest::Approx(235.0 / 255.0).epsilon(1e-12));

    ImagePlane black(2, 2, 3, ColorSpace::RGB);
    CHECK(rgb_to_y(black).planes[0](0, 0) == doctest::Approx(16.0 / 255.0).epsilon(1e-12));

    // Gray is affine in g with slope (65.481+128.553+24.966)/255.
    auto y_of = [](double g) {
        ImagePlane img(1, 1, 3, ColorSpace::RGB);
        for (auto& p : img.planes) p.setConstant(g);
        return rgb_to_y(img).planes[0](0, 0);
    };
    const double slope = (y_of(0.8) - y_of(0.2)) / 0.6;
    CHECK(y_of(0.5) == doctest::Approx(y_of(0.0) + 0.5 * slope).epsilon(1e-12));

    ImagePlane gray1(2, 2, 1, ColorSpace::Y);
    CHECK_THROWS_AS(rgb_to_y(gray1), ParameterError);
}

TEST_CASE("psnr closed forms, cap, symmetry, oracle") {
    ImagePlane a(24, 24, 1, ColorSpace::Y);
    Rng rng(1);
    for (Eigen::Index y = 0; y < 24; ++y)
        for (Eigen::Index x = 0; x < 24; ++x) a.planes[0](y, x) = rng.uniform();

    CHECK(psnr(a, a, 2) == 100.0);

    ImagePlane b = a;
    b.planes[0] += 16.0 / 255.0;  // pre-clamp offset
    // Closed form: 10 log10(255^2 / 16^2) = 24.0484 dB.
    const double closed_form = 10.0 * std::log10(255.0 * 255.0 / (16.0 * 16.0));
    CHECK(psnr(a, b, 0) == doctest::Approx(closed_form).epsilon(1e-12));

    ImagePlane c(24, 24, 1, ColorSpace::Y);
    for (Eigen::Index y = 0; y < 24; ++y)
        for (Eigen::Index x = 0; x < 24; ++x) c.planes[0](y, x) = rng.uniform();
    const int crop = 3;
    double mse = 0.0;
    for (Eigen::Index y = crop; y < 24 - crop; ++y)
        for (Eigen::Index x = crop; x < 24 - crop; ++x) {
            const double d = a.planes[0](y, x) - c.planes[0](y, x);
            mse += d * d;
        }
    mse /= (24.0 - 2 * crop) * (24.0 - 2 * crop);
    CHECK(psnr(a, c, crop) == doctest::Approx(10.0 * std::log10(1.0 / mse)).epsilon(1e-12));
    CHECK(psnr(a, c, crop) == psnr(c, a, crop));
}

namespace {

// Independent SSIM oracle: direct per-window means/covariances.
double ssim_oracle(const Eigen::ArrayXXd& x, const Eigen::ArrayXXd& y) {
    const int win = 11;
    const double c1 = 1e-4, c2 = 9e-4;
    Eigen::MatrixXd w(win, win);
    for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
            const double dy = i - 5, dx = j - 5;
            w(i, j) = std::exp(-(dx * dx + dy * dy) / 4.5);
        }
    w /= w.sum();
    double acc = 0.0;
    int count = 0;
    for (Eigen::Index oy = 0; oy + win <= x.rows(); ++oy)
        for (Eigen::Index ox = 0; ox + win <= x.cols(); ++ox) {
            double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
            for (int i = 0; i < win; ++i)
                for (int j = 0; j < win; ++j) {
                    mx += w(i, j) * x(oy + i, ox + j);
                    my += w(i, j) * y(oy + i, ox + j);
                }
            for (int i = 0; i < win; ++i)
                for (int j = 0; j < win; ++j) {
                    sxx += w(i, j) * (x(oy + i, ox + j) - mx) * (x(oy + i, ox + j) - mx);
                    syy += w(i, j) * (y(oy + i, ox + j) - my) * (y(oy + i, ox + j) - my);
                    sxy += w(i, j) * (x(oy + i, ox + j) - mx) * (y(oy + i, ox + j) - my);
                }
            acc += ((2 * mx * my + c1) * (2 * sxy + c2)) /
                   ((mx * mx + my * my + c1) * (sxx + syy + c2));
            ++count;
        }
    return acc / count;
}

}  // namespace

TEST_CASE("ssim identity, constant closed form, anti-correlation sign, oracle") {
    ImagePlane a(20, 20, 1, ColorSpace::Y);
    Rng rng(2);
    for (Eigen::Index y = 0; y < 20; ++y)
        for (Eigen::Index x = 0; x < 20; ++x) a.planes[0](y, x) = rng.uniform();
    CHECK(ssim(a, a) == 1.0);

    // Constants: variances vanish, closed form survives.
    ImagePlane ca(16, 16, 1, ColorSpace::Y), cb(16, 16, 1, ColorSpace::Y);
    ca.planes[0].setConstant(0.3);
    cb.planes[0].setConstant(0.7);
    const double c1 = 1e-4;
    const double expect = (2 * 0.3 * 0.7 + c1) / (0.3 * 0.3 + 0.7 * 0.7 + c1);
    CHECK(ssim(ca, cb) == doctest::Approx(expect).epsilon(1e-9));

    // Anti-correlated zero-mean patterns give negative structure terms.
    ImagePlane pa(16, 16, 1, ColorSpace::Y), pb(16, 16, 1, ColorSpace::Y);
    for (Eigen::Index y = 0; y < 16; ++y)
        for (Eigen::Index x = 0; x < 16; ++x) {
            const double p = 0.4 * (((x + y) % 2) ? 1.0 : -1.0);
            pa.planes[0](y, x) = 0.5 + p;
            pb.planes[0](y, x) = 0.5 - p;
        }
    CHECK(ssim(pa, pb) < 0.0);
    CHECK(ssim_oracle(pa.planes[0], pb.planes[0]) < 0.0);

    // Random pair against the independent oracle.
    ImagePlane b(20, 20, 1, ColorSpace::Y);
    for (Eigen::Index y = 0; y < 20; ++y)
        for (Eigen::Index x = 0; x < 20; ++x) b.planes[0](y, x) = rng.uniform();
    CHECK(ssim(a, b) == doctest::Approx(ssim_oracle(a.planes[0], b.planes[0])).epsilon(1e-9));
}

TEST_CASE("classification accuracy: oracle encoders and rotation invariance") {
    std::vector<ImagePlane> pool;
    for (int i = 0; i < 10; ++i) pool.push_back(make_test_image(32, 32, 500 + i));
    auto degs = accuracy_protocol_degradations(4);
    REQUIRE(degs.size() == 10);
    CHECK(degs[0].kernel.sigma1 == 1.0);
    CHECK(degs[9].kernel.sigma1 == 10.0);
    CHECK(degs[3].kernel.theta == 0.0);

    // One-hot oracle on the true class: perfect separability.
    LabeledEmbedFn onehot = [](const ImagePlane&, int j) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(10);
        e[j] = 1.0;
        return e;
    };
    CHECK(classification_accuracy(onehot, pool, degs, 7) == 1.0);

    // Constant embedding: every similarity ties, the tie rule collapses to
    // class one, exactly 1/k accuracy.
    LabeledEmbedFn constant = [](const ImagePlane&, int) {
        return Eigen::VectorXd::Constant(6, 0.5);
    };
    CHECK(classification_accuracy(constant, pool, degs, 7) == 0.1);

    // Cosine argmax is invariant under a global orthogonal transform.
    LabeledEmbedFn raw = [](const ImagePlane& lr, int j) {
        Eigen::VectorXd e(4);
        const auto& p = lr.planes[0];
        e << p.mean(), p.abs().mean(), p.matrix().squaredNorm() / p.size(),
            (j % 2) ? p(0, 0) : p(1, 1);  // degenerate but deterministic
        return e;
    };
    Eigen::MatrixXd rot = Eigen::MatrixXd::Random(4, 4);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(rot);
    Eigen::MatrixXd q = qr.householderQ();
    LabeledEmbedFn rotated = [&](const ImagePlane& lr, int j) {
        return Eigen::VectorXd(q * raw(lr, j));
    };
    CHECK(classification_accuracy(raw, pool, degs, 3) ==
          classification_accuracy(rotated, pool, degs, 3));
}

TEST_CASE("benchmark build: layout, determinism, evaluation round trip") {
    const fs::path root = fs::temp_directory_path() / "cdsr_eval_test";
    fs::remove_all(root);
    fs::create_directories(root / "hr");
    for (int i = 0; i < 2; ++i)
        write_png((root / "hr" / ("img" + std::to_string(i) + ".png")).string(),
                  make_test_image(40, 40, 900 + i));

    BenchmarkSpec spec = BenchmarkSpec::standard(2);
    REQUIRE(spec.kernels.size() == 9);
    // x2 kernel set comes from {1,3,5}; isotropic pairs have theta 0.
    CHECK(spec.kernels[0][0] == 1.0);
    CHECK(spec.kernels[0][2] == 0.0);
    CHECK(spec.kernels[1][2] == doctest::Approx(M_PI / 4));
    BenchmarkSpec s4 = BenchmarkSpec::standard(4);
    CHECK(s4.kernels[8][0] == 9.0);

    const std::string manifest = build_benchmark((root / "hr").string(), spec,
                                                 (root / "bench").string(), 11);
    int lines = 0;
    {
        std::ifstream in(manifest);
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) ++lines;
    }
    CHECK(lines == 18);
    CHECK(fs::exists(root / "bench" / "k1" / "img0.png"));
    CHECK(fs::exists(root / "bench" / "kernels" / "k9.txt"));

    // Same seed: byte-identical output files.
    build_benchmark((root / "hr").string(), spec, (root / "bench2").string(), 11);
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    CHECK(slurp(root / "bench" / "k3" / "img1.png") ==
          slurp(root / "bench2" / "k3" / "img1.png"));

    // Bicubic baseline evaluation: shapes line up and the report aggregates.
    SrFn bicubic = [](const ImagePlane& lr) { return bicubic_upscale(lr, 2); };
    EvalReport rep = evaluate_benchmark(bicubic, manifest, (root / "hr").string(), 2);
    REQUIRE(rep.per_kernel.size() == 9);
    for (const auto& k : rep.per_kernel) {
        CHECK(k.psnr.size() == 2);
        CHECK(k.mean_psnr > 5.0);
        CHECK(k.mean_ssim <= 1.0);
    }
    const double manual =
        (rep.per_kernel[0].psnr[0] + rep.per_kernel[0].psnr[1]) / 2.0;
    CHECK(rep.per_kernel[0].mean_psnr == doctest::Approx(manual).epsilon(1e-12));

    rep.write_csv((root / "report.csv").string());
    rep.write_json((root / "report.json").string());
    CHECK(fs::exists(root / "report.csv"));
    CHECK(fs::exists(root / "report.json"));
    fs::remove_all(root);
}

TEST_CASE("psnr sweep: row count, bicubic monotonicity, empty input") {
    std::vector<ImagePlane> test_hr;
    for (int i = 0; i < 3; ++i) test_hr.push_back(make_test_image(48, 48, 700 + i));
    SrFn bicubic = [](const ImagePlane& lr) { return bicubic_upscale(lr, 2); };

    std::vector<double> sigmas;
    for (int s = 1; s <= 10; ++s) sigmas.push_back(s);
    auto curve = psnr_sweep(bicubic, test_hr, sigmas, 2, 5);
    REQUIRE(curve.size() == 10);
    for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].second <= curve[i - 1].second);

    auto empty_curve = psnr_sweep(bicubic, test_hr, {}, 2, 5);
    CHECK(empty_curve.empty());

    const std::string path = "sweep_test.csv";
    write_sweep_csv(path, curve);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "sigma,psnr");
    int rows = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 10);
    in.close();
    std::remove(path.c_str());
}

TEST_CASE("embedding export: layout, label order, parse round trip") {
    std::vector<ImagePlane> imgs;
    for (int i = 0; i < 3; ++i) imgs.push_back(make_test_image(16, 16, 300 + i));
    std::vector<int> labels{4, 2, 9};
    EmbedFn embed = [](const ImagePlane& lr) {
        Eigen::VectorXd e(5);
        e << lr.planes[0].mean(), lr.planes[1].mean(), lr.planes[2].mean(),
            lr.planes[0](0, 0), 1.2345678;
        return e;
    };
    const std::string path = "embed_test.csv";
    export_embeddings(embed, imgs, labels, path);

    std::ifstream in(path);
    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
        REQUIRE(!line.empty());
        std::istringstream ls(line);
        std::string tok;
        std::getline(ls, tok, ',');
        CHECK(std::stoi(tok) == labels[row]);
        Eigen::VectorXd parsed(5);
        for (int i = 0; i < 5; ++i) {
            std::getline(ls, tok, ',');
            parsed[i] = std::stod(tok);
        }
        const Eigen::VectorXd expect = embed(imgs[row]);
        CHECK((parsed - expect).cwiseAbs().maxCoeff() < 1e-6);
        ++row;
    }
    CHECK(row == 3);
    in.close();
    std::remove(path.c_str());

    CHECK_THROWS_AS(export_embeddings(embed, imgs, {1, 2}, path), ParameterError);
}
