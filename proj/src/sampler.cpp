#include "cdsr/sampler.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "cdsr/image_io.hpp"

namespace cdsr {

PositiveStrategy strategy_from_string(const std::string& s) {
    if (s == "CD" || s == "cd" || s == "C&D") return PositiveStrategy::CD;
    if (s == "D" || s == "d") return PositiveStrategy::D;
    if (s == "C" || s == "c") return PositiveStrategy::C;
    throw ParameterError("unknown positive strategy: " + s);
}

const char* to_string(PositiveStrategy s) {
    switch (s) {
        case PositiveStrategy::CD: return "CD";
        case PositiveStrategy::D: return "D";
        case PositiveStrategy::C: return "C";
    }
    return "?";
}

namespace {

ImagePlane crop_random(const ImagePlane& img, int side, Rng& rng, Eigen::Index& top,
                       Eigen::Index& left) {
    top = static_cast<Eigen::Index>(rng.uniform_index(img.height() - side + 1));
    left = static_cast<Eigen::Index>(rng.uniform_index(img.width() - side + 1));
    return img.crop(top, left, side, side);
}

}  // namespace

std::vector<PatchPair> build_batch(const std::vector<ImagePlane>& hr_pool, int batch_size,
                                   int scale, PositiveStrategy strategy, std::uint64_t rng_seed,
                                   int lr_patch, double noise_max, int kernel_size) {
    CDSR_REQUIRE(!hr_pool.empty(), "build_batch: empty HR pool");
    CDSR_REQUIRE(batch_size >= 1, "build_batch: batch size must be >= 1");
    const int hr_side = lr_patch * scale;
    for (const auto& img : hr_pool)
        CDSR_REQUIRE(img.height() >= hr_side && img.width() >= hr_side,
                     "build_batch: pool image smaller than the HR crop size");

    Rng rng(rng_seed);
    std::vector<PatchPair> batch(batch_size);
    for (int i = 0; i < batch_size; ++i) {
        PatchPair& pair = batch[i];

        // Each pair draws its own degradation; strategy C uses two.
        DegradationSpec deg0 =
            sample_degradation(rng.next_u64(), scale, noise_max, kernel_size);
        DegradationSpec deg1 = deg0;
        pair.degradation_id0 = i;
        pair.degradation_id1 = i;
        if (strategy == PositiveStrategy::C) {
            deg1 = sample_degradation(rng.next_u64(), scale, noise_max, kernel_size);
            pair.degradation_id1 = batch_size + i;
        }

        pair.image_id0 = static_cast<int>(rng.uniform_index(hr_pool.size()));
        pair.image_id1 = pair.image_id0;
        if (strategy == PositiveStrategy::D && hr_pool.size() >= 2) {
            do {
                pair.image_id1 = static_cast<int>(rng.uniform_index(hr_pool.size()));
            } while (pair.image_id1 == pair.image_id0);
        }

        Eigen::Index top, left;
        pair.hr0 = crop_random(hr_pool[pair.image_id0], hr_side, rng, top, left);
        ImagePlane hr1 = crop_random(hr_pool[pair.image_id1], hr_side, rng, top, left);

        pair.p0 = degrade(pair.hr0, deg0, rng.next_u64());
        pair.p1 = degrade(hr1, deg1, rng.next_u64());
    }
    return batch;
}

std::vector<std::string> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest: " + path);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty()) out.push_back(line);
    }
    return out;
}

std::vector<std::string> list_image_files(const std::string& dir) {
    std::vector<std::string> out;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path().string());
    std::sort(out.begin(), out.end());
    CDSR_REQUIRE(!out.empty(), "no PNG images under " + dir);
    return out;
}

std::vector<ImagePlane> load_hr_pool(const std::vector<std::string>& paths) {
    std::vector<ImagePlane> pool;
    pool.reserve(paths.size());
    for (const auto& p : paths) pool.push_back(read_png(p));
    return pool;
}

}  // namespace cdsr
