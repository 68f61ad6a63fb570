#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdsr/degradation.hpp"
#include "cdsr/image.hpp"

namespace cdsr {

/// Positive-pair selection strategy for contrastive training:
///   CD - same image, same degradation;
///   D  - different images, same degradation;
///   C  - same image, different degradations.
enum class PositiveStrategy { CD, D, C };

PositiveStrategy strategy_from_string(const std::string& s);
const char* to_string(PositiveStrategy s);

/// Two LR patches forming one contrastive pair, plus the HR crop aligned with
/// p0 (the patch that also feeds the SR branch).
struct PatchPair {
    ImagePlane p0, p1;    // LR patches
    ImagePlane hr0;       // HR ground truth for p0
    int image_id0 = -1;   // source HR image of p0
    int image_id1 = -1;   // source HR image of p1
    int degradation_id0 = -1;
    int degradation_id1 = -1;
};

/// Batch synthesis: for each of B pairs, crop patches from the HR pool and
/// degrade them according to the strategy. lr_patch is the LR patch side
/// (default 48); HR crops are lr_patch * scale. Deterministic under the seed.
std::vector<PatchPair> build_batch(const std::vector<ImagePlane>& hr_pool, int batch_size,
                                   int scale, PositiveStrategy strategy, std::uint64_t rng_seed,
                                   int lr_patch = 48, double noise_max = 0.0,
                                   int kernel_size = 21);

/// One HR image path per line; blank lines ignored.
std::vector<std::string> read_manifest(const std::string& path);

/// Sorted PNG paths directly under a directory.
std::vector<std::string> list_image_files(const std::string& dir);

/// Load every image of a manifest (or directory listing) into memory.
std::vector<ImagePlane> load_hr_pool(const std::vector<std::string>& paths);

}  // namespace cdsr
