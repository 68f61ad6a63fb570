#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdsr/encoder.hpp"
#include "cdsr/sampler.hpp"
#include "cdsr/sr_network.hpp"

namespace cdsr {

/// Flat training configuration. Config files carry one `key = value` per
/// line with exactly these field names; unknown keys are errors. CLI flags
/// override file values.
struct TrainConfig {
    // Optimization schedule
    int batch_size = 32;
    double lr0 = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    int epochs = 500;
    int lr_halving_period = 125;
    int iters_per_epoch = 1000;
    int pretrain_encoder_epochs = 0;

    // Degradation / sampling
    int scale = 2;
    double noise_max = 0.0;
    std::string positive_strategy = "CD";
    int lr_patch = 48;
    int kernel_size = 21;

    // Ablation switches
    bool use_LPE_P = true;
    bool use_LPE_L = true;
    bool use_DQA = true;
    bool use_CSC = true;

    // Contrastive machinery
    int codebook_length = 1024;
    bool include_positive_in_denominator = false;
    int queue_size = 8192;
    double tau = 0.07;
    double momentum = 0.999;

    // Architecture
    int embed_dim = 256;
    int trunk_channels = 64;
    int growth_channels = 16;
    int num_blocks = 10;
    int patch_size = 8;
    int patch_channels = 64;
    int pixel_channels = 64;
    int depth_patch = 4;
    int depth_pixel = 5;
    int dyn_kernel_size = 3;
    int filter_hidden = 1024;
    int ca_hidden = 128;
    std::string fusion = "DQA";

    // Plumbing
    std::uint64_t seed = 0;
    int workers = 1;

    void validate() const;

    LpeConfig lpe_config() const;
    SRNetConfig sr_config() const;
    PositiveStrategy strategy() const { return strategy_from_string(positive_strategy); }
    FusionMode effective_fusion() const {
        return use_DQA ? fusion_from_string(fusion) : FusionMode::DynConv;
    }

    /// Workstation-sized preset: thin trunk, short embeddings, small queue.
    void apply_desk_preset();

    std::string serialize() const;
    void set_field(const std::string& key, const std::string& value);
};

/// Every legal config key, in serialization order.
std::vector<std::string> config_field_names();

TrainConfig parse_config_text(const std::string& text);
TrainConfig read_config_file(const std::string& path);

/// Table-3 ablation wiring: 1 all-on, 2 no CSC, 3 no DQA (DynConv fallback),
/// 4 no patch branch, 5 no pixel branch.
TrainConfig run_ablation(int model_id, TrainConfig cfg);

/// lr0 * 0.5^floor(epoch / period).
double lr_schedule(int epoch, double lr0, int period);

}  // namespace cdsr
